#include "stii/error.hpp"

namespace stii {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ZeroFeatures: return "ZeroFeatures";
        case ErrorCode::BadOutputDim: return "BadOutputDim";
        case ErrorCode::BadTargetIndex: return "BadTargetIndex";
        case ErrorCode::NonIncreasingTimes: return "NonIncreasingTimes";
        case ErrorCode::MissingTimesForSpeech: return "MissingTimesForSpeech";
        case ErrorCode::BackendUnreachable: return "BackendUnreachable";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::OracleError: return "OracleError";
        case ErrorCode::ExactLimitExceeded: return "ExactLimitExceeded";
        case ErrorCode::ZeroNormalizer: return "ZeroNormalizer";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::OrderViolation: return "OrderViolation";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::InvalidAnnotation: return "InvalidAnnotation";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::EmptyWindow: return "EmptyWindow";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::OverlapError: return "OverlapError";
        case ErrorCode::UnknownPhoneLabel: return "UnknownPhoneLabel";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
        case ErrorCode::MissingAnnotations: return "MissingAnnotations";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code), message_(message) {}

}  // namespace stii
