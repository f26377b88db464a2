#pragma once
// Error model shared by every module: one exception type carrying a stable code.

#include <stdexcept>
#include <string>
#include <string_view>

namespace stii {

enum class ErrorCode {
    // instance validation
    ZeroFeatures,
    BadOutputDim,
    BadTargetIndex,
    NonIncreasingTimes,
    MissingTimesForSpeech,
    // oracle
    BackendUnreachable,
    MalformedResponse,
    DimensionMismatch,
    NonFiniteValue,
    OracleError,
    // engine
    ExactLimitExceeded,
    ZeroNormalizer,
    InvalidArgument,
    // analysis
    OrderViolation,
    IndexOutOfRange,
    InvalidAnnotation,
    EmptyInput,
    EmptyWindow,
    ParseError,
    OverlapError,
    UnknownPhoneLabel,
    // stats
    DegenerateInput,
    LengthMismatch,
    TooFewPoints,
    // application
    SchemaMismatch,
    MissingAnnotations,
    ConfigError,
    IoError,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    std::string_view code_name() const noexcept { return error_code_name(code_); }
    // The message without the code prefix carried by what().
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

}  // namespace stii
