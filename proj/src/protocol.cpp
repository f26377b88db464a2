#include "stii/protocol.hpp"

#include "stii/error.hpp"

namespace stii {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(OutputMode m) {
    return m == OutputMode::raw ? "raw" : "probability";
}

OutputMode parse_output_mode(std::string_view s) {
    if (s == "raw") return OutputMode::raw;
    if (s == "probability") return OutputMode::probability;
    throw Error(ErrorCode::InvalidArgument, "unknown output_mode '" + std::string(s) + "'");
}

namespace protocol {

namespace {

json parse_reply(std::string_view line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(ErrorCode::MalformedResponse, "oracle reply is not a JSON object: '" + std::string(line) + "'");
    }
    return j;
}

[[noreturn]] void throw_error_reply(const json& j) {
    throw Error(ErrorCode::OracleError,
                j.value("code", std::string("unknown")) + ": " + j.value("message", std::string{}));
}

}  // namespace

std::string hello_request() {
    ordered_json j;
    j["op"] = "hello";
    j["schema_version"] = kSchemaVersion;
    return j.dump();
}

std::string hello_response(const Handshake& hs, const json& extra) {
    ordered_json j;
    j["op"] = "hello";
    j["n_features"] = hs.n_features;
    j["output_dim"] = hs.output_dim;
    j["supports_batch"] = hs.supports_batch;
    j["output_mode"] = std::string(to_string(hs.output_mode));
    if (extra.is_object()) {
        for (auto it = extra.begin(); it != extra.end(); ++it) {
            if (!j.contains(it.key())) j[it.key()] = it.value();
        }
    }
    return j.dump();
}

Handshake parse_hello_response(std::string_view line) {
    json j = parse_reply(line);
    if (j.value("op", std::string{}) == "error") throw_error_reply(j);
    if (j.value("op", std::string{}) != "hello") {
        throw Error(ErrorCode::MalformedResponse, "expected hello reply");
    }
    try {
        Handshake hs;
        hs.n_features = j.at("n_features").get<std::size_t>();
        hs.output_dim = j.at("output_dim").get<std::size_t>();
        hs.supports_batch = j.value("supports_batch", false);
        hs.output_mode = parse_output_mode(j.value("output_mode", std::string("raw")));
        hs.raw = j;
        return hs;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("bad hello reply: ") + e.what());
    } catch (const Error& e) {
        throw Error(ErrorCode::MalformedResponse, e.message());
    }
}

std::string eval_request(std::uint64_t id, std::span<const CoalitionMask> masks) {
    ordered_json j;
    j["op"] = "eval";
    j["id"] = id;
    auto arr = ordered_json::array();
    for (const auto& m : masks) arr.push_back(m.to_string());
    j["masks"] = std::move(arr);
    return j.dump();
}

std::string eval_response(std::uint64_t id, const std::vector<ValueVector>& values) {
    ordered_json j;
    j["op"] = "eval";
    j["id"] = id;
    j["values"] = values;
    return j.dump();
}

std::string error_response(std::uint64_t id, std::string_view code, std::string_view message) {
    ordered_json j;
    j["op"] = "error";
    j["id"] = id;
    j["code"] = code;
    j["message"] = message;
    return j.dump();
}

std::vector<ValueVector> parse_eval_response(std::string_view line, std::uint64_t id, std::size_t expected_count) {
    json j = parse_reply(line);
    const auto op = j.value("op", std::string{});
    if (op == "error") throw_error_reply(j);
    if (op != "eval") throw Error(ErrorCode::MalformedResponse, "expected eval reply, got op '" + op + "'");
    if (!j.contains("id") || !j["id"].is_number_integer() || j["id"].get<std::uint64_t>() != id) {
        throw Error(ErrorCode::MalformedResponse, "eval reply id does not match request " + std::to_string(id));
    }
    const auto it = j.find("values");
    if (it == j.end() || !it->is_array()) throw Error(ErrorCode::MalformedResponse, "eval reply lacks values");
    if (it->size() != expected_count) {
        throw Error(ErrorCode::MalformedResponse, "eval reply has " + std::to_string(it->size()) +
                                                      " vectors for " + std::to_string(expected_count) + " masks");
    }
    std::vector<ValueVector> out;
    out.reserve(expected_count);
    for (const auto& row : *it) {
        if (!row.is_array()) throw Error(ErrorCode::MalformedResponse, "value vector must be an array");
        ValueVector v;
        v.reserve(row.size());
        for (const auto& x : row) {
            if (!x.is_number()) throw Error(ErrorCode::MalformedResponse, "value entries must be numbers");
            v.push_back(x.get<double>());
        }
        out.push_back(std::move(v));
    }
    return out;
}

Server::Server(Handshake handshake, EvalFn eval, json extra_hello)
    : handshake_(std::move(handshake)), eval_(std::move(eval)), extra_hello_(std::move(extra_hello)) {}

std::string Server::handle_line(std::string_view line) const {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return error_response(0, "MalformedRequest", "request is not a JSON object");
    const auto id = j.contains("id") && j["id"].is_number_unsigned() ? j["id"].get<std::uint64_t>() : 0;
    const auto op = j.value("op", std::string{});
    if (op == "hello") {
        if (j.value("schema_version", 0) != kSchemaVersion) {
            return error_response(id, "SchemaMismatch", "unsupported schema_version");
        }
        return hello_response(handshake_, extra_hello_);
    }
    if (op != "eval") return error_response(id, "UnknownOp", "unknown op '" + op + "'");
    const auto masks_it = j.find("masks");
    if (masks_it == j.end() || !masks_it->is_array()) return error_response(id, "MalformedRequest", "eval needs masks");
    std::vector<CoalitionMask> masks;
    try {
        for (const auto& m : *masks_it) {
            auto mask = CoalitionMask::from_string(m.get<std::string>());
            if (mask.size() != handshake_.n_features) {
                return error_response(id, "DimensionMismatch", "mask length differs from n_features");
            }
            masks.push_back(std::move(mask));
        }
        return eval_response(id, eval_(masks));
    } catch (const std::exception& e) {
        return error_response(id, "EvalFailed", e.what());
    }
}

}  // namespace protocol
}  // namespace stii
