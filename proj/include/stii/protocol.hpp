#pragma once
// Oracle wire protocol. Subprocess stdio and HTTP bodies carry the same
// line-delimited JSON messages:
//
//   -> {"op":"hello","schema_version":1}
//   <- {"op":"hello","n_features":N,"output_dim":D,"supports_batch":b,"output_mode":"raw"|"probability"}
//   -> {"op":"eval","id":k,"masks":["110...", ...]}
//   <- {"op":"eval","id":k,"values":[[...], ...]}
//   <- {"op":"error","id":k,"code":"...","message":"..."}
//
// Masks are '0'/'1' strings, leftmost character = feature 0. Unknown fields
// are ignored on both sides.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"

namespace stii {

enum class OutputMode { raw, probability };

std::string_view to_string(OutputMode m);
OutputMode parse_output_mode(std::string_view s);

struct Handshake {
    std::size_t n_features = 0;
    std::size_t output_dim = 0;
    bool supports_batch = false;
    OutputMode output_mode = OutputMode::raw;
    // Full reply, including adapter-specific fields (e.g. feature granularity).
    nlohmann::json raw = nlohmann::json::object();
};

namespace protocol {

std::string hello_request();
std::string hello_response(const Handshake& hs, const nlohmann::json& extra = nlohmann::json::object());
Handshake parse_hello_response(std::string_view line);

std::string eval_request(std::uint64_t id, std::span<const CoalitionMask> masks);
std::string eval_response(std::uint64_t id, const std::vector<ValueVector>& values);
std::string error_response(std::uint64_t id, std::string_view code, std::string_view message);

// Parses an eval reply. Throws OracleError for an error reply, MalformedResponse
// for framing problems (wrong op/id/count, non-numeric values).
std::vector<ValueVector> parse_eval_response(std::string_view line, std::uint64_t id, std::size_t expected_count);

// Serves the oracle side of the protocol: one request line in, one reply line out.
class Server {
public:
    using EvalFn = std::function<std::vector<ValueVector>(std::span<const CoalitionMask>)>;

    Server(Handshake handshake, EvalFn eval, nlohmann::json extra_hello = nlohmann::json::object());

    std::string handle_line(std::string_view line) const;
    const Handshake& handshake() const noexcept { return handshake_; }

private:
    Handshake handshake_;
    EvalFn eval_;
    nlohmann::json extra_hello_;
};

}  // namespace protocol
}  // namespace stii
