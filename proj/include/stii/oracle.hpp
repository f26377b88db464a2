#pragma once
// Value oracles: "mask in, value vector out" over in-process toy games, a
// subprocess speaking the wire protocol on stdio, or an HTTP endpoint. The
// Oracle front end deduplicates evaluations through a synchronized cache.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"
#include "stii/protocol.hpp"
#include "stii/toy_games.hpp"

namespace stii {

class Backend {
public:
    virtual ~Backend() = default;

    virtual Handshake hello() = 0;
    // One value vector per mask, in order.
    virtual std::vector<ValueVector> eval(std::span<const CoalitionMask> masks) = 0;
    // Re-establishes the connection after BackendUnreachable.
    virtual void reset() {}
    // True when eval() may be called from several threads at once.
    virtual bool concurrent() const noexcept { return false; }
    virtual std::string describe() const = 0;
};

class ToyBackend final : public Backend {
public:
    explicit ToyBackend(ToyGameSpec spec);

    Handshake hello() override;
    std::vector<ValueVector> eval(std::span<const CoalitionMask> masks) override;
    bool concurrent() const noexcept override { return true; }
    std::string describe() const override;

    const ToyGameSpec& spec() const noexcept { return spec_; }

private:
    ToyGameSpec spec_;
};

// Spawns `command` and talks the protocol over its stdin/stdout.
class SubprocessBackend final : public Backend {
public:
    explicit SubprocessBackend(std::vector<std::string> command,
                               std::chrono::milliseconds timeout = std::chrono::seconds(120));
    ~SubprocessBackend() override;

    SubprocessBackend(const SubprocessBackend&) = delete;
    SubprocessBackend& operator=(const SubprocessBackend&) = delete;

    Handshake hello() override;
    std::vector<ValueVector> eval(std::span<const CoalitionMask> masks) override;
    void reset() override;
    std::string describe() const override;

private:
    void start();
    void stop() noexcept;
    std::string round_trip(const std::string& request);

    std::vector<std::string> command_;
    std::chrono::milliseconds timeout_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string read_buffer_;
    std::uint64_t next_id_ = 1;
    std::optional<Handshake> handshake_;
};

// POSTs protocol lines to http://host[:port]/path.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(120));

    Handshake hello() override;
    std::vector<ValueVector> eval(std::span<const CoalitionMask> masks) override;
    bool concurrent() const noexcept override { return true; }
    std::string describe() const override { return "http:" + url_; }

private:
    std::string post(const std::string& body);

    std::string url_;
    std::string host_;
    int port_ = 80;
    std::string path_;
    std::chrono::milliseconds timeout_;
    std::atomic<std::uint64_t> next_id_{1};
    bool supports_batch_ = true;
};

// Builds a backend from {"kind":"toy","game":{...}} | {"kind":"subprocess","command":[...]}
// | {"kind":"http","url":"..."}; optional "timeout_s".
std::unique_ptr<Backend> make_backend(const nlohmann::json& spec);

struct OracleOptions {
    // probability: softmax is applied to raw backend outputs; probability-mode
    // backends are validated instead.
    OutputMode output_mode = OutputMode::raw;
    std::size_t batch_size = 64;
    int retries = 1;
    std::size_t max_in_flight = 4;
    // Write-through cache file keyed by (instance_id, mask bits).
    std::optional<std::filesystem::path> disk_cache;
};

class Oracle {
public:
    // Performs the handshake and checks it against the instance.
    Oracle(std::unique_ptr<Backend> backend, Instance instance, OracleOptions options = {});

    Oracle(const Oracle&) = delete;
    Oracle& operator=(const Oracle&) = delete;

    ValueVector evaluate(const CoalitionMask& mask);
    // Order-preserving; duplicates and cached masks are not re-sent. Fails atomically.
    std::vector<ValueVector> evaluate_batch(std::span<const CoalitionMask> masks);

    const Instance& instance() const noexcept { return instance_; }
    const Handshake& handshake() const noexcept { return handshake_; }
    const OracleOptions& options() const noexcept { return options_; }
    OutputMode output_mode() const noexcept;

    std::size_t call_count() const noexcept { return call_count_.load(); }
    std::size_t cache_hits() const noexcept { return cache_hits_.load(); }
    std::size_t cache_size() const;

private:
    using Slot = std::shared_future<ValueVector>;

    std::vector<ValueVector> run_backend(std::span<const CoalitionMask> masks);
    ValueVector postprocess(ValueVector values) const;
    void load_disk_cache();
    void append_disk_cache(std::span<const CoalitionMask> masks, const std::vector<ValueVector>& values);

    std::unique_ptr<Backend> backend_;
    Instance instance_;
    OracleOptions options_;
    Handshake handshake_;

    mutable std::mutex cache_mutex_;
    std::unordered_map<CoalitionMask, Slot, CoalitionMaskHash> cache_;
    std::mutex backend_mutex_;
    std::counting_semaphore<> in_flight_;
    std::mutex disk_mutex_;
    std::ofstream disk_out_;

    std::atomic<std::size_t> call_count_{0};
    std::atomic<std::size_t> cache_hits_{0};
};

// Silence ablation for audio: an all-zero buffer of the same length.
std::vector<double> ablate_speech_frame(std::span<const double> frame);

// Numerically stable softmax.
ValueVector softmax(const ValueVector& logits);

}  // namespace stii
