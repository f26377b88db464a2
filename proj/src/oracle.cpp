#include "stii/oracle.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <sstream>

#include <httplib.h>

#include "stii/error.hpp"

namespace stii {

using nlohmann::json;

// --- ToyBackend ---

ToyBackend::ToyBackend(ToyGameSpec spec) : spec_(std::move(spec)) {
    validate_toy_spec(spec_);
}

Handshake ToyBackend::hello() {
    Handshake hs;
    hs.n_features = spec_.n_features;
    hs.output_dim = spec_.output_dim();
    hs.supports_batch = true;
    hs.output_mode = OutputMode::raw;
    hs.raw = {{"op", "hello"}, {"backend", "toy"}, {"game", toy_spec_to_json(spec_)}};
    return hs;
}

std::vector<ValueVector> ToyBackend::eval(std::span<const CoalitionMask> masks) {
    std::vector<ValueVector> out;
    out.reserve(masks.size());
    for (const auto& m : masks) out.push_back(toy_game_evaluate(spec_, m));
    return out;
}

std::string ToyBackend::describe() const {
    return "toy:" + toy_spec_to_json(spec_).dump();
}

// --- SubprocessBackend ---

namespace {

void write_all(int fd, const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorCode::BackendUnreachable, std::string("write to oracle failed: ") + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

}  // namespace

SubprocessBackend::SubprocessBackend(std::vector<std::string> command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
    if (command_.empty()) throw Error(ErrorCode::InvalidArgument, "subprocess oracle needs a command");
    ::signal(SIGPIPE, SIG_IGN);
    start();
}

SubprocessBackend::~SubprocessBackend() {
    stop();
}

void SubprocessBackend::start() {
    int in_pipe[2];
    int out_pipe[2];
    int err_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw Error(ErrorCode::BackendUnreachable, std::string("pipe failed: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw Error(ErrorCode::BackendUnreachable, std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::close(err_pipe[0]);
        std::vector<char*> argv;
        for (auto& a : command_) argv.push_back(a.data());
        argv.push_back(nullptr);
        ::execvp(argv[0], argv.data());
        const int err = errno;
        [[maybe_unused]] auto n = ::write(err_pipe[1], &err, sizeof err);
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    int child_errno = 0;
    ssize_t n;
    do {
        n = ::read(err_pipe[0], &child_errno, sizeof child_errno);
    } while (n < 0 && errno == EINTR);
    ::close(err_pipe[0]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    read_buffer_.clear();
    if (n > 0) {
        stop();
        throw Error(ErrorCode::BackendUnreachable,
                    "cannot execute '" + command_.front() + "': " + std::strerror(child_errno));
    }
}

void SubprocessBackend::stop() noexcept {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        int status = 0;
        // Closing stdin asks a well-behaved oracle to exit; otherwise kill it.
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                pid_ = -1;
                return;
            }
            ::usleep(2000);
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

std::string SubprocessBackend::round_trip(const std::string& request) {
    if (to_child_ < 0) throw Error(ErrorCode::BackendUnreachable, "oracle process is not running");
    write_all(to_child_, request + "\n");
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
        if (auto pos = read_buffer_.find('\n'); pos != std::string::npos) {
            std::string line = read_buffer_.substr(0, pos);
            read_buffer_.erase(0, pos + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) throw Error(ErrorCode::BackendUnreachable, "oracle reply timed out");
        pollfd pfd{from_child_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (ready < 0 && errno == EINTR) continue;
        if (ready <= 0) throw Error(ErrorCode::BackendUnreachable, "oracle reply timed out");
        char buf[65536];
        const ssize_t n = ::read(from_child_, buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw Error(ErrorCode::BackendUnreachable, "oracle process closed its output");
        read_buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

Handshake SubprocessBackend::hello() {
    handshake_ = protocol::parse_hello_response(round_trip(protocol::hello_request()));
    return *handshake_;
}

std::vector<ValueVector> SubprocessBackend::eval(std::span<const CoalitionMask> masks) {
    if (!handshake_) hello();
    if (handshake_->supports_batch) {
        const auto id = next_id_++;
        return protocol::parse_eval_response(round_trip(protocol::eval_request(id, masks)), id, masks.size());
    }
    std::vector<ValueVector> out;
    out.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto id = next_id_++;
        auto one = protocol::parse_eval_response(round_trip(protocol::eval_request(id, masks.subspan(i, 1))), id, 1);
        out.push_back(std::move(one.front()));
    }
    return out;
}

void SubprocessBackend::reset() {
    stop();
    start();
    hello();
}

std::string SubprocessBackend::describe() const {
    std::string s = "subprocess:";
    for (std::size_t i = 0; i < command_.size(); ++i) s += (i ? " " : "") + command_[i];
    return s;
}

// --- HttpBackend ---

HttpBackend::HttpBackend(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), timeout_(timeout) {
    constexpr std::string_view scheme = "http://";
    if (url_.rfind(scheme, 0) != 0) {
        throw Error(ErrorCode::InvalidArgument, "http oracle url must start with http://");
    }
    std::string rest = url_.substr(scheme.size());
    const auto slash = rest.find('/');
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    std::string authority = rest.substr(0, slash);
    if (const auto colon = authority.rfind(':'); colon != std::string::npos) {
        try {
            port_ = std::stoi(authority.substr(colon + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "bad port in url '" + url_ + "'");
        }
        authority.resize(colon);
    }
    host_ = authority;
    if (host_.empty()) throw Error(ErrorCode::InvalidArgument, "missing host in url '" + url_ + "'");
}

std::string HttpBackend::post(const std::string& body) {
    httplib::Client client(host_, port_);
    const auto secs = timeout_.count() / 1000;
    const auto usecs = (timeout_.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    auto res = client.Post(path_, body + "\n", "application/x-ndjson");
    if (!res) {
        throw Error(ErrorCode::BackendUnreachable, "POST " + url_ + " failed: " + httplib::to_string(res.error()));
    }
    std::string line = res->body;
    if (auto pos = line.find('\n'); pos != std::string::npos) line.resize(pos);
    if (res->status != 200) {
        // An error reply in the body is surfaced as OracleError by the parser.
        json j = json::parse(line, nullptr, false);
        if (j.is_object() && j.value("op", std::string{}) == "error") return line;
        throw Error(ErrorCode::BackendUnreachable, "POST " + url_ + " returned HTTP " + std::to_string(res->status));
    }
    return line;
}

Handshake HttpBackend::hello() {
    auto hs = protocol::parse_hello_response(post(protocol::hello_request()));
    supports_batch_ = hs.supports_batch;
    return hs;
}

std::vector<ValueVector> HttpBackend::eval(std::span<const CoalitionMask> masks) {
    if (supports_batch_) {
        const auto id = next_id_++;
        return protocol::parse_eval_response(post(protocol::eval_request(id, masks)), id, masks.size());
    }
    std::vector<ValueVector> out;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto id = next_id_++;
        auto one = protocol::parse_eval_response(post(protocol::eval_request(id, masks.subspan(i, 1))), id, 1);
        out.push_back(std::move(one.front()));
    }
    return out;
}

std::unique_ptr<Backend> make_backend(const json& spec) {
    try {
        const auto kind = spec.at("kind").get<std::string>();
        const auto timeout = std::chrono::milliseconds(
            static_cast<long long>(spec.value("timeout_s", 120.0) * 1000.0));
        if (kind == "toy") return std::make_unique<ToyBackend>(toy_spec_from_json(spec.at("game")));
        if (kind == "subprocess") {
            return std::make_unique<SubprocessBackend>(spec.at("command").get<std::vector<std::string>>(), timeout);
        }
        if (kind == "http") return std::make_unique<HttpBackend>(spec.at("url").get<std::string>(), timeout);
        throw Error(ErrorCode::ConfigError, "unknown oracle kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("oracle spec: ") + e.what());
    } catch (const Error& e) {
        if (e.code() != ErrorCode::InvalidArgument) throw;
        throw Error(ErrorCode::ConfigError, "oracle spec: " + e.message());
    }
}

// --- Oracle ---

Oracle::Oracle(std::unique_ptr<Backend> backend, Instance instance, OracleOptions options)
    : backend_(std::move(backend)),
      instance_(std::move(instance)),
      options_(std::move(options)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_in_flight))) {
    if (!backend_) throw Error(ErrorCode::InvalidArgument, "oracle needs a backend");
    if (options_.batch_size == 0) options_.batch_size = 1;
    for (int attempt = 0;; ++attempt) {
        try {
            handshake_ = backend_->hello();
            break;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::BackendUnreachable || attempt >= options_.retries) throw;
            backend_->reset();
        }
    }
    if (handshake_.n_features != instance_.n_features) {
        throw Error(ErrorCode::DimensionMismatch, "oracle reports n_features " + std::to_string(handshake_.n_features) +
                                                      ", instance has " + std::to_string(instance_.n_features));
    }
    if (handshake_.output_dim != instance_.output_dim) {
        throw Error(ErrorCode::DimensionMismatch, "oracle reports output_dim " + std::to_string(handshake_.output_dim) +
                                                      ", instance has " + std::to_string(instance_.output_dim));
    }
    if (options_.disk_cache) load_disk_cache();
}

OutputMode Oracle::output_mode() const noexcept {
    return options_.output_mode == OutputMode::probability || handshake_.output_mode == OutputMode::probability
               ? OutputMode::probability
               : OutputMode::raw;
}

std::size_t Oracle::cache_size() const {
    std::lock_guard lock(cache_mutex_);
    return cache_.size();
}

ValueVector softmax(const ValueVector& logits) {
    if (logits.empty()) return {};
    const double mx = *std::max_element(logits.begin(), logits.end());
    ValueVector out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

ValueVector Oracle::postprocess(ValueVector values) const {
    check_value_vector(values, instance_.output_dim);
    if (handshake_.output_mode == OutputMode::probability) {
        double sum = 0.0;
        for (double v : values) {
            if (v < 0.0 || v > 1.0) throw Error(ErrorCode::MalformedResponse, "probability entry outside [0, 1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw Error(ErrorCode::MalformedResponse, "probability vector does not sum to 1");
        }
        return values;
    }
    if (options_.output_mode == OutputMode::probability) return softmax(values);
    return values;
}

std::vector<ValueVector> Oracle::run_backend(std::span<const CoalitionMask> masks) {
    std::vector<ValueVector> out;
    out.reserve(masks.size());
    for (std::size_t start = 0; start < masks.size(); start += options_.batch_size) {
        const auto chunk = masks.subspan(start, std::min(options_.batch_size, masks.size() - start));
        for (int attempt = 0;; ++attempt) {
            try {
                std::vector<ValueVector> values;
                if (backend_->concurrent()) {
                    in_flight_.acquire();
                    try {
                        values = backend_->eval(chunk);
                    } catch (...) {
                        in_flight_.release();
                        throw;
                    }
                    in_flight_.release();
                } else {
                    std::lock_guard lock(backend_mutex_);
                    values = backend_->eval(chunk);
                }
                if (values.size() != chunk.size()) {
                    throw Error(ErrorCode::MalformedResponse, "backend returned wrong number of vectors");
                }
                for (auto& v : values) out.push_back(postprocess(std::move(v)));
                break;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::BackendUnreachable || attempt >= options_.retries) throw;
                std::lock_guard lock(backend_mutex_);
                backend_->reset();
            }
        }
    }
    return out;
}

ValueVector Oracle::evaluate(const CoalitionMask& mask) {
    return evaluate_batch(std::span<const CoalitionMask>(&mask, 1)).front();
}

std::vector<ValueVector> Oracle::evaluate_batch(std::span<const CoalitionMask> masks) {
    for (const auto& m : masks) {
        if (m.size() != instance_.n_features) {
            throw Error(ErrorCode::DimensionMismatch, "mask length " + std::to_string(m.size()) + " != n_features " +
                                                          std::to_string(instance_.n_features));
        }
    }
    std::vector<Slot> slots(masks.size());
    std::vector<CoalitionMask> owned;
    std::vector<std::promise<ValueVector>> promises;
    {
        std::lock_guard lock(cache_mutex_);
        for (std::size_t i = 0; i < masks.size(); ++i) {
            auto it = cache_.find(masks[i]);
            if (it != cache_.end()) {
                slots[i] = it->second;
                continue;
            }
            promises.emplace_back();
            Slot slot = promises.back().get_future().share();
            cache_.emplace(masks[i], slot);
            owned.push_back(masks[i]);
            slots[i] = std::move(slot);
        }
    }
    cache_hits_ += masks.size() - owned.size();

    if (!owned.empty()) {
        call_count_ += owned.size();
        try {
            auto values = run_backend(owned);
            append_disk_cache(owned, values);
            for (std::size_t k = 0; k < owned.size(); ++k) promises[k].set_value(std::move(values[k]));
        } catch (...) {
            const auto error = std::current_exception();
            {
                std::lock_guard lock(cache_mutex_);
                for (const auto& m : owned) cache_.erase(m);
            }
            for (auto& p : promises) p.set_exception(error);
            throw;
        }
    }

    std::vector<ValueVector> out;
    out.reserve(masks.size());
    for (auto& s : slots) out.push_back(s.get());
    return out;
}

void Oracle::load_disk_cache() {
    const auto& path = *options_.disk_cache;
    if (std::ifstream in(path); in) {
        std::string line;
        while (std::getline(in, line)) {
            json j = json::parse(line, nullptr, false);
            if (!j.is_object() || j.value("instance_id", std::string{}) != instance_.instance_id) continue;
            try {
                auto mask = CoalitionMask::from_string(j.at("mask").get<std::string>());
                auto values = j.at("values").get<ValueVector>();
                if (mask.size() != instance_.n_features) continue;
                check_value_vector(values, instance_.output_dim);
                std::promise<ValueVector> p;
                p.set_value(std::move(values));
                cache_.emplace(std::move(mask), p.get_future().share());
            } catch (const std::exception&) {
                // Corrupt lines are skipped; the mask is simply recomputed.
            }
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    disk_out_.open(path, std::ios::app);
    if (!disk_out_) throw Error(ErrorCode::IoError, "cannot open cache file " + path.string());
}

void Oracle::append_disk_cache(std::span<const CoalitionMask> masks, const std::vector<ValueVector>& values) {
    if (!disk_out_.is_open()) return;
    std::lock_guard lock(disk_mutex_);
    for (std::size_t k = 0; k < masks.size(); ++k) {
        nlohmann::ordered_json j;
        j["instance_id"] = instance_.instance_id;
        j["mask"] = masks[k].to_string();
        j["values"] = values[k];
        disk_out_ << j.dump() << '\n';
    }
    disk_out_.flush();
}

std::vector<double> ablate_speech_frame(std::span<const double> frame) {
    return std::vector<double>(frame.size(), 0.0);
}

}  // namespace stii
