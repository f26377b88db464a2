// Command-line entry point: compute / analyze / selftest / protocol-echo.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "stii/app.hpp"
#include "stii/oracle.hpp"
#include "stii/protocol.hpp"
#include "stii/toy_games.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> oracle;
    std::optional<std::string> output_mode;
    std::optional<std::string> instances;
    std::optional<std::string> annotations;
    std::optional<std::string> alignments;
    std::optional<std::string> records;
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::size_t> truncation;
    std::optional<std::string> pairs;
    // engine
    std::optional<std::string> estimator;
    std::optional<std::string> context_mode;
    std::optional<std::string> normalization;
    std::optional<std::uint64_t> num_permutations;
    bool antithetic = false;
    std::optional<std::size_t> exact_limit;
    std::optional<std::size_t> batch_size;
    // analysis
    std::optional<std::size_t> min_count;
    std::optional<double> alpha;
    std::optional<std::vector<double>> deltas;
    std::optional<double> heatmap_delta;
    std::optional<std::string> heatmap_side;
    std::optional<std::string> window_aggregate;
    std::optional<std::string> pooling;
    std::optional<std::size_t> bootstrap_resamples;
    std::optional<std::vector<std::string>> analyses;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "Run configuration (JSON)");
    cmd->add_option("--instances", o.instances, "Instances file (one JSON object per line)");
    cmd->add_option("--output-dir", o.output_dir, "Output directory");
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--threads", o.threads, "Worker threads");
}

void add_compute(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--oracle", o.oracle, "Default oracle spec as JSON");
    cmd->add_option("--output-mode", o.output_mode, "raw or probability");
    cmd->add_option("--truncation", o.truncation, "Maximum text features per instance");
    cmd->add_option("--pairs", o.pairs, "all or consecutive");
    cmd->add_option("--estimator", o.estimator, "exact or sampled");
    cmd->add_option("--context-mode", o.context_mode, "context_sampled or empty_context");
    cmd->add_option("--normalization", o.normalization, "full_sequence_norm or none");
    cmd->add_option("--num-permutations", o.num_permutations, "Samples per pair");
    cmd->add_flag("--antithetic", o.antithetic, "Pair each sampled context with its complement");
    cmd->add_option("--exact-limit", o.exact_limit, "Largest n for exact enumeration");
    cmd->add_option("--batch-size", o.batch_size, "Masks per oracle request");
}

void add_analyze(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--records", o.records, "Records file (default: <output-dir>/records.jsonl)");
    cmd->add_option("--annotations", o.annotations, "Token annotations (one JSON object per line)");
    cmd->add_option("--alignments", o.alignments, "Directory of <instance_id>.TextGrid files");
    cmd->add_option("--min-count", o.min_count, "Minimum count per bin");
    cmd->add_option("--alpha", o.alpha, "Significance level");
    cmd->add_option("--deltas", o.deltas, "Window half-widths in seconds")->delimiter(',');
    cmd->add_option("--heatmap-delta", o.heatmap_delta, "Window half-width for the consonant heatmap");
    cmd->add_option("--heatmap-side", o.heatmap_side, "both, left or right");
    cmd->add_option("--window-aggregate", o.window_aggregate, "mean or sum");
    cmd->add_option("--pooling", o.pooling, "pooled or per_instance");
    cmd->add_option("--bootstrap-resamples", o.bootstrap_resamples, "Bootstrap resamples");
    cmd->add_option("--analyses", o.analyses, "Subset of analyses to run")->delimiter(',');
}

stii::RunConfig build_config(const Overrides& o) {
    json j = json::object();
    fs::path base;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw stii::Error(stii::ErrorCode::ConfigError, "cannot open config file " + o.config);
        j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw stii::Error(stii::ErrorCode::ConfigError, "config file " + o.config + " is not a JSON object");
        }
        base = fs::path(o.config).parent_path();
    }
    // Flag paths are relative to the working directory.
    const auto path = [](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
    if (o.oracle) {
        json spec = json::parse(*o.oracle, nullptr, false);
        if (spec.is_discarded()) throw stii::Error(stii::ErrorCode::ConfigError, "--oracle is not valid JSON");
        j["oracle"] = spec;
    }
    if (o.output_mode) j["output_mode"] = *o.output_mode;
    if (o.instances) j["instances"] = path(*o.instances);
    if (o.annotations) j["annotations"] = path(*o.annotations);
    if (o.alignments) j["alignments"] = path(*o.alignments);
    if (o.records) j["records"] = path(*o.records);
    if (o.output_dir) j["output_dir"] = path(*o.output_dir);
    if (o.seed) j["seed"] = *o.seed;
    if (o.threads) j["threads"] = *o.threads;
    if (o.truncation) j["truncation"] = *o.truncation;
    if (o.pairs) j["pairs"] = *o.pairs;

    json& engine = j["engine"];
    if (engine.is_null()) engine = json::object();
    if (o.estimator) engine["estimator"] = *o.estimator;
    if (o.context_mode) engine["context_mode"] = *o.context_mode;
    if (o.normalization) engine["normalization"] = *o.normalization;
    if (o.num_permutations) engine["num_permutations"] = *o.num_permutations;
    if (o.antithetic) engine["antithetic"] = true;
    if (o.exact_limit) engine["exact_limit"] = *o.exact_limit;
    if (o.batch_size) engine["batch_size"] = *o.batch_size;

    json& analysis = j["analysis"];
    if (analysis.is_null()) analysis = json::object();
    if (o.min_count) analysis["min_count"] = *o.min_count;
    if (o.alpha) analysis["alpha"] = *o.alpha;
    if (o.deltas) analysis["deltas"] = *o.deltas;
    if (o.heatmap_delta) analysis["heatmap_delta"] = *o.heatmap_delta;
    if (o.heatmap_side) analysis["heatmap_side"] = *o.heatmap_side;
    if (o.window_aggregate) analysis["window_aggregate"] = *o.window_aggregate;
    if (o.pooling) analysis["pooling"] = *o.pooling;
    if (o.bootstrap_resamples) analysis["bootstrap_resamples"] = *o.bootstrap_resamples;
    if (o.analyses) analysis["analyses"] = *o.analyses;

    auto config = stii::run_config_from_json(j, base);
    if (const char* dir = std::getenv("STII_CACHE_DIR"); dir && *dir) config.cache_dir = fs::path(dir);
    return config;
}

struct EchoOptions {
    std::size_t n_features = 0;
    std::string toy;
    std::string listen;
    std::size_t exit_after = 0;
};

int run_echo(const EchoOptions& o) {
    stii::Handshake hs;
    stii::protocol::Server::EvalFn eval;
    if (!o.toy.empty()) {
        std::ifstream in(o.toy);
        if (!in) throw stii::Error(stii::ErrorCode::ConfigError, "cannot open toy game " + o.toy);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw stii::Error(stii::ErrorCode::ConfigError, "toy game file is not valid JSON");
        auto backend = std::make_shared<stii::ToyBackend>(stii::toy_spec_from_json(j));
        hs = backend->hello();
        eval = [backend](std::span<const stii::CoalitionMask> masks) { return backend->eval(masks); };
    } else {
        if (o.n_features < 2) throw stii::Error(stii::ErrorCode::ConfigError, "--n-features must be >= 2");
        hs.n_features = o.n_features;
        hs.output_dim = o.n_features;
        hs.supports_batch = true;
        // Echo: the value vector is the mask itself.
        eval = [](std::span<const stii::CoalitionMask> masks) {
            std::vector<stii::ValueVector> out;
            for (const auto& m : masks) {
                stii::ValueVector v(m.size());
                for (std::size_t i = 0; i < m.size(); ++i) v[i] = m.test(i) ? 1.0 : 0.0;
                out.push_back(std::move(v));
            }
            return out;
        };
    }
    const stii::protocol::Server server(hs, eval, {{"server", "stii protocol-echo"}});

    if (!o.listen.empty()) {
        const auto colon = o.listen.rfind(':');
        if (colon == std::string::npos) throw stii::Error(stii::ErrorCode::ConfigError, "--listen needs HOST:PORT");
        const std::string host = o.listen.substr(0, colon);
        const int port = std::stoi(o.listen.substr(colon + 1));
        httplib::Server http;
        http.Post(".*", [&](const httplib::Request& req, httplib::Response& res) {
            std::istringstream lines(req.body);
            std::string line;
            std::string reply;
            while (std::getline(lines, line)) {
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                reply += server.handle_line(line) + "\n";
            }
            res.set_content(reply, "application/x-ndjson");
        });
        const int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw stii::Error(stii::ErrorCode::IoError, "cannot listen on " + o.listen);
        std::cout << "listening http://" << host << ":" << bound << "/" << std::endl;
        http.listen_after_bind();
        return 0;
    }

    std::size_t evals = 0;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (line.find("\"eval\"") != std::string::npos && o.exit_after > 0 && evals++ >= o.exit_after) {
            return 0;  // simulated crash: no reply
        }
        std::cout << server.handle_line(line) << std::endl;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pairwise Shapley-Taylor interaction analysis"};
    app.require_subcommand(1);

    Overrides compute_o;
    auto* compute = app.add_subcommand("compute", "Compute interaction records for every instance");
    add_common(compute, compute_o);
    add_compute(compute, compute_o);

    Overrides analyze_o;
    auto* analyze = app.add_subcommand("analyze", "Turn records into figure-data tables");
    add_common(analyze, analyze_o);
    add_analyze(analyze, analyze_o);

    std::uint64_t selftest_seed = 0;
    auto* selftest = app.add_subcommand("selftest", "Check the estimators on analytic toy games");
    selftest->add_option("--seed", selftest_seed, "Sampling seed");

    EchoOptions echo;
    auto* protocol_echo = app.add_subcommand("protocol-echo", "Debugging oracle speaking the wire protocol");
    protocol_echo->add_option("--n-features", echo.n_features, "Features; the reply echoes each mask");
    protocol_echo->add_option("--toy", echo.toy, "Serve a toy game (JSON spec) instead of echoing");
    protocol_echo->add_option("--listen", echo.listen, "Serve HTTP on HOST:PORT (port 0 picks one)");
    protocol_echo->add_option("--exit-after", echo.exit_after, "Exit without replying after this many evals");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (compute->parsed()) {
            const auto result = stii::cmd_compute(build_config(compute_o));
            std::cerr << "wrote " << result.records.size() << " records" << std::endl;
        } else if (analyze->parsed()) {
            const auto tables = stii::cmd_analyze(build_config(analyze_o));
            std::cerr << "wrote " << tables.size() << " tables" << std::endl;
        } else if (selftest->parsed()) {
            bool all = true;
            for (const auto& item : stii::run_selftest({selftest_seed})) {
                std::cout << (item.pass ? "PASS " : "FAIL ") << item.name << "  " << item.detail << '\n';
                all = all && item.pass;
            }
            std::cout << (all ? "selftest passed" : "selftest failed") << std::endl;
            return all ? 0 : 3;
        } else if (protocol_echo->parsed()) {
            return run_echo(echo);
        }
    } catch (const stii::Error& e) {
        std::cerr << stii::error_line(e) << std::endl;
        return stii::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << stii::error_line(stii::Error(stii::ErrorCode::IoError, e.what())) << std::endl;
        return 3;
    }
    return 0;
}
