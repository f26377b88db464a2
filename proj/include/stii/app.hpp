#pragma once
// Run configuration and the compute / analyze / selftest pipelines behind the
// command-line tool. Everything here is deterministic given (config, seed).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"
#include "stii/engine.hpp"
#include "stii/error.hpp"
#include "stii/speech_analysis.hpp"
#include "stii/text_analysis.hpp"

namespace stii {

enum class PairsMode { all, consecutive };

struct AnalysisConfig {
    std::size_t min_count = 50;
    double alpha = 0.05;
    std::vector<double> deltas{0.02, 0.04, 0.06, 0.08, 0.10, 0.15, 0.20};
    double heatmap_delta = 0.1;
    HeatmapSide heatmap_side = HeatmapSide::both;
    WindowAggregate window_aggregate = WindowAggregate::mean;
    CurvePooling pooling = CurvePooling::pooled;
    std::size_t bootstrap_resamples = 1000;
    double confidence_level = 0.95;
    // Empty: distance curves always, text tables with annotations, speech
    // tables with alignments. Otherwise exactly the named analyses.
    std::vector<std::string> analyses;
};

struct RunConfig {
    // Default backend spec; instances may override with their own "oracle".
    nlohmann::json oracle = nlohmann::json::object();
    OutputMode output_mode = OutputMode::raw;
    EngineConfig engine;
    AnalysisConfig analysis;
    PairsMode pairs = PairsMode::all;
    std::optional<std::filesystem::path> instances;
    std::optional<std::filesystem::path> annotations;
    std::optional<std::filesystem::path> alignments;  // directory of <instance_id>.TextGrid
    std::optional<std::filesystem::path> records;     // analyze input; defaults to output_dir/records.jsonl
    std::filesystem::path output_dir = "stii-out";
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t truncation = 20;
    std::optional<std::filesystem::path> cache_dir;  // from STII_CACHE_DIR only
};

// Relative paths resolve against base_dir. Throws ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);
// Hash of everything that can change results: excludes threads, output
// directory and cache directory.
std::string config_hash(const RunConfig& config);

// Throws ConfigError when a referenced path is missing or a value is out of range.
void validate_run_config(const RunConfig& config);

struct InstanceSpec {
    Instance instance;
    std::optional<nlohmann::json> oracle;
};

// One instance object per line, optionally with an "oracle" backend spec and,
// for speech, a "feature_times_file" sidecar resolved against base_dir.
std::vector<InstanceSpec> read_instances(std::istream& in, const std::filesystem::path& base_dir = {});
std::vector<InstanceSpec> load_instances(const std::filesystem::path& path);

std::uint64_t instance_seed(std::uint64_t run_seed, std::string_view instance_id);
std::vector<FeaturePair> select_pairs(const Instance& instance, PairsMode mode);
// Replaces "{instance_id}" in every string of the spec.
nlohmann::json substitute_instance_id(const nlohmann::json& spec, std::string_view instance_id);

struct ComputeResult {
    std::vector<InteractionRecord> records;  // ordered by instance_id, then pair
    nlohmann::json manifest;
};

ComputeResult run_compute(const RunConfig& config, const std::vector<InstanceSpec>& instances);
// Writes records.jsonl and manifest.json into output_dir.
ComputeResult cmd_compute(const RunConfig& config);

struct Table {
    std::string name;  // file stem
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// Tab-separated with a "# schema_version=... config_hash=..." footer.
void write_table(std::ostream& out, const Table& table, const std::string& footer);
std::string format_number(double value);

struct AnalyzeInputs {
    RecordsFile records;
    std::vector<SentenceAnnotation> annotations;
    std::vector<InstanceSpec> instances;
    // instance_id -> segments
    std::map<std::string, std::vector<PhoneSegment>> alignments;
};

std::vector<Table> run_analyze(const RunConfig& config, const AnalyzeInputs& inputs);
// Reads inputs named by the config, writes one .tsv per table. Returns the tables.
std::vector<Table> cmd_analyze(const RunConfig& config);

struct SelftestOptions {
    std::uint64_t seed = 0;
    // Injected into the exact Shapley efficiency checks.
    SubsetWeight weight = shapley_subset_weight;
};

struct SelftestItem {
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<SelftestItem> run_selftest(const SelftestOptions& options = {});

// 1 usage/config, 2 oracle, 3 data.
int exit_code_for(ErrorCode code) noexcept;
// {"error":"<Code>","message":"...","exit_code":k}
std::string error_line(const Error& error);

}  // namespace stii
