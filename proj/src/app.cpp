#include "stii/app.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "stii/oracle.hpp"
#include "stii/parallel.hpp"
#include "stii/random.hpp"
#include "stii/toy_games.hpp"

namespace stii {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kAnalyses{"distance_curves", "syntax_grid", "mwe_comparison", "boundary_contrast",
                                      "consonant_heatmap"};

[[noreturn]] void config_error(const std::string& msg) {
    throw Error(ErrorCode::ConfigError, msg);
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

std::string_view to_string(PairsMode m) {
    return m == PairsMode::all ? "all" : "consecutive";
}

std::string_view to_string(HeatmapSide s) {
    switch (s) {
        case HeatmapSide::both: return "both";
        case HeatmapSide::left: return "left";
        case HeatmapSide::right: return "right";
    }
    return "both";
}

HeatmapSide parse_heatmap_side(const std::string& s) {
    if (s == "both") return HeatmapSide::both;
    if (s == "left") return HeatmapSide::left;
    if (s == "right") return HeatmapSide::right;
    config_error("heatmap_side must be both, left or right");
}

std::string format_optional(const std::optional<double>& v) {
    return v ? format_number(*v) : "NA";
}

}  // namespace

// --- configuration ---

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) config_error("run config must be a JSON object");
    RunConfig c;
    try {
        if (auto it = j.find("oracle"); it != j.end() && !it->is_null()) {
            if (!it->is_object()) config_error("oracle must be an object");
            c.oracle = *it;
        }
        if (j.contains("output_mode")) c.output_mode = parse_output_mode(j["output_mode"].get<std::string>());
        if (j.contains("seed")) {
            c.seed = j["seed"].get<std::uint64_t>();
        } else if (j.contains("engine") && j["engine"].contains("seed")) {
            c.seed = j["engine"]["seed"].get<std::uint64_t>();
        }
        if (j.contains("engine")) c.engine = engine_config_from_json(j["engine"]);
        if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
        if (j.contains("truncation")) c.truncation = j["truncation"].get<std::size_t>();
        if (j.contains("pairs")) {
            const auto p = j["pairs"].get<std::string>();
            if (p == "all") {
                c.pairs = PairsMode::all;
            } else if (p == "consecutive") {
                c.pairs = PairsMode::consecutive;
            } else {
                config_error("pairs must be all or consecutive");
            }
        }
        for (const auto* key : {"instances", "annotations", "alignments", "records"}) {
            if (auto it = j.find(key); it != j.end() && !it->is_null()) {
                const auto path = resolve(base_dir, it->get<std::string>());
                if (std::string_view(key) == "instances") c.instances = path;
                if (std::string_view(key) == "annotations") c.annotations = path;
                if (std::string_view(key) == "alignments") c.alignments = path;
                if (std::string_view(key) == "records") c.records = path;
            }
        }
        if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());

        if (auto it = j.find("analysis"); it != j.end()) {
            const json& a = *it;
            auto& an = c.analysis;
            if (a.contains("min_count")) an.min_count = a["min_count"].get<std::size_t>();
            if (a.contains("alpha")) an.alpha = a["alpha"].get<double>();
            if (a.contains("deltas")) an.deltas = a["deltas"].get<std::vector<double>>();
            if (a.contains("heatmap_delta")) an.heatmap_delta = a["heatmap_delta"].get<double>();
            if (a.contains("heatmap_side")) an.heatmap_side = parse_heatmap_side(a["heatmap_side"].get<std::string>());
            if (a.contains("window_aggregate")) {
                const auto s = a["window_aggregate"].get<std::string>();
                if (s != "mean" && s != "sum") config_error("window_aggregate must be mean or sum");
                an.window_aggregate = s == "sum" ? WindowAggregate::sum : WindowAggregate::mean;
            }
            if (a.contains("pooling")) {
                const auto s = a["pooling"].get<std::string>();
                if (s != "pooled" && s != "per_instance") config_error("pooling must be pooled or per_instance");
                an.pooling = s == "per_instance" ? CurvePooling::per_instance : CurvePooling::pooled;
            }
            if (a.contains("bootstrap_resamples")) an.bootstrap_resamples = a["bootstrap_resamples"].get<std::size_t>();
            if (a.contains("confidence_level")) an.confidence_level = a["confidence_level"].get<double>();
            if (a.contains("analyses")) an.analyses = a["analyses"].get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        config_error(std::string("run config: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        config_error(e.message());
    }
    c.engine.stii.sampling.seed = c.seed;
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot open config file " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) config_error("config file " + path.string() + " is not valid JSON");
    return run_config_from_json(j, path.parent_path());
}

json run_config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["oracle"] = c.oracle;
    j["output_mode"] = std::string(to_string(c.output_mode));
    j["engine"] = engine_config_to_json(c.engine);
    j["engine"]["seed"] = c.seed;
    j["pairs"] = std::string(to_string(c.pairs));
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["truncation"] = c.truncation;
    j["output_dir"] = c.output_dir.string();
    const auto opt_path = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
    j["instances"] = opt_path(c.instances);
    j["annotations"] = opt_path(c.annotations);
    j["alignments"] = opt_path(c.alignments);
    j["records"] = opt_path(c.records);
    const auto& a = c.analysis;
    j["analysis"] = {
        {"min_count", a.min_count},
        {"alpha", a.alpha},
        {"deltas", a.deltas},
        {"heatmap_delta", a.heatmap_delta},
        {"heatmap_side", std::string(to_string(a.heatmap_side))},
        {"window_aggregate", a.window_aggregate == WindowAggregate::sum ? "sum" : "mean"},
        {"pooling", a.pooling == CurvePooling::per_instance ? "per_instance" : "pooled"},
        {"bootstrap_resamples", a.bootstrap_resamples},
        {"confidence_level", a.confidence_level},
        {"analyses", a.analyses},
    };
    return j;
}

std::string config_hash(const RunConfig& config) {
    json j = run_config_to_json(config);
    j.erase("threads");
    j.erase("output_dir");
    j.erase("records");
    return hex64(fnv1a64(j.dump()));
}

void validate_run_config(const RunConfig& c) {
    if (c.truncation < 2) config_error("truncation must be >= 2");
    if (c.threads == 0) config_error("threads must be >= 1");
    if (!(c.analysis.alpha > 0.0 && c.analysis.alpha < 1.0)) config_error("alpha must be in (0, 1)");
    if (!(c.analysis.confidence_level > 0.0 && c.analysis.confidence_level < 1.0)) {
        config_error("confidence_level must be in (0, 1)");
    }
    if (c.analysis.bootstrap_resamples == 0) config_error("bootstrap_resamples must be >= 1");
    for (double d : c.analysis.deltas) {
        if (!(d > 0.0) || !std::isfinite(d)) config_error("every delta must be > 0");
    }
    if (!(c.analysis.heatmap_delta > 0.0)) config_error("heatmap_delta must be > 0");
    for (const auto& name : c.analysis.analyses) {
        if (!kAnalyses.contains(name)) config_error("unknown analysis '" + name + "'");
    }
    if (c.instances && !fs::is_regular_file(*c.instances)) {
        config_error("instances file " + c.instances->string() + " does not exist");
    }
    if (c.annotations && !fs::is_regular_file(*c.annotations)) {
        config_error("annotations file " + c.annotations->string() + " does not exist");
    }
    if (c.alignments && !fs::is_directory(*c.alignments)) {
        config_error("alignments directory " + c.alignments->string() + " does not exist");
    }
    if (c.records && !fs::is_regular_file(*c.records)) {
        config_error("records file " + c.records->string() + " does not exist");
    }
}

// --- instances ---

std::vector<InstanceSpec> read_instances(std::istream& in, const fs::path& base_dir) {
    std::vector<InstanceSpec> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::SchemaMismatch, "instances line " + std::to_string(line_no) + " is not valid JSON");
        }
        if (auto it = j.find("feature_times_file"); it != j.end() && it->is_string() && !j.contains("feature_times")) {
            const auto path = resolve(base_dir, it->get<std::string>());
            std::ifstream sidecar(path);
            if (!sidecar) throw Error(ErrorCode::IoError, "cannot open feature-times file " + path.string());
            json tj = json::parse(sidecar, nullptr, false);
            const auto ft = parse_feature_times(tj.is_discarded() ? json() : tj);
            if (!ft.instance_id.empty() && j.value("instance_id", std::string{}) != ft.instance_id) {
                throw Error(ErrorCode::SchemaMismatch, "feature-times file " + path.string() + " belongs to '" +
                                                           ft.instance_id + "'");
            }
            j["feature_times"] = ft.times;
        }
        InstanceSpec spec;
        spec.instance = validate_instance(j);
        if (spec.instance.instance_id.empty()) {
            throw Error(ErrorCode::InvalidArgument, "instances line " + std::to_string(line_no) + " has no instance_id");
        }
        if (auto it = j.find("oracle"); it != j.end() && !it->is_null()) spec.oracle = *it;
        out.push_back(std::move(spec));
    }
    return out;
}

std::vector<InstanceSpec> load_instances(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open instances file " + path.string());
    return read_instances(in, path.parent_path());
}

std::uint64_t instance_seed(std::uint64_t run_seed, std::string_view instance_id) {
    return splitmix64(run_seed ^ fnv1a64(instance_id));
}

std::vector<FeaturePair> select_pairs(const Instance& instance, PairsMode mode) {
    std::vector<FeaturePair> pairs;
    const std::size_t n = instance.n_features;
    for (std::size_t a = 0; a < n; ++a) {
        if (mode == PairsMode::consecutive) {
            if (a + 1 < n) pairs.push_back({a, a + 1});
            continue;
        }
        for (std::size_t b = a + 1; b < n; ++b) pairs.push_back({a, b});
    }
    return pairs;
}

json substitute_instance_id(const json& spec, std::string_view instance_id) {
    if (spec.is_string()) {
        std::string s = spec.get<std::string>();
        constexpr std::string_view token = "{instance_id}";
        for (auto pos = s.find(token); pos != std::string::npos; pos = s.find(token, pos + instance_id.size())) {
            s.replace(pos, token.size(), instance_id);
        }
        return s;
    }
    if (spec.is_array() || spec.is_object()) {
        json out = spec;
        for (auto it = out.begin(); it != out.end(); ++it) *it = substitute_instance_id(*it, instance_id);
        return out;
    }
    return spec;
}

// --- compute ---

ComputeResult run_compute(const RunConfig& config, const std::vector<InstanceSpec>& instances_in) {
    std::vector<const InstanceSpec*> instances;
    for (const auto& s : instances_in) instances.push_back(&s);
    std::sort(instances.begin(), instances.end(),
              [](const InstanceSpec* a, const InstanceSpec* b) { return a->instance.instance_id < b->instance.instance_id; });
    for (std::size_t i = 1; i < instances.size(); ++i) {
        if (instances[i]->instance.instance_id == instances[i - 1]->instance.instance_id) {
            throw Error(ErrorCode::InvalidArgument, "duplicate instance_id '" + instances[i]->instance.instance_id + "'");
        }
    }
    for (const auto* s : instances) {
        if (s->instance.modality == Modality::text && s->instance.n_features > config.truncation) {
            throw Error(ErrorCode::InvalidArgument, "text instance '" + s->instance.instance_id + "' has " +
                                                        std::to_string(s->instance.n_features) +
                                                        " features, above the truncation length " +
                                                        std::to_string(config.truncation));
        }
        if (!s->oracle && config.oracle.empty()) {
            config_error("instance '" + s->instance.instance_id + "' has no oracle and the config sets none");
        }
    }

    const std::size_t outer = std::max<std::size_t>(1, std::min(config.threads, instances.size()));
    const std::size_t inner = std::max<std::size_t>(1, config.threads / outer);

    std::vector<std::vector<InteractionRecord>> per_instance(instances.size());
    std::vector<json> entries(instances.size());
    parallel_for(instances.size(), outer, [&](std::size_t i) {
        const Instance& inst = instances[i]->instance;
        const json spec = substitute_instance_id(instances[i]->oracle.value_or(config.oracle), inst.instance_id);

        OracleOptions options;
        options.output_mode = config.output_mode;
        options.batch_size = config.engine.batch_size;
        if (config.cache_dir) {
            const std::string key = spec.dump() + "\n" + instance_to_json(inst).dump() + "\n" +
                                    std::string(to_string(config.output_mode));
            options.disk_cache = *config.cache_dir / ("oracle-" + hex64(fnv1a64(key)) + ".jsonl");
        }
        Oracle oracle(make_backend(spec), inst, options);

        EngineConfig engine = config.engine;
        engine.threads = inner;
        engine.stii.sampling.seed = instance_seed(config.seed, inst.instance_id);
        const auto pairs = select_pairs(inst, config.pairs);
        per_instance[i] = stii_matrix(oracle, pairs, engine);

        entries[i] = {
            {"instance_id", inst.instance_id},
            {"seed", engine.stii.sampling.seed},
            {"n_features", inst.n_features},
            {"pairs", pairs.size()},
            {"oracle", spec},
            {"handshake", oracle.handshake().raw},
            {"call_count", oracle.call_count()},
            {"cache_hits", oracle.cache_hits()},
        };
    });

    ComputeResult result;
    for (auto& recs : per_instance) {
        for (auto& r : recs) result.records.push_back(std::move(r));
    }

    json config_json = run_config_to_json(config);
    config_json.erase("threads");
    config_json.erase("output_dir");
    result.manifest = {
        {"kind", "stii-manifest"},
        {"schema_version", kSchemaVersion},
        {"config_hash", config_hash(config)},
        {"config", config_json},
        {"records_file", "records.jsonl"},
        {"record_count", result.records.size()},
        {"instances", entries},
    };
    return result;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << content;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

ComputeResult cmd_compute(const RunConfig& config) {
    validate_run_config(config);
    if (!config.instances) config_error("compute needs an instances file");
    const auto instances = load_instances(*config.instances);
    if (instances.empty()) throw Error(ErrorCode::EmptyInput, "instances file holds no instance");
    auto result = run_compute(config, instances);

    std::ostringstream records;
    write_records(records, {kSchemaVersion, config_hash(config)}, result.records);
    result.manifest["records_fnv1a64"] = hex64(fnv1a64(records.str()));

    ensure_dir(config.output_dir);
    write_file(config.output_dir / "records.jsonl", records.str());
    write_file(config.output_dir / "manifest.json", result.manifest.dump(2) + "\n");
    return result;
}

// --- tables ---

std::string format_number(double value) {
    if (std::isnan(value)) return "NA";
    if (value == 0.0) return "0";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return ec == std::errc{} ? std::string(buf, ptr) : "NA";
}

void write_table(std::ostream& out, const Table& table, const std::string& footer) {
    const auto join = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << cells[i];
        out << '\n';
    };
    join(table.header);
    for (const auto& row : table.rows) join(row);
    out << "# " << footer << '\n';
}

namespace {

bool wants(const RunConfig& c, const std::string& name, bool by_default) {
    const auto& list = c.analysis.analyses;
    return list.empty() ? by_default : std::find(list.begin(), list.end(), name) != list.end();
}

std::vector<std::string> ci_cells(const std::optional<BootstrapCI>& ci) {
    if (!ci) return {"NA", "NA", "NA"};
    return {format_number(ci->mean), format_number(ci->lower), format_number(ci->upper)};
}

Table curve_table(const std::string& name, const std::string& column, const std::vector<CurvePoint>& points) {
    Table t{name, {column, "mean_stii", "count", "low_count"}, {}};
    for (const auto& p : points) {
        t.rows.push_back({std::to_string(p.distance), format_number(p.mean_stii), std::to_string(p.count),
                          p.low_count ? "1" : "0"});
    }
    return t;
}

void add_speech_tables(const RunConfig& config, const AnalyzeInputs& inputs, std::vector<Table>& tables) {
    const bool contrast = wants(config, "boundary_contrast", !inputs.alignments.empty());
    const bool heatmap = wants(config, "consonant_heatmap", !inputs.alignments.empty());
    if (!contrast && !heatmap) return;
    if (inputs.alignments.empty()) throw Error(ErrorCode::MissingAnnotations, "speech analyses need alignments");

    std::map<std::string, std::map<FeaturePair, double>> by_instance;
    for (const auto& r : inputs.records.records) by_instance[r.instance_id][r.pair] = r.stii;

    std::vector<double> deltas = config.analysis.deltas;
    if (heatmap) deltas.push_back(config.analysis.heatmap_delta);
    std::sort(deltas.begin(), deltas.end());
    deltas.erase(std::unique(deltas.begin(), deltas.end(),
                             [](double a, double b) { return std::abs(a - b) <= kTimeTolerance; }),
                 deltas.end());

    std::vector<const InstanceSpec*> speech;
    for (const auto& s : inputs.instances) {
        if (s.instance.modality == Modality::speech) speech.push_back(&s);
    }
    std::sort(speech.begin(), speech.end(),
              [](const InstanceSpec* a, const InstanceSpec* b) { return a->instance.instance_id < b->instance.instance_id; });

    std::vector<WindowMeasurement> measurements;
    Table windows{"boundary_windows",
                  {"instance_id", "boundary_index", "boundary_time", "left", "right", "type", "delta", "pairs", "empty",
                   "stii"},
                  {}};
    std::size_t joined = 0;
    for (const auto* s : speech) {
        const auto& id = s->instance.instance_id;
        const auto seg = inputs.alignments.find(id);
        const auto recs = by_instance.find(id);
        if (seg == inputs.alignments.end() || recs == by_instance.end()) continue;
        ++joined;
        for (double delta : deltas) {
            for (auto& w : boundary_windows(seg->second, s->instance.feature_times, delta)) {
                w.file_id = id;
                WindowMeasurement m{std::move(w), 0.0};
                if (!m.window.empty()) {
                    m.stii = window_stii_from_records(m.window, recs->second, config.analysis.window_aggregate);
                }
                const auto type = boundary_type(classify_phone(m.window.left_label), classify_phone(m.window.right_label));
                windows.rows.push_back({id, std::to_string(m.window.boundary_index),
                                        format_number(m.window.boundary_time), m.window.left_label,
                                        m.window.right_label, std::string(to_string(type)), format_number(delta),
                                        std::to_string(m.window.member_pairs.size()), m.window.empty() ? "1" : "0",
                                        m.window.empty() ? "NA" : format_number(m.stii)});
                measurements.push_back(std::move(m));
            }
        }
    }
    if (joined == 0) throw Error(ErrorCode::MissingAnnotations, "no speech instance has both records and an alignment");
    tables.push_back(std::move(windows));

    const BootstrapConfig boot{config.analysis.bootstrap_resamples, config.analysis.confidence_level, config.seed};
    if (contrast) {
        Table t{"boundary_contrast", {"delta", "type", "count", "mean", "lower", "upper", "empty_category"}, {}};
        for (const auto& p : boundary_contrast(measurements, config.analysis.deltas, boot)) {
            std::vector<std::string> row{format_number(p.delta), std::string(to_string(p.type)), std::to_string(p.count)};
            for (auto& c : ci_cells(p.ci)) row.push_back(std::move(c));
            row.push_back(p.empty_category ? "1" : "0");
            t.rows.push_back(std::move(row));
        }
        tables.push_back(std::move(t));
    }
    if (heatmap) {
        Table t{"consonant_heatmap", {"manner", "place", "voicing", "count", "mean_stii", "phones"}, {}};
        for (const auto& cell : consonant_heatmap(measurements, config.analysis.heatmap_delta,
                                                  config.analysis.heatmap_side)) {
            std::string phones;
            for (const auto& p : cell.phones) phones += (phones.empty() ? "" : ",") + p;
            t.rows.push_back({std::string(to_string(cell.manner)), std::string(to_string(cell.place)),
                              cell.voiced ? "voiced" : "voiceless", std::to_string(cell.count),
                              format_optional(cell.mean_stii), phones.empty() ? "-" : phones});
        }
        tables.push_back(std::move(t));
    }
}

}  // namespace

std::vector<Table> run_analyze(const RunConfig& config, const AnalyzeInputs& inputs) {
    const auto& records = inputs.records.records;
    if (records.empty()) throw Error(ErrorCode::EmptyInput, "records file holds no record");
    std::vector<Table> tables;

    if (wants(config, "distance_curves", true)) {
        const auto curves = distance_curves(records, config.analysis.min_count, config.analysis.pooling);
        tables.push_back(curve_table("distance_curve_pair", "d_i", curves.by_pair_distance));
        tables.push_back(curve_table("distance_curve_prediction", "d_p", curves.by_prediction_distance));
    }

    const bool have_annotations = !inputs.annotations.empty();
    if (wants(config, "syntax_grid", have_annotations)) {
        if (!have_annotations) throw Error(ErrorCode::MissingAnnotations, "syntax grid needs annotations");
        const GridConfig grid_config{config.analysis.min_count, config.analysis.alpha, config.seed};
        const auto grid = syntax_correlation_grid(records, inputs.annotations, grid_config);
        Table t{"syntax_grid", {"d_i", "d_p", "n", "rho", "p_value", "shown", "reason"}, {}};
        for (const auto& c : grid.cells) {
            t.rows.push_back({std::to_string(c.key.d_i), std::to_string(c.key.d_p), std::to_string(c.n),
                              format_optional(c.rho), format_optional(c.p_value), c.shown ? "1" : "0", c.reason});
        }
        tables.push_back(std::move(t));
        const auto& d = grid.diagnostics;
        Table diag{"syntax_grid_diagnostics", {"quantity", "value"}, {}};
        diag.rows = {{"joined", std::to_string(d.joined)},
                     {"unannotated", std::to_string(d.unannotated)},
                     {"unreachable", std::to_string(d.unreachable)},
                     {"missing_distances", std::to_string(d.missing_distances)},
                     {"filtered_by_min_count", std::to_string(d.filtered_by_min_count)}};
        for (const auto& [k, n] : d.syntactic_distance_counts) {
            diag.rows.push_back({"syntactic_distance_" + std::to_string(k), std::to_string(n)});
        }
        tables.push_back(std::move(diag));
    }
    if (wants(config, "mwe_comparison", have_annotations)) {
        if (!have_annotations) throw Error(ErrorCode::MissingAnnotations, "MWE comparison needs annotations");
        const BootstrapConfig boot{config.analysis.bootstrap_resamples, config.analysis.confidence_level, config.seed};
        Table t{"mwe_comparison", {"d_p", "d_i", "series", "count", "mean", "lower", "upper"}, {}};
        for (const auto& cell : mwe_comparison(records, inputs.annotations, boot)) {
            const std::pair<const char*, const SeriesPoint*> series[] = {
                {"strong", &cell.strong}, {"weak", &cell.weak}, {"all_pairs", &cell.baseline}};
            for (const auto& [name, s] : series) {
                std::vector<std::string> row{std::to_string(cell.key.d_p), std::to_string(cell.key.d_i), name,
                                             std::to_string(s->count)};
                for (auto& c : ci_cells(s->ci)) row.push_back(std::move(c));
                t.rows.push_back(std::move(row));
            }
        }
        tables.push_back(std::move(t));
    }

    add_speech_tables(config, inputs, tables);
    return tables;
}

std::vector<Table> cmd_analyze(const RunConfig& config) {
    validate_run_config(config);
    AnalyzeInputs inputs;
    const fs::path records_path = config.records.value_or(config.output_dir / "records.jsonl");
    {
        std::ifstream in(records_path);
        if (!in) config_error("records file " + records_path.string() + " does not exist");
        inputs.records = read_records(in);
    }
    if (config.annotations) {
        std::ifstream in(*config.annotations);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + config.annotations->string());
        inputs.annotations = read_annotations(in);
    }
    if (config.instances) inputs.instances = load_instances(*config.instances);
    if (config.alignments) {
        if (!config.instances) config_error("speech analyses need the instances file for feature times");
        for (const auto& s : inputs.instances) {
            if (s.instance.modality != Modality::speech) continue;
            const auto path = *config.alignments / (s.instance.instance_id + ".TextGrid");
            if (!fs::is_regular_file(path)) continue;
            auto segments = load_alignment(path);
            for (auto& seg : segments) seg.file_id = s.instance.instance_id;
            inputs.alignments.emplace(s.instance.instance_id, std::move(segments));
        }
    }

    auto tables = run_analyze(config, inputs);

    std::string footer = "schema_version=" + std::to_string(kSchemaVersion) + " config_hash=" + config_hash(config);
    if (!inputs.records.header.config_hash.empty()) footer += " records_config_hash=" + inputs.records.header.config_hash;
    ensure_dir(config.output_dir);
    for (const auto& t : tables) {
        std::ostringstream out;
        write_table(out, t, footer);
        write_file(config.output_dir / (t.name + ".tsv"), out.str());
    }
    if (!inputs.annotations.empty()) {
        std::ostringstream out;
        write_records(out, {kSchemaVersion, config_hash(config)},
                      tag_text_records(inputs.records.records, inputs.annotations));
        write_file(config.output_dir / "records_tagged.jsonl", out.str());
    }
    return tables;
}

// --- selftest ---

namespace {

struct NamedGame {
    std::string name;
    ToyGameSpec spec;
};

std::vector<NamedGame> selftest_games() {
    std::vector<NamedGame> games;
    games.push_back({"linear", ToyGameSpec::linear_game({0.5, -1.25, 2.0, 0.75, 3.0, -0.5})});
    auto unanimity = ToyGameSpec::unanimity_game(5, {0, 2});
    unanimity.output_scales = {1.0, -0.5};
    games.push_back({"unanimity", unanimity});
    games.push_back({"majority", ToyGameSpec::majority_game(6, 3)});
    std::vector<std::vector<double>> w(5, std::vector<double>(5, 0.0));
    Rng rng(7);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = i + 1; j < 5; ++j) w[i][j] = uniform01(rng) * 2.0 - 1.0;
    }
    games.push_back({"pairwise_product", ToyGameSpec::pairwise_product_game(w)});
    auto decaying = ToyGameSpec::decaying_interaction_game(6, 1.0);
    decaying.output_scales = {1.0, 2.0};
    games.push_back({"decaying_interaction", decaying});
    return games;
}

Oracle make_toy_oracle(const ToyGameSpec& spec) {
    Instance inst;
    inst.instance_id = "selftest";
    inst.n_features = spec.n_features;
    inst.output_dim = spec.output_dim();
    return Oracle(std::make_unique<ToyBackend>(spec), inst);
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
}

}  // namespace

std::vector<SelftestItem> run_selftest(const SelftestOptions& options) {
    std::vector<SelftestItem> items;
    const auto games = selftest_games();

    for (const auto& g : games) {
        auto oracle = make_toy_oracle(g.spec);
        const std::size_t n = g.spec.n_features;
        ValueVector total(g.spec.output_dim(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a[] = {i};
            const auto phi = exact_shapley(oracle, a, 20, options.weight).phi;
            for (std::size_t d = 0; d < total.size(); ++d) total[d] += phi[d];
        }
        const auto full = toy_game_evaluate(g.spec, CoalitionMask::full(n));
        const auto none = toy_game_evaluate(g.spec, CoalitionMask::empty(n));
        double err = 0.0;
        for (std::size_t d = 0; d < total.size(); ++d) err = std::max(err, std::abs(total[d] - (full[d] - none[d])));
        items.push_back({"efficiency/" + g.name, err <= 1e-9, "max error " + fmt(err)});
    }

    {
        auto oracle = make_toy_oracle(games[0].spec);
        double worst = 0.0;
        for (const auto mode : {ContextMode::empty_context, ContextMode::context_sampled}) {
            StiiConfig cfg;
            cfg.context_mode = mode;
            for (std::size_t a = 0; a < games[0].spec.n_features; ++a) {
                for (std::size_t b = a + 1; b < games[0].spec.n_features; ++b) {
                    worst = std::max(worst, exact_stii(oracle, a, b, cfg));
                }
            }
        }
        items.push_back({"additivity_null/linear", worst <= 1e-12, "max stii " + fmt(worst)});
    }

    for (const std::size_t n : {2u, 3u, 6u}) {
        auto oracle = make_toy_oracle(ToyGameSpec::unanimity_game(n, {0, 1}));
        double worst = 0.0;
        for (const auto mode : {ContextMode::empty_context, ContextMode::context_sampled}) {
            StiiConfig cfg;
            cfg.context_mode = mode;
            worst = std::max(worst, std::abs(exact_stii(oracle, 0, 1, cfg) - 1.0));
        }
        items.push_back({"unanimity_value/n=" + std::to_string(n), worst <= 1e-12, "max error " + fmt(worst)});
    }

    {
        // Every context sees the same second difference W_ab.
        const auto& g = games[3].spec;
        auto oracle = make_toy_oracle(g);
        const double norm = std::abs(toy_game_value(g, CoalitionMask::full(g.n_features)));
        double worst = 0.0;
        for (std::size_t a = 0; a < g.n_features; ++a) {
            for (std::size_t b = a + 1; b < g.n_features; ++b) {
                const double expected = std::abs(g.weight_matrix[a][b]) / norm;
                worst = std::max(worst, std::abs(exact_stii(oracle, a, b, StiiConfig{}) - expected));
            }
        }
        items.push_back({"pairwise_value/pairwise_product", worst <= 1e-12, "max error " + fmt(worst)});
    }

    // Sampled vs exact: within 3 standard errors in at least 90% of seeded trials.
    constexpr std::size_t kTrials = 20;
    for (const auto& g : games) {
        auto oracle = make_toy_oracle(g.spec);
        const std::size_t A[] = {0};
        const auto exact_phi = exact_shapley(oracle, A).phi;
        const auto exact_pair = exact_stii(oracle, 0, 1, StiiConfig{});
        std::size_t shapley_ok = 0;
        std::size_t stii_ok = 0;
        for (std::size_t t = 0; t < kTrials; ++t) {
            StiiConfig cfg;
            cfg.sampling.num_permutations = 2000;
            cfg.sampling.seed = splitmix64(options.seed + t);
            const auto s = sampled_shapley(oracle, A, cfg.sampling);
            bool ok = true;
            for (std::size_t d = 0; d < exact_phi.size(); ++d) {
                ok = ok && std::abs(s.phi[d] - exact_phi[d]) <= 3.0 * (*s.stderr_estimate)[d] + 1e-12;
            }
            shapley_ok += ok;
            const auto e = sampled_stii(oracle, 0, 1, cfg);
            stii_ok += std::abs(e.stii - exact_pair) <= 3.0 * e.stderr_estimate + 1e-12;
        }
        items.push_back({"sampled_shapley/" + g.name, shapley_ok * 10 >= kTrials * 9,
                         std::to_string(shapley_ok) + "/" + std::to_string(kTrials) + " within 3 stderr"});
        items.push_back({"sampled_stii/" + g.name, stii_ok * 10 >= kTrials * 9,
                         std::to_string(stii_ok) + "/" + std::to_string(kTrials) + " within 3 stderr"});
    }

    {
        const auto& g = games[4].spec;
        std::vector<FeaturePair> pairs;
        for (std::size_t a = 0; a < g.n_features; ++a) {
            for (std::size_t b = a + 1; b < g.n_features; ++b) pairs.push_back({a, b});
        }
        EngineConfig cfg;
        cfg.stii.sampling.num_permutations = 500;
        cfg.stii.sampling.seed = options.seed;
        std::vector<std::vector<InteractionRecord>> runs;
        for (const std::size_t threads : {1u, 4u}) {
            auto oracle = make_toy_oracle(g);
            cfg.threads = threads;
            runs.push_back(stii_matrix(oracle, pairs, cfg));
        }
        items.push_back({"determinism/threads", runs[0] == runs[1], "1 vs 4 threads"});
    }
    return items;
}

// --- errors ---

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ConfigError:
        case ErrorCode::InvalidArgument:
        case ErrorCode::ExactLimitExceeded:
            return 1;
        case ErrorCode::BackendUnreachable:
        case ErrorCode::MalformedResponse:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::NonFiniteValue:
        case ErrorCode::OracleError:
            return 2;
        default:
            return 3;
    }
}

std::string error_line(const Error& error) {
    json j;
    j["error"] = std::string(error.code_name());
    j["message"] = error.message();
    j["exit_code"] = exit_code_for(error.code());
    return j.dump();
}

}  // namespace stii
