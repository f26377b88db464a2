#include "stii/text_analysis.hpp"

#include <algorithm>
#include <deque>
#include <istream>
#include <set>

#include "stii/error.hpp"
#include "stii/random.hpp"

namespace stii {

using nlohmann::json;

std::string_view to_string(MweStrength s) {
    return s == MweStrength::strong ? "strong" : "weak";
}

namespace {

[[noreturn]] void bad(const std::string& id, const std::string& msg) {
    throw Error(ErrorCode::InvalidAnnotation, "annotation '" + id + "': " + msg);
}

std::size_t checked_index(const json& v, std::size_t n, const std::string& id, const char* what) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad(id, std::string(what) + " must be a token index");
    const auto i = v.get<std::size_t>();
    if (i >= n) {
        throw Error(ErrorCode::IndexOutOfRange, "annotation '" + id + "': " + what + " " + std::to_string(i) +
                                                    " out of range for " + std::to_string(n) + " tokens");
    }
    return i;
}

}  // namespace

SentenceAnnotation parse_annotation(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaMismatch, "annotation line must be a JSON object");
    if (j.value("schema_version", 0) != kSchemaVersion) {
        throw Error(ErrorCode::SchemaMismatch, "annotation schema_version must be " + std::to_string(kSchemaVersion));
    }
    SentenceAnnotation s;
    try {
        s.instance_id = j.at("instance_id").get<std::string>();
        s.tokens = j.at("tokens").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, std::string("annotation: ") + e.what());
    }
    const std::string& id = s.instance_id;
    const std::size_t n = s.tokens.size();
    s.annotations.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.annotations[i].token_index = i;

    if (auto it = j.find("heads"); it != j.end()) {
        if (!it->is_array() || it->size() != n) bad(id, "heads must list one entry per token");
        for (std::size_t i = 0; i < n; ++i) {
            const auto& h = (*it)[i];
            if (h.is_null()) continue;
            const auto head = checked_index(h, n, id, "head");
            if (head == i) bad(id, "token " + std::to_string(i) + " is its own head");
            s.annotations[i].head_index = head;
        }
    }
    // Following heads from any token must reach a root.
    for (std::size_t start = 0; start < n; ++start) {
        std::size_t cur = start;
        for (std::size_t steps = 0; s.annotations[cur].head_index; ++steps) {
            if (steps > n) bad(id, "dependency heads contain a cycle");
            cur = *s.annotations[cur].head_index;
        }
    }

    if (auto it = j.find("mwe_groups"); it != j.end() && !it->is_null()) {
        std::set<int> ids;
        for (const auto& g : *it) {
            MweTag tag;
            try {
                tag.group_id = g.at("id").get<int>();
                const auto strength = g.at("strength").get<std::string>();
                if (strength == "strong") {
                    tag.strength = MweStrength::strong;
                } else if (strength == "weak") {
                    tag.strength = MweStrength::weak;
                } else {
                    bad(id, "mwe strength must be strong or weak");
                }
            } catch (const json::exception& e) {
                bad(id, std::string("mwe group: ") + e.what());
            }
            if (!ids.insert(tag.group_id).second) bad(id, "duplicate mwe group id");
            const auto& members = g.at("members");
            if (!members.is_array() || members.size() < 2) bad(id, "mwe group needs at least two members");
            for (const auto& m : members) {
                const auto t = checked_index(m, n, id, "mwe member");
                if (s.annotations[t].mwe_group) bad(id, "token " + std::to_string(t) + " is in two mwe groups");
                s.annotations[t].mwe_group = tag;
            }
        }
    }

    if (auto it = j.find("overlap_groups"); it != j.end() && !it->is_null()) {
        int gid = 0;
        for (const auto& g : *it) {
            if (!g.is_array() || g.empty()) bad(id, "overlap group must be a non-empty list");
            std::vector<std::size_t> members;
            for (const auto& m : g) members.push_back(checked_index(m, n, id, "overlap member"));
            std::sort(members.begin(), members.end());
            for (std::size_t k = 1; k < members.size(); ++k) {
                if (members[k] != members[k - 1] + 1) bad(id, "overlap group members must be contiguous");
            }
            for (auto t : members) {
                if (s.annotations[t].overlap_group) bad(id, "token " + std::to_string(t) + " is in two overlap groups");
                s.annotations[t].overlap_group = gid;
            }
            ++gid;
        }
    }

    if (auto it = j.find("target_index"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<std::int64_t>() < 0 || it->get<std::size_t>() > n) {
            bad(id, "target_index must be in [0, n_tokens]");
        }
        s.target_index = it->get<std::size_t>();
    }
    return s;
}

json annotation_to_json(const SentenceAnnotation& s) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["instance_id"] = s.instance_id;
    j["tokens"] = s.tokens;
    auto heads = nlohmann::ordered_json::array();
    std::map<int, std::pair<MweStrength, std::vector<std::size_t>>> mwes;
    std::map<int, std::vector<std::size_t>> overlaps;
    for (const auto& a : s.annotations) {
        heads.push_back(a.head_index ? nlohmann::ordered_json(*a.head_index) : nlohmann::ordered_json(nullptr));
        if (a.mwe_group) {
            auto& g = mwes[a.mwe_group->group_id];
            g.first = a.mwe_group->strength;
            g.second.push_back(a.token_index);
        }
        if (a.overlap_group) overlaps[*a.overlap_group].push_back(a.token_index);
    }
    j["heads"] = heads;
    auto groups = nlohmann::ordered_json::array();
    for (const auto& [gid, g] : mwes) {
        groups.push_back({{"id", gid}, {"strength", std::string(to_string(g.first))}, {"members", g.second}});
    }
    j["mwe_groups"] = groups;
    auto ov = nlohmann::ordered_json::array();
    for (const auto& [gid, members] : overlaps) ov.push_back(members);
    j["overlap_groups"] = ov;
    j["target_index"] = s.target_index ? nlohmann::ordered_json(*s.target_index) : nlohmann::ordered_json(nullptr);
    return j;
}

std::vector<SentenceAnnotation> read_annotations(std::istream& in) {
    std::vector<SentenceAnnotation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::SchemaMismatch, "annotation line " + std::to_string(line_no) + " is not JSON");
        }
        out.push_back(parse_annotation(j));
    }
    return out;
}

// --- DependencyForest ---

DependencyForest::DependencyForest(const SentenceAnnotation& sentence) : n_(sentence.annotations.size()) {
    node_of_.assign(n_, 0);
    std::map<int, std::size_t> group_node;
    for (std::size_t t = 0; t < n_; ++t) {
        const auto& a = sentence.annotations[t];
        if (a.overlap_group) {
            auto [it, inserted] = group_node.try_emplace(*a.overlap_group, nodes_);
            if (inserted) ++nodes_;
            node_of_[t] = it->second;
        } else {
            node_of_[t] = nodes_++;
        }
    }
    std::vector<std::vector<std::size_t>> adj(nodes_);
    for (std::size_t t = 0; t < n_; ++t) {
        const auto& head = sentence.annotations[t].head_index;
        if (!head) continue;
        const auto u = node_of_[t];
        const auto v = node_of_[*head];
        if (u == v) continue;
        adj[u].push_back(v);
        adj[v].push_back(u);
    }
    dist_.assign(nodes_ * nodes_, std::nullopt);
    std::deque<std::size_t> queue;
    for (std::size_t src = 0; src < nodes_; ++src) {
        auto* row = dist_.data() + src * nodes_;
        row[src] = 0;
        queue.assign(1, src);
        while (!queue.empty()) {
            const auto u = queue.front();
            queue.pop_front();
            for (auto v : adj[u]) {
                if (row[v]) continue;
                row[v] = *row[u] + 1;
                queue.push_back(v);
            }
        }
    }
}

std::optional<std::size_t> DependencyForest::distance(std::size_t t1, std::size_t t2) const {
    if (t1 >= n_ || t2 >= n_) {
        throw Error(ErrorCode::IndexOutOfRange, "token index out of range for " + std::to_string(n_) + " tokens");
    }
    return dist_[node_of_[t1] * nodes_ + node_of_[t2]];
}

std::optional<std::size_t> syntactic_distance(const SentenceAnnotation& sentence, std::size_t t1, std::size_t t2) {
    return DependencyForest(sentence).distance(t1, t2);
}

// --- distance curves ---

namespace {

std::vector<CurvePoint> curve_for(std::span<const InteractionRecord> records,
                                  const std::optional<std::uint64_t> InteractionRecord::*field, std::size_t min_count,
                                  CurvePooling pooling) {
    struct Acc {
        double sum = 0.0;
        std::size_t count = 0;
    };
    std::map<std::uint64_t, Acc> pooled;
    std::map<std::uint64_t, std::map<std::string, Acc>> per_instance;
    for (const auto& r : records) {
        const auto& d = r.*field;
        if (!d) continue;
        auto& p = pooled[*d];
        p.sum += r.stii;
        ++p.count;
        if (pooling == CurvePooling::per_instance) {
            auto& q = per_instance[*d][r.instance_id];
            q.sum += r.stii;
            ++q.count;
        }
    }
    std::vector<CurvePoint> out;
    for (const auto& [d, acc] : pooled) {
        CurvePoint pt;
        pt.distance = d;
        pt.count = acc.count;
        pt.low_count = acc.count < min_count;
        if (pooling == CurvePooling::pooled) {
            pt.mean_stii = acc.sum / static_cast<double>(acc.count);
        } else {
            double sum = 0.0;
            const auto& inst = per_instance[d];
            for (const auto& [id, q] : inst) sum += q.sum / static_cast<double>(q.count);
            pt.mean_stii = sum / static_cast<double>(inst.size());
        }
        out.push_back(pt);
    }
    return out;
}

}  // namespace

DistanceCurves distance_curves(std::span<const InteractionRecord> records, std::size_t min_count,
                               CurvePooling pooling) {
    DistanceCurves c;
    c.by_pair_distance = curve_for(records, &InteractionRecord::d_i, min_count, pooling);
    c.by_prediction_distance = curve_for(records, &InteractionRecord::d_p, min_count, pooling);
    if (c.by_pair_distance.empty() && c.by_prediction_distance.empty()) {
        throw Error(ErrorCode::EmptyInput, "no records carry d_i or d_p");
    }
    return c;
}

// --- syntax grid ---

AnnotationIndex index_annotations(std::span<const SentenceAnnotation> sentences) {
    AnnotationIndex idx;
    for (const auto& s : sentences) idx.emplace(s.instance_id, &s);
    return idx;
}

namespace {

// d_i and d_p for a record, falling back to the annotation's target index.
std::optional<StratumKey> stratum_of(const InteractionRecord& r, const SentenceAnnotation& s) {
    StratumKey key;
    key.d_i = r.d_i.value_or(r.pair.second - r.pair.first);
    if (r.d_p) {
        key.d_p = *r.d_p;
    } else if (s.target_index) {
        key.d_p = prediction_distance(r.pair.first, r.pair.second, *s.target_index);
    } else {
        return std::nullopt;
    }
    return key;
}

std::uint64_t stratum_seed(std::uint64_t seed, const StratumKey& key, std::uint64_t salt = 0) {
    return splitmix64(seed ^ splitmix64(key.d_i * 0x100000001b3ull + key.d_p) ^ splitmix64(salt + 0x51));
}

}  // namespace

SyntaxGrid syntax_grid_from_points(std::span<const SyntaxPoint> points, const GridConfig& config,
                                   bool filter_before_assignment) {
    SyntaxGrid grid;
    std::map<std::size_t, std::size_t> counts;
    std::set<std::uint64_t> modifier_distances;
    for (const auto& p : points) {
        ++counts[p.syntactic_distance];
        if (p.syntactic_distance == 1) modifier_distances.insert(p.key.d_i);
    }
    grid.diagnostics.syntactic_distance_counts = counts;
    auto passes = [&](const SyntaxPoint& p) { return counts[p.syntactic_distance] >= config.min_count; };

    std::map<StratumKey, std::vector<const SyntaxPoint*>> cells;
    if (filter_before_assignment) {
        std::vector<const SyntaxPoint*> kept;
        for (const auto& p : points) {
            cells.try_emplace(p.key);
            if (passes(p)) kept.push_back(&p);
        }
        for (const auto* p : kept) cells[p->key].push_back(p);
    } else {
        for (const auto& p : points) cells[p.key].push_back(&p);
        for (auto& [key, members] : cells) {
            std::erase_if(members, [&](const SyntaxPoint* p) { return !passes(*p); });
        }
    }

    for (const auto& [key, members] : cells) {
        GridCell cell;
        cell.key = key;
        cell.n = members.size();
        if (members.size() < 3) {
            cell.reason = "insufficient data";
            grid.cells.push_back(cell);
            continue;
        }
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto* p : members) {
            xs.push_back(static_cast<double>(p->syntactic_distance));
            ys.push_back(p->stii);
        }
        try {
            SpearmanOptions opts;
            opts.seed = stratum_seed(config.seed, key);
            const auto r = spearman(xs, ys, opts);
            cell.rho = r.rho;
            cell.p_value = r.p_value;
            if (!(r.p_value < config.alpha)) {
                cell.reason = "not significant";
            } else if (!modifier_distances.contains(key.d_i)) {
                cell.reason = "no direct modifier pair";
            } else {
                cell.shown = true;
                cell.reason = "shown";
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateInput) throw;
            cell.reason = "degenerate";
        }
        grid.cells.push_back(cell);
    }
    std::size_t kept = 0;
    for (const auto& c : grid.cells) kept += c.n;
    grid.diagnostics.filtered_by_min_count = points.size() - kept;
    return grid;
}

SyntaxGrid syntax_correlation_grid(std::span<const InteractionRecord> records,
                                   std::span<const SentenceAnnotation> annotations, const GridConfig& config) {
    const auto index = index_annotations(annotations);
    std::unordered_map<std::string, DependencyForest> forests;
    std::vector<SyntaxPoint> points;
    GridDiagnostics diag;
    for (const auto& r : records) {
        const auto it = index.find(r.instance_id);
        if (it == index.end()) {
            ++diag.unannotated;
            continue;
        }
        const SentenceAnnotation& s = *it->second;
        ++diag.joined;
        auto forest_it = forests.find(r.instance_id);
        if (forest_it == forests.end()) forest_it = forests.emplace(r.instance_id, DependencyForest(s)).first;
        const auto key = stratum_of(r, s);
        if (!key) {
            ++diag.missing_distances;
            continue;
        }
        const auto synd = forest_it->second.distance(r.pair.first, r.pair.second);
        if (!synd) {
            ++diag.unreachable;
            continue;
        }
        points.push_back({*key, *synd, r.stii});
    }
    if (diag.joined == 0) {
        throw Error(ErrorCode::MissingAnnotations, "no record matches an annotated instance_id");
    }
    SyntaxGrid grid = syntax_grid_from_points(points, config, true);
    diag.filtered_by_min_count = grid.diagnostics.filtered_by_min_count;
    diag.syntactic_distance_counts = grid.diagnostics.syntactic_distance_counts;
    grid.diagnostics = diag;
    return grid;
}

// --- MWE comparison ---

namespace {

std::optional<MweStrength> shared_mwe(const SentenceAnnotation& s, const FeaturePair& p) {
    if (p.second >= s.annotations.size()) {
        throw Error(ErrorCode::IndexOutOfRange, "record pair outside annotated tokens of '" + s.instance_id + "'");
    }
    const auto& a = s.annotations[p.first].mwe_group;
    const auto& b = s.annotations[p.second].mwe_group;
    if (a && b && a->group_id == b->group_id) return a->strength;
    return std::nullopt;
}

SeriesPoint series_point(const std::vector<double>& values, const BootstrapConfig& cfg, std::uint64_t seed) {
    SeriesPoint pt;
    pt.count = values.size();
    if (!values.empty()) pt.ci = bootstrap_mean_ci(values, cfg.resamples, cfg.level, seed);
    return pt;
}

}  // namespace

std::vector<MweCell> mwe_comparison(std::span<const InteractionRecord> records,
                                    std::span<const SentenceAnnotation> annotations, const BootstrapConfig& bootstrap) {
    const auto index = index_annotations(annotations);
    struct Series {
        std::vector<double> strong, weak, baseline;
    };
    // Ordered by facet d_p, then d_i.
    std::map<std::pair<std::uint64_t, std::uint64_t>, Series> cells;
    std::size_t joined = 0;
    for (const auto& r : records) {
        const auto it = index.find(r.instance_id);
        if (it == index.end()) continue;
        ++joined;
        const auto key = stratum_of(r, *it->second);
        if (!key) continue;
        auto& series = cells[{key->d_p, key->d_i}];
        series.baseline.push_back(r.stii);
        if (const auto strength = shared_mwe(*it->second, r.pair)) {
            (*strength == MweStrength::strong ? series.strong : series.weak).push_back(r.stii);
        }
    }
    if (joined == 0) throw Error(ErrorCode::MissingAnnotations, "no record matches an annotated instance_id");

    std::vector<MweCell> out;
    for (const auto& [k, series] : cells) {
        MweCell cell;
        cell.key = {k.second, k.first};
        cell.strong = series_point(series.strong, bootstrap, stratum_seed(bootstrap.seed, cell.key, 1));
        cell.weak = series_point(series.weak, bootstrap, stratum_seed(bootstrap.seed, cell.key, 2));
        cell.baseline = series_point(series.baseline, bootstrap, stratum_seed(bootstrap.seed, cell.key, 3));
        out.push_back(std::move(cell));
    }
    return out;
}

std::vector<InteractionRecord> tag_text_records(std::span<const InteractionRecord> records,
                                                std::span<const SentenceAnnotation> annotations) {
    const auto index = index_annotations(annotations);
    std::unordered_map<std::string, DependencyForest> forests;
    std::vector<InteractionRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        InteractionRecord tagged = r;
        if (const auto it = index.find(r.instance_id); it != index.end()) {
            auto f = forests.find(r.instance_id);
            if (f == forests.end()) f = forests.emplace(r.instance_id, DependencyForest(*it->second)).first;
            const auto synd = f->second.distance(r.pair.first, r.pair.second);
            tagged.strata_tags.push_back("syntactic_distance:" + (synd ? std::to_string(*synd) : "unreachable"));
            const auto mwe = shared_mwe(*it->second, r.pair);
            tagged.strata_tags.push_back("mwe:" + (mwe ? std::string(to_string(*mwe)) : std::string("none")));
        }
        out.push_back(std::move(tagged));
    }
    return out;
}

}  // namespace stii
