#pragma once
// Joins interaction records with token annotations: positional-distance
// curves, the syntactic-distance correlation grid, and MWE comparisons.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"
#include "stii/distance.hpp"
#include "stii/stats.hpp"

namespace stii {

enum class MweStrength { strong, weak };
std::string_view to_string(MweStrength s);

struct MweTag {
    int group_id = 0;
    MweStrength strength = MweStrength::strong;
};

struct TokenAnnotation {
    std::size_t token_index = 0;
    std::optional<std::size_t> head_index;  // absent for a root
    std::optional<MweTag> mwe_group;
    std::optional<int> overlap_group;  // model tokens sharing one linguistic token
};

// One sentence of the annotation file.
struct SentenceAnnotation {
    std::string instance_id;
    std::vector<std::string> tokens;
    std::vector<TokenAnnotation> annotations;
    std::optional<std::size_t> target_index;
};

// Parses and validates one annotation object:
//   {"schema_version":1,"instance_id":"...","tokens":[...],"heads":[h|null,...],
//    "mwe_groups":[{"id":0,"strength":"strong","members":[...]}],
//    "overlap_groups":[[i,j],...],"target_index":k}
// Throws InvalidAnnotation / IndexOutOfRange / SchemaMismatch.
SentenceAnnotation parse_annotation(const nlohmann::json& j);
nlohmann::json annotation_to_json(const SentenceAnnotation& sentence);
// One object per line; blank lines skipped.
std::vector<SentenceAnnotation> read_annotations(std::istream& in);

// Undirected dependency forest with overlap groups contracted to one node.
class DependencyForest {
public:
    explicit DependencyForest(const SentenceAnnotation& sentence);

    std::size_t size() const noexcept { return n_; }
    // Shortest path length in edges; 0 within an overlap group; nullopt when
    // the tokens lie in different trees. Throws IndexOutOfRange.
    std::optional<std::size_t> distance(std::size_t t1, std::size_t t2) const;

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> node_of_;                // token -> contracted node
    std::vector<std::optional<std::size_t>> dist_;  // all-pairs over nodes, row-major
    std::size_t nodes_ = 0;
};

std::optional<std::size_t> syntactic_distance(const SentenceAnnotation& sentence, std::size_t t1, std::size_t t2);

// --- distance curves ---

enum class CurvePooling { pooled, per_instance };

struct CurvePoint {
    std::uint64_t distance = 0;
    double mean_stii = 0.0;
    std::size_t count = 0;
    bool low_count = false;
};

struct DistanceCurves {
    std::vector<CurvePoint> by_pair_distance;        // d_i
    std::vector<CurvePoint> by_prediction_distance;  // d_p
};

// Throws EmptyInput when no record carries a distance.
DistanceCurves distance_curves(std::span<const InteractionRecord> records, std::size_t min_count = 50,
                               CurvePooling pooling = CurvePooling::pooled);

// --- syntax correlation grid ---

struct StratumKey {
    std::uint64_t d_i = 1;
    std::uint64_t d_p = 0;
    friend auto operator<=>(const StratumKey&, const StratumKey&) = default;
};

struct GridConfig {
    std::size_t min_count = 50;
    double alpha = 0.05;
    std::uint64_t seed = 0;
};

struct GridCell {
    StratumKey key;
    std::size_t n = 0;  // pairs entering the correlation
    std::optional<double> rho;
    std::optional<double> p_value;
    bool shown = false;
    std::string reason;  // "shown", "degenerate", "insufficient data", "not significant", "no direct modifier pair"
};

struct GridDiagnostics {
    std::size_t joined = 0;
    std::size_t unannotated = 0;
    std::size_t unreachable = 0;
    std::size_t missing_distances = 0;
    std::size_t filtered_by_min_count = 0;
    std::map<std::size_t, std::size_t> syntactic_distance_counts;
};

struct SyntaxGrid {
    std::vector<GridCell> cells;  // ordered by (d_i, d_p)
    GridDiagnostics diagnostics;
};

// A record joined with its syntactic distance.
struct SyntaxPoint {
    StratumKey key;
    std::size_t syntactic_distance = 0;
    double stii = 0.0;
};

using AnnotationIndex = std::unordered_map<std::string, const SentenceAnnotation*>;
AnnotationIndex index_annotations(std::span<const SentenceAnnotation> sentences);

// Throws MissingAnnotations when no record joins an annotation.
SyntaxGrid syntax_correlation_grid(std::span<const InteractionRecord> records,
                                   std::span<const SentenceAnnotation> annotations, const GridConfig& config = {});

// Grid over pre-joined points. filter_before_assignment selects whether the
// min-count filter runs on the flat point list or per cell; both give the same cells.
SyntaxGrid syntax_grid_from_points(std::span<const SyntaxPoint> points, const GridConfig& config,
                                   bool filter_before_assignment = true);

// --- MWE comparison ---

struct SeriesPoint {
    std::size_t count = 0;
    std::optional<BootstrapCI> ci;  // absent when count == 0 (a gap)
};

struct MweCell {
    StratumKey key;
    SeriesPoint strong;
    SeriesPoint weak;
    SeriesPoint baseline;
};

struct BootstrapConfig {
    std::size_t resamples = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
};

// Per-(d_p, d_i) strong/weak/all-pairs series. A pair is in an MWE iff both
// tokens carry the same group id. Baseline includes MWE pairs.
std::vector<MweCell> mwe_comparison(std::span<const InteractionRecord> records,
                                    std::span<const SentenceAnnotation> annotations,
                                    const BootstrapConfig& bootstrap = {});

// Copies of the records with syntax and MWE strata tags appended.
std::vector<InteractionRecord> tag_text_records(std::span<const InteractionRecord> records,
                                                std::span<const SentenceAnnotation> annotations);

}  // namespace stii
