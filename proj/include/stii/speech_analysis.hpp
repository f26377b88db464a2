#pragma once
// Phone-boundary interval analysis for speech models: forced-alignment
// ingestion, phone classes, boundary windows, and the aggregations built on
// window-averaged interactions.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"
#include "stii/engine.hpp"
#include "stii/stats.hpp"
#include "stii/text_analysis.hpp"

namespace stii {

// --- phone classes ---

enum class Manner { none, stop, affricate, fricative, nasal, lateral, approximant, silence };
enum class Place { none, bilabial, labiodental, dental, alveolar, postalveolar, palatal, velar, labial_velar, glottal };

std::string_view to_string(Manner m);
std::string_view to_string(Place p);

struct PhoneClass {
    std::string label;
    bool is_vowel = false;
    Manner manner = Manner::none;
    Place place = Place::none;
    bool voiced = false;
    int sonority_rank = 0;

    bool is_silence() const noexcept { return manner == Manner::silence; }
    bool is_consonant() const noexcept { return !is_vowel && !is_silence(); }
};

class PhoneTable {
public:
    // Tab-separated: label, is_vowel, manner, place, voiced, sonority_rank;
    // '#' lines are comments and the first non-comment line is the header.
    static PhoneTable parse(std::istream& in);
    static PhoneTable load(const std::filesystem::path& path);
    // The ARPABET table shipped with the library.
    static const PhoneTable& arpabet();

    // Uppercases, strips vowel stress digits, maps "" to SIL. Throws UnknownPhoneLabel.
    const PhoneClass& classify(std::string_view label) const;
    bool contains(std::string_view label) const noexcept;
    const std::map<std::string, PhoneClass>& entries() const noexcept { return entries_; }

private:
    const PhoneClass* find(std::string_view label) const noexcept;
    std::map<std::string, PhoneClass> entries_;
};

const PhoneClass& classify_phone(std::string_view label);

// --- alignments ---

struct PhoneSegment {
    std::string label;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string file_id;
};

struct TextGridInterval {
    double xmin = 0.0;
    double xmax = 0.0;
    std::string text;
};

struct TextGridTier {
    std::string tier_class;  // IntervalTier or TextTier
    std::string name;
    std::vector<TextGridInterval> intervals;  // points store xmin == xmax
};

// Reads Praat TextGrid text files in long or short form. Throws ParseError.
std::vector<TextGridTier> parse_textgrid(std::string_view content);

// The "phones" tier (or "<speaker> - phones") as validated segments.
// Throws ParseError, OverlapError, UnknownPhoneLabel.
std::vector<PhoneSegment> load_alignment_text(std::string_view content, std::string file_id,
                                              const PhoneTable& table = PhoneTable::arpabet());
std::vector<PhoneSegment> load_alignment(const std::filesystem::path& path,
                                         const PhoneTable& table = PhoneTable::arpabet());

// --- feature times ---

// Sidecar written next to a speech oracle:
//   {"schema_version":1,"instance_id":"...","feature_times":[...],
//    "granularity":{"window_s":0.025,"stride_s":0.02}}
struct FeatureTimes {
    std::string instance_id;
    std::vector<double> times;  // receptive-window centers, seconds
    std::optional<double> window_s;
    std::optional<double> stride_s;
};

// Throws SchemaMismatch, NonIncreasingTimes.
FeatureTimes parse_feature_times(const nlohmann::json& j);
nlohmann::json feature_times_to_json(const FeatureTimes& times);

// --- boundary windows ---

struct BoundaryWindow {
    std::string file_id;
    std::size_t boundary_index = 0;  // index of the left segment
    double boundary_time = 0.0;
    std::string left_label;
    std::string right_label;
    double delta = 0.0;
    // Consecutive (t, t+1) pairs whose left timestamp lies in [t_b - delta, t_b + delta].
    std::vector<FeaturePair> member_pairs;

    bool empty() const noexcept { return member_pairs.empty(); }
};

// Timestamps within this distance of an interval edge count as on the edge.
inline constexpr double kTimeTolerance = 1e-9;

std::vector<BoundaryWindow> boundary_windows(std::span<const PhoneSegment> segments,
                                             std::span<const double> feature_times, double delta);

enum class WindowAggregate { mean, sum };

// Mean (or sum) of pair STII over the window's member pairs. Throws EmptyWindow.
double window_stii(Oracle& oracle, const BoundaryWindow& window, const EngineConfig& config,
                   WindowAggregate aggregate = WindowAggregate::mean);

// Same aggregation over precomputed records of one instance.
double window_stii_from_records(const BoundaryWindow& window, const std::map<FeaturePair, double>& pair_stii,
                                WindowAggregate aggregate = WindowAggregate::mean);

struct WindowMeasurement {
    BoundaryWindow window;
    double stii = 0.0;
};

// --- aggregations ---

enum class BoundaryType { consonant_vowel, consonant_consonant, vowel_vowel, silence_adjacent };
std::string_view to_string(BoundaryType t);
BoundaryType boundary_type(const PhoneClass& left, const PhoneClass& right) noexcept;

struct ContrastPoint {
    double delta = 0.0;
    BoundaryType type = BoundaryType::consonant_vowel;
    std::size_t count = 0;
    std::optional<BootstrapCI> ci;
    bool empty_category = false;
};

// Per delta, per boundary type: mean STII across windows with a bootstrap CI.
// Empty windows are skipped.
std::vector<ContrastPoint> boundary_contrast(std::span<const WindowMeasurement> measurements,
                                             std::span<const double> deltas, const BootstrapConfig& bootstrap = {},
                                             const PhoneTable& table = PhoneTable::arpabet());

enum class HeatmapSide { both, left, right };

struct HeatmapCell {
    Manner manner = Manner::stop;
    Place place = Place::bilabial;
    bool voiced = false;
    std::size_t count = 0;
    std::optional<double> mean_stii;
    std::vector<std::string> phones;
};

// Chart-shaped table: every (manner, place, voicing) cell in chart order,
// empty where no data. A consonant collects the windows it borders on the
// selected side(s).
std::vector<HeatmapCell> consonant_heatmap(std::span<const WindowMeasurement> measurements, double delta = 0.1,
                                           HeatmapSide side = HeatmapSide::both,
                                           const PhoneTable& table = PhoneTable::arpabet());

}  // namespace stii
