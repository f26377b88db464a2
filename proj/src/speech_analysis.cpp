#include "stii/speech_analysis.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stii/error.hpp"
#include "stii/random.hpp"

namespace stii {

namespace detail {
extern const std::string_view kArpabetTable;
}

namespace {

constexpr std::pair<Manner, std::string_view> kMannerNames[] = {
    {Manner::none, "-"},          {Manner::stop, "stop"},       {Manner::affricate, "affricate"},
    {Manner::fricative, "fricative"}, {Manner::nasal, "nasal"}, {Manner::lateral, "lateral"},
    {Manner::approximant, "approximant"}, {Manner::silence, "silence"},
};

constexpr std::pair<Place, std::string_view> kPlaceNames[] = {
    {Place::none, "-"},
    {Place::bilabial, "bilabial"},
    {Place::labiodental, "labiodental"},
    {Place::dental, "dental"},
    {Place::alveolar, "alveolar"},
    {Place::postalveolar, "postalveolar"},
    {Place::palatal, "palatal"},
    {Place::velar, "velar"},
    {Place::labial_velar, "labial-velar"},
    {Place::glottal, "glottal"},
};

Manner parse_manner(std::string_view s) {
    for (const auto& [m, name] : kMannerNames) {
        if (name == s) return m;
    }
    throw Error(ErrorCode::ParseError, "unknown manner '" + std::string(s) + "'");
}

Place parse_place(std::string_view s) {
    if (s == "labial_velar") return Place::labial_velar;
    for (const auto& [p, name] : kPlaceNames) {
        if (name == s) return p;
    }
    throw Error(ErrorCode::ParseError, "unknown place '" + std::string(s) + "'");
}

bool parse_flag(std::string_view s) {
    if (s == "1") return true;
    if (s == "0") return false;
    throw Error(ErrorCode::ParseError, "expected 0 or 1, got '" + std::string(s) + "'");
}

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string_view to_string(Manner m) {
    for (const auto& [v, name] : kMannerNames) {
        if (v == m) return name;
    }
    return "-";
}

std::string_view to_string(Place p) {
    for (const auto& [v, name] : kPlaceNames) {
        if (v == p) return name;
    }
    return "-";
}

PhoneTable PhoneTable::parse(std::istream& in) {
    PhoneTable table;
    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.emplace_back(trim(col));
        if (!header_seen) {
            header_seen = true;
            const std::vector<std::string> expected{"label", "is_vowel", "manner", "place", "voiced", "sonority_rank"};
            if (cols != expected) throw Error(ErrorCode::ParseError, "phone table header does not match");
            continue;
        }
        if (cols.size() != 6) {
            throw Error(ErrorCode::ParseError, "phone table line " + std::to_string(line_no) + " needs 6 columns");
        }
        PhoneClass c;
        c.label = upper(cols[0]);
        c.is_vowel = parse_flag(cols[1]);
        c.manner = parse_manner(cols[2]);
        c.place = parse_place(cols[3]);
        c.voiced = parse_flag(cols[4]);
        c.sonority_rank = std::stoi(cols[5]);
        if (c.is_vowel && c.manner != Manner::none) {
            throw Error(ErrorCode::ParseError, "vowel " + c.label + " cannot carry a manner");
        }
        if (!table.entries_.emplace(c.label, c).second) {
            throw Error(ErrorCode::ParseError, "duplicate phone label " + c.label);
        }
    }
    if (!header_seen) throw Error(ErrorCode::ParseError, "phone table is empty");
    return table;
}

PhoneTable PhoneTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open phone table " + path.string());
    return parse(in);
}

const PhoneTable& PhoneTable::arpabet() {
    static const PhoneTable table = [] {
        std::istringstream in{std::string(detail::kArpabetTable)};
        return parse(in);
    }();
    return table;
}

const PhoneClass* PhoneTable::find(std::string_view label) const noexcept {
    std::string key = upper(trim(label));
    if (key.empty()) key = "SIL";
    if (auto it = entries_.find(key); it != entries_.end()) return &it->second;
    // Stress digits appear only on vowels.
    const auto end = key.find_last_not_of("0123456789");
    if (end == std::string::npos || end + 1 == key.size()) return nullptr;
    key.resize(end + 1);
    if (auto it = entries_.find(key); it != entries_.end() && it->second.is_vowel) return &it->second;
    return nullptr;
}

const PhoneClass& PhoneTable::classify(std::string_view label) const {
    if (const auto* c = find(label)) return *c;
    throw Error(ErrorCode::UnknownPhoneLabel, "unknown phone label '" + std::string(label) + "'");
}

bool PhoneTable::contains(std::string_view label) const noexcept {
    return find(label) != nullptr;
}

const PhoneClass& classify_phone(std::string_view label) {
    return PhoneTable::arpabet().classify(label);
}

// --- TextGrid ---

namespace {

struct Token {
    enum Kind { string, number, flag } kind;
    std::string text;
    double value = 0.0;
};

std::vector<Token> tokenize_textgrid(std::string_view s) {
    if (s.starts_with("\xEF\xBB\xBF")) s.remove_prefix(3);
    std::vector<Token> tokens;
    std::size_t i = 0;
    const auto is_digit = [&](std::size_t k) { return k < s.size() && std::isdigit(static_cast<unsigned char>(s[k])); };
    while (i < s.size()) {
        const char c = s[i];
        if (c == '"') {
            std::string text;
            ++i;
            for (;;) {
                if (i >= s.size()) throw Error(ErrorCode::ParseError, "unterminated string in TextGrid");
                if (s[i] == '"') {
                    if (i + 1 < s.size() && s[i + 1] == '"') {
                        text.push_back('"');
                        i += 2;
                        continue;
                    }
                    ++i;
                    break;
                }
                text.push_back(s[i++]);
            }
            tokens.push_back({Token::string, std::move(text)});
        } else if (c == '[') {
            const auto close = s.find(']', i);
            if (close == std::string_view::npos) throw Error(ErrorCode::ParseError, "unterminated '[' in TextGrid");
            i = close + 1;
        } else if (c == '<') {
            const auto close = s.find('>', i);
            if (close == std::string_view::npos) throw Error(ErrorCode::ParseError, "unterminated '<' in TextGrid");
            tokens.push_back({Token::flag, std::string(s.substr(i + 1, close - i - 1))});
            i = close + 1;
        } else if (is_digit(i) || ((c == '-' || c == '+' || c == '.') &&
                                    (is_digit(i + 1) || (i + 1 < s.size() && s[i + 1] == '.' && is_digit(i + 2))))) {
            std::size_t j = i + 1;
            while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.' || s[j] == 'e' ||
                                    s[j] == 'E' || ((s[j] == '-' || s[j] == '+') && (s[j - 1] == 'e' || s[j - 1] == 'E')))) {
                ++j;
            }
            std::string_view text = s.substr(i, j - i);
            if (text.front() == '+') text.remove_prefix(1);
            Token t{Token::number, std::string(text)};
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), t.value);
            if (ec != std::errc{} || ptr != text.data() + text.size()) {
                throw Error(ErrorCode::ParseError, "bad number '" + std::string(text) + "' in TextGrid");
            }
            tokens.push_back(std::move(t));
            i = j;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
        } else {
            ++i;
        }
    }
    return tokens;
}

class TokenCursor {
public:
    explicit TokenCursor(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    const Token& next(Token::Kind kind, const char* what) {
        if (pos_ >= tokens_.size()) {
            throw Error(ErrorCode::ParseError, std::string("TextGrid ended while reading ") + what);
        }
        const Token& t = tokens_[pos_++];
        if (t.kind != kind) throw Error(ErrorCode::ParseError, std::string("TextGrid: expected ") + what);
        return t;
    }
    double number(const char* what) { return next(Token::number, what).value; }
    std::size_t count(const char* what) {
        const double v = number(what);
        if (v < 0 || v != std::floor(v)) throw Error(ErrorCode::ParseError, std::string("TextGrid: bad ") + what);
        return static_cast<std::size_t>(v);
    }
    const std::string& string(const char* what) { return next(Token::string, what).text; }

private:
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<TextGridTier> parse_textgrid(std::string_view content) {
    TokenCursor cur(tokenize_textgrid(content));
    if (cur.string("file type") != "ooTextFile") throw Error(ErrorCode::ParseError, "not a Praat text file");
    if (cur.string("object class") != "TextGrid") throw Error(ErrorCode::ParseError, "not a TextGrid");
    cur.number("xmin");
    cur.number("xmax");
    const auto& tiers_flag = cur.next(Token::flag, "tiers flag").text;
    std::vector<TextGridTier> tiers;
    if (tiers_flag != "exists") return tiers;
    const std::size_t n_tiers = cur.count("tier count");
    for (std::size_t t = 0; t < n_tiers; ++t) {
        TextGridTier tier;
        tier.tier_class = cur.string("tier class");
        tier.name = cur.string("tier name");
        cur.number("tier xmin");
        cur.number("tier xmax");
        const std::size_t n_items = cur.count("item count");
        const bool points = tier.tier_class == "TextTier";
        if (!points && tier.tier_class != "IntervalTier") {
            throw Error(ErrorCode::ParseError, "unknown tier class '" + tier.tier_class + "'");
        }
        tier.intervals.reserve(n_items);
        for (std::size_t k = 0; k < n_items; ++k) {
            TextGridInterval iv;
            iv.xmin = cur.number("interval start");
            iv.xmax = points ? iv.xmin : cur.number("interval end");
            iv.text = cur.string("interval text");
            tier.intervals.push_back(std::move(iv));
        }
        tiers.push_back(std::move(tier));
    }
    return tiers;
}

std::vector<PhoneSegment> load_alignment_text(std::string_view content, std::string file_id, const PhoneTable& table) {
    const auto tiers = parse_textgrid(content);
    const auto it = std::find_if(tiers.begin(), tiers.end(), [](const TextGridTier& t) {
        return t.name == "phones" || t.name.ends_with(" - phones");
    });
    if (it == tiers.end()) throw Error(ErrorCode::ParseError, "alignment '" + file_id + "' has no phones tier");
    if (it->tier_class != "IntervalTier") {
        throw Error(ErrorCode::ParseError, "alignment '" + file_id + "': phones tier is not an interval tier");
    }
    std::vector<PhoneSegment> segments;
    segments.reserve(it->intervals.size());
    for (const auto& iv : it->intervals) {
        if (!(iv.xmin < iv.xmax)) {
            throw Error(ErrorCode::ParseError, "alignment '" + file_id + "': interval [" + std::to_string(iv.xmin) +
                                                   ", " + std::to_string(iv.xmax) + "] has no duration");
        }
        if (!segments.empty() && iv.xmin < segments.back().end_s - kTimeTolerance) {
            throw Error(ErrorCode::OverlapError, "alignment '" + file_id + "': interval starting at " +
                                                     std::to_string(iv.xmin) + " overlaps its predecessor");
        }
        const std::string label(trim(iv.text));
        table.classify(label);
        segments.push_back({label, iv.xmin, iv.xmax, file_id});
    }
    return segments;
}

std::vector<PhoneSegment> load_alignment(const std::filesystem::path& path, const PhoneTable& table) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open alignment " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return load_alignment_text(buffer.str(), path.stem().string(), table);
}

// --- feature times ---

FeatureTimes parse_feature_times(const nlohmann::json& j) {
    if (!j.is_object() || j.value("schema_version", 0) != kSchemaVersion) {
        throw Error(ErrorCode::SchemaMismatch,
                    "feature-times sidecar must be an object with schema_version " + std::to_string(kSchemaVersion));
    }
    FeatureTimes ft;
    try {
        ft.instance_id = j.value("instance_id", std::string{});
        ft.times = j.at("feature_times").get<std::vector<double>>();
        if (auto g = j.find("granularity"); g != j.end() && g->is_object()) {
            if (g->contains("window_s")) ft.window_s = g->at("window_s").get<double>();
            if (g->contains("stride_s")) ft.stride_s = g->at("stride_s").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, std::string("feature-times sidecar: ") + e.what());
    }
    for (std::size_t i = 0; i < ft.times.size(); ++i) {
        if (!std::isfinite(ft.times[i]) || (i > 0 && !(ft.times[i] > ft.times[i - 1]))) {
            throw Error(ErrorCode::NonIncreasingTimes, "feature times must be finite and strictly increasing");
        }
    }
    return ft;
}

nlohmann::json feature_times_to_json(const FeatureTimes& ft) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["instance_id"] = ft.instance_id;
    j["feature_times"] = ft.times;
    if (ft.window_s || ft.stride_s) {
        nlohmann::ordered_json g = nlohmann::ordered_json::object();
        if (ft.window_s) g["window_s"] = *ft.window_s;
        if (ft.stride_s) g["stride_s"] = *ft.stride_s;
        j["granularity"] = g;
    }
    return nlohmann::json::parse(j.dump());
}

// --- windows ---

std::vector<BoundaryWindow> boundary_windows(std::span<const PhoneSegment> segments,
                                             std::span<const double> feature_times, double delta) {
    if (!(delta > 0.0) || !std::isfinite(delta)) throw Error(ErrorCode::InvalidArgument, "window delta must be > 0");
    for (std::size_t t = 1; t < feature_times.size(); ++t) {
        if (!(feature_times[t] > feature_times[t - 1])) {
            throw Error(ErrorCode::NonIncreasingTimes, "feature times must be strictly increasing");
        }
    }
    // Left members of consecutive pairs: t in [0, n-2].
    const auto lefts = feature_times.size() < 2 ? std::span<const double>{} : feature_times.first(feature_times.size() - 1);

    std::vector<BoundaryWindow> windows;
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
        const auto& left = segments[i];
        const auto& right = segments[i + 1];
        // Only abutting segments share a boundary.
        if (std::abs(left.end_s - right.start_s) > 1e-6) continue;
        BoundaryWindow w;
        w.file_id = left.file_id;
        w.boundary_index = i;
        w.boundary_time = left.end_s;
        w.left_label = left.label;
        w.right_label = right.label;
        w.delta = delta;
        const double lo = w.boundary_time - delta - kTimeTolerance;
        const double hi = w.boundary_time + delta + kTimeTolerance;
        auto first = std::lower_bound(lefts.begin(), lefts.end(), lo);
        for (auto t = first; t != lefts.end() && *t <= hi; ++t) {
            const auto idx = static_cast<std::size_t>(t - lefts.begin());
            w.member_pairs.push_back({idx, idx + 1});
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

namespace {

double aggregate_values(const std::vector<double>& values, WindowAggregate aggregate) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return aggregate == WindowAggregate::sum ? sum : sum / static_cast<double>(values.size());
}

[[noreturn]] void empty_window(const BoundaryWindow& window) {
    throw Error(ErrorCode::EmptyWindow, "window around boundary " + std::to_string(window.boundary_index) + " of '" +
                                            window.file_id + "' holds no feature pair");
}

}  // namespace

double window_stii(Oracle& oracle, const BoundaryWindow& window, const EngineConfig& config, WindowAggregate aggregate) {
    if (window.empty()) empty_window(window);
    const auto records = stii_matrix(oracle, window.member_pairs, config);
    std::vector<double> values;
    values.reserve(records.size());
    for (const auto& r : records) values.push_back(r.stii);
    return aggregate_values(values, aggregate);
}

double window_stii_from_records(const BoundaryWindow& window, const std::map<FeaturePair, double>& pair_stii,
                                WindowAggregate aggregate) {
    if (window.empty()) empty_window(window);
    std::vector<double> values;
    values.reserve(window.member_pairs.size());
    for (const auto& p : window.member_pairs) {
        const auto it = pair_stii.find(p);
        if (it == pair_stii.end()) {
            throw Error(ErrorCode::SchemaMismatch, "no record for pair (" + std::to_string(p.first) + ", " +
                                                       std::to_string(p.second) + ") of '" + window.file_id + "'");
        }
        values.push_back(it->second);
    }
    return aggregate_values(values, aggregate);
}

// --- aggregations ---

std::string_view to_string(BoundaryType t) {
    switch (t) {
        case BoundaryType::consonant_vowel: return "CV";
        case BoundaryType::consonant_consonant: return "CC";
        case BoundaryType::vowel_vowel: return "VV";
        case BoundaryType::silence_adjacent: return "silence";
    }
    return "?";
}

BoundaryType boundary_type(const PhoneClass& left, const PhoneClass& right) noexcept {
    if (left.is_silence() || right.is_silence()) return BoundaryType::silence_adjacent;
    if (left.is_vowel && right.is_vowel) return BoundaryType::vowel_vowel;
    if (!left.is_vowel && !right.is_vowel) return BoundaryType::consonant_consonant;
    return BoundaryType::consonant_vowel;  // either order
}

std::vector<ContrastPoint> boundary_contrast(std::span<const WindowMeasurement> measurements,
                                             std::span<const double> deltas, const BootstrapConfig& bootstrap,
                                             const PhoneTable& table) {
    constexpr BoundaryType kTypes[] = {BoundaryType::consonant_vowel, BoundaryType::consonant_consonant,
                                       BoundaryType::vowel_vowel, BoundaryType::silence_adjacent};
    std::vector<ContrastPoint> out;
    for (std::size_t di = 0; di < deltas.size(); ++di) {
        std::vector<double> by_type[4];
        for (const auto& m : measurements) {
            if (m.window.empty() || std::abs(m.window.delta - deltas[di]) > kTimeTolerance) continue;
            const auto type = boundary_type(table.classify(m.window.left_label), table.classify(m.window.right_label));
            by_type[static_cast<int>(type)].push_back(m.stii);
        }
        for (const auto type : kTypes) {
            const auto& values = by_type[static_cast<int>(type)];
            ContrastPoint p;
            p.delta = deltas[di];
            p.type = type;
            p.count = values.size();
            if (values.empty()) {
                p.empty_category = true;
            } else {
                const std::uint64_t seed = splitmix64(bootstrap.seed ^ splitmix64(di * 4 + static_cast<int>(type) + 1));
                p.ci = bootstrap_mean_ci(values, bootstrap.resamples, bootstrap.level, seed);
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<HeatmapCell> consonant_heatmap(std::span<const WindowMeasurement> measurements, double delta,
                                           HeatmapSide side, const PhoneTable& table) {
    constexpr Manner kManners[] = {Manner::stop,    Manner::affricate, Manner::fricative,
                                   Manner::nasal,   Manner::lateral,   Manner::approximant};
    constexpr Place kPlaces[] = {Place::bilabial, Place::labiodental, Place::dental,
                                 Place::alveolar, Place::postalveolar, Place::palatal,
                                 Place::velar,    Place::labial_velar, Place::glottal};
    std::vector<HeatmapCell> cells;
    for (const auto m : kManners) {
        for (const auto p : kPlaces) {
            for (const bool voiced : {false, true}) cells.push_back({m, p, voiced, 0, std::nullopt, {}});
        }
    }
    const auto cell_of = [&](const PhoneClass& c) -> HeatmapCell* {
        for (auto& cell : cells) {
            if (cell.manner == c.manner && cell.place == c.place && cell.voiced == c.voiced) return &cell;
        }
        return nullptr;
    };
    for (const auto& [label, c] : table.entries()) {
        if (!c.is_consonant()) continue;
        if (auto* cell = cell_of(c)) cell->phones.push_back(label);
    }

    std::vector<double> sums(cells.size(), 0.0);
    const auto add = [&](const PhoneClass& c, double value) {
        if (!c.is_consonant()) return;
        if (auto* cell = cell_of(c)) {
            ++cell->count;
            sums[static_cast<std::size_t>(cell - cells.data())] += value;
        }
    };
    for (const auto& m : measurements) {
        if (m.window.empty() || std::abs(m.window.delta - delta) > kTimeTolerance) continue;
        if (side != HeatmapSide::right) add(table.classify(m.window.left_label), m.stii);
        if (side != HeatmapSide::left) add(table.classify(m.window.right_label), m.stii);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].count > 0) cells[i].mean_stii = sums[i] / static_cast<double>(cells[i].count);
    }
    return cells;
}

}  // namespace stii
