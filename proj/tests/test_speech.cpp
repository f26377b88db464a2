#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "stii/engine.hpp"
#include "stii/error.hpp"
#include "stii/random.hpp"
#include "stii/speech_analysis.hpp"

using namespace stii;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

const char* kLongGrid = R"(File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.21
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 0.21
        intervals: size = 1
        intervals [1]:
            xmin = 0
            xmax = 0.21
            text = "but"
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.21
        intervals: size = 2
        intervals [1]:
            xmin = 0.00
            xmax = 0.07
            text = "B"
        intervals [2]:
            xmin = 0.07
            xmax = 0.21
            text = "AH1"
)";

const char* kShortGrid = R"("ooTextFile"
"TextGrid"
0
0.3
<exists>
2
"IntervalTier"
"spk1 - phones"
0
0.3
3
0
0.1
"S"
0.1
0.2
"IY1"
0.2
0.3
""
"TextTier"
"events"
0
0.3
1
0.15
"say ""hi"""
)";

std::string phones_grid(const std::vector<std::tuple<std::string, double, double>>& segs) {
    std::ostringstream out;
    out << "\"ooTextFile\"\n\"TextGrid\"\n0\n" << std::get<2>(segs.back()) << "\n<exists>\n1\n";
    out << "\"IntervalTier\"\n\"phones\"\n0\n" << std::get<2>(segs.back()) << "\n" << segs.size() << "\n";
    for (const auto& [label, lo, hi] : segs) out << lo << "\n" << hi << "\n\"" << label << "\"\n";
    return out.str();
}

std::vector<double> grid_times(std::size_t n, double step) {
    std::vector<double> t(n);
    for (std::size_t k = 0; k < n; ++k) t[k] = static_cast<double>(k) * step;
    return t;
}

WindowMeasurement measure(const std::string& left, const std::string& right, double stii, double delta = 0.1) {
    WindowMeasurement m;
    m.window.file_id = "f";
    m.window.left_label = left;
    m.window.right_label = right;
    m.window.delta = delta;
    m.window.member_pairs = {{0, 1}};
    m.stii = stii;
    return m;
}

const HeatmapCell& cell(const std::vector<HeatmapCell>& cells, Manner m, Place p, bool voiced) {
    for (const auto& c : cells) {
        if (c.manner == m && c.place == p && c.voiced == voiced) return c;
    }
    FAIL("no such cell");
    return cells.front();
}

}  // namespace

TEST_CASE("phone classes") {
    CHECK(classify_phone("AH1").is_vowel);
    CHECK(classify_phone("ah0").is_vowel);
    const auto& b = classify_phone("B");
    CHECK(b.is_consonant());
    CHECK(b.manner == Manner::stop);
    CHECK(b.place == Place::bilabial);
    CHECK(b.voiced);
    const auto& th = classify_phone("TH");
    CHECK(th.manner == Manner::fricative);
    CHECK(th.place == Place::dental);
    CHECK_FALSE(th.voiced);
    const auto& dh = classify_phone("DH");
    CHECK(dh.manner == th.manner);
    CHECK(dh.place == th.place);
    CHECK(dh.voiced);
    CHECK(classify_phone("").is_silence());
    CHECK(classify_phone("sil").is_silence());
    CHECK(classify_phone("spn").is_silence());
    CHECK(code_of([] { classify_phone("ZZ"); }) == ErrorCode::UnknownPhoneLabel);
    CHECK(code_of([] { classify_phone("B1"); }) == ErrorCode::UnknownPhoneLabel);
    try {
        classify_phone("ZZ");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("ZZ") != std::string::npos);
    }
}

TEST_CASE("voicing pairs share manner and place") {
    const std::pair<const char*, const char*> pairs[] = {{"P", "B"},  {"T", "D"},   {"K", "G"},  {"F", "V"},
                                                         {"TH", "DH"}, {"S", "Z"}, {"SH", "ZH"}, {"CH", "JH"}};
    for (const auto& [voiceless, voiced] : pairs) {
        const auto& a = classify_phone(voiceless);
        const auto& b = classify_phone(voiced);
        CHECK(a.manner == b.manner);
        CHECK(a.place == b.place);
        CHECK_FALSE(a.voiced);
        CHECK(b.voiced);
    }
    std::size_t vowels = 0;
    for (const auto& [label, c] : PhoneTable::arpabet().entries()) vowels += c.is_vowel;
    CHECK(vowels == 15);
}

TEST_CASE("phone table parsing") {
    std::istringstream ok("# comment\nlabel\tis_vowel\tmanner\tplace\tvoiced\tsonority_rank\nXX\t0\tstop\tvelar\t1\t1\n");
    const auto t = PhoneTable::parse(ok);
    CHECK(t.classify("xx").place == Place::velar);
    CHECK_FALSE(t.contains("B"));
    std::istringstream dup("label\tis_vowel\tmanner\tplace\tvoiced\tsonority_rank\nXX\t0\tstop\tvelar\t1\t1\n"
                           "XX\t0\tstop\tvelar\t1\t1\n");
    CHECK_THROWS_AS(PhoneTable::parse(dup), Error);
    std::istringstream bad_header("label\tmanner\nXX\tstop\n");
    CHECK_THROWS_AS(PhoneTable::parse(bad_header), Error);
    const auto shipped = PhoneTable::load(std::filesystem::path(STII_SOURCE_DIR) / "data" / "phones_arpabet.tsv");
    CHECK(shipped.entries().size() == PhoneTable::arpabet().entries().size());
}

TEST_CASE("textgrid long form") {
    const auto tiers = parse_textgrid(kLongGrid);
    REQUIRE(tiers.size() == 2);
    CHECK(tiers[0].name == "words");
    CHECK(tiers[1].intervals.size() == 2);
    const auto segs = load_alignment_text(kLongGrid, "utt1");
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].label == "B");
    CHECK(segs[0].start_s == 0.0);
    CHECK(segs[0].end_s == 0.07);
    CHECK(segs[1].label == "AH1");
    CHECK(segs[1].start_s == 0.07);
    CHECK(segs[1].end_s == 0.21);
    CHECK(segs[1].file_id == "utt1");
}

TEST_CASE("textgrid short form") {
    const auto tiers = parse_textgrid(kShortGrid);
    REQUIRE(tiers.size() == 2);
    CHECK(tiers[1].tier_class == "TextTier");
    REQUIRE(tiers[1].intervals.size() == 1);
    CHECK(tiers[1].intervals[0].text == "say \"hi\"");
    CHECK(tiers[1].intervals[0].xmin == tiers[1].intervals[0].xmax);
    const auto segs = load_alignment_text(kShortGrid, "u");
    REQUIRE(segs.size() == 3);
    CHECK(segs[2].label == "");
    CHECK(classify_phone(segs[2].label).is_silence());
}

TEST_CASE("alignment errors") {
    CHECK(code_of([] { load_alignment_text(phones_grid({{"B", 0.0, 0.1}, {"AH", 0.05, 0.2}}), "x"); }) ==
          ErrorCode::OverlapError);
    const auto zz = [] { load_alignment_text(phones_grid({{"B", 0.0, 0.1}, {"ZZ", 0.1, 0.2}}), "x"); };
    CHECK(code_of(zz) == ErrorCode::UnknownPhoneLabel);
    CHECK(code_of([] { load_alignment_text(phones_grid({{"B", 0.1, 0.1}}), "x"); }) == ErrorCode::ParseError);
    CHECK(code_of([] { parse_textgrid("not a textgrid"); }) == ErrorCode::ParseError);
    CHECK(code_of([] { parse_textgrid(std::string(kLongGrid).substr(0, 300)); }) == ErrorCode::ParseError);
    std::string no_phones = kLongGrid;
    no_phones.replace(no_phones.find("\"phones\""), 8, "\"syl\"");
    CHECK(code_of([&] { load_alignment_text(no_phones, "x"); }) == ErrorCode::ParseError);
}

TEST_CASE("feature-times sidecar") {
    const auto j = json::parse(R"({"schema_version":1,"instance_id":"a","feature_times":[0.01,0.03,0.05],
                                   "granularity":{"window_s":0.025,"stride_s":0.02}})");
    const auto ft = parse_feature_times(j);
    CHECK(ft.instance_id == "a");
    CHECK(ft.times == std::vector<double>{0.01, 0.03, 0.05});
    CHECK(ft.stride_s == 0.02);
    CHECK(parse_feature_times(feature_times_to_json(ft)).times == ft.times);
    auto bad = j;
    bad["feature_times"] = {0.1, 0.1};
    CHECK(code_of([&] { parse_feature_times(bad); }) == ErrorCode::NonIncreasingTimes);
    bad = j;
    bad["schema_version"] = 3;
    CHECK(code_of([&] { parse_feature_times(bad); }) == ErrorCode::SchemaMismatch);
    bad = j;
    bad.erase("feature_times");
    CHECK(code_of([&] { parse_feature_times(bad); }) == ErrorCode::SchemaMismatch);
}

TEST_CASE("boundary window examples") {
    const std::vector<PhoneSegment> segs{{"B", 0.0, 0.5, "f"}, {"AH", 0.5, 1.0, "f"}};
    const auto times = grid_times(51, 0.02);
    const auto w = boundary_windows(segs, times, 0.1);
    REQUIRE(w.size() == 1);
    CHECK(w[0].boundary_time == 0.5);
    CHECK(w[0].left_label == "B");
    CHECK(w[0].right_label == "AH");
    REQUIRE(w[0].member_pairs.size() == 11);
    CHECK(w[0].member_pairs.front() == FeaturePair{20, 21});
    CHECK(w[0].member_pairs.back() == FeaturePair{30, 31});

    const std::vector<double> sparse{0.0, 0.3, 0.7, 1.0};
    const auto e = boundary_windows(segs, sparse, 0.1);
    REQUIRE(e.size() == 1);
    CHECK(e[0].empty());

    // Earliest member: first timestamp with t >= t_b - delta.
    const double eps = 1e-6;
    const std::vector<double> edge{0.0, 0.4 - eps, 0.4 + eps, 0.45, 0.9};
    const auto ew = boundary_windows(segs, edge, 0.1);
    REQUIRE(ew[0].member_pairs.size() == 2);
    CHECK(ew[0].member_pairs.front() == FeaturePair{2, 3});

    CHECK(code_of([&] { boundary_windows(segs, times, 0.0); }) == ErrorCode::InvalidArgument);
    const std::vector<double> backwards{0.0, 0.5, 0.4};
    CHECK(code_of([&] { boundary_windows(segs, backwards, 0.1); }) == ErrorCode::NonIncreasingTimes);

    // Non-abutting segments form no boundary.
    const std::vector<PhoneSegment> gap{{"B", 0.0, 0.4, "f"}, {"AH", 0.6, 1.0, "f"}};
    CHECK(boundary_windows(gap, times, 0.1).empty());
}

TEST_CASE("windows grow monotonically with delta") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<PhoneSegment> segs;
        double t = 0.0;
        for (int k = 0; k < 6; ++k) {
            const double len = 0.03 + uniform01(rng) * 0.2;
            segs.push_back({k % 2 ? "AA" : "S", t, t + len, "f"});
            t += len;
        }
        std::vector<double> times;
        for (double x = uniform01(rng) * 0.01; x < t; x += 0.005 + uniform01(rng) * 0.03) times.push_back(x);
        std::size_t previous = 0;
        for (double delta : {0.01, 0.03, 0.06, 0.1, 0.2}) {
            std::size_t total = 0;
            for (const auto& w : boundary_windows(segs, times, delta)) {
                total += w.member_pairs.size();
                for (const auto& p : w.member_pairs) {
                    CHECK(p.second == p.first + 1);
                    CHECK(std::abs(times[p.first] - w.boundary_time) <= delta + kTimeTolerance);
                }
            }
            CHECK(total >= previous);
            previous = total;
        }
    }
}

TEST_CASE("windows agree with integer-microsecond counting") {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t step_us = 5000 + static_cast<std::int64_t>(uniform_below(rng, 30)) * 1000;
        const std::int64_t boundary_us = 200000 + static_cast<std::int64_t>(uniform_below(rng, 400)) * 1000;
        const std::int64_t delta_us = 10000 * (1 + static_cast<std::int64_t>(uniform_below(rng, 20)));
        std::vector<std::int64_t> us;
        for (std::int64_t x = 0; x <= 1000000; x += step_us) us.push_back(x);
        std::vector<double> secs;
        for (auto x : us) secs.push_back(static_cast<double>(x) / 1e6);
        const std::vector<PhoneSegment> segs{{"T", 0.0, static_cast<double>(boundary_us) / 1e6, "f"},
                                             {"IY", static_cast<double>(boundary_us) / 1e6, 1.0, "f"}};
        const auto w = boundary_windows(segs, secs, static_cast<double>(delta_us) / 1e6);
        REQUIRE(w.size() == 1);
        const auto expected = oracle::count_window_members(us, boundary_us, delta_us);
        std::vector<std::size_t> got;
        for (const auto& p : w[0].member_pairs) got.push_back(p.first);
        CHECK(got == expected);
    }
}

TEST_CASE("window aggregation") {
    BoundaryWindow w;
    w.member_pairs = {{3, 4}};
    CHECK(window_stii_from_records(w, {{{3, 4}, 0.7}}) == 0.7);
    w.member_pairs = {{3, 4}, {4, 5}};
    const std::map<FeaturePair, double> recs{{{3, 4}, 0.2}, {{4, 5}, 0.4}};
    CHECK(window_stii_from_records(w, recs) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(window_stii_from_records(w, recs, WindowAggregate::sum) == doctest::Approx(0.6).epsilon(1e-15));
    w.member_pairs = {{5, 6}};
    CHECK(code_of([&] { window_stii_from_records(w, recs); }) == ErrorCode::SchemaMismatch);
    w.member_pairs.clear();
    CHECK(code_of([&] { window_stii_from_records(w, recs); }) == ErrorCode::EmptyWindow);
}

TEST_CASE("window stii on toy timelines") {
    Instance inst;
    inst.instance_id = "timeline";
    inst.n_features = 10;
    inst.output_dim = 1;
    inst.modality = Modality::speech;
    inst.feature_times = grid_times(10, 0.02);
    const std::vector<PhoneSegment> segs{{"S", 0.0, 0.09, "f"}, {"AA", 0.09, 0.2, "f"}};
    const auto windows = boundary_windows(segs, inst.feature_times, 0.04);
    REQUIRE(windows.size() == 1);
    REQUIRE(windows[0].member_pairs.size() == 4);  // left stamps 0.06, 0.08, 0.10, 0.12

    EngineConfig cfg;
    cfg.estimator = Estimator::exact;
    Oracle lin(std::make_unique<ToyBackend>(ToyGameSpec::linear_game(std::vector<double>(10, 1.0))), inst);
    CHECK(window_stii(lin, windows[0], cfg) == 0.0);

    // Decaying interaction: every consecutive pair has the same exact STII.
    const auto spec = ToyGameSpec::decaying_interaction_game(10, 1.0);
    Oracle dec(std::make_unique<ToyBackend>(spec), inst);
    const auto ref = oracle::reference_game(spec);
    const double expected = oracle::powerset_stii(ref, 10, 3, 4, false, true);
    CHECK(window_stii(dec, windows[0], cfg) == doctest::Approx(expected).epsilon(1e-12));

    BoundaryWindow single = windows[0];
    single.member_pairs = {{3, 4}};
    CHECK(window_stii(dec, single, cfg) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("boundary types") {
    const auto& tbl = PhoneTable::arpabet();
    CHECK(boundary_type(tbl.classify("B"), tbl.classify("AH")) == BoundaryType::consonant_vowel);
    CHECK(boundary_type(tbl.classify("AH"), tbl.classify("B")) == BoundaryType::consonant_vowel);
    CHECK(boundary_type(tbl.classify("S"), tbl.classify("T")) == BoundaryType::consonant_consonant);
    CHECK(boundary_type(tbl.classify("IY"), tbl.classify("AA")) == BoundaryType::vowel_vowel);
    CHECK(boundary_type(tbl.classify("SIL"), tbl.classify("AA")) == BoundaryType::silence_adjacent);
    CHECK(to_string(BoundaryType::consonant_vowel) == "CV");
}

TEST_CASE("boundary contrast") {
    std::vector<WindowMeasurement> ms;
    Rng rng(2);
    for (double delta : {0.02, 0.1}) {
        for (int k = 0; k < 120; ++k) {
            ms.push_back(measure("B", "AH", 0.5 + (uniform01(rng) - 0.5) * 0.1, delta));
            ms.push_back(measure("S", "T", 0.1 + (uniform01(rng) - 0.5) * 0.1, delta));
        }
    }
    const std::vector<double> deltas{0.02, 0.1};
    const auto pts = boundary_contrast(ms, deltas);
    REQUIRE(pts.size() == 8);
    for (double delta : deltas) {
        const ContrastPoint* cv = nullptr;
        const ContrastPoint* cc = nullptr;
        for (const auto& p : pts) {
            if (p.delta != delta) continue;
            if (p.type == BoundaryType::consonant_vowel) cv = &p;
            if (p.type == BoundaryType::consonant_consonant) cc = &p;
            if (p.type == BoundaryType::vowel_vowel) CHECK(p.empty_category);
        }
        REQUIRE(cv);
        REQUIRE(cc);
        CHECK(cv->count == 120);
        CHECK(cv->ci->lower > cc->ci->upper);
    }

    std::vector<WindowMeasurement> only_cv;
    for (int k = 0; k < 10; ++k) only_cv.push_back(measure("B", "AH", 0.4, 0.02));
    const std::vector<double> one{0.02};
    for (const auto& p : boundary_contrast(only_cv, one)) {
        if (p.type == BoundaryType::consonant_consonant) {
            CHECK(p.empty_category);
            CHECK(p.count == 0);
            CHECK_FALSE(p.ci);
        }
        if (p.type == BoundaryType::consonant_vowel) {
            CHECK(p.ci->upper - p.ci->lower == 0.0);
            CHECK(p.ci->mean == doctest::Approx(0.4).epsilon(1e-15));
        }
    }
}

TEST_CASE("consonant heatmap") {
    std::vector<WindowMeasurement> ms;
    for (const char* approx : {"R", "W", "Y", "L"}) ms.push_back(measure(approx, "AA", 0.9));
    for (const char* stop : {"P", "B", "T", "D", "K", "G"}) ms.push_back(measure(stop, "AA", 0.1));
    const auto cells = consonant_heatmap(ms);
    CHECK(cells.size() == 6 * 9 * 2);
    CHECK(cell(cells, Manner::approximant, Place::alveolar, true).mean_stii == 0.9);
    CHECK(cell(cells, Manner::stop, Place::bilabial, false).mean_stii == 0.1);
    double stops = 0.0, lower_rows = 0.0;
    std::size_t ns = 0, nl = 0;
    for (const auto& c : cells) {
        if (!c.mean_stii) continue;
        if (c.manner == Manner::stop) {
            stops += *c.mean_stii;
            ++ns;
        } else {
            lower_rows += *c.mean_stii;
            ++nl;
        }
    }
    CHECK(lower_rows / nl > stops / ns);

    const std::vector<WindowMeasurement> one{measure("AA", "M", 0.3)};
    std::size_t populated = 0;
    for (const auto& c : consonant_heatmap(one)) populated += c.mean_stii.has_value();
    CHECK(populated == 1);
    CHECK(cell(consonant_heatmap(one), Manner::nasal, Place::bilabial, true).count == 1);
    CHECK(cell(consonant_heatmap(one, 0.1, HeatmapSide::left), Manner::nasal, Place::bilabial, true).count == 0);
    CHECK(cell(consonant_heatmap(one, 0.05), Manner::nasal, Place::bilabial, true).count == 0);

    const std::vector<WindowMeasurement> pair{measure("S", "AA", 0.25), measure("Z", "AA", 0.25)};
    const auto pc = consonant_heatmap(pair);
    CHECK(cell(pc, Manner::fricative, Place::alveolar, false).mean_stii ==
          cell(pc, Manner::fricative, Place::alveolar, true).mean_stii);
    CHECK(cell(pc, Manner::fricative, Place::alveolar, false).phones == std::vector<std::string>{"S"});
}
