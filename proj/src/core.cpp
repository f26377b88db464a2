#include "stii/core.hpp"

#include <bit>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "stii/error.hpp"

namespace stii {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::speech: return "speech";
        case Modality::toy: return "toy";
    }
    return "toy";
}

std::string_view to_string(Estimator e) {
    return e == Estimator::exact ? "exact" : "sampled";
}

Modality parse_modality(std::string_view s) {
    if (s == "text") return Modality::text;
    if (s == "speech") return Modality::speech;
    if (s == "toy") return Modality::toy;
    throw Error(ErrorCode::InvalidArgument, "unknown modality '" + std::string(s) + "'");
}

Estimator parse_estimator(std::string_view s) {
    if (s == "exact") return Estimator::exact;
    if (s == "sampled") return Estimator::sampled;
    throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + std::string(s) + "'");
}

namespace {

// Reads an optional non-negative integer field, rejecting other JSON types.
std::optional<std::int64_t> get_int(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_integer()) {
        throw Error(ErrorCode::InvalidArgument, std::string("field '") + key + "' must be an integer");
    }
    return it->get<std::int64_t>();
}

}  // namespace

Instance validate_instance(const json& candidate) {
    if (!candidate.is_object()) {
        throw Error(ErrorCode::InvalidArgument, "instance description must be an object");
    }
    Instance inst;
    if (auto it = candidate.find("instance_id"); it != candidate.end() && it->is_string()) {
        inst.instance_id = it->get<std::string>();
    }

    auto n = get_int(candidate, "n_features").value_or(0);
    if (n <= 0) throw Error(ErrorCode::ZeroFeatures, "n_features must be positive, got " + std::to_string(n));
    if (n < 2) throw Error(ErrorCode::ZeroFeatures, "at least 2 features are required for pairs");
    inst.n_features = static_cast<std::size_t>(n);

    auto dim = get_int(candidate, "output_dim").value_or(0);
    if (dim < 1) throw Error(ErrorCode::BadOutputDim, "output_dim must be >= 1");
    inst.output_dim = static_cast<std::size_t>(dim);

    if (auto it = candidate.find("modality"); it != candidate.end() && !it->is_null()) {
        inst.modality = parse_modality(it->get<std::string>());
    }

    if (auto t = get_int(candidate, "target_index")) {
        if (*t < 0 || *t > n) {
            throw Error(ErrorCode::BadTargetIndex,
                        "target_index " + std::to_string(*t) + " outside [0, " + std::to_string(n) + "]");
        }
        inst.target_index = static_cast<std::size_t>(*t);
    }

    auto times = candidate.find("feature_times");
    bool has_times = times != candidate.end() && !times->is_null();
    if (inst.modality == Modality::speech) {
        if (!has_times) throw Error(ErrorCode::MissingTimesForSpeech, "speech instance needs feature_times");
        inst.feature_times = times->get<std::vector<double>>();
        if (inst.feature_times.size() != inst.n_features) {
            throw Error(ErrorCode::MissingTimesForSpeech, "feature_times length " +
                                                              std::to_string(inst.feature_times.size()) +
                                                              " != n_features " + std::to_string(n));
        }
        for (std::size_t i = 0; i < inst.feature_times.size(); ++i) {
            if (!std::isfinite(inst.feature_times[i])) {
                throw Error(ErrorCode::NonIncreasingTimes, "feature time is not finite");
            }
            if (i > 0 && !(inst.feature_times[i] > inst.feature_times[i - 1])) {
                throw Error(ErrorCode::NonIncreasingTimes,
                            "feature_times not strictly increasing at index " + std::to_string(i));
            }
        }
    } else if (has_times) {
        throw Error(ErrorCode::InvalidArgument, "feature_times only allowed for speech instances");
    }
    return inst;
}

json instance_to_json(const Instance& instance) {
    json j;
    j["instance_id"] = instance.instance_id;
    j["n_features"] = instance.n_features;
    j["output_dim"] = instance.output_dim;
    j["modality"] = std::string(to_string(instance.modality));
    if (instance.target_index) j["target_index"] = *instance.target_index;
    if (instance.modality == Modality::speech) j["feature_times"] = instance.feature_times;
    return j;
}

// --- CoalitionMask ---

CoalitionMask::CoalitionMask(std::size_t n_features, bool all_present)
    : size_(n_features), words_((n_features + 63) / 64, all_present ? ~0ull : 0ull) {
    if (all_present && (n_features & 63)) {
        words_.back() = (1ull << (n_features & 63)) - 1;
    }
}

CoalitionMask CoalitionMask::from_string(std::string_view bits) {
    CoalitionMask m(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] == '1') {
            m.set(i);
        } else if (bits[i] != '0') {
            throw Error(ErrorCode::InvalidArgument, "mask string may only contain '0' and '1'");
        }
    }
    return m;
}

void CoalitionMask::set(std::size_t i, bool present) noexcept {
    const std::uint64_t bit = 1ull << (i & 63);
    if (present) {
        words_[i >> 6] |= bit;
    } else {
        words_[i >> 6] &= ~bit;
    }
}

std::size_t CoalitionMask::count() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
}

std::string CoalitionMask::to_string() const {
    std::string s(size_, '0');
    for (std::size_t i = 0; i < size_; ++i) {
        if (test(i)) s[i] = '1';
    }
    return s;
}

std::size_t CoalitionMask::hash() const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ull ^ size_;
    for (auto w : words_) {
        h ^= w + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h *= 0xff51afd7ed558ccdull;
    }
    return static_cast<std::size_t>(h ^ (h >> 33));
}

// --- values ---

void check_value_vector(const ValueVector& values, std::size_t output_dim) {
    if (values.size() != output_dim) {
        throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(output_dim) + " values, got " +
                                                      std::to_string(values.size()));
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "value vector holds NaN or Inf");
    }
}

double l2_norm(const ValueVector& values) {
    double sum = 0.0;
    for (double v : values) sum += v * v;
    return std::sqrt(sum);
}

FeaturePair FeaturePair::canonical(std::size_t a, std::size_t b) {
    if (a == b) throw Error(ErrorCode::InvalidArgument, "pair members must differ");
    return a < b ? FeaturePair{a, b} : FeaturePair{b, a};
}

// --- records ---

void validate_record(const InteractionRecord& r) {
    if (!(r.pair.first < r.pair.second)) {
        throw Error(ErrorCode::InvalidArgument, "record pair must satisfy index_a < index_b");
    }
    if (!std::isfinite(r.stii) || r.stii < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "record stii must be finite and non-negative");
    }
    if (r.d_i && *r.d_i != r.pair.second - r.pair.first) {
        throw Error(ErrorCode::InvalidArgument, "record d_i must equal index_b - index_a");
    }
    if (r.estimator == Estimator::exact && r.num_permutations != 0) {
        throw Error(ErrorCode::InvalidArgument, "exact records carry num_permutations = 0");
    }
}

std::string serialize_record(const InteractionRecord& r) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["instance_id"] = r.instance_id;
    j["pair"] = {r.pair.first, r.pair.second};
    j["stii"] = r.stii;
    j["d_i"] = r.d_i ? ordered_json(*r.d_i) : ordered_json(nullptr);
    j["d_p"] = r.d_p ? ordered_json(*r.d_p) : ordered_json(nullptr);
    j["strata_tags"] = r.strata_tags;
    j["estimator"] = std::string(to_string(r.estimator));
    j["num_permutations"] = r.num_permutations;
    j["seed"] = r.seed;
    return j.dump();
}

InteractionRecord deserialize_record(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::SchemaMismatch, std::string("record line is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("schema_version", 0) != kSchemaVersion) {
            throw Error(ErrorCode::SchemaMismatch, "unsupported record schema_version");
        }
        InteractionRecord r;
        r.instance_id = j.at("instance_id").get<std::string>();
        const auto& pair = j.at("pair");
        if (!pair.is_array() || pair.size() != 2) throw Error(ErrorCode::SchemaMismatch, "pair must have two entries");
        r.pair = {pair[0].get<std::size_t>(), pair[1].get<std::size_t>()};
        r.stii = j.at("stii").get<double>();
        if (auto it = j.find("d_i"); it != j.end() && !it->is_null()) r.d_i = it->get<std::uint64_t>();
        if (auto it = j.find("d_p"); it != j.end() && !it->is_null()) r.d_p = it->get<std::uint64_t>();
        if (auto it = j.find("strata_tags"); it != j.end()) r.strata_tags = it->get<std::vector<std::string>>();
        r.estimator = parse_estimator(j.at("estimator").get<std::string>());
        r.num_permutations = j.value("num_permutations", std::uint64_t{0});
        r.seed = j.value("seed", std::uint64_t{0});
        validate_record(r);
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, std::string("malformed record: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SchemaMismatch) throw;
        throw Error(ErrorCode::SchemaMismatch, e.message());
    }
}

void write_records(std::ostream& out, const RecordsHeader& header, const std::vector<InteractionRecord>& records) {
    ordered_json h;
    h["kind"] = "stii-records";
    h["schema_version"] = header.schema_version;
    h["config_hash"] = header.config_hash;
    out << h.dump() << '\n';
    for (const auto& r : records) out << serialize_record(r) << '\n';
}

RecordsFile read_records(std::istream& in) {
    RecordsFile file;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            json j = json::parse(line, nullptr, false);
            if (j.is_object() && j.contains("kind")) {
                if (j["kind"] != "stii-records" || j.value("schema_version", 0) != kSchemaVersion) {
                    throw Error(ErrorCode::SchemaMismatch, "records header has wrong kind or schema_version");
                }
                file.header.config_hash = j.value("config_hash", std::string{});
                continue;
            }
        }
        file.records.push_back(deserialize_record(line));
    }
    return file;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

}  // namespace stii
