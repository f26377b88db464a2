#pragma once
// Shared data model: instances, coalition masks, value vectors and
// interaction records, plus the line-delimited record format.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace stii {

inline constexpr int kSchemaVersion = 1;

enum class Modality { text, speech, toy };
enum class Estimator { exact, sampled };

std::string_view to_string(Modality m);
std::string_view to_string(Estimator e);
Modality parse_modality(std::string_view s);
Estimator parse_estimator(std::string_view s);

// One analysis unit. Construct through validate_instance().
struct Instance {
    std::string instance_id;
    std::size_t n_features = 0;
    std::size_t output_dim = 0;
    // In [0, n_features]; n_features denotes the next-token position.
    std::optional<std::size_t> target_index;
    Modality modality = Modality::toy;
    std::vector<double> feature_times;  // speech only

    friend bool operator==(const Instance&, const Instance&) = default;
};

// Validates an untrusted description. Throws Error naming the violated invariant.
Instance validate_instance(const nlohmann::json& candidate);
nlohmann::json instance_to_json(const Instance& instance);

// Presence bits over the features of one instance (1 = present, 0 = ablated).
class CoalitionMask {
public:
    CoalitionMask() = default;
    explicit CoalitionMask(std::size_t n_features, bool all_present = false);

    static CoalitionMask full(std::size_t n_features) { return CoalitionMask(n_features, true); }
    static CoalitionMask empty(std::size_t n_features) { return CoalitionMask(n_features, false); }
    // Leftmost character is feature 0.
    static CoalitionMask from_string(std::string_view bits);

    std::size_t size() const noexcept { return size_; }
    bool test(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1u; }
    void set(std::size_t i, bool present = true) noexcept;
    std::size_t count() const noexcept;
    std::string to_string() const;

    std::size_t hash() const noexcept;
    friend bool operator==(const CoalitionMask&, const CoalitionMask&) = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

struct CoalitionMaskHash {
    std::size_t operator()(const CoalitionMask& m) const noexcept { return m.hash(); }
};

using ValueVector = std::vector<double>;

// Throws NonFiniteValue / DimensionMismatch.
void check_value_vector(const ValueVector& values, std::size_t output_dim);
double l2_norm(const ValueVector& values);

// Canonically ordered pair: first < second.
struct FeaturePair {
    std::size_t first = 0;
    std::size_t second = 0;

    // Orders the two indices; throws InvalidArgument when they are equal.
    static FeaturePair canonical(std::size_t a, std::size_t b);

    friend auto operator<=>(const FeaturePair&, const FeaturePair&) = default;
};

struct InteractionRecord {
    std::string instance_id;
    FeaturePair pair;
    double stii = 0.0;
    std::optional<std::uint64_t> d_i;
    std::optional<std::uint64_t> d_p;
    std::vector<std::string> strata_tags;
    Estimator estimator = Estimator::exact;
    std::uint64_t num_permutations = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

void validate_record(const InteractionRecord& record);
std::string serialize_record(const InteractionRecord& record);
InteractionRecord deserialize_record(std::string_view line);

// Record stream: a header line followed by one record per line.
struct RecordsHeader {
    int schema_version = kSchemaVersion;
    std::string config_hash;
};

void write_records(std::ostream& out, const RecordsHeader& header,
                   const std::vector<InteractionRecord>& records);
struct RecordsFile {
    RecordsHeader header;
    std::vector<InteractionRecord> records;
};
RecordsFile read_records(std::istream& in);

// 64-bit FNV-1a; used for config hashes and seed derivation.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t value);

}  // namespace stii
