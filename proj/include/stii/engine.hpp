#pragma once
// Shapley values and pairwise Shapley-Taylor interaction indices, exact
// (subset enumeration) and sampled (Monte Carlo permutation sampling).
//
// Exact Shapley value of a feature set A over the remaining m = n - |A| features:
//
//   phi_d(A) = sum_{S in N\A} w(m, |S|) * (v_d(S u A) - v_d(S)),
//   w(m, s)  = s! (m - s)! / (m + 1)!
//
// i.e. uniform over subset sizes, then uniform within a size. The pairwise
// index averages the mixed second difference
//
//   delta_ab v(S) = v(S u {a,b}) - v(S u {a}) - v(S u {b}) + v(S)
//
// over contexts S in N\{a,b} with the same weighting (or only S = {} in
// empty-context mode), takes the L2 norm over output dimensions and divides by
// ||v(N)||_2 under full-sequence normalization.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "stii/core.hpp"
#include "stii/oracle.hpp"

namespace stii {

enum class ContextMode { context_sampled, empty_context };
enum class Normalization { full_sequence_norm, none };

std::string_view to_string(ContextMode m);
std::string_view to_string(Normalization n);
ContextMode parse_context_mode(std::string_view s);
Normalization parse_normalization(std::string_view s);

struct ConvergenceCheck {
    std::uint64_t window = 100;
    double relative_tolerance = 1e-3;
};

struct SamplingConfig {
    std::uint64_t num_permutations = 1000;
    std::uint64_t seed = 0;
    // Pair every sampled context with its complement.
    bool antithetic = false;
    std::optional<ConvergenceCheck> convergence;
};

struct StiiConfig {
    ContextMode context_mode = ContextMode::context_sampled;
    Normalization normalization = Normalization::full_sequence_norm;
    SamplingConfig sampling;
};

struct EngineConfig {
    Estimator estimator = Estimator::sampled;
    StiiConfig stii;
    std::size_t exact_limit = 20;
    std::size_t batch_size = 64;
    std::size_t threads = 1;
};

nlohmann::json engine_config_to_json(const EngineConfig& config);
// Missing keys keep their defaults.
EngineConfig engine_config_from_json(const nlohmann::json& j, EngineConfig base = {});

struct ShapleyResult {
    std::vector<std::size_t> feature_set;
    ValueVector phi;
    Estimator estimator = Estimator::exact;
    std::uint64_t num_permutations = 0;
    std::uint64_t seed = 0;
    std::optional<ValueVector> stderr_estimate;
};

struct StiiEstimate {
    double stii = 0.0;
    double stderr_estimate = 0.0;
    // Context-averaged second difference, per output dimension, before the norm.
    ValueVector second_difference;
    double normalizer = 1.0;
    Estimator estimator = Estimator::exact;
    std::uint64_t num_permutations = 0;
};

// Weight of one subset of size s when m features are free to join it.
using SubsetWeight = double (*)(std::size_t free_count, std::size_t subset_size);
double shapley_subset_weight(std::size_t free_count, std::size_t subset_size);

ShapleyResult exact_shapley(Oracle& oracle, std::span<const std::size_t> feature_set,
                            std::size_t exact_limit = 20, SubsetWeight weight = shapley_subset_weight);

ShapleyResult sampled_shapley(Oracle& oracle, std::span<const std::size_t> feature_set,
                              const SamplingConfig& config);

StiiEstimate exact_stii_estimate(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config,
                                 std::size_t exact_limit = 20);
double exact_stii(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config,
                  std::size_t exact_limit = 20);

StiiEstimate sampled_stii(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config);

// Shared sampling plan: one stream of (permutation of all features, insertion
// slot) per instance. The context of pair {a,b} in sample k is the first
// slot_k features of permutation_k with a and b removed, which is a uniform
// permutation of N\{a,b} with a uniform insertion slot.
class ContextPlan {
public:
    ContextPlan(std::size_t n_features, const SamplingConfig& config);

    std::size_t samples() const noexcept { return slots_.size(); }
    std::size_t n_features() const noexcept { return n_; }
    bool antithetic() const noexcept { return antithetic_; }
    // Features present in the context of pair {a,b} for sample k.
    CoalitionMask context(std::size_t k, std::size_t a, std::size_t b) const;

private:
    std::size_t n_;
    bool antithetic_;
    std::vector<std::uint32_t> permutations_;  // samples x n, row-major
    std::vector<std::uint32_t> slots_;
};

StiiEstimate sampled_stii_with_plan(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config,
                                    const ContextPlan& plan);

// One record per pair, in input order (pairs canonicalized). Deterministic
// given the seed regardless of config.threads.
std::vector<InteractionRecord> stii_matrix(Oracle& oracle, std::span<const FeaturePair> pairs,
                                           const EngineConfig& config);

}  // namespace stii
