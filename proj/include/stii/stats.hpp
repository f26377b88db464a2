#pragma once
// Spearman rank correlation with two-sided significance, and percentile
// bootstrap confidence intervals for a mean.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stii {

enum class CorrelationMethod { t_approx, permutation };

struct CorrelationResult {
    double rho = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    CorrelationMethod method = CorrelationMethod::t_approx;
    // Orderings evaluated for permutation p-values (n! when enumerated, 0 for t_approx).
    std::uint64_t permutations = 0;
};

struct SpearmanOptions {
    std::uint64_t seed = 0;
    std::uint64_t monte_carlo_draws = 10000;
    // p via Student t for n >= this; exact enumeration below exact_below.
    std::size_t t_approx_from = 20;
    std::size_t exact_below = 8;
};

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> values);

// Throws LengthMismatch, TooFewPoints (n < 3), DegenerateInput (a constant variable).
CorrelationResult spearman(std::span<const double> xs, std::span<const double> ys,
                           const SpearmanOptions& options = {});

struct BootstrapCI {
    double mean = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::size_t resamples = 0;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    // Single observation: the interval collapses onto the value.
    bool degenerate = false;
};

// Percentile bootstrap of the mean. Throws EmptyInput.
BootstrapCI bootstrap_mean_ci(std::span<const double> values, std::size_t resamples = 1000, double level = 0.95,
                              std::uint64_t seed = 0);

double mean_of(std::span<const double> values);

}  // namespace stii
