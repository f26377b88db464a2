#include "stii/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <boost/math/distributions/students_t.hpp>

#include "stii/error.hpp"
#include "stii/random.hpp"

namespace stii {

std::vector<double> midranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        // Positions i..j-1 (0-based) share ranks i+1..j.
        const double rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
        i = j;
    }
    return ranks;
}

double mean_of(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorCode::EmptyInput, "mean of an empty sample");
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

namespace {

std::vector<double> centered(std::vector<double> v) {
    const double m = mean_of(v);
    for (auto& x : v) x -= m;
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

CorrelationResult spearman(std::span<const double> xs, std::span<const double> ys, const SpearmanOptions& options) {
    if (xs.size() != ys.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    "spearman inputs have lengths " + std::to_string(xs.size()) + " and " + std::to_string(ys.size()));
    }
    const std::size_t n = xs.size();
    if (n < 3) throw Error(ErrorCode::TooFewPoints, "spearman needs at least 3 points, got " + std::to_string(n));

    const auto rx = centered(midranks(xs));
    const auto ry = centered(midranks(ys));
    const double sxx = dot(rx, rx);
    const double syy = dot(ry, ry);
    if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::DegenerateInput, "spearman input variable is constant");

    const double denom = std::sqrt(sxx * syy);
    const double sxy = dot(rx, ry);
    CorrelationResult r;
    r.n = n;
    r.rho = std::clamp(sxy / denom, -1.0, 1.0);

    // Orderings at least as extreme as the observed |sxy|; the slack absorbs
    // summation-order rounding between equal statistics.
    const double observed = std::abs(sxy) - 1e-9 * denom;

    if (n >= options.t_approx_from) {
        r.method = CorrelationMethod::t_approx;
        if (std::abs(r.rho) >= 1.0) {
            r.p_value = 0.0;
        } else {
            const double df = static_cast<double>(n - 2);
            const double t = std::abs(r.rho) * std::sqrt(df / (1.0 - r.rho * r.rho));
            const boost::math::students_t dist(df);
            r.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
        }
        return r;
    }

    r.method = CorrelationMethod::permutation;
    if (n < options.exact_below) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::uint64_t extreme = 0;
        std::uint64_t total = 0;
        std::vector<double> permuted(n);
        do {
            for (std::size_t i = 0; i < n; ++i) permuted[i] = ry[perm[i]];
            if (std::abs(dot(rx, permuted)) >= observed) ++extreme;
            ++total;
        } while (std::next_permutation(perm.begin(), perm.end()));
        r.permutations = total;
        r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
        return r;
    }

    // Monte Carlo: each draw permutes both vectors with the same shuffle and
    // scores both pairings, so swapping xs and ys leaves p unchanged.
    Rng rng(options.seed);
    std::vector<std::size_t> perm(n);
    std::vector<double> px(n);
    std::vector<double> py(n);
    std::uint64_t extreme = 0;
    for (std::uint64_t d = 0; d < options.monte_carlo_draws; ++d) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        shuffle(std::span<std::size_t>(perm), rng);
        for (std::size_t i = 0; i < n; ++i) {
            px[i] = rx[perm[i]];
            py[i] = ry[perm[i]];
        }
        if (std::abs(dot(rx, py)) >= observed) ++extreme;
        if (std::abs(dot(ry, px)) >= observed) ++extreme;
    }
    r.permutations = options.monte_carlo_draws;
    r.p_value = std::min(1.0, (0.5 * static_cast<double>(extreme) + 1.0) /
                                  (static_cast<double>(options.monte_carlo_draws) + 1.0));
    return r;
}

namespace {

// Linear interpolation between order statistics (Hyndman-Fan type 7).
double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapCI bootstrap_mean_ci(std::span<const double> values, std::size_t resamples, double level,
                              std::uint64_t seed) {
    if (values.empty()) throw Error(ErrorCode::EmptyInput, "bootstrap needs at least one value");
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "confidence level must be in (0, 1)");
    if (resamples == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least one resample");

    BootstrapCI ci;
    ci.n = values.size();
    ci.mean = mean_of(values);
    ci.resamples = resamples;
    ci.seed = seed;
    if (values.size() == 1) {
        ci.lower = ci.upper = ci.mean;
        ci.degenerate = true;
        return ci;
    }

    const std::size_t n = values.size();
    std::vector<double> means(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        // Independent stream per resample, derived from the master seed.
        SplitMix64 gen(splitmix64(seed ^ splitmix64(r + 1)));
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += values[static_cast<std::size_t>(uniform_below(gen, n))];
        means[r] = sum / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const double alpha = 1.0 - level;
    ci.lower = std::min(quantile_sorted(means, 0.5 * alpha), ci.mean);
    ci.upper = std::max(quantile_sorted(means, 1.0 - 0.5 * alpha), ci.mean);
    return ci;
}

}  // namespace stii
