#pragma once
// Reference implementations used only by tests. Each one follows the textbook
// definition directly and shares no code with the library under test.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "stii/toy_games.hpp"

namespace oracle {

using Value = std::vector<double>;
// Coalitions are bit sets over at most 20 features.
using Game = std::function<Value(std::uint32_t)>;

inline bool has(std::uint32_t s, std::size_t i) {
    return (s >> i) & 1u;
}

// Game definitions written from scratch.
inline Game reference_game(const stii::ToyGameSpec& spec) {
    return [spec](std::uint32_t s) {
        double v = 0.0;
        const std::size_t n = spec.n_features;
        switch (spec.kind) {
            case stii::ToyKind::linear:
                for (std::size_t i = 0; i < n; ++i) v += has(s, i) ? spec.weights[i] : 0.0;
                break;
            case stii::ToyKind::unanimity: {
                bool all = true;
                for (auto r : spec.required) all = all && has(s, r);
                v = all ? 1.0 : 0.0;
                break;
            }
            case stii::ToyKind::majority: {
                std::size_t count = 0;
                for (std::size_t i = 0; i < n; ++i) count += has(s, i);
                v = count >= spec.threshold ? 1.0 : 0.0;
                break;
            }
            case stii::ToyKind::pairwise_product:
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) {
                        if (has(s, i) && has(s, j)) v += spec.weight_matrix[i][j];
                    }
                }
                break;
            case stii::ToyKind::decaying_interaction:
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) {
                        if (has(s, i) && has(s, j)) v += std::exp(-spec.rate * static_cast<double>(j - i));
                    }
                }
                break;
        }
        Value out;
        for (double scale : spec.output_scales) out.push_back(scale * v);
        return out;
    };
}

inline long double factorial(std::size_t k) {
    long double f = 1.0L;
    for (std::size_t i = 2; i <= k; ++i) f *= static_cast<long double>(i);
    return f;
}

// phi(A) = sum over S in N\A of |S|!(m-|S|)!/(m+1)! (v(S u A) - v(S)), m = n - |A|.
inline Value powerset_shapley(const Game& v, std::size_t n, std::uint32_t a_set) {
    const std::size_t m = n - static_cast<std::size_t>(std::popcount(a_set));
    const std::uint32_t full = (1u << n) - 1u;
    const std::uint32_t rest = full & ~a_set;
    Value phi;
    for (std::uint32_t s = 0; s <= full; ++s) {
        if (s & ~rest) continue;
        const std::size_t k = static_cast<std::size_t>(std::popcount(s));
        const long double w = factorial(k) * factorial(m - k) / factorial(m + 1);
        const Value with = v(s | a_set);
        const Value without = v(s);
        if (phi.empty()) phi.assign(with.size(), 0.0);
        for (std::size_t d = 0; d < with.size(); ++d) {
            phi[d] += static_cast<double>(w * static_cast<long double>(with[d] - without[d]));
        }
    }
    return phi;
}

// Same quantity via all orderings of the m remaining features plus A as one
// block: the marginal contribution of the block given its predecessors.
inline Value permutation_shapley(const Game& v, std::size_t n, std::uint32_t a_set) {
    std::vector<int> players;  // -1 stands for the block A
    for (std::size_t i = 0; i < n; ++i) {
        if (!has(a_set, i)) players.push_back(static_cast<int>(i));
    }
    players.push_back(-1);
    std::sort(players.begin(), players.end());
    Value sum;
    double count = 0.0;
    do {
        std::uint32_t before = 0;
        for (int p : players) {
            if (p == -1) break;
            before |= 1u << p;
        }
        const Value with = v(before | a_set);
        const Value without = v(before);
        if (sum.empty()) sum.assign(with.size(), 0.0);
        for (std::size_t d = 0; d < with.size(); ++d) sum[d] += with[d] - without[d];
        count += 1.0;
    } while (std::next_permutation(players.begin(), players.end()));
    for (auto& x : sum) x /= count;
    return sum;
}

// Weighted mixed second difference over contexts of N\{a,b}, L2 norm over
// dimensions, optionally divided by ||v(N)||.
inline double powerset_stii(const Game& v, std::size_t n, std::size_t a, std::size_t b, bool empty_context_only,
                            bool normalize) {
    const std::uint32_t full = (1u << n) - 1u;
    const std::uint32_t ab = (1u << a) | (1u << b);
    const std::size_t m = n - 2;
    Value delta;
    for (std::uint32_t s = 0; s <= full; ++s) {
        if (s & ab) continue;
        if (empty_context_only && s != 0) continue;
        const std::size_t k = static_cast<std::size_t>(std::popcount(s));
        const long double w =
            empty_context_only ? 1.0L : factorial(k) * factorial(m - k) / factorial(m + 1);
        const Value v11 = v(s | ab);
        const Value v10 = v(s | (1u << a));
        const Value v01 = v(s | (1u << b));
        const Value v00 = v(s);
        if (delta.empty()) delta.assign(v11.size(), 0.0);
        for (std::size_t d = 0; d < v11.size(); ++d) {
            delta[d] += static_cast<double>(w * static_cast<long double>(v11[d] - v10[d] - v01[d] + v00[d]));
        }
    }
    double norm = 0.0;
    for (double x : delta) norm += x * x;
    norm = std::sqrt(norm);
    if (!normalize) return norm;
    const Value top = v(full);
    double denom = 0.0;
    for (double x : top) denom += x * x;
    return norm / std::sqrt(denom);
}

// O(n^2) midranks: 1 + #smaller + (#ties excluding self) / 2.
inline std::vector<double> naive_midranks(const std::vector<double>& xs) {
    std::vector<double> r(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double smaller = 0.0;
        double ties = 0.0;
        for (std::size_t j = 0; j < xs.size(); ++j) {
            if (xs[j] < xs[i]) smaller += 1.0;
            if (j != i && xs[j] == xs[i]) ties += 1.0;
        }
        r[i] = 1.0 + smaller + 0.5 * ties;
    }
    return r;
}

inline double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double naive_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return naive_pearson(naive_midranks(x), naive_midranks(y));
}

// Left indices t of consecutive pairs (t, t+1) whose timestamp, in integer
// microseconds, lies in [boundary - delta, boundary + delta].
inline std::vector<std::size_t> count_window_members(const std::vector<std::int64_t>& times_us,
                                                     std::int64_t boundary_us, std::int64_t delta_us) {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t + 1 < times_us.size(); ++t) {
        if (times_us[t] >= boundary_us - delta_us && times_us[t] <= boundary_us + delta_us) out.push_back(t);
    }
    return out;
}

}  // namespace oracle
