#include "stii/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

#include "stii/distance.hpp"
#include "stii/error.hpp"
#include "stii/parallel.hpp"
#include "stii/random.hpp"

namespace stii {

using nlohmann::json;

std::string_view to_string(ContextMode m) {
    return m == ContextMode::context_sampled ? "context_sampled" : "empty_context";
}

std::string_view to_string(Normalization n) {
    return n == Normalization::full_sequence_norm ? "full_sequence_norm" : "none";
}

ContextMode parse_context_mode(std::string_view s) {
    if (s == "context_sampled") return ContextMode::context_sampled;
    if (s == "empty_context") return ContextMode::empty_context;
    throw Error(ErrorCode::InvalidArgument, "unknown context_mode '" + std::string(s) + "'");
}

Normalization parse_normalization(std::string_view s) {
    if (s == "full_sequence_norm") return Normalization::full_sequence_norm;
    if (s == "none") return Normalization::none;
    throw Error(ErrorCode::InvalidArgument, "unknown normalization '" + std::string(s) + "'");
}

json engine_config_to_json(const EngineConfig& c) {
    json j;
    j["estimator"] = std::string(to_string(c.estimator));
    j["context_mode"] = std::string(to_string(c.stii.context_mode));
    j["normalization"] = std::string(to_string(c.stii.normalization));
    j["num_permutations"] = c.stii.sampling.num_permutations;
    j["seed"] = c.stii.sampling.seed;
    j["antithetic"] = c.stii.sampling.antithetic;
    if (c.stii.sampling.convergence) {
        j["convergence"] = {{"window", c.stii.sampling.convergence->window},
                            {"relative_tolerance", c.stii.sampling.convergence->relative_tolerance}};
    } else {
        j["convergence"] = nullptr;
    }
    j["exact_limit"] = c.exact_limit;
    j["batch_size"] = c.batch_size;
    return j;
}

EngineConfig engine_config_from_json(const json& j, EngineConfig c) {
    try {
        if (j.contains("estimator")) c.estimator = parse_estimator(j["estimator"].get<std::string>());
        if (j.contains("context_mode")) c.stii.context_mode = parse_context_mode(j["context_mode"].get<std::string>());
        if (j.contains("normalization")) {
            c.stii.normalization = parse_normalization(j["normalization"].get<std::string>());
        }
        if (j.contains("num_permutations")) c.stii.sampling.num_permutations = j["num_permutations"].get<std::uint64_t>();
        if (j.contains("seed")) c.stii.sampling.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("antithetic")) c.stii.sampling.antithetic = j["antithetic"].get<bool>();
        if (auto it = j.find("convergence"); it != j.end()) {
            if (it->is_null()) {
                c.stii.sampling.convergence.reset();
            } else {
                c.stii.sampling.convergence =
                    ConvergenceCheck{it->at("window").get<std::uint64_t>(), it->at("relative_tolerance").get<double>()};
            }
        }
        if (j.contains("exact_limit")) c.exact_limit = j["exact_limit"].get<std::size_t>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("engine config: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        throw Error(ErrorCode::ConfigError, "engine config: " + e.message());
    }
    if (c.stii.sampling.num_permutations == 0) throw Error(ErrorCode::ConfigError, "num_permutations must be >= 1");
    if (c.batch_size == 0) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
    if (c.stii.sampling.convergence && c.stii.sampling.convergence->window == 0) {
        throw Error(ErrorCode::ConfigError, "convergence window must be >= 1");
    }
    return c;
}

namespace {

double binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0.0;
    k = std::min(k, n - k);
    double c = 1.0;
    for (std::size_t i = 0; i < k; ++i) c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    return std::round(c);
}

// Welford accumulator over vector-valued samples.
class RunningMean {
public:
    explicit RunningMean(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

    void add(const ValueVector& x) {
        ++count_;
        const double k = static_cast<double>(count_);
        for (std::size_t d = 0; d < mean_.size(); ++d) {
            const double delta = x[d] - mean_[d];
            mean_[d] += delta / k;
            m2_[d] += delta * (x[d] - mean_[d]);
        }
    }

    std::uint64_t count() const noexcept { return count_; }
    const ValueVector& mean() const noexcept { return mean_; }

    // Standard error of the mean per dimension (sample sd / sqrt(count)).
    ValueVector stderr_of_mean() const {
        ValueVector se(mean_.size(), 0.0);
        if (count_ < 2) return se;
        const double k = static_cast<double>(count_);
        for (std::size_t d = 0; d < se.size(); ++d) se[d] = std::sqrt(m2_[d] / (k - 1.0) / k);
        return se;
    }

private:
    std::uint64_t count_ = 0;
    ValueVector mean_;
    ValueVector m2_;
};

// Tracks the optional early stop: every `window` samples, compare ||mean||
// with the previous checkpoint.
class ConvergenceTracker {
public:
    explicit ConvergenceTracker(const std::optional<ConvergenceCheck>& check) : check_(check) {}

    bool should_stop(const RunningMean& acc) {
        if (!check_ || acc.count() % check_->window != 0) return false;
        const double norm = l2_norm(acc.mean());
        const bool stop = last_ && std::abs(norm - *last_) <= check_->relative_tolerance * std::max(norm, 1e-300);
        last_ = norm;
        return stop;
    }

private:
    std::optional<ConvergenceCheck> check_;
    std::optional<double> last_;
};

std::vector<std::size_t> validated_feature_set(std::span<const std::size_t> feature_set, std::size_t n) {
    if (feature_set.empty()) throw Error(ErrorCode::InvalidArgument, "feature set A must be non-empty");
    std::vector<std::size_t> a(feature_set.begin(), feature_set.end());
    std::sort(a.begin(), a.end());
    if (std::adjacent_find(a.begin(), a.end()) != a.end()) {
        throw Error(ErrorCode::InvalidArgument, "feature set A has duplicate indices");
    }
    if (a.back() >= n) throw Error(ErrorCode::IndexOutOfRange, "feature index out of range");
    return a;
}

std::vector<std::size_t> complement(const std::vector<std::size_t>& sorted_set, std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n - sorted_set.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (k < sorted_set.size() && sorted_set[k] == i) {
            ++k;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

void check_pair(std::size_t a, std::size_t b, std::size_t n) {
    if (a == b) throw Error(ErrorCode::InvalidArgument, "pair members must differ");
    if (a >= n || b >= n) throw Error(ErrorCode::InvalidArgument, "pair index out of range");
}

double normalizer_for(Oracle& oracle, Normalization normalization) {
    if (normalization == Normalization::none) return 1.0;
    const double norm = l2_norm(oracle.evaluate(CoalitionMask::full(oracle.instance().n_features)));
    if (!(norm > 0.0)) throw Error(ErrorCode::ZeroNormalizer, "unablated output has zero norm");
    return norm;
}

constexpr std::size_t kEnumerationChunk = 2048;

// delta_ab v(S) per dimension from the four evaluated masks.
void add_second_difference(const ValueVector& both, const ValueVector& only_a, const ValueVector& only_b,
                           const ValueVector& none, ValueVector& out) {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = both[d] - only_a[d] - only_b[d] + none[d];
}

void push_four(std::vector<CoalitionMask>& masks, CoalitionMask context, std::size_t a, std::size_t b) {
    CoalitionMask with_a = context;
    with_a.set(a);
    CoalitionMask with_b = context;
    with_b.set(b);
    CoalitionMask with_both = with_a;
    with_both.set(b);
    masks.push_back(std::move(with_both));
    masks.push_back(std::move(with_a));
    masks.push_back(std::move(with_b));
    masks.push_back(std::move(context));
}

}  // namespace

double shapley_subset_weight(std::size_t free_count, std::size_t subset_size) {
    return 1.0 / (static_cast<double>(free_count + 1) * binomial(free_count, subset_size));
}

ShapleyResult exact_shapley(Oracle& oracle, std::span<const std::size_t> feature_set, std::size_t exact_limit,
                            SubsetWeight weight) {
    const auto& inst = oracle.instance();
    const std::size_t n = inst.n_features;
    if (n > exact_limit) {
        throw Error(ErrorCode::ExactLimitExceeded,
                    std::to_string(n) + " features exceed exact limit " + std::to_string(exact_limit));
    }
    const auto a = validated_feature_set(feature_set, n);
    const auto free = complement(a, n);
    const std::size_t m = free.size();
    const std::uint64_t total = 1ull << m;

    // Marginal contributions summed per context size, then weighted.
    std::vector<ValueVector> by_size(m + 1, ValueVector(inst.output_dim, 0.0));
    std::vector<CoalitionMask> masks;
    for (std::uint64_t start = 0; start < total; start += kEnumerationChunk) {
        const std::uint64_t stop = std::min<std::uint64_t>(total, start + kEnumerationChunk);
        masks.clear();
        for (std::uint64_t sub = start; sub < stop; ++sub) {
            CoalitionMask context(n);
            for (std::size_t j = 0; j < m; ++j) {
                if ((sub >> j) & 1u) context.set(free[j]);
            }
            CoalitionMask with_a = context;
            for (auto i : a) with_a.set(i);
            masks.push_back(std::move(with_a));
            masks.push_back(std::move(context));
        }
        const auto values = oracle.evaluate_batch(masks);
        for (std::uint64_t sub = start; sub < stop; ++sub) {
            const std::size_t k = static_cast<std::size_t>(sub - start);
            const auto size = static_cast<std::size_t>(std::popcount(sub));
            for (std::size_t d = 0; d < inst.output_dim; ++d) {
                by_size[size][d] += values[2 * k][d] - values[2 * k + 1][d];
            }
        }
    }

    ShapleyResult r;
    r.feature_set = a;
    r.phi.assign(inst.output_dim, 0.0);
    for (std::size_t s = 0; s <= m; ++s) {
        const double w = weight(m, s);
        for (std::size_t d = 0; d < inst.output_dim; ++d) r.phi[d] += w * by_size[s][d];
    }
    r.estimator = Estimator::exact;
    return r;
}

ShapleyResult sampled_shapley(Oracle& oracle, std::span<const std::size_t> feature_set,
                              const SamplingConfig& config) {
    if (config.num_permutations == 0) throw Error(ErrorCode::InvalidArgument, "num_permutations must be >= 1");
    const auto& inst = oracle.instance();
    const std::size_t n = inst.n_features;
    const auto a = validated_feature_set(feature_set, n);
    std::vector<std::size_t> free = complement(a, n);
    const std::size_t m = free.size();

    Rng rng(config.seed);
    RunningMean acc(inst.output_dim);
    ConvergenceTracker convergence(config.convergence);
    const std::size_t per_sample = config.antithetic ? 4 : 2;
    const std::size_t chunk_samples = std::max<std::size_t>(1, oracle.options().batch_size / per_sample);

    std::vector<CoalitionMask> masks;
    std::vector<std::size_t> order(m);
    ValueVector contribution(inst.output_dim);
    std::uint64_t drawn = 0;
    bool stopped = false;
    while (drawn < config.num_permutations && !stopped) {
        const std::uint64_t batch = std::min<std::uint64_t>(chunk_samples, config.num_permutations - drawn);
        masks.clear();
        for (std::uint64_t k = 0; k < batch; ++k) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            shuffle(std::span<std::size_t>(order), rng);
            const auto slot = static_cast<std::size_t>(uniform_below(rng, m + 1));
            CoalitionMask context(n);
            CoalitionMask rest(n);
            for (std::size_t j = 0; j < m; ++j) (j < slot ? context : rest).set(free[order[j]]);
            auto add_pair = [&](CoalitionMask s) {
                CoalitionMask with_a = s;
                for (auto i : a) with_a.set(i);
                masks.push_back(std::move(with_a));
                masks.push_back(std::move(s));
            };
            add_pair(std::move(context));
            if (config.antithetic) add_pair(std::move(rest));
        }
        const auto values = oracle.evaluate_batch(masks);
        for (std::uint64_t k = 0; k < batch; ++k) {
            const std::size_t base = static_cast<std::size_t>(k) * per_sample;
            for (std::size_t d = 0; d < inst.output_dim; ++d) {
                double c = values[base][d] - values[base + 1][d];
                if (config.antithetic) c = 0.5 * (c + (values[base + 2][d] - values[base + 3][d]));
                contribution[d] = c;
            }
            acc.add(contribution);
            ++drawn;
            if (convergence.should_stop(acc)) {
                stopped = true;
                break;
            }
        }
    }

    ShapleyResult r;
    r.feature_set = a;
    r.phi = acc.mean();
    r.estimator = Estimator::sampled;
    r.num_permutations = acc.count();
    r.seed = config.seed;
    r.stderr_estimate = acc.stderr_of_mean();
    return r;
}

StiiEstimate exact_stii_estimate(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config,
                                 std::size_t exact_limit) {
    const auto& inst = oracle.instance();
    const std::size_t n = inst.n_features;
    check_pair(a, b, n);
    if (a > b) std::swap(a, b);

    StiiEstimate est;
    est.estimator = Estimator::exact;
    est.second_difference.assign(inst.output_dim, 0.0);
    ValueVector delta(inst.output_dim);

    if (config.context_mode == ContextMode::empty_context) {
        std::vector<CoalitionMask> masks;
        push_four(masks, CoalitionMask(n), a, b);
        const auto v = oracle.evaluate_batch(masks);
        add_second_difference(v[0], v[1], v[2], v[3], est.second_difference);
    } else {
        if (n > exact_limit) {
            throw Error(ErrorCode::ExactLimitExceeded,
                        std::to_string(n) + " features exceed exact limit " + std::to_string(exact_limit));
        }
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < n; ++i) {
            if (i != a && i != b) free.push_back(i);
        }
        const std::size_t m = free.size();
        const std::uint64_t total = 1ull << m;
        std::vector<ValueVector> by_size(m + 1, ValueVector(inst.output_dim, 0.0));
        std::vector<CoalitionMask> masks;
        for (std::uint64_t start = 0; start < total; start += kEnumerationChunk) {
            const std::uint64_t stop = std::min<std::uint64_t>(total, start + kEnumerationChunk);
            masks.clear();
            for (std::uint64_t sub = start; sub < stop; ++sub) {
                CoalitionMask context(n);
                for (std::size_t j = 0; j < m; ++j) {
                    if ((sub >> j) & 1u) context.set(free[j]);
                }
                push_four(masks, std::move(context), a, b);
            }
            const auto v = oracle.evaluate_batch(masks);
            for (std::uint64_t sub = start; sub < stop; ++sub) {
                const std::size_t k = 4 * static_cast<std::size_t>(sub - start);
                add_second_difference(v[k], v[k + 1], v[k + 2], v[k + 3], delta);
                auto& acc = by_size[static_cast<std::size_t>(std::popcount(sub))];
                for (std::size_t d = 0; d < inst.output_dim; ++d) acc[d] += delta[d];
            }
        }
        for (std::size_t s = 0; s <= m; ++s) {
            const double w = shapley_subset_weight(m, s);
            for (std::size_t d = 0; d < inst.output_dim; ++d) est.second_difference[d] += w * by_size[s][d];
        }
    }

    est.normalizer = normalizer_for(oracle, config.normalization);
    est.stii = l2_norm(est.second_difference) / est.normalizer;
    return est;
}

double exact_stii(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config, std::size_t exact_limit) {
    return exact_stii_estimate(oracle, a, b, config, exact_limit).stii;
}

// --- ContextPlan ---

ContextPlan::ContextPlan(std::size_t n_features, const SamplingConfig& config)
    : n_(n_features), antithetic_(config.antithetic) {
    if (n_features < 2) throw Error(ErrorCode::InvalidArgument, "context plan needs at least two features");
    if (config.num_permutations == 0) throw Error(ErrorCode::InvalidArgument, "num_permutations must be >= 1");
    const std::size_t rows = static_cast<std::size_t>(config.num_permutations) * (antithetic_ ? 2 : 1);
    permutations_.resize(rows * n_);
    slots_.resize(rows);
    const auto free_slots = static_cast<std::uint64_t>(n_ - 1);  // |N\{a,b}| + 1 insertion points
    Rng rng(config.seed);
    std::vector<std::uint32_t> perm(n_);
    std::size_t row = 0;
    for (std::uint64_t k = 0; k < config.num_permutations; ++k) {
        std::iota(perm.begin(), perm.end(), 0u);
        shuffle(std::span<std::uint32_t>(perm), rng);
        const auto slot = static_cast<std::uint32_t>(uniform_below(rng, free_slots));
        std::copy(perm.begin(), perm.end(), permutations_.begin() + static_cast<std::ptrdiff_t>(row * n_));
        slots_[row++] = slot;
        if (antithetic_) {
            // Reversed order with the mirrored slot selects the complementary context.
            std::copy(perm.rbegin(), perm.rend(), permutations_.begin() + static_cast<std::ptrdiff_t>(row * n_));
            slots_[row++] = static_cast<std::uint32_t>(n_ - 2) - slot;
        }
    }
}

CoalitionMask ContextPlan::context(std::size_t k, std::size_t a, std::size_t b) const {
    CoalitionMask mask(n_);
    const std::uint32_t* row = permutations_.data() + k * n_;
    std::size_t taken = 0;
    const std::size_t want = slots_[k];
    for (std::size_t j = 0; j < n_ && taken < want; ++j) {
        if (row[j] == a || row[j] == b) continue;
        mask.set(row[j]);
        ++taken;
    }
    return mask;
}

StiiEstimate sampled_stii_with_plan(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config,
                                    const ContextPlan& plan) {
    const auto& inst = oracle.instance();
    check_pair(a, b, inst.n_features);
    if (a > b) std::swap(a, b);
    if (config.context_mode == ContextMode::empty_context) return exact_stii_estimate(oracle, a, b, config);
    if (plan.n_features() != inst.n_features) {
        throw Error(ErrorCode::InvalidArgument, "context plan was built for a different feature count");
    }

    RunningMean acc(inst.output_dim);
    ConvergenceTracker convergence(config.sampling.convergence);
    const std::size_t rows_per_sample = plan.antithetic() ? 2 : 1;
    const std::size_t total_samples = plan.samples() / rows_per_sample;
    const std::size_t chunk_samples =
        std::max<std::size_t>(1, oracle.options().batch_size / (4 * rows_per_sample));

    std::vector<CoalitionMask> masks;
    ValueVector delta(inst.output_dim);
    ValueVector delta2(inst.output_dim);
    std::size_t done = 0;
    bool stopped = false;
    while (done < total_samples && !stopped) {
        const std::size_t batch = std::min(chunk_samples, total_samples - done);
        masks.clear();
        for (std::size_t k = 0; k < batch; ++k) {
            for (std::size_t r = 0; r < rows_per_sample; ++r) {
                push_four(masks, plan.context((done + k) * rows_per_sample + r, a, b), a, b);
            }
        }
        const auto v = oracle.evaluate_batch(masks);
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t base = 4 * rows_per_sample * k;
            add_second_difference(v[base], v[base + 1], v[base + 2], v[base + 3], delta);
            if (plan.antithetic()) {
                add_second_difference(v[base + 4], v[base + 5], v[base + 6], v[base + 7], delta2);
                for (std::size_t d = 0; d < delta.size(); ++d) delta[d] = 0.5 * (delta[d] + delta2[d]);
            }
            acc.add(delta);
            if (convergence.should_stop(acc)) {
                stopped = true;
                break;
            }
        }
        done += batch;
    }

    StiiEstimate est;
    est.estimator = Estimator::sampled;
    est.num_permutations = acc.count();
    est.second_difference = acc.mean();
    est.normalizer = normalizer_for(oracle, config.normalization);
    est.stii = l2_norm(est.second_difference) / est.normalizer;
    // Root-sum-square of per-dimension standard errors bounds the spread of the norm.
    est.stderr_estimate = l2_norm(acc.stderr_of_mean()) / est.normalizer;
    return est;
}

StiiEstimate sampled_stii(Oracle& oracle, std::size_t a, std::size_t b, const StiiConfig& config) {
    if (config.context_mode == ContextMode::empty_context) return exact_stii_estimate(oracle, a, b, config);
    if (config.sampling.num_permutations == 0) throw Error(ErrorCode::InvalidArgument, "num_permutations must be >= 1");
    const ContextPlan plan(oracle.instance().n_features, config.sampling);
    return sampled_stii_with_plan(oracle, a, b, config, plan);
}

std::vector<InteractionRecord> stii_matrix(Oracle& oracle, std::span<const FeaturePair> pairs,
                                           const EngineConfig& config) {
    const auto& inst = oracle.instance();
    std::vector<FeaturePair> canonical;
    canonical.reserve(pairs.size());
    for (const auto& p : pairs) {
        check_pair(p.first, p.second, inst.n_features);
        canonical.push_back(FeaturePair::canonical(p.first, p.second));
    }

    const bool sampled =
        config.estimator == Estimator::sampled && config.stii.context_mode == ContextMode::context_sampled;
    std::optional<ContextPlan> plan;
    if (sampled && !canonical.empty()) plan.emplace(inst.n_features, config.stii.sampling);

    std::vector<InteractionRecord> records(canonical.size());
    parallel_for(canonical.size(), config.threads, [&](std::size_t i) {
        const auto [a, b] = canonical[i];
        const StiiEstimate est = sampled ? sampled_stii_with_plan(oracle, a, b, config.stii, *plan)
                                         : exact_stii_estimate(oracle, a, b, config.stii, config.exact_limit);
        InteractionRecord& r = records[i];
        r.instance_id = inst.instance_id;
        r.pair = canonical[i];
        r.stii = est.stii;
        r.d_i = pair_distance(a, b, inst.target_index.value_or(0));
        if (inst.target_index) r.d_p = prediction_distance(a, b, *inst.target_index);
        r.estimator = est.estimator;
        r.num_permutations = est.num_permutations;
        r.seed = config.stii.sampling.seed;
    });
    return records;
}

}  // namespace stii
