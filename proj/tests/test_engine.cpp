#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "stii/engine.hpp"
#include "stii/error.hpp"
#include "stii/random.hpp"

using namespace stii;

namespace {

Oracle toy_oracle(const ToyGameSpec& spec, std::string id = "toy") {
    Instance inst;
    inst.instance_id = std::move(id);
    inst.n_features = spec.n_features;
    inst.output_dim = spec.output_dim();
    return Oracle(std::make_unique<ToyBackend>(spec), inst);
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

StiiConfig mode(ContextMode m, Normalization n = Normalization::full_sequence_norm) {
    StiiConfig c;
    c.context_mode = m;
    c.normalization = n;
    return c;
}

std::vector<ToyGameSpec> random_games(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    std::vector<double> w(n);
    for (auto& x : w) x = uniform01(rng) * 4.0 - 2.0;
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) m[i][j] = uniform01(rng) * 2.0 - 1.0;
    }
    std::vector<ToyGameSpec> games{
        ToyGameSpec::linear_game(w),
        ToyGameSpec::unanimity_game(n, n >= 3 ? std::vector<std::size_t>{0, n / 2, n - 1} : std::vector<std::size_t>{0, 1}),
        ToyGameSpec::majority_game(n, (n + 1) / 2),
        ToyGameSpec::pairwise_product_game(m),
        ToyGameSpec::decaying_interaction_game(n, 0.7),
    };
    games[1].output_scales = {1.0, -3.0};
    games[4].output_scales = {0.5, 2.0, -1.0};
    return games;
}

}  // namespace

TEST_CASE("exact shapley examples") {
    auto lin = toy_oracle(ToyGameSpec::linear_game({2.0, 3.0}));
    const std::size_t a0[] = {0};
    const auto r = exact_shapley(lin, a0);
    CHECK(r.phi == ValueVector{2.0});
    CHECK(r.estimator == Estimator::exact);
    CHECK(r.num_permutations == 0);
    CHECK_FALSE(r.stderr_estimate);

    auto una = toy_oracle(ToyGameSpec::unanimity_game(2, {0, 1}));
    CHECK(exact_shapley(una, a0).phi[0] == doctest::Approx(0.5).epsilon(1e-15));

    auto maj = toy_oracle(ToyGameSpec::majority_game(3, 2));
    CHECK(exact_shapley(maj, a0).phi[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("exact shapley against powerset and permutation references") {
    for (std::size_t n : {2u, 3u, 5u, 7u}) {
        for (const auto& spec : random_games(n, n)) {
            auto o = toy_oracle(spec);
            const auto ref = oracle::reference_game(spec);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t a[] = {i};
                const auto phi = exact_shapley(o, a).phi;
                const auto p1 = oracle::powerset_shapley(ref, n, 1u << i);
                const auto p2 = oracle::permutation_shapley(ref, n, 1u << i);
                for (std::size_t d = 0; d < phi.size(); ++d) {
                    CHECK(phi[d] == doctest::Approx(p1[d]).epsilon(1e-12));
                    CHECK(phi[d] == doctest::Approx(p2[d]).epsilon(1e-12));
                }
            }
            if (n >= 3) {
                const std::size_t a[] = {0, 2};
                const auto phi = exact_shapley(o, a).phi;
                const auto p2 = oracle::permutation_shapley(ref, n, 0b101u);
                for (std::size_t d = 0; d < phi.size(); ++d) CHECK(phi[d] == doctest::Approx(p2[d]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("efficiency") {
    for (const auto& spec : random_games(11, 8)) {
        auto o = toy_oracle(spec);
        ValueVector total(spec.output_dim(), 0.0);
        for (std::size_t i = 0; i < spec.n_features; ++i) {
            const std::size_t a[] = {i};
            const auto phi = exact_shapley(o, a).phi;
            for (std::size_t d = 0; d < total.size(); ++d) total[d] += phi[d];
        }
        const auto full = toy_game_evaluate(spec, CoalitionMask::full(spec.n_features));
        const auto none = toy_game_evaluate(spec, CoalitionMask::empty(spec.n_features));
        for (std::size_t d = 0; d < total.size(); ++d) CHECK(std::abs(total[d] - (full[d] - none[d])) <= 1e-9);
    }
}

TEST_CASE("a wrong weight breaks efficiency") {
    const auto spec = ToyGameSpec::majority_game(5, 3);
    auto o = toy_oracle(spec);
    const SubsetWeight binomial_only = [](std::size_t m, std::size_t s) {
        double c = 1.0;
        for (std::size_t k = 1; k <= s; ++k) c = c * static_cast<double>(m - s + k) / static_cast<double>(k);
        return 1.0 / c;
    };
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t a[] = {i};
        total += exact_shapley(o, a, 20, binomial_only).phi[0];
    }
    CHECK(std::abs(total - 1.0) > 1e-3);
}

TEST_CASE("exact preconditions") {
    auto o = toy_oracle(ToyGameSpec::linear_game(std::vector<double>(21, 1.0)));
    const std::size_t a[] = {0};
    CHECK(code_of([&] { exact_shapley(o, a); }) == ErrorCode::ExactLimitExceeded);
    CHECK(code_of([&] { exact_stii(o, 0, 1, StiiConfig{}); }) == ErrorCode::ExactLimitExceeded);
    CHECK(code_of([&] { exact_shapley(o, std::span<const std::size_t>{}, 30); }) == ErrorCode::InvalidArgument);
    const std::size_t out_of_range[] = {21};
    CHECK(code_of([&] { exact_shapley(o, out_of_range, 30); }) == ErrorCode::IndexOutOfRange);
    CHECK(code_of([&] { exact_stii(o, 3, 3, StiiConfig{}, 30); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("exact stii examples") {
    auto lin = toy_oracle(ToyGameSpec::linear_game({2.0, 3.0}));
    CHECK(exact_stii(lin, 0, 1, mode(ContextMode::empty_context)) == 0.0);
    CHECK(exact_stii(lin, 0, 1, mode(ContextMode::context_sampled)) == 0.0);

    auto u2 = toy_oracle(ToyGameSpec::unanimity_game(2, {0, 1}));
    CHECK(exact_stii(u2, 0, 1, StiiConfig{}) == 1.0);

    auto u3 = toy_oracle(ToyGameSpec::unanimity_game(3, {0, 1}));
    CHECK(exact_stii(u3, 0, 1, mode(ContextMode::context_sampled)) == doctest::Approx(1.0).epsilon(1e-15));

    auto pp = toy_oracle(ToyGameSpec::pairwise_product_game({{0.0, 2.0}, {0.0, 0.0}}));
    CHECK(exact_stii(pp, 0, 1, mode(ContextMode::context_sampled, Normalization::none)) == 2.0);
    CHECK(exact_stii(pp, 0, 1, mode(ContextMode::context_sampled)) == 1.0);
}

TEST_CASE("exact stii against the powerset reference") {
    for (std::size_t n : {2u, 4u, 6u}) {
        for (const auto& spec : random_games(100 + n, n)) {
            auto o = toy_oracle(spec);
            const auto ref = oracle::reference_game(spec);
            for (std::size_t a = 0; a < n; ++a) {
                for (std::size_t b = a + 1; b < n; ++b) {
                    for (bool empty : {false, true}) {
                        for (bool norm : {false, true}) {
                            const auto cfg = mode(empty ? ContextMode::empty_context : ContextMode::context_sampled,
                                                  norm ? Normalization::full_sequence_norm : Normalization::none);
                            const double expected = oracle::powerset_stii(ref, n, a, b, empty, norm);
                            CHECK(exact_stii(o, a, b, cfg) == doctest::Approx(expected).epsilon(1e-12));
                            CHECK(exact_stii(o, b, a, cfg) == exact_stii(o, a, b, cfg));
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("zero normalizer") {
    // Weights summing to zero give v(N) = 0.
    auto z = toy_oracle(ToyGameSpec::linear_game({1.0, -1.0, 0.0}));
    CHECK(code_of([&] { exact_stii(z, 0, 1, StiiConfig{}); }) == ErrorCode::ZeroNormalizer);
    CHECK(exact_stii(z, 0, 1, mode(ContextMode::context_sampled, Normalization::none)) == 0.0);
}

TEST_CASE("sampled shapley examples") {
    auto lin = toy_oracle(ToyGameSpec::linear_game({2.0, 3.0}));
    const std::size_t a0[] = {0};
    for (std::uint64_t seed : {0u, 1u, 99u}) {
        SamplingConfig cfg;
        cfg.num_permutations = 1;
        cfg.seed = seed;
        CHECK(sampled_shapley(lin, a0, cfg).phi == ValueVector{2.0});
    }

    auto una = toy_oracle(ToyGameSpec::unanimity_game(2, {0, 1}));
    SamplingConfig cfg;
    cfg.num_permutations = 10000;
    cfg.seed = 3;
    const auto r = sampled_shapley(una, a0, cfg);
    CHECK(std::abs(r.phi[0] - 0.5) <= 0.02);
    CHECK(r.estimator == Estimator::sampled);
    CHECK(r.num_permutations == 10000);
    CHECK(r.seed == 3);
    REQUIRE(r.stderr_estimate);
    CHECK((*r.stderr_estimate)[0] == doctest::Approx(0.005).epsilon(0.05));
    const auto again = sampled_shapley(una, a0, cfg);
    CHECK(again.phi == r.phi);
    CHECK(*again.stderr_estimate == *r.stderr_estimate);
}

TEST_CASE("sampled stii examples") {
    auto lin = toy_oracle(ToyGameSpec::linear_game({2.0, 3.0, -1.0}));
    StiiConfig cfg;
    cfg.sampling.num_permutations = 1;
    CHECK(sampled_stii(lin, 0, 2, cfg).stii == 0.0);

    auto u6 = toy_oracle(ToyGameSpec::unanimity_game(6, {0, 1}));
    cfg.sampling.num_permutations = 500;
    cfg.sampling.seed = 17;
    const auto est = sampled_stii(u6, 0, 1, cfg);
    CHECK(std::abs(est.stii - exact_stii(u6, 0, 1, StiiConfig{})) <= 0.05);

    // Four masks; the normalizer adds v(N) unless it is already cached.
    auto fresh = toy_oracle(ToyGameSpec::majority_game(6, 3));
    sampled_stii(fresh, 2, 4, mode(ContextMode::empty_context, Normalization::none));
    CHECK(fresh.call_count() <= 4);
    const auto before = fresh.call_count();
    sampled_stii(fresh, 1, 3, mode(ContextMode::empty_context));
    CHECK(fresh.call_count() - before <= 4);
    auto normed = toy_oracle(ToyGameSpec::majority_game(6, 3));
    sampled_stii(normed, 2, 4, mode(ContextMode::empty_context));
    CHECK(normed.call_count() <= 5);
}

TEST_CASE("sampled estimates converge with more samples") {
    const auto spec = ToyGameSpec::majority_game(7, 4);
    auto o = toy_oracle(spec);
    const double exact = exact_stii(o, 1, 3, StiiConfig{});
    double previous_error = 1e9;
    for (std::uint64_t m : {100u, 1600u, 25600u}) {
        double err = 0.0;
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            StiiConfig cfg;
            cfg.sampling.num_permutations = m;
            cfg.sampling.seed = seed;
            err += std::abs(sampled_stii(o, 1, 3, cfg).stii - exact);
        }
        CHECK(err < previous_error);
        previous_error = err;
    }
}

TEST_CASE("antithetic sampling stays unbiased") {
    const auto spec = ToyGameSpec::majority_game(6, 3);
    auto o = toy_oracle(spec);
    const double exact = exact_stii(o, 0, 1, StiiConfig{});
    StiiConfig cfg;
    cfg.sampling.num_permutations = 4000;
    cfg.sampling.antithetic = true;
    cfg.sampling.seed = 5;
    const auto est = sampled_stii(o, 0, 1, cfg);
    CHECK(std::abs(est.stii - exact) <= 4.0 * est.stderr_estimate + 1e-12);
}

TEST_CASE("context plan draws uniform sizes and never includes the pair") {
    SamplingConfig cfg;
    cfg.num_permutations = 20000;
    cfg.seed = 1;
    const ContextPlan plan(6, cfg);
    std::map<std::size_t, std::size_t> sizes;
    for (std::size_t k = 0; k < plan.samples(); ++k) {
        const auto ctx = plan.context(k, 1, 4);
        REQUIRE_FALSE(ctx.test(1));
        REQUIRE_FALSE(ctx.test(4));
        ++sizes[ctx.count()];
    }
    // Sizes 0..4 each with probability 1/5.
    CHECK(sizes.size() == 5);
    for (const auto& [s, c] : sizes) CHECK(std::abs(static_cast<double>(c) / 20000.0 - 0.2) < 0.015);
}

TEST_CASE("convergence check stops early") {
    auto o = toy_oracle(ToyGameSpec::linear_game({1.0, 2.0, 3.0, 4.0}));
    StiiConfig cfg;
    cfg.normalization = Normalization::none;
    cfg.sampling.num_permutations = 100000;
    cfg.sampling.convergence = ConvergenceCheck{50, 1e-3};
    const auto est = sampled_stii(o, 0, 1, cfg);
    CHECK(est.stii == 0.0);
    CHECK(est.num_permutations < 100000);
}

TEST_CASE("stii matrix") {
    auto lin = toy_oracle(ToyGameSpec::linear_game({1.0, 2.0, 3.0}));
    EngineConfig cfg;
    const std::vector<FeaturePair> pairs{{0, 1}, {2, 0}, {1, 2}};
    const auto recs = stii_matrix(lin, pairs, cfg);
    REQUIRE(recs.size() == 3);
    CHECK(recs[1].pair == FeaturePair{0, 2});
    for (const auto& r : recs) {
        CHECK(r.stii == 0.0);
        CHECK(r.d_i == r.pair.second - r.pair.first);
        CHECK_FALSE(r.d_p);
    }

    auto u6 = toy_oracle(ToyGameSpec::unanimity_game(6, {0, 1}));
    std::vector<FeaturePair> all;
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = a + 1; b < 6; ++b) all.push_back({a, b});
    }
    cfg.estimator = Estimator::exact;
    for (const auto& r : stii_matrix(u6, all, cfg)) {
        if (r.pair == FeaturePair{0, 1}) {
            CHECK(r.stii > 0.01);
        } else {
            CHECK(r.stii <= 0.01);
        }
    }
}

TEST_CASE("stii matrix is deterministic across thread counts and matches single-pair calls") {
    const auto spec = ToyGameSpec::decaying_interaction_game(8, 1.0);
    std::vector<FeaturePair> pairs;
    for (std::size_t a = 0; a < 8; ++a) {
        for (std::size_t b = a + 1; b < 8; ++b) pairs.push_back({a, b});
    }
    EngineConfig cfg;
    cfg.stii.sampling.num_permutations = 300;
    cfg.stii.sampling.seed = 77;
    std::vector<std::vector<InteractionRecord>> runs;
    for (std::size_t threads : {1u, 4u, 16u}) {
        auto o = toy_oracle(spec);
        cfg.threads = threads;
        runs.push_back(stii_matrix(o, pairs, cfg));
    }
    CHECK(runs[0] == runs[1]);
    CHECK(runs[0] == runs[2]);

    auto o = toy_oracle(spec);
    const auto single = sampled_stii(o, 2, 5, cfg.stii);
    const auto it = std::find_if(runs[0].begin(), runs[0].end(),
                                 [](const InteractionRecord& r) { return r.pair == FeaturePair{2, 5}; });
    CHECK(it->stii == single.stii);
}

TEST_CASE("records carry prediction distance when the instance has a target") {
    Instance inst;
    inst.instance_id = "t";
    inst.n_features = 5;
    inst.output_dim = 1;
    inst.target_index = 5;
    Oracle o(std::make_unique<ToyBackend>(ToyGameSpec::decaying_interaction_game(5, 1.0)), inst);
    EngineConfig cfg;
    cfg.estimator = Estimator::exact;
    const std::vector<FeaturePair> pairs{{1, 3}};
    const auto r = stii_matrix(o, pairs, cfg).front();
    CHECK(r.d_i == 2u);
    CHECK(r.d_p == 2u);
    CHECK(r.estimator == Estimator::exact);
    CHECK(r.num_permutations == 0);
}

TEST_CASE("engine config JSON") {
    EngineConfig c;
    c.estimator = Estimator::exact;
    c.stii.context_mode = ContextMode::empty_context;
    c.stii.normalization = Normalization::none;
    c.stii.sampling.num_permutations = 42;
    c.stii.sampling.seed = 9;
    c.stii.sampling.antithetic = true;
    c.exact_limit = 12;
    c.batch_size = 7;
    const auto back = engine_config_from_json(engine_config_to_json(c));
    CHECK(back.estimator == c.estimator);
    CHECK(back.stii.context_mode == c.stii.context_mode);
    CHECK(back.stii.normalization == c.stii.normalization);
    CHECK(back.stii.sampling.num_permutations == 42);
    CHECK(back.stii.sampling.seed == 9);
    CHECK(back.stii.sampling.antithetic);
    CHECK(back.exact_limit == 12);
    CHECK(back.batch_size == 7);
    CHECK(code_of([] { engine_config_from_json(nlohmann::json::parse(R"({"estimator":"guess"})")); }) ==
          ErrorCode::ConfigError);
    CHECK(code_of([] { engine_config_from_json(nlohmann::json::parse(R"({"num_permutations":0})")); }) ==
          ErrorCode::ConfigError);
}
