#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "stii/error.hpp"
#include "stii/random.hpp"
#include "stii/stats.hpp"

using namespace stii;

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

using V = std::vector<double>;

}  // namespace

TEST_CASE("spearman examples") {
    CHECK(spearman(V{1, 2, 3}, V{1, 4, 9}).rho == 1.0);
    CHECK(spearman(V{1, 2, 3}, V{9, 4, 1}).rho == -1.0);
    const V x{1, 2, 2, 3};
    const V y{1, 2, 3, 4};
    CHECK(midranks(x) == V{1.0, 2.5, 2.5, 4.0});
    // Ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): sxy = 4.5, sxx = 4.5, syy = 5.
    CHECK(spearman(x, y).rho == doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)).epsilon(1e-14));
    CHECK(spearman(x, y).rho == doctest::Approx(oracle::naive_spearman(x, y)).epsilon(1e-14));
}

TEST_CASE("spearman errors") {
    CHECK(code_of([] { spearman(V{1, 2, 3}, V{1, 2}); }) == ErrorCode::LengthMismatch);
    CHECK(code_of([] { spearman(V{1, 2}, V{1, 2}); }) == ErrorCode::TooFewPoints);
    CHECK(code_of([] { spearman(V{1, 1, 1}, V{1, 2, 3}); }) == ErrorCode::DegenerateInput);
    CHECK(code_of([] { spearman(V{1, 2, 3}, V{5, 5, 5}); }) == ErrorCode::DegenerateInput);
}

TEST_CASE("midranks match the quadratic reference on tied data") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        V xs(1 + uniform_below(rng, 40));
        for (auto& x : xs) x = static_cast<double>(uniform_below(rng, 6));
        CHECK(midranks(xs) == oracle::naive_midranks(xs));
    }
}

TEST_CASE("p-value routes") {
    const V small_x{1, 2, 3, 4, 5};
    const V small_y{2, 1, 4, 3, 5};
    const auto exact = spearman(small_x, small_y);
    CHECK(exact.method == CorrelationMethod::permutation);
    CHECK(exact.permutations == 120);

    // n = 4 perfectly monotone: only the identity and its reverse reach |rho| = 1.
    const auto tiny = spearman(V{1, 2, 3, 4}, V{10, 20, 30, 40});
    CHECK(tiny.p_value == doctest::Approx(2.0 / 24.0));

    V mid_x, mid_y;
    for (int i = 0; i < 12; ++i) {
        mid_x.push_back(i);
        mid_y.push_back((i * 7) % 12);
    }
    const auto mc = spearman(mid_x, mid_y);
    CHECK(mc.method == CorrelationMethod::permutation);
    CHECK(mc.permutations == 10000);
    CHECK(mc.p_value > 0.0);
    CHECK(mc.p_value <= 1.0);

    V big_x, big_y;
    for (int i = 0; i < 30; ++i) {
        big_x.push_back(i);
        big_y.push_back(i + ((i % 3) - 1) * 2.5);
    }
    const auto t = spearman(big_x, big_y);
    CHECK(t.method == CorrelationMethod::t_approx);
    CHECK(t.permutations == 0);
    CHECK(t.p_value < 1e-6);
}

TEST_CASE("p-values are symmetric in the two inputs") {
    Rng rng(8);
    for (std::size_t n : {5u, 9u, 15u, 25u}) {
        for (int trial = 0; trial < 10; ++trial) {
            V xs(n), ys(n);
            for (auto& x : xs) x = static_cast<double>(uniform_below(rng, 5));
            for (auto& y : ys) y = uniform01(rng);
            xs[0] = 0;
            xs[1] = 9;
            SpearmanOptions opts;
            opts.seed = 31;
            const auto a = spearman(xs, ys, opts);
            const auto b = spearman(ys, xs, opts);
            CHECK(a.rho == doctest::Approx(b.rho).epsilon(1e-14));
            CHECK(a.p_value == b.p_value);
        }
    }
}

TEST_CASE("monte carlo p-values track the exact enumeration") {
    // Force Monte Carlo at n = 7 and compare against the 5040-ordering enumeration.
    const V x{1, 2, 3, 4, 5, 6, 7};
    const V y{2, 1, 4, 3, 7, 5, 6};
    const auto exact = spearman(x, y);
    SpearmanOptions mc_opts;
    mc_opts.exact_below = 3;
    mc_opts.seed = 2;
    mc_opts.monte_carlo_draws = 20000;
    const auto mc = spearman(x, y, mc_opts);
    CHECK(exact.permutations == 5040);
    CHECK(std::abs(mc.p_value - exact.p_value) < 0.01);
}

TEST_CASE("bootstrap examples") {
    const V constant(100, 0.5);
    const auto c = bootstrap_mean_ci(constant, 1000, 0.95, 1);
    CHECK(c.mean == 0.5);
    CHECK(c.lower == 0.5);
    CHECK(c.upper == 0.5);
    CHECK_FALSE(c.degenerate);

    const auto one = bootstrap_mean_ci(V{0.7}, 1000, 0.95, 1);
    CHECK(one.degenerate);
    CHECK(one.mean == 0.7);
    CHECK(one.lower == 0.7);
    CHECK(one.upper == 0.7);

    CHECK(code_of([] { bootstrap_mean_ci(V{}); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { bootstrap_mean_ci(V{1.0, 2.0}, 0); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { bootstrap_mean_ci(V{1.0, 2.0}, 10, 1.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("bootstrap interval properties") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        V xs(2 + uniform_below(rng, 60));
        for (auto& x : xs) x = uniform01(rng) * 3.0 - 1.0;
        const auto ci = bootstrap_mean_ci(xs, 500, 0.9, trial);
        CHECK(ci.lower <= ci.mean);
        CHECK(ci.mean <= ci.upper);
        CHECK(ci.mean == doctest::Approx(mean_of(xs)));
        CHECK(ci.n == xs.size());
        CHECK(ci.resamples == 500);
        const auto again = bootstrap_mean_ci(xs, 500, 0.9, trial);
        CHECK(again.lower == ci.lower);
        CHECK(again.upper == ci.upper);
        const auto wider = bootstrap_mean_ci(xs, 500, 0.99, trial);
        CHECK(wider.upper - wider.lower >= ci.upper - ci.lower);
    }
}

TEST_CASE("bootstrap width shrinks with sample size") {
    Rng rng(99);
    auto width = [&](std::size_t n) {
        V xs(n);
        for (auto& x : xs) x = uniform01(rng);
        const auto ci = bootstrap_mean_ci(xs, 2000, 0.95, 3);
        return ci.upper - ci.lower;
    };
    CHECK(width(1600) < width(100) * 0.5);
}
