#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "specshard/plans.hpp"
#include "specshard/rng.hpp"

using namespace specshard;

namespace {

std::vector<double> random_spectrum(RngStream& rng, std::size_t count) {
    std::vector<double> lambda(count);
    for (double& l : lambda) l = 0.05 + 4.0 * rng.uniform();
    std::sort(lambda.begin(), lambda.end(), std::greater<double>());
    return lambda;
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

} // namespace

TEST_CASE("strategy names round-trip and reject unknowns") {
    for (Strategy s : {Strategy::top_n, Strategy::top_n_scaled, Strategy::prism,
                       Strategy::prism_unbiased, Strategy::unbiased, Strategy::collective}) {
        const auto back = strategy_from_name(strategy_name(s));
        REQUIRE(back.has_value());
        REQUIRE(*back == s);
    }
    REQUIRE_FALSE(strategy_from_name("frobnicate").has_value());
    REQUIRE(strategy_from_name("top-n").has_value());
    REQUIRE(strategy_from_name("TOP_N").has_value());
}

TEST_CASE("spectrum validation rejects bad inputs") {
    REQUIRE_THROWS_AS(plan_top_n({}, 1), ValidationError);
    REQUIRE_THROWS_AS(plan_top_n({1.0, 2.0}, 1), ValidationError); // increasing
    REQUIRE_THROWS_AS(plan_top_n({1.0, -1.0}, 1), ValidationError);
    REQUIRE_THROWS_AS(plan_top_n({2.0, 1.0}, 0), ValidationError);
    REQUIRE_THROWS_AS(plan_top_n({2.0, 1.0}, 3), ValidationError);
    REQUIRE_THROWS_AS(plan_unbiased({2.0, 1.0}, 0), ValidationError);
    REQUIRE_THROWS_AS(plan_collective({2.0, 1.0}, 1, 0), ValidationError);
}

TEST_CASE("top-n plan keeps the leading terms with unit multipliers") {
    const InclusionPlan p = plan_top_n({4, 2, 1, 1}, 2);
    REQUIRE(p.pi == std::vector<double>{1, 1, 0, 0});
    REQUIRE(p.omega == std::vector<double>{1, 1, 0, 0});
    REQUIRE(p.boundary_t == 2);
    REQUIRE(plan_discrepancy({4, 2, 1, 1}, p) == Catch::Approx(2.0).epsilon(0.0).margin(1e-12));
}

TEST_CASE("scaled top-n restores spectral mass and pays a bias penalty") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_top_n_scaled(lambda, 2);
    const double scale = std::sqrt(22.0 / 20.0);
    REQUIRE(p.omega[0] == Catch::Approx(scale).epsilon(1e-15));
    REQUIRE(p.omega[1] == Catch::Approx(scale).epsilon(1e-15));
    REQUIRE(p.omega[2] == 0.0);
    // discrepancy = sum_top lambda^2 (omega-1)^2 + tail mass
    const double expected = 20.0 * (scale - 1.0) * (scale - 1.0) + 2.0;
    REQUIRE(plan_discrepancy(lambda, p) == Catch::Approx(expected).epsilon(1e-13));
}

TEST_CASE("inverse-probability plan matches the worked example") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_unbiased(lambda, 2);
    REQUIRE(p.boundary_t == 1);
    REQUIRE(p.pi[0] == Catch::Approx(1.0).epsilon(0.0).margin(1e-15));
    REQUIRE(p.pi[1] == Catch::Approx(0.5).epsilon(1e-15));
    REQUIRE(p.pi[2] == Catch::Approx(0.25).epsilon(1e-15));
    REQUIRE(p.pi[3] == Catch::Approx(0.25).epsilon(1e-15));
    REQUIRE(p.omega[0] == Catch::Approx(1.0).epsilon(0.0).margin(1e-15));
    REQUIRE(p.omega[1] == Catch::Approx(2.0).epsilon(1e-15));
    REQUIRE(p.omega[2] == Catch::Approx(4.0).epsilon(1e-15));
    REQUIRE(p.omega[3] == Catch::Approx(4.0).epsilon(1e-15));
    REQUIRE(plan_discrepancy(lambda, p) == Catch::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("flat spectra spread the budget uniformly") {
    const InclusionPlan p3 = plan_unbiased({1, 1, 1}, 2);
    for (double pi : p3.pi) REQUIRE(pi == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
    REQUIRE(plan_discrepancy({1, 1, 1}, p3) == Catch::Approx(1.5).epsilon(1e-14));

    const InclusionPlan p4 = plan_unbiased({1, 1, 1, 1}, 2);
    REQUIRE(p4.boundary_t == 0);
    for (double pi : p4.pi) REQUIRE(pi == Catch::Approx(0.5).epsilon(1e-15));
    REQUIRE(plan_discrepancy({1, 1, 1, 1}, p4) == Catch::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("full-budget plans are exact and free") {
    for (Strategy s : {Strategy::top_n, Strategy::unbiased, Strategy::collective,
                       Strategy::prism, Strategy::prism_unbiased}) {
        const InclusionPlan p = plan_for_spectrum({3, 2, 1}, 3, s, 4);
        REQUIRE(p.pi == std::vector<double>{1, 1, 1});
        REQUIRE(p.omega == std::vector<double>{1, 1, 1});
        REQUIRE(plan_discrepancy({3, 2, 1}, p) == 0.0);
    }
}

TEST_CASE("inverse-probability plans satisfy the plan invariants") {
    RngStream rng = RngStream::derive(11, {21});
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t count = 2 + rng.below(10);
        const std::vector<double> lambda = random_spectrum(rng, count);
        const std::size_t n = 1 + rng.below(count);
        const InclusionPlan p = plan_unbiased(lambda, n);
        REQUIRE(sum(p.pi) == Catch::Approx(static_cast<double>(n)).epsilon(0.0).margin(1e-9));
        for (std::size_t i = 0; i < count; ++i) {
            REQUIRE(p.pi[i] > 0.0);
            REQUIRE(p.pi[i] <= 1.0 + 1e-12);
            if (i > 0) REQUIRE(p.pi[i] <= p.pi[i - 1] + 1e-12);
            REQUIRE(p.omega[i] * p.pi[i] == Catch::Approx(1.0).epsilon(1e-12));
        }
        // discrepancy consistency between the two closed forms
        REQUIRE(plan_discrepancy(lambda, p) ==
                Catch::Approx(unbiased_discrepancy(lambda, p.pi)).epsilon(0.0).margin(1e-10));
    }
}

TEST_CASE("projected-gradient oracle confirms the inverse-probability optimum") {
    // hand instance first
    const std::vector<double> hand{4, 2, 1, 1};
    const std::vector<double> pg_hand = oracles::minimize_unbiased(hand, 2);
    REQUIRE(oracles::unbiased_objective(hand, pg_hand) == Catch::Approx(10.0).epsilon(0.0).margin(1e-7));

    RngStream rng = RngStream::derive(12, {22});
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t count = 2 + rng.below(8);
        const std::vector<double> lambda = random_spectrum(rng, count);
        const std::size_t n = 1 + rng.below(count);
        const InclusionPlan p = plan_unbiased(lambda, n);
        const double closed = plan_discrepancy(lambda, p);
        const std::vector<double> pg = oracles::minimize_unbiased(lambda, n);
        const double numeric = oracles::unbiased_objective(lambda, pg);
        const double scale = std::max(1.0, std::abs(closed));
        // the oracle point is feasible, so it can never beat the true optimum
        REQUIRE(closed <= numeric + 1e-8 * scale);
        // and it must get close, or the closed form is not the optimum
        REQUIRE(numeric - closed <= 1e-5 * scale);
    }
}

TEST_CASE("averaged-estimator plan matches the worked flat example") {
    const std::vector<double> lambda{1, 1, 1};
    const InclusionPlan p = plan_collective(lambda, 2, 2);
    REQUIRE(p.group_size == 2);
    REQUIRE(p.boundary_t == 0);
    REQUIRE(p.boundary_u == 3);
    for (double pi : p.pi) REQUIRE(pi == Catch::Approx(2.0 / 3.0).epsilon(1e-14));
    for (double w : p.omega) REQUIRE(w == Catch::Approx(1.2).epsilon(1e-14));
    REQUIRE(plan_discrepancy(lambda, p) == Catch::Approx(0.6).epsilon(1e-14));
}

TEST_CASE("averaged-estimator plan falls back to top-n when that is cheaper") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_collective(lambda, 2, 2);
    REQUIRE(p.pi == std::vector<double>{1, 1, 0, 0});
    REQUIRE(p.omega == std::vector<double>{1, 1, 0, 0});
    REQUIRE(plan_discrepancy(lambda, p) == Catch::Approx(2.0).epsilon(0.0).margin(1e-12));
}

TEST_CASE("a single client collapses the averaged plan to top-n") {
    RngStream rng = RngStream::derive(13, {23});
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t count = 2 + rng.below(8);
        const std::vector<double> lambda = random_spectrum(rng, count);
        const std::size_t n = 1 + rng.below(count);
        const InclusionPlan c = plan_collective(lambda, n, 1);
        const InclusionPlan t = plan_top_n(lambda, n);
        REQUIRE(c.pi == t.pi);
        REQUIRE(c.omega == t.omega);
    }
}

TEST_CASE("single-client expectation is the averaged expectation scaled by the group") {
    RngStream rng = RngStream::derive(14, {24});
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t count = 2 + rng.below(8);
        const std::vector<double> lambda = random_spectrum(rng, count);
        std::vector<double> pi(count), omega(count);
        for (std::size_t i = 0; i < count; ++i) {
            pi[i] = 0.05 + 0.95 * rng.uniform();
            omega[i] = 1.0 / pi[i];
        }
        const std::size_t group = 2 + rng.below(6);
        const double lhs =
            static_cast<double>(group) * collective_discrepancy(lambda, pi, omega, group);
        const double rhs = unbiased_discrepancy(lambda, pi);
        REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("a huge group recovers the single-client probabilities") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan big = plan_collective(lambda, 2, 1000000);
    const InclusionPlan ht = plan_unbiased(lambda, 2);
    for (std::size_t i = 0; i < lambda.size(); ++i)
        REQUIRE(big.pi[i] == Catch::Approx(ht.pi[i]).epsilon(0.0).margin(1e-4));

    RngStream rng = RngStream::derive(15, {25});
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<double> spec = random_spectrum(rng, 6);
        const InclusionPlan b = plan_collective(spec, 3, 1000000);
        const InclusionPlan h = plan_unbiased(spec, 3);
        // value convergence: the scaled averaged optimum approaches the
        // single-client optimum as the group grows
        const double scaled = 1000000.0 * plan_discrepancy(spec, b);
        const double single = plan_discrepancy(spec, h);
        REQUIRE(scaled == Catch::Approx(single).epsilon(5e-4));
    }
}

TEST_CASE("averaged plans satisfy the plan invariants and beat the baseline") {
    RngStream rng = RngStream::derive(16, {26});
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t count = 2 + rng.below(10);
        const std::vector<double> lambda = random_spectrum(rng, count);
        const std::size_t n = 1 + rng.below(count);
        const std::size_t group = 1 + rng.below(8);
        const InclusionPlan p = plan_collective(lambda, n, group);
        REQUIRE(sum(p.pi) == Catch::Approx(static_cast<double>(n)).epsilon(0.0).margin(1e-9));
        for (std::size_t i = 1; i < count; ++i) REQUIRE(p.pi[i] <= p.pi[i - 1] + 1e-12);
        const double own = plan_discrepancy(lambda, p);
        const double baseline = collective_discrepancy(lambda, plan_top_n(lambda, n).pi,
                                                       plan_top_n(lambda, n).omega, group);
        REQUIRE(own <= baseline + 1e-9 * std::max(1.0, baseline));
    }
}

TEST_CASE("plan multipliers are profile-optimal for their probabilities") {
    // with omega profiled out the expectation depends on pi alone; the plan's
    // multipliers must achieve exactly that profiled value
    RngStream rng = RngStream::derive(17, {27});
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t count = 2 + rng.below(8);
        const std::vector<double> lambda = random_spectrum(rng, count);
        const std::size_t n = 1 + rng.below(count);
        const std::size_t group = 2 + rng.below(6);
        const InclusionPlan p = plan_collective(lambda, n, group);
        const double direct = plan_discrepancy(lambda, p);
        const double profiled = oracles::collective_objective(lambda, p.pi, group);
        REQUIRE(direct == Catch::Approx(profiled).epsilon(0.0).margin(1e-10 * std::max(1.0, profiled)));
    }
}

TEST_CASE("projected-gradient oracle confirms the averaged optimum") {
    const std::vector<double> flat{1, 1, 1};
    const std::vector<double> pg_flat = oracles::minimize_collective(flat, 2, 2);
    REQUIRE(oracles::collective_objective(flat, pg_flat, 2) == Catch::Approx(0.6).epsilon(0.0).margin(1e-7));

    RngStream rng = RngStream::derive(18, {28});
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t count = 2 + rng.below(8);
        const std::vector<double> lambda = random_spectrum(rng, count);
        const std::size_t n = 1 + rng.below(count);
        const std::size_t group = 2 + rng.below(6);
        const InclusionPlan p = plan_collective(lambda, n, group);
        const double closed = plan_discrepancy(lambda, p);
        const std::vector<double> pg = oracles::minimize_collective(lambda, n, group);
        const double numeric = oracles::collective_objective(lambda, pg, group);
        const double scale = std::max(1.0, std::abs(closed));
        REQUIRE(closed <= numeric + 1e-8 * scale);
        REQUIRE(numeric - closed <= 1e-5 * scale);
    }
}

TEST_CASE("draw weights switch exponent at the ratio threshold") {
    const std::vector<double> lambda{2, 1};
    const std::vector<double> steep = prism_draw_weights(lambda, 0.2);
    REQUIRE(steep[0] == Catch::Approx(16.0).epsilon(1e-15));
    REQUIRE(steep[1] == Catch::Approx(1.0).epsilon(1e-15));
    const std::vector<double> shallow = prism_draw_weights(lambda, 0.21);
    REQUIRE(shallow[0] == Catch::Approx(std::pow(2.0, 2.5)).epsilon(1e-15));
    REQUIRE(shallow[1] == Catch::Approx(1.0).epsilon(1e-15));
    REQUIRE_THROWS_AS(prism_draw_weights(lambda, 0.0), ValidationError);
    REQUIRE_THROWS_AS(prism_draw_weights(lambda, 1.25), ValidationError);
}

TEST_CASE("sampled-marginal plans are deterministic and honor the budget") {
    const std::vector<double> lambda{4, 2, 1, 1};
    PlanOptions opts;
    opts.prism_marginal_trials = 20000;
    const InclusionPlan a = plan_for_spectrum(lambda, 2, Strategy::prism, 1, opts);
    const InclusionPlan b = plan_for_spectrum(lambda, 2, Strategy::prism, 1, opts);
    REQUIRE(a.pi == b.pi);
    REQUIRE(sum(a.pi) == Catch::Approx(2.0).epsilon(0.0).margin(1e-9));
    for (double w : a.omega) REQUIRE(w == 1.0);
    REQUIRE(a.pi[0] > a.pi[3]); // heavier terms are drawn more often

    const InclusionPlan u = plan_for_spectrum(lambda, 2, Strategy::prism_unbiased, 1, opts);
    REQUIRE(u.pi == a.pi);
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        const double clamped = std::min(1.0, std::max(prism_multiplier_floor(), u.pi[i]));
        REQUIRE(u.omega[i] == Catch::Approx(1.0 / clamped).epsilon(1e-15));
    }
}

TEST_CASE("ratio-driven planning derives the budget from the term count") {
    SpectralDecomposition d;
    d.lambda = {4, 2, 1, 1};
    d.u = Matrix::identity(4);
    d.v = Matrix::identity(4);
    const InclusionPlan p = plan_for_keep_ratio(d, 0.5, Strategy::unbiased);
    REQUIRE(p.sample_size == 2);
    REQUIRE(p.pi == plan_unbiased(d.lambda, 2).pi);
}

TEST_CASE("plan files round-trip through the csv format") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_collective(lambda, 2, 3);
    std::stringstream buffer;
    write_plan_csv(buffer, p, lambda, 424242);
    const PlanFile back = read_plan_csv(buffer);
    REQUIRE(back.seed == 424242);
    REQUIRE(back.plan.strategy == Strategy::collective);
    REQUIRE(back.plan.sample_size == p.sample_size);
    REQUIRE(back.plan.group_size == p.group_size);
    REQUIRE(back.plan.boundary_t == p.boundary_t);
    REQUIRE(back.plan.boundary_u == p.boundary_u);
    REQUIRE(back.lambda == lambda);
    REQUIRE(back.plan.pi == p.pi);
    REQUIRE(back.plan.omega == p.omega);
}

TEST_CASE("plan csv reader rejects malformed rows") {
    std::stringstream missing("index,lambda,pi\n0,1,1\n");
    REQUIRE_THROWS_AS(read_plan_csv(missing), ValidationError);
    std::stringstream gap("index,lambda,pi,omega\n1,1.0,1.0,1.0\n");
    REQUIRE_THROWS_AS(read_plan_csv(gap), ValidationError);
    std::stringstream empty("");
    REQUIRE_THROWS_AS(read_plan_csv(empty), ValidationError);
}
