#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "specshard/matrix.hpp"
#include "specshard/metrics.hpp"
#include "specshard/rng.hpp"
#include "specshard/shard.hpp"
#include "specshard/svd.hpp"

using namespace specshard;

TEST_CASE("pairwise summation agrees with direct accumulation") {
    std::vector<double> ints(100);
    for (std::size_t i = 0; i < 100; ++i) ints[i] = static_cast<double>(i + 1);
    REQUIRE(detail::pairwise_sum(ints) == 5050.0);

    RngStream rng = RngStream::derive(21, {41});
    std::vector<double> vals(1000);
    double plain = 0.0;
    for (double& v : vals) plain += (v = rng.normal());
    REQUIRE(detail::pairwise_sum(vals) == Catch::Approx(plain).epsilon(0.0).margin(1e-10));
}

TEST_CASE("bernoulli entropy peaks at one half and vanishes at the endpoints") {
    REQUIRE(detail::bernoulli_entropy(0.0) == 0.0);
    REQUIRE(detail::bernoulli_entropy(1.0) == 0.0);
    REQUIRE(detail::bernoulli_entropy(0.5) == Catch::Approx(std::log(2.0)).epsilon(1e-15));
    REQUIRE(detail::bernoulli_entropy(0.25) == detail::bernoulli_entropy(0.75));
    REQUIRE(detail::bernoulli_entropy(0.3) < detail::bernoulli_entropy(0.5));
}

TEST_CASE("plan entropy is zero for deterministic plans and one for uniform plans") {
    const AnmeReport det = anme({{1, 1, 0, 0}}, {2});
    REQUIRE(det.defined[0] == 1);
    REQUIRE(det.per_layer[0] == 0.0);
    REQUIRE(det.network == 0.0);

    const AnmeReport uni = anme({{0.5, 0.5, 0.5, 0.5}}, {2});
    REQUIRE(uni.per_layer[0] == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("plan entropy matches the worked mixed example") {
    const AnmeReport r = anme({{1.0, 0.5, 0.25, 0.25}}, {2});
    REQUIRE(r.defined[0] == 1);
    REQUIRE(r.per_layer[0] == Catch::Approx(0.6556390622295664).epsilon(0.0).margin(1e-12));
    REQUIRE(r.network == r.per_layer[0]);
}

TEST_CASE("layers with no randomness budget are excluded from the network mean") {
    // second layer keeps everything: no uniform reference, flagged undefined
    const AnmeReport r = anme({{0.5, 0.5}, {1.0, 1.0}}, {1, 2});
    REQUIRE(r.defined[0] == 1);
    REQUIRE(r.defined[1] == 0);
    REQUIRE(r.defined_count == 1);
    REQUIRE(r.network == Catch::Approx(1.0).epsilon(1e-15));

    const AnmeReport none = anme({{1.0, 1.0}}, {2});
    REQUIRE(none.defined_count == 0);
    REQUIRE(std::isnan(none.network));
}

TEST_CASE("plan entropy validates its inputs") {
    REQUIRE_THROWS_AS(anme({}, {}), ValidationError);
    REQUIRE_THROWS_AS(anme({{0.5, 0.5}}, {1, 2}), ValidationError);
    REQUIRE_THROWS_AS(anme({{0.5, 0.5}}, {3}), ValidationError);
    REQUIRE_THROWS_AS(anme({{0.5, 1.5}}, {1}), ValidationError);
}

TEST_CASE("normalized entropy lies in the unit interval for budget-respecting plans") {
    RngStream rng = RngStream::derive(22, {42});
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t count = 2 + rng.below(12);
        const std::size_t n = 1 + rng.below(count - 1 > 0 ? count - 1 : 1);
        if (n >= count) continue;
        std::vector<double> pi(count);
        double total = 0.0;
        for (double& p : pi) total += (p = rng.uniform());
        double sum = 0.0;
        for (double& p : pi) sum += (p = std::min(1.0, p * static_cast<double>(n) / total));
        if (std::abs(sum - static_cast<double>(n)) > 1e-9) continue;
        const AnmeReport r = anme({pi}, {n});
        REQUIRE(r.per_layer[0] >= 0.0);
        REQUIRE(r.per_layer[0] <= 1.0 + 1e-12);
    }
}

TEST_CASE("trial summaries match hand statistics") {
    std::vector<double> values{1, 2, 3, 4};
    const McEstimate est = detail::summarize_trials(values);
    REQUIRE(est.mean == Catch::Approx(2.5).epsilon(1e-15));
    REQUIRE(est.se == Catch::Approx(std::sqrt(5.0 / 12.0)).epsilon(1e-14));
}

TEST_CASE("a full-keep plan has exactly zero sampled error") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_top_n(lambda, 4);
    const SamplingDesign d = SamplingDesign::from_probabilities(DesignKind::deterministic, p.pi, 4);
    RngStream rng = RngStream::derive(23, {43});
    const McEstimate est = mc_discrepancy_unbiased(lambda, p, d, 100, rng);
    REQUIRE(est.mean == 0.0);
    REQUIRE(est.se == 0.0);
}

TEST_CASE("a deterministic truncation pays exactly the tail mass every draw") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_top_n(lambda, 2);
    const SamplingDesign d = SamplingDesign::from_probabilities(DesignKind::deterministic, p.pi, 2);
    RngStream rng = RngStream::derive(24, {44});
    const McEstimate est = mc_discrepancy_unbiased(lambda, p, d, 64, rng);
    REQUIRE(est.mean == 2.0);
    REQUIRE(est.se == 0.0);
}

TEST_CASE("sampled error of the inverse-probability plan matches the closed form") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_unbiased(lambda, 2);
    const SamplingDesign d = SamplingDesign::from_probabilities(DesignKind::cps, p.pi, 2);
    RngStream rng = RngStream::derive(25, {45});
    const McEstimate est = mc_discrepancy_unbiased(lambda, p, d, 20000, rng);
    REQUIRE(std::abs(est.mean - 10.0) <= 3.0 * est.se + 0.02);
}

TEST_CASE("sampled group-averaged error matches the closed form") {
    const std::vector<double> lambda{1, 1, 1};
    const InclusionPlan p = plan_collective(lambda, 2, 2);
    const SamplingDesign d =
        SamplingDesign::from_probabilities(DesignKind::cps, p.pi, p.sample_size);
    RngStream rng = RngStream::derive(26, {46});
    const McEstimate est = mc_discrepancy_collective(lambda, p, d, 2, 20000, rng);
    REQUIRE(std::abs(est.mean - 0.6) <= 3.0 * est.se + 0.01);
}

TEST_CASE("group averaging reuses scratch state across trials correctly") {
    // comparing two trial counts from the same start must give close means
    const std::vector<double> lambda{3, 2, 1, 1};
    const InclusionPlan p = plan_collective(lambda, 2, 3);
    const SamplingDesign d =
        SamplingDesign::from_probabilities(DesignKind::brewer, p.pi, p.sample_size);
    RngStream a = RngStream::derive(27, {47});
    RngStream b = RngStream::derive(27, {47});
    const McEstimate small = mc_discrepancy_collective(lambda, p, d, 3, 4000, a);
    const McEstimate large = mc_discrepancy_collective(lambda, p, d, 3, 16000, b);
    const double closed = plan_discrepancy(lambda, p);
    REQUIRE(std::abs(small.mean - closed) <= 4.0 * small.se + 0.02);
    REQUIRE(std::abs(large.mean - closed) <= 4.0 * large.se + 0.02);
    REQUIRE(large.se < small.se);
}

TEST_CASE("independent designs with the same marginals estimate the same error") {
    const std::vector<double> lambda{4, 2, 1, 1};
    const InclusionPlan p = plan_unbiased(lambda, 2);
    const SamplingDesign cps = SamplingDesign::from_probabilities(DesignKind::cps, p.pi, 2);
    const SamplingDesign brw = SamplingDesign::from_probabilities(DesignKind::brewer, p.pi, 2);
    RngStream ra = RngStream::derive(28, {48});
    RngStream rb = RngStream::derive(28, {49});
    const McEstimate a = mc_discrepancy_unbiased(lambda, p, cps, 20000, ra);
    const McEstimate b = mc_discrepancy_unbiased(lambda, p, brw, 20000, rb);
    const double spread = 3.0 * std::sqrt(a.se * a.se + b.se * b.se) + 0.02;
    REQUIRE(std::abs(a.mean - b.mean) <= spread);
}

TEST_CASE("spectral-coordinate error equals the matrix-space error per draw") {
    RngStream data = RngStream::derive(29, {50});
    Matrix w(5, 4);
    for (double& v : w.data()) v = data.normal();
    const SpectralDecomposition dec = decompose(w, 1e-12);
    const std::size_t count = dec.terms();
    const std::size_t n = 2;
    const InclusionPlan p = plan_unbiased(dec.lambda, n);
    const SamplingDesign design = SamplingDesign::from_probabilities(DesignKind::cps, p.pi, n);
    RngStream rng = RngStream::derive(29, {51});
    const double ratio = static_cast<double>(n) / static_cast<double>(count);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::size_t> picked = design.sample(rng);
        double spectral = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            bool in = false;
            for (std::size_t idx : picked) in = in || idx == i;
            const double err = (in ? p.omega[i] : 0.0) - 1.0;
            spectral += dec.lambda[i] * dec.lambda[i] * err * err;
        }
        const Shard s = build_shard(dec, picked, p.omega, ratio);
        Matrix diff = effective_weight(s);
        add_scaled(diff, -1.0, w);
        const double matrix_space = frobenius_norm_sq(diff);
        REQUIRE(matrix_space == Catch::Approx(spectral).epsilon(0.0).margin(1e-9 * (1.0 + spectral)));
    }
}

TEST_CASE("sampled-error estimators validate their inputs") {
    const std::vector<double> lambda{2, 1};
    const InclusionPlan p = plan_top_n(lambda, 1);
    const SamplingDesign d = SamplingDesign::from_probabilities(DesignKind::deterministic, p.pi, 1);
    RngStream rng = RngStream::derive(30, {52});
    REQUIRE_THROWS_AS(mc_discrepancy_unbiased(lambda, p, d, 1, rng), ValidationError);
    REQUIRE_THROWS_AS(mc_discrepancy_collective(lambda, p, d, 0, 10, rng), ValidationError);
    REQUIRE_THROWS_AS(mc_discrepancy_collective({2, 1, 1}, p, d, 2, 10, rng), ValidationError);
}
