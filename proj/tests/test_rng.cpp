#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "specshard/rng.hpp"

using specshard::RngStream;

TEST_CASE("identical stream paths reproduce identical sequences") {
    RngStream a = RngStream::derive(42, {1, 2, 3});
    RngStream b = RngStream::derive(42, {1, 2, 3});
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct paths decorrelate") {
    RngStream a = RngStream::derive(42, {1, 2});
    RngStream b = RngStream::derive(42, {2, 1});
    RngStream c = RngStream::derive(42, {1, 2, 0});
    REQUIRE(a.next_u64() != b.next_u64());
    REQUIRE(RngStream::derive(42, {1, 2}).next_u64() != c.next_u64());
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
    RngStream rng = RngStream::derive(7, {1});
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("normal moments are sane") {
    RngStream rng = RngStream::derive(9, {2});
    const int trials = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < trials; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / trials;
    const double var = sum_sq / trials - mean * mean;
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gamma mean matches its shape parameter") {
    RngStream rng = RngStream::derive(11, {3});
    for (double shape : {0.5, 1.0, 4.0}) {
        double sum = 0.0;
        const int trials = 100000;
        for (int i = 0; i < trials; ++i) sum += rng.gamma(shape);
        REQUIRE(std::abs(sum / trials - shape) < 0.05 * std::max(1.0, shape));
    }
}

TEST_CASE("dirichlet draws lie on the simplex") {
    RngStream rng = RngStream::derive(13, {4});
    const std::vector<double> alpha{0.5, 1.5, 2.0};
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> p = rng.dirichlet(alpha);
        double total = 0.0;
        for (double v : p) {
            REQUIRE(v >= 0.0);
            total += v;
        }
        REQUIRE(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("shuffle produces a permutation") {
    RngStream rng = RngStream::derive(17, {5});
    std::vector<std::size_t> v(50);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    rng.shuffle(v);
    std::vector<char> seen(v.size(), 0);
    for (std::size_t x : v) {
        REQUIRE(x < v.size());
        REQUIRE(!seen[x]);
        seen[x] = 1;
    }
}

TEST_CASE("below() respects its bound") {
    RngStream rng = RngStream::derive(19, {6});
    for (int i = 0; i < 10000; ++i) REQUIRE(rng.below(7) < 7);
}

TEST_CASE("categorical respects zero weights") {
    RngStream rng = RngStream::derive(23, {7});
    const std::vector<double> w{0.0, 1.0, 0.0, 2.0};
    for (int i = 0; i < 5000; ++i) {
        const std::size_t k = rng.categorical(w);
        REQUIRE((k == 1 || k == 3));
    }
}
