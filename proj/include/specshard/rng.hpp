#pragma once

// Deterministic random streams.  Every stochastic routine in the library takes
// an RngStream so results are reproducible bit-for-bit across platforms from a
// (seed, stream) pair.  The standard <random> engines are portable but the
// distributions are not, so the few distributions needed are implemented here.
//
// Stream derivation: RngStream::derive(seed, {a, b, c}) folds the path
// elements into the seed with splitmix64 steps, giving independent streams for
// e.g. (seed, round, client, purpose) without coordination.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "specshard/error.hpp"

namespace specshard {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& s) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

} // namespace detail

class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
        init(fold(fold(0x243f6a8885a308d3ULL, seed), stream));
    }

    static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t h = fold(0x243f6a8885a308d3ULL, seed);
        for (std::uint64_t p : path) h = fold(h, p);
        RngStream r;
        r.init(h);
        return r;
    }

    // xoshiro256**
    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl64(s_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double uniform_pos() { return 1.0 - uniform(); }

    // uniform integer in [0, bound); rejection sampling, no modulo bias
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw ValidationError("RngStream::below: bound must be positive");
        const std::uint64_t threshold = (0ULL - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // standard normal, Box-Muller with one cached value
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Gamma(shape, 1), Marsaglia-Tsang; shapes below 1 via the boost identity
    double gamma(double shape) {
        if (!(shape > 0.0)) throw ValidationError("RngStream::gamma: shape must be positive");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(uniform_pos(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_pos();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // proportions ~ Dirichlet(alpha)
    std::vector<double> dirichlet(const std::vector<double>& alpha) {
        if (alpha.empty()) throw ValidationError("RngStream::dirichlet: empty alpha");
        std::vector<double> g(alpha.size());
        double total = 0.0;
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            g[i] = gamma(alpha[i]);
            total += g[i];
        }
        if (total <= 0.0) {
            // all gammas underflowed; fall back to a deterministic one-hot
            std::vector<double> out(alpha.size(), 0.0);
            out[below(alpha.size())] = 1.0;
            return out;
        }
        for (double& x : g) x /= total;
        return g;
    }

    // Fisher-Yates
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // index drawn proportionally to non-negative weights
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w))
                throw ValidationError("RngStream::categorical: weights must be finite and non-negative");
            total += w;
        }
        if (total <= 0.0) throw ValidationError("RngStream::categorical: total weight is zero");
        const double target = uniform() * total;
        double acc = 0.0;
        std::size_t last_positive = weights.size();
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            acc += weights[i];
            last_positive = i;
            if (target < acc) return i;
        }
        return last_positive; // floating-point slack at the far end
    }

private:
    RngStream() = default;

    static std::uint64_t fold(std::uint64_t h, std::uint64_t x) {
        std::uint64_t s = h ^ (x + 0x9e3779b97f4a7c15ULL);
        return detail::splitmix64_next(s);
    }

    void init(std::uint64_t h) {
        for (auto& w : s_) w = detail::splitmix64_next(h);
        bool all_zero = true;
        for (auto w : s_) all_zero = all_zero && w == 0;
        if (all_zero) s_[0] = 0x9e3779b97f4a7c15ULL;
    }

    std::array<std::uint64_t, 4> s_{};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stream purposes used by the simulation; listed here so derivations are
// documented in one place.
namespace stream_purpose {
inline constexpr std::uint64_t data = 1;        // synthetic data generation
inline constexpr std::uint64_t split = 2;       // Dirichlet client split
inline constexpr std::uint64_t init = 3;        // model initialization
inline constexpr std::uint64_t participation = 4; // per-round client subset
inline constexpr std::uint64_t shard_draw = 5;  // per (round, client, layer) index draw
inline constexpr std::uint64_t batch_order = 6; // per (round, client, epoch) minibatch order
inline constexpr std::uint64_t plan_marginals = 7; // Monte-Carlo marginals inside planning
} // namespace stream_purpose

} // namespace specshard
