#pragma once

// Fixed-size sampling designs over term indices.  All of them draw exactly n
// of N indices; they differ in which joint distributions realize a target
// vector of inclusion probabilities:
//
//   cps          maximum-entropy conditional Poisson sampling; working
//                weights are calibrated so the exact design marginals hit the
//                target, then draws are made sequentially from a subset-sum
//                table
//   brewer       Brewer's sequential draw-by-draw procedure (exact marginals)
//   min_support  convex decomposition of the target into at most N
//                deterministic samples
//   numpy_style  the iterated multinomial-with-replacement procedure used by
//                numpy.random.choice(replace=False); parameterized by draw
//                weights, marginals only available empirically
//
// Units with probability exactly 0 or 1 are conditioned out before any
// calibration or drawing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "specshard/error.hpp"
#include "specshard/rng.hpp"

namespace specshard {

namespace detail {

struct Partition {
    std::vector<std::size_t> forced;     // pi ~ 1, always included
    std::vector<std::size_t> fractional; // 0 < pi < 1, original ids
    std::vector<double> frac_pi;         // targets for the fractional units
    std::size_t frac_draws = 0;          // draws left after the forced units
};

inline Partition condition_probabilities(const std::vector<double>& pi, std::size_t n) {
    if (pi.empty()) throw ValidationError("sampling design: empty probability vector");
    if (n == 0 || n > pi.size())
        throw ValidationError("sampling design: draw count must lie in [1, N]");
    double total = 0.0;
    for (double p : pi) {
        if (!std::isfinite(p) || p < -1e-12 || p > 1.0 + 1e-12)
            throw ValidationError("sampling design: probabilities must lie in [0, 1]");
        total += p;
    }
    if (std::abs(total - static_cast<double>(n)) > 1e-6)
        throw ValidationError("sampling design: probabilities sum to " + std::to_string(total) +
                              ", expected " + std::to_string(n));

    Partition part;
    for (std::size_t i = 0; i < pi.size(); ++i) {
        if (pi[i] >= 1.0 - 1e-9) {
            part.forced.push_back(i);
        } else if (pi[i] > 1e-9) {
            part.fractional.push_back(i);
            part.frac_pi.push_back(pi[i]);
        }
    }
    if (part.forced.size() > n)
        throw ValidationError("sampling design: more certain units than draws");
    part.frac_draws = n - part.forced.size();
    if (part.frac_draws > part.fractional.size())
        throw ValidationError("sampling design: not enough fractional mass to fill the sample");
    if (part.frac_draws == 0) {
        // residual fractional mass is within the sum tolerance; drop it
        part.fractional.clear();
        part.frac_pi.clear();
    } else if (part.frac_draws == part.fractional.size()) {
        // every fractional unit must be taken; fold them into the forced set
        part.forced.insert(part.forced.end(), part.fractional.begin(), part.fractional.end());
        std::sort(part.forced.begin(), part.forced.end());
        part.fractional.clear();
        part.frac_pi.clear();
        part.frac_draws = 0;
    }
    return part;
}

// elementary symmetric sums e_0..e_m of the given weights
inline std::vector<double> elementary_symmetric(const std::vector<double>& w, std::size_t m) {
    std::vector<double> e(m + 1, 0.0);
    e[0] = 1.0;
    std::size_t seen = 0;
    for (double x : w) {
        ++seen;
        const std::size_t top = std::min(seen, m);
        for (std::size_t k = top; k >= 1; --k) e[k] += x * e[k - 1];
    }
    return e;
}

// exact inclusion probabilities of a conditional Poisson design with the
// given odds and fixed sample size m:  pi_i = w_i e_{m-1}(w \ i) / e_m(w)
inline std::vector<double> cps_subproblem_marginals(const std::vector<double>& w, std::size_t m) {
    const std::size_t count = w.size();
    const std::vector<double> e_all = elementary_symmetric(w, m);
    if (!(e_all[m] > 0.0) || !std::isfinite(e_all[m]))
        throw NumericalError("cps marginals: degenerate subset-sum normalizer");
    std::vector<double> pi(count);
    std::vector<double> rest;
    rest.reserve(count - 1);
    for (std::size_t i = 0; i < count; ++i) {
        rest.clear();
        for (std::size_t j = 0; j < count; ++j)
            if (j != i) rest.push_back(w[j]);
        const std::vector<double> e_rest = elementary_symmetric(rest, m - 1);
        pi[i] = w[i] * e_rest[m - 1] / e_all[m];
    }
    return pi;
}

inline void normalize_log_weights(std::vector<double>& theta) {
    double mean = 0.0;
    for (double t : theta) mean += t;
    mean /= static_cast<double>(theta.size());
    for (double& t : theta) t -= mean;
}

} // namespace detail

struct CpsDesign {
    std::size_t dimension = 0;  // N
    std::size_t draw_count = 0; // n
    std::vector<std::size_t> forced;
    std::vector<std::size_t> fractional;
    std::vector<double> weights; // calibrated odds per fractional unit
    std::size_t frac_draws = 0;  // m'
    std::vector<double> table;   // (M+1) x (m'+1) suffix subset sums for sampling

    double table_at(std::size_t j, std::size_t k) const { return table[j * (frac_draws + 1) + k]; }
};

// Calibrate conditional Poisson working weights so the exact design marginals
// match pi.  Damped coordinate-Newton on the log-odds against the recursive
// marginal formula; max_abs residual below tol counts as converged.
inline CpsDesign cps_calibrate(const std::vector<double>& pi, std::size_t n, double tol = 1e-6,
                               int max_iter = 200) {
    detail::Partition part = detail::condition_probabilities(pi, n);
    CpsDesign design;
    design.dimension = pi.size();
    design.draw_count = n;
    design.forced = std::move(part.forced);
    design.fractional = std::move(part.fractional);
    design.frac_draws = part.frac_draws;

    const std::size_t count = design.fractional.size();
    if (count > 0) {
        const std::vector<double>& target = part.frac_pi;
        const std::size_t m = design.frac_draws;
        std::vector<double> theta(count);
        for (std::size_t i = 0; i < count; ++i)
            theta[i] = std::log(target[i] / (1.0 - target[i]));
        detail::normalize_log_weights(theta);

        auto marginals_of = [&](const std::vector<double>& th, std::vector<double>& w) {
            w.resize(count);
            for (std::size_t i = 0; i < count; ++i) w[i] = std::exp(th[i]);
            return detail::cps_subproblem_marginals(w, m);
        };

        std::vector<double> w, cur = marginals_of(theta, w);
        double residual = 0.0;
        for (std::size_t i = 0; i < count; ++i)
            residual = std::max(residual, std::abs(cur[i] - target[i]));

        double step = 1.0;
        int it = 0;
        for (; it < max_iter && residual >= tol; ++it) {
            std::vector<double> trial = theta;
            for (std::size_t i = 0; i < count; ++i) {
                const double slope = std::max(cur[i] * (1.0 - cur[i]), 1e-12);
                trial[i] += step * (target[i] - cur[i]) / slope;
            }
            detail::normalize_log_weights(trial);
            std::vector<double> next = marginals_of(trial, w);
            double next_res = 0.0;
            for (std::size_t i = 0; i < count; ++i)
                next_res = std::max(next_res, std::abs(next[i] - target[i]));
            if (next_res < residual || step < 1e-4) {
                theta = std::move(trial);
                cur = std::move(next);
                residual = next_res;
                step = std::min(1.0, step * 1.5);
            } else {
                step *= 0.5;
            }
        }
        if (residual >= tol)
            throw NumericalError("cps_calibrate: no convergence after " + std::to_string(it) +
                                 " iterations, max marginal residual " + std::to_string(residual));

        design.weights.resize(count);
        for (std::size_t i = 0; i < count; ++i) design.weights[i] = std::exp(theta[i]);

        // suffix subset sums: table[j][k] = e_k(w_j .. w_{count-1})
        design.table.assign((count + 1) * (m + 1), 0.0);
        design.table[count * (m + 1) + 0] = 1.0;
        for (std::size_t j = count; j-- > 0;) {
            for (std::size_t k = 0; k <= m; ++k) {
                double val = design.table[(j + 1) * (m + 1) + k];
                if (k > 0) val += design.weights[j] * design.table[(j + 1) * (m + 1) + (k - 1)];
                design.table[j * (m + 1) + k] = val;
            }
        }
    }
    return design;
}

// Exact marginals of a calibrated design, expanded to the full index space.
inline std::vector<double> cps_exact_marginals(const CpsDesign& d) {
    std::vector<double> pi(d.dimension, 0.0);
    for (std::size_t i : d.forced) pi[i] = 1.0;
    if (!d.fractional.empty()) {
        const std::vector<double> frac = detail::cps_subproblem_marginals(d.weights, d.frac_draws);
        for (std::size_t i = 0; i < d.fractional.size(); ++i) pi[d.fractional[i]] = frac[i];
    }
    return pi;
}

// Sequential conditional draw through the suffix table; O(M) per sample.
inline void cps_sample(const CpsDesign& d, RngStream& rng, std::vector<std::size_t>& out) {
    out.clear();
    out.insert(out.end(), d.forced.begin(), d.forced.end());
    const std::size_t count = d.fractional.size();
    std::size_t need = d.frac_draws;
    for (std::size_t j = 0; j < count && need > 0; ++j) {
        const double denom = d.table_at(j, need);
        const double take = d.weights[j] * d.table_at(j + 1, need - 1);
        if (rng.uniform() * denom < take) {
            out.push_back(d.fractional[j]);
            --need;
        }
    }
    std::sort(out.begin(), out.end());
}

inline std::vector<std::size_t> cps_sample(const CpsDesign& d, RngStream& rng) {
    std::vector<std::size_t> out;
    cps_sample(d, rng, out);
    return out;
}

// Brewer's draw-by-draw procedure.  At draw k with a = sum of already-selected
// probabilities, an unselected unit j is drawn with weight
//   pi_j ((m - a) - pi_j) / ((m - a) - pi_j (m - k + 1)),
// which realizes the target marginals exactly.
inline std::vector<std::size_t> brewer_sample(const std::vector<double>& pi, std::size_t n,
                                              RngStream& rng) {
    detail::Partition part = detail::condition_probabilities(pi, n);
    std::vector<std::size_t> out = part.forced;
    const std::size_t count = part.fractional.size();
    const std::size_t m = part.frac_draws;
    std::vector<char> taken(count, 0);
    std::vector<double> weights(count);
    double a = 0.0;
    for (std::size_t k = 1; k <= m; ++k) {
        const double left = static_cast<double>(m) - a;
        const double horizon = static_cast<double>(m - k + 1);
        for (std::size_t j = 0; j < count; ++j) {
            if (taken[j]) {
                weights[j] = 0.0;
                continue;
            }
            const double p = part.frac_pi[j];
            weights[j] = p * (left - p) / (left - p * horizon);
        }
        const std::size_t pick = rng.categorical(weights);
        taken[pick] = 1;
        a += part.frac_pi[pick];
        out.push_back(part.fractional[pick]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct MinSupportAtom {
    double weight = 0.0;
    std::vector<std::size_t> members; // sorted, exactly n of them
};

// Peel the target vector into a convex combination of at most N deterministic
// size-n samples.  Each step takes the n largest residuals (ties by index)
// and subtracts the largest coefficient that keeps the remainder feasible,
// which zeroes or saturates at least one unit per step.
inline std::vector<MinSupportAtom> min_support_decompose(const std::vector<double>& pi,
                                                         std::size_t n) {
    detail::condition_probabilities(pi, n); // validation only
    const std::size_t dim = pi.size();
    std::vector<double> rho = pi;
    double mass = 1.0;
    std::vector<MinSupportAtom> atoms;
    std::vector<std::size_t> order(dim);
    const std::size_t max_atoms = dim + 4;

    while (mass > 1e-12) {
        for (std::size_t i = 0; i < dim; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (rho[a] != rho[b]) return rho[a] > rho[b];
            return a < b;
        });
        MinSupportAtom atom;
        atom.members.assign(order.begin(), order.begin() + n);
        std::sort(atom.members.begin(), atom.members.end());

        double c = mass;
        for (std::size_t j = 0; j < n; ++j) c = std::min(c, rho[order[j]]);
        for (std::size_t j = n; j < dim; ++j) c = std::min(c, mass - rho[order[j]]);
        if (!(c > 0.0))
            throw NumericalError("min_support_decompose: stalled with residual mass " +
                                 std::to_string(mass));
        atom.weight = c;
        for (std::size_t idx : atom.members) {
            rho[idx] -= c;
            if (std::abs(rho[idx]) < 1e-12) rho[idx] = 0.0;
        }
        mass -= c;
        if (std::abs(mass) < 1e-12) mass = 0.0;
        atoms.push_back(std::move(atom));
        if (atoms.size() > max_atoms) {
            double residual = 0.0;
            for (double r : rho) residual = std::max(residual, std::abs(r));
            throw NumericalError("min_support_decompose: support did not close, residual " +
                                 std::to_string(residual));
        }
    }
    return atoms;
}

inline std::vector<std::size_t> min_support_pick(const std::vector<MinSupportAtom>& atoms,
                                                 RngStream& rng) {
    double total = 0.0;
    for (const auto& a : atoms) total += a.weight;
    const double target = rng.uniform() * total;
    double acc = 0.0;
    for (const auto& a : atoms) {
        acc += a.weight;
        if (target < acc) return a.members;
    }
    return atoms.back().members;
}

inline std::vector<std::size_t> min_support_sample(const std::vector<double>& pi, std::size_t n,
                                                   RngStream& rng) {
    const auto atoms = min_support_decompose(pi, n);
    return min_support_pick(atoms, rng);
}

// The procedure behind numpy.random.choice without replacement: repeatedly
// draw the missing count with replacement from the current chance vector,
// keep new unique indices, zero their chances, and repeat until n indices
// are collected.
inline std::vector<std::size_t> numpy_style_sample(const std::vector<double>& weights,
                                                   std::size_t n, RngStream& rng) {
    if (weights.empty()) throw ValidationError("numpy_style_sample: empty weights");
    std::size_t positive = 0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0)
            throw ValidationError("numpy_style_sample: weights must be finite and non-negative");
        if (w > 0.0) ++positive;
    }
    if (n == 0 || n > positive)
        throw ValidationError("numpy_style_sample: need " + std::to_string(n) + " draws but only " +
                              std::to_string(positive) + " positive weights");

    std::vector<double> chances = weights;
    std::vector<char> selected(weights.size(), 0);
    std::vector<std::size_t> batch;
    std::size_t have = 0;
    while (have < n) {
        const std::size_t want = n - have;
        batch.clear();
        for (std::size_t d = 0; d < want; ++d) batch.push_back(rng.categorical(chances));
        for (std::size_t idx : batch) {
            if (selected[idx]) continue;
            selected[idx] = 1;
            chances[idx] = 0.0;
            ++have;
        }
    }
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t i = 0; i < selected.size(); ++i)
        if (selected[i]) out.push_back(i);
    return out;
}

enum class DesignKind { cps, brewer, min_support, numpy_style, deterministic };

inline const char* design_name(DesignKind k) {
    switch (k) {
        case DesignKind::cps: return "cps";
        case DesignKind::brewer: return "brewer";
        case DesignKind::min_support: return "minsupport";
        case DesignKind::numpy_style: return "numpy";
        case DesignKind::deterministic: return "deterministic";
    }
    return "?";
}

inline std::optional<DesignKind> design_from_name(std::string name) {
    std::string key;
    for (char c : name)
        if (c != '-' && c != '_') key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (key == "cps") return DesignKind::cps;
    if (key == "brewer") return DesignKind::brewer;
    if (key == "minsupport") return DesignKind::min_support;
    if (key == "numpy" || key == "numpystyle") return DesignKind::numpy_style;
    if (key == "deterministic") return DesignKind::deterministic;
    return std::nullopt;
}

// A design prepared once and sampled many times.
class SamplingDesign {
public:
    static SamplingDesign from_probabilities(DesignKind kind, const std::vector<double>& pi,
                                             std::size_t n) {
        if (kind == DesignKind::numpy_style)
            throw ValidationError("SamplingDesign: numpy_style is parameterized by weights, not probabilities");
        SamplingDesign d;
        d.kind_ = kind;
        d.dim_ = pi.size();
        d.n_ = n;
        switch (kind) {
            case DesignKind::cps:
                d.cps_ = cps_calibrate(pi, n);
                break;
            case DesignKind::brewer: {
                detail::condition_probabilities(pi, n); // validate now, draw later
                d.pi_ = pi;
                break;
            }
            case DesignKind::min_support:
                d.atoms_ = min_support_decompose(pi, n);
                break;
            case DesignKind::deterministic: {
                for (std::size_t i = 0; i < pi.size(); ++i) {
                    if (pi[i] >= 1.0 - 1e-9)
                        d.fixed_.push_back(i);
                    else if (pi[i] > 1e-9)
                        throw ValidationError("SamplingDesign: deterministic design needs 0/1 probabilities");
                }
                if (d.fixed_.size() != n)
                    throw ValidationError("SamplingDesign: deterministic design has wrong support size");
                break;
            }
            default:
                break;
        }
        return d;
    }

    static SamplingDesign from_weights(const std::vector<double>& weights, std::size_t n) {
        SamplingDesign d;
        d.kind_ = DesignKind::numpy_style;
        d.dim_ = weights.size();
        d.n_ = n;
        std::size_t positive = 0;
        for (double w : weights) {
            if (!std::isfinite(w) || w < 0.0)
                throw ValidationError("SamplingDesign: weights must be finite and non-negative");
            if (w > 0.0) ++positive;
        }
        if (n == 0 || n > positive)
            throw ValidationError("SamplingDesign: not enough positive weights for the draw count");
        d.weights_ = weights;
        return d;
    }

    DesignKind kind() const { return kind_; }
    std::size_t dimension() const { return dim_; }
    std::size_t draw_count() const { return n_; }
    const CpsDesign& cps() const { return cps_; }

    std::vector<std::size_t> sample(RngStream& rng) const {
        switch (kind_) {
            case DesignKind::cps: return cps_sample(cps_, rng);
            case DesignKind::brewer: return brewer_sample(pi_, n_, rng);
            case DesignKind::min_support: return min_support_pick(atoms_, rng);
            case DesignKind::numpy_style: return numpy_style_sample(weights_, n_, rng);
            case DesignKind::deterministic: return fixed_;
        }
        throw ValidationError("SamplingDesign: unknown kind");
    }

private:
    DesignKind kind_ = DesignKind::deterministic;
    std::size_t dim_ = 0, n_ = 0;
    CpsDesign cps_;
    std::vector<double> pi_;
    std::vector<MinSupportAtom> atoms_;
    std::vector<double> weights_;
    std::vector<std::size_t> fixed_;
};

// Empirical inclusion frequencies over the given number of draws.  Counts are
// integers, so the frequencies sum to exactly n * trials / trials.
inline std::vector<double> estimate_marginals(const SamplingDesign& design, std::size_t trials,
                                              RngStream& rng) {
    if (trials == 0) throw ValidationError("estimate_marginals: trials must be positive");
    std::vector<std::uint64_t> counts(design.dimension(), 0);
    for (std::size_t t = 0; t < trials; ++t)
        for (std::size_t idx : design.sample(rng)) ++counts[idx];
    std::vector<double> freq(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        freq[i] = static_cast<double>(counts[i]) / static_cast<double>(trials);
    return freq;
}

} // namespace specshard
