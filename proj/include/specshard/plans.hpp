#pragma once

// Inclusion plans: per-term inclusion probabilities pi and auxiliary
// multipliers omega for estimating  W = sum_i lambda_i u_i v_i^T  from a
// random subset of n terms.
//
//   top_n        keep the n largest terms, omega = 1
//   top_n_scaled top_n with the energy-preserving multiplier
//   unbiased     Horvitz-Thompson (omega = 1/pi) with the variance-optimal
//                pi: the top t terms are forced and the tail is proportional,
//                with the boundary t chosen by sweeping all feasible values
//   collective   optimal (pi, omega) when C independent clients are averaged;
//                omega = C / (1 + pi (C - 1)) on the support, and the forced
//                prefix t plus fractional band width u are swept jointly
//                against the top-n baseline
//   prism        draw-weight heuristic (lambda^k) sampled with the
//                numpy-style procedure; marginals estimated by Monte Carlo
//   prism_unbiased  prism with omega = 1 / clamped marginal estimate
//
// Closed-form discrepancies (expected squared Frobenius reconstruction
// errors) for the single-client and C-client averaged estimators are provided
// alongside.  Boundary comparisons follow a fixed rule: strict inequalities
// are evaluated exactly, non-strict ones get 1e-12 of absolute slack, and
// criterion ties within 1e-12 resolve toward the smaller t, then smaller u.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "specshard/designs.hpp"
#include "specshard/error.hpp"
#include "specshard/rng.hpp"
#include "specshard/shard.hpp"
#include "specshard/svd.hpp"
#include "specshard/version.hpp"

namespace specshard {

enum class Strategy { top_n, top_n_scaled, prism, prism_unbiased, unbiased, collective };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::top_n: return "topn";
        case Strategy::top_n_scaled: return "topnscaled";
        case Strategy::prism: return "prism";
        case Strategy::prism_unbiased: return "prismunbiased";
        case Strategy::unbiased: return "unbiased";
        case Strategy::collective: return "collective";
    }
    return "?";
}

inline std::optional<Strategy> strategy_from_name(std::string name) {
    std::string key;
    for (char c : name)
        if (c != '-' && c != '_') key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (key == "topn") return Strategy::top_n;
    if (key == "topnscaled") return Strategy::top_n_scaled;
    if (key == "prism") return Strategy::prism;
    if (key == "prismunbiased") return Strategy::prism_unbiased;
    if (key == "unbiased") return Strategy::unbiased;
    if (key == "collective") return Strategy::collective;
    return std::nullopt;
}

struct InclusionPlan {
    Strategy strategy = Strategy::top_n;
    std::size_t sample_size = 0; // n
    std::size_t group_size = 1;  // C, meaningful for collective
    std::size_t boundary_t = 0;  // forced prefix length
    std::size_t boundary_u = 0;  // fractional band width (collective)
    std::vector<double> pi;
    std::vector<double> omega;

    std::size_t terms() const { return pi.size(); }
};

inline void check_spectrum(const std::vector<double>& lambda) {
    if (lambda.empty()) throw ValidationError("spectrum: empty");
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        if (!std::isfinite(lambda[i]) || lambda[i] <= 0.0)
            throw ValidationError("spectrum: values must be finite and positive");
        if (i > 0 && lambda[i] > lambda[i - 1] + 1e-12 * lambda[0])
            throw ValidationError("spectrum: values must be non-increasing");
    }
}

inline void validate_plan(const InclusionPlan& p, const std::vector<double>& lambda) {
    if (p.pi.size() != lambda.size() || p.omega.size() != lambda.size())
        throw ValidationError("plan: size mismatch with spectrum");
    double total = 0.0;
    for (double x : p.pi) {
        if (!std::isfinite(x) || x < -1e-12 || x > 1.0 + 1e-12)
            throw ValidationError("plan: probabilities must lie in [0, 1]");
        total += x;
    }
    if (std::abs(total - static_cast<double>(p.sample_size)) > 1e-9)
        throw ValidationError("plan: probabilities sum to " + std::to_string(total) + ", expected " +
                              std::to_string(p.sample_size));
    const bool analytic = p.strategy != Strategy::prism && p.strategy != Strategy::prism_unbiased;
    if (analytic) {
        for (std::size_t i = 1; i < p.pi.size(); ++i)
            if (p.pi[i] > p.pi[i - 1] + 1e-12)
                throw ValidationError("plan: probabilities must be non-increasing");
    }
    for (double w : p.omega)
        if (!std::isfinite(w) || w < 0.0)
            throw ValidationError("plan: multipliers must be finite and non-negative");
}

inline InclusionPlan plan_top_n(const std::vector<double>& lambda, std::size_t n) {
    check_spectrum(lambda);
    const std::size_t count = lambda.size();
    if (n == 0 || n > count) throw ValidationError("plan_top_n: n must lie in [1, N]");
    InclusionPlan p;
    p.strategy = Strategy::top_n;
    p.sample_size = n;
    p.boundary_t = n;
    p.pi.assign(count, 0.0);
    p.omega.assign(count, 0.0);
    for (std::size_t i = 0; i < n; ++i) p.pi[i] = p.omega[i] = 1.0;
    validate_plan(p, lambda);
    return p;
}

inline InclusionPlan plan_top_n_scaled(const std::vector<double>& lambda, std::size_t n) {
    InclusionPlan p = plan_top_n(lambda, n);
    p.strategy = Strategy::top_n_scaled;
    std::vector<std::size_t> selected(n);
    for (std::size_t i = 0; i < n; ++i) selected[i] = i;
    p.omega = scaled_multipliers(lambda, selected);
    validate_plan(p, lambda);
    return p;
}

// Expected squared Frobenius error of the Horvitz-Thompson estimator:
// sum lambda_i^2 (1/pi_i - 1).  A zero probability on a live term makes the
// expectation infinite, which is reported as +inf rather than an error.
inline double unbiased_discrepancy(const std::vector<double>& lambda, const std::vector<double>& pi) {
    if (lambda.size() != pi.size()) throw ValidationError("unbiased_discrepancy: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
        if (!std::isfinite(pi[i]) || pi[i] < -1e-12 || pi[i] > 1.0 + 1e-12)
            throw ValidationError("unbiased_discrepancy: probabilities must lie in [0, 1]");
        if (pi[i] <= 0.0) {
            if (lambda[i] != 0.0) return std::numeric_limits<double>::infinity();
            continue;
        }
        const double p = std::min(pi[i], 1.0);
        total += lambda[i] * lambda[i] * (1.0 / p - 1.0);
    }
    return total;
}

// Variance-optimal probabilities for the Horvitz-Thompson estimator: force
// the top t terms, distribute the remaining n - t draws proportionally over
// the tail, sweeping every feasible boundary t.
inline InclusionPlan plan_unbiased(const std::vector<double>& lambda, std::size_t n) {
    check_spectrum(lambda);
    const std::size_t count = lambda.size();
    if (n == 0 || n > count) throw ValidationError("plan_unbiased: n must lie in [1, N]");

    InclusionPlan p;
    p.strategy = Strategy::unbiased;
    p.sample_size = n;
    p.pi.assign(count, 0.0);
    p.omega.assign(count, 0.0);

    if (n == count) {
        p.boundary_t = count;
        for (std::size_t i = 0; i < count; ++i) p.pi[i] = p.omega[i] = 1.0;
        validate_plan(p, lambda);
        return p;
    }

    std::vector<double> tail_sum(count + 1, 0.0), tail_sumsq(count + 1, 0.0);
    for (std::size_t i = count; i-- > 0;) {
        tail_sum[i] = tail_sum[i + 1] + lambda[i];
        tail_sumsq[i] = tail_sumsq[i + 1] + lambda[i] * lambda[i];
    }

    bool have_best = false;
    std::size_t best_t = 0;
    double best_value = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double slots = static_cast<double>(n - t);
        const double tail = tail_sum[t];
        if (!(lambda[t] < tail / slots)) continue; // strict feasibility
        const double value = tail * tail / slots - tail_sumsq[t];
        if (!have_best || value < best_value - 1e-12) {
            have_best = true;
            best_t = t;
            best_value = value;
        }
    }
    if (!have_best) throw NumericalError("plan_unbiased: no feasible boundary"); // unreachable for valid input

    const double tail = tail_sum[best_t];
    const double slots = static_cast<double>(n - best_t);
    for (std::size_t i = 0; i < best_t; ++i) p.pi[i] = p.omega[i] = 1.0;
    for (std::size_t i = best_t; i < count; ++i) {
        p.pi[i] = slots * lambda[i] / tail;
        p.omega[i] = 1.0 / p.pi[i];
    }
    p.boundary_t = best_t;
    validate_plan(p, lambda);
    return p;
}

// Expected squared Frobenius error of the average of C independent
// estimators that share (pi, omega):
//   sum lambda_i^2 + sum lambda_i^2 omega_i pi_i
//       (-2 + omega_i / C + omega_i pi_i (C - 1) / C)
// With C = 1 this reduces to the single-client expectation for any omega.
inline double collective_discrepancy(const std::vector<double>& lambda, const std::vector<double>& pi,
                                     const std::vector<double>& omega, std::size_t group) {
    if (lambda.size() != pi.size() || lambda.size() != omega.size())
        throw ValidationError("collective_discrepancy: size mismatch");
    if (group == 0) throw ValidationError("collective_discrepancy: group size must be positive");
    const double c = static_cast<double>(group);
    double total = 0.0;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        if (!std::isfinite(pi[i]) || pi[i] < -1e-12 || pi[i] > 1.0 + 1e-12)
            throw ValidationError("collective_discrepancy: probabilities must lie in [0, 1]");
        const double l2 = lambda[i] * lambda[i];
        const double wp = omega[i] * std::max(pi[i], 0.0);
        total += l2 * (1.0 + wp * (-2.0 + omega[i] / c + wp * (c - 1.0) / c));
    }
    return total;
}

// Strategy-appropriate closed form for one plan: the collective expectation
// with the plan's own group size (1 for single-client strategies).
inline double plan_discrepancy(const std::vector<double>& lambda, const InclusionPlan& p) {
    const std::size_t group = p.strategy == Strategy::collective ? p.group_size : 1;
    return collective_discrepancy(lambda, p.pi, p.omega, group);
}

// Optimal (pi, omega) for the C-client averaged estimator.  Candidates are
// the top-n baseline (t = n, u = 0) and every (t, u) with a feasible
// fractional band; the criterion minimizer wins, ties resolving toward
// smaller t then smaller u.
inline InclusionPlan plan_collective(const std::vector<double>& lambda, std::size_t n,
                                     std::size_t group) {
    check_spectrum(lambda);
    const std::size_t count = lambda.size();
    if (n == 0 || n > count) throw ValidationError("plan_collective: n must lie in [1, N]");
    if (group == 0) throw ValidationError("plan_collective: group size must be positive");

    InclusionPlan p;
    p.strategy = Strategy::collective;
    p.sample_size = n;
    p.group_size = group;
    p.pi.assign(count, 0.0);
    p.omega.assign(count, 0.0);

    if (n == count) {
        p.boundary_t = count;
        for (std::size_t i = 0; i < count; ++i) p.pi[i] = p.omega[i] = 1.0;
        validate_plan(p, lambda);
        return p;
    }
    if (group == 1) {
        InclusionPlan top = plan_top_n(lambda, n);
        top.strategy = Strategy::collective;
        top.group_size = 1;
        return top;
    }

    std::vector<double> prefix_sum(count + 1, 0.0), prefix_sumsq(count + 1, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        prefix_sum[i + 1] = prefix_sum[i] + lambda[i];
        prefix_sumsq[i + 1] = prefix_sumsq[i] + lambda[i] * lambda[i];
    }

    const double c = static_cast<double>(group);
    const double root_c = std::sqrt(c);

    // incumbent: top-n baseline as candidate (t = n, u = 0)
    std::size_t best_t = n, best_u = 0;
    double best_value = -prefix_sumsq[n];
    double best_beta = 0.0;
    const double inf = std::numeric_limits<double>::infinity();

    for (std::size_t t = 0; t < n; ++t) {
        const double upper = t == 0 ? inf : lambda[t - 1] / root_c;
        const double lower = lambda[t] / root_c;
        for (std::size_t u = 1; u + t <= count; ++u) {
            const double band = prefix_sum[t + u] - prefix_sum[t];
            const double denom = static_cast<double>(n - t) * (c - 1.0) + static_cast<double>(u);
            const double root_beta = root_c * band / denom;
            if (!(lower < root_beta)) continue;              // strict
            if (!(root_beta <= upper + 1e-12)) continue;     // slack on the non-strict side
            if (!(root_beta < lambda[t + u - 1] * root_c)) continue; // strict
            double value = -prefix_sumsq[t];
            const double shift = root_beta / root_c;
            for (std::size_t i = t; i < t + u; ++i)
                value -= (c / (c - 1.0)) * lambda[i] * (lambda[i] - shift);
            const bool better = value < best_value - 1e-12;
            const bool tie = std::abs(value - best_value) <= 1e-12 &&
                             (t < best_t || (t == best_t && u < best_u));
            if (better || tie) {
                best_t = t;
                best_u = u;
                best_value = value;
                best_beta = root_beta;
            }
        }
    }

    p.boundary_t = best_t;
    p.boundary_u = best_u;
    if (best_u == 0) {
        for (std::size_t i = 0; i < n; ++i) p.pi[i] = p.omega[i] = 1.0;
    } else {
        for (std::size_t i = 0; i < best_t; ++i) p.pi[i] = p.omega[i] = 1.0;
        for (std::size_t i = best_t; i < best_t + best_u; ++i) {
            p.pi[i] = (lambda[i] * root_c / best_beta - 1.0) / (c - 1.0);
            // same multiplier as sqrt(c)*beta/lambda, but exact at pi = 1
            p.omega[i] = c / (1.0 + (c - 1.0) * p.pi[i]);
        }
    }
    validate_plan(p, lambda);
    return p;
}

// Draw weights for the prism strategies: lambda_i^k with k = 4 for keep
// ratios up to 0.2 and k = 2.5 above.
inline std::vector<double> prism_draw_weights(const std::vector<double>& lambda, double keep_ratio) {
    check_spectrum(lambda);
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
        throw ValidationError("prism_draw_weights: keep ratio must lie in (0, 1]");
    const double k = keep_ratio <= 0.2 ? 4.0 : 2.5;
    std::vector<double> w(lambda.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) w[i] = std::pow(lambda[i], k);
    return w;
}

struct PlanOptions {
    std::size_t prism_marginal_trials = 100000;
    // fixed sub-seed for the Monte-Carlo marginal estimate, so prism plans
    // are deterministic functions of the spectrum
    std::uint64_t prism_marginal_seed = 1729;
};

inline double prism_multiplier_floor() { return 1e-4; }

// keep_ratio only affects the prism draw-weight exponent; pass 0 to derive
// it as n / N.
inline InclusionPlan plan_for_spectrum(const std::vector<double>& lambda, std::size_t n,
                                       Strategy strategy, std::size_t group = 1,
                                       const PlanOptions& opts = {}, double keep_ratio = 0.0) {
    check_spectrum(lambda);
    const std::size_t count = lambda.size();
    if (n == 0 || n > count) throw ValidationError("plan_for_spectrum: n must lie in [1, N]");
    if (keep_ratio <= 0.0)
        keep_ratio = static_cast<double>(n) / static_cast<double>(count);
    switch (strategy) {
        case Strategy::top_n: return plan_top_n(lambda, n);
        case Strategy::top_n_scaled: return plan_top_n_scaled(lambda, n);
        case Strategy::unbiased: return plan_unbiased(lambda, n);
        case Strategy::collective: return plan_collective(lambda, n, group);
        case Strategy::prism:
        case Strategy::prism_unbiased: {
            if (n == count) {
                // a fixed-size draw of all terms is certain; skip the estimate
                InclusionPlan p;
                p.strategy = strategy;
                p.sample_size = n;
                p.pi.assign(count, 1.0);
                p.omega.assign(count, 1.0);
                validate_plan(p, lambda);
                return p;
            }
            const std::vector<double> w = prism_draw_weights(lambda, keep_ratio);
            const SamplingDesign design = SamplingDesign::from_weights(w, n);
            RngStream rng =
                RngStream::derive(opts.prism_marginal_seed, {stream_purpose::plan_marginals});
            InclusionPlan p;
            p.strategy = strategy;
            p.sample_size = n;
            p.pi = estimate_marginals(design, opts.prism_marginal_trials, rng);
            p.omega.assign(count, 1.0);
            if (strategy == Strategy::prism_unbiased) {
                for (std::size_t i = 0; i < count; ++i) {
                    const double clamped =
                        std::min(1.0, std::max(prism_multiplier_floor(), p.pi[i]));
                    p.omega[i] = 1.0 / clamped;
                }
            }
            validate_plan(p, lambda);
            return p;
        }
    }
    throw ValidationError("plan_for_spectrum: unknown strategy");
}

inline InclusionPlan plan_for_keep_ratio(const SpectralDecomposition& d, double keep_ratio,
                                         Strategy strategy, std::size_t group = 1,
                                         const PlanOptions& opts = {}) {
    check_spectrum(d.lambda);
    const std::size_t n = keep_count(d.terms(), keep_ratio);
    return plan_for_spectrum(d.lambda, n, strategy, group, opts, keep_ratio);
}

// ---- plan CSV: one comment line with metadata, a header, one row per term

inline void write_plan_csv(std::ostream& os, const InclusionPlan& p,
                           const std::vector<double>& lambda, std::uint64_t seed) {
    os << "# seed=" << seed << " version=" << version_string
       << " strategy=" << strategy_name(p.strategy) << " n=" << p.sample_size
       << " clients=" << p.group_size << " t=" << p.boundary_t << " u=" << p.boundary_u << '\n';
    os << "index,lambda,pi,omega\n";
    os << std::setprecision(17);
    for (std::size_t i = 0; i < p.terms(); ++i)
        os << i << ',' << lambda[i] << ',' << p.pi[i] << ',' << p.omega[i] << '\n';
}

struct PlanFile {
    InclusionPlan plan;
    std::vector<double> lambda;
    std::uint64_t seed = 0;
};

inline PlanFile read_plan_csv(std::istream& is) {
    PlanFile out;
    out.plan.strategy = Strategy::unbiased;
    std::string line;
    bool header_seen = false;
    std::size_t expect_index = 0;
    bool n_from_meta = false, group_from_meta = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string token;
            while (ss >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = token.substr(0, eq);
                const std::string value = token.substr(eq + 1);
                try {
                    if (key == "seed") out.seed = std::stoull(value);
                    else if (key == "n") { out.plan.sample_size = std::stoull(value); n_from_meta = true; }
                    else if (key == "clients") { out.plan.group_size = std::stoull(value); group_from_meta = true; }
                    else if (key == "t") out.plan.boundary_t = std::stoull(value);
                    else if (key == "u") out.plan.boundary_u = std::stoull(value);
                    else if (key == "strategy") {
                        const auto s = strategy_from_name(value);
                        if (!s) throw ValidationError("plan csv: unknown strategy '" + value + "'");
                        out.plan.strategy = *s;
                    }
                } catch (const std::invalid_argument&) {
                    throw ValidationError("plan csv: bad metadata token '" + token + "'");
                } catch (const std::out_of_range&) {
                    throw ValidationError("plan csv: bad metadata token '" + token + "'");
                }
            }
            continue;
        }
        if (!header_seen) {
            if (line != "index,lambda,pi,omega")
                throw ValidationError("plan csv: expected header 'index,lambda,pi,omega'");
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        std::string field;
        double values[4];
        for (int f = 0; f < 4; ++f) {
            if (!std::getline(ss, field, f == 3 ? '\n' : ','))
                throw ValidationError("plan csv: short row '" + line + "'");
            try {
                values[f] = std::stod(field);
            } catch (const std::exception&) {
                throw ValidationError("plan csv: bad number '" + field + "'");
            }
        }
        if (static_cast<std::size_t>(values[0]) != expect_index)
            throw ValidationError("plan csv: rows must carry consecutive indices from 0");
        ++expect_index;
        out.lambda.push_back(values[1]);
        out.plan.pi.push_back(values[2]);
        out.plan.omega.push_back(values[3]);
    }
    if (!header_seen || out.lambda.empty()) throw ValidationError("plan csv: no rows");
    if (!n_from_meta) {
        double total = 0.0;
        for (double x : out.plan.pi) total += x;
        out.plan.sample_size = static_cast<std::size_t>(std::llround(total));
    }
    if (!group_from_meta) out.plan.group_size = 1;
    validate_plan(out.plan, out.lambda);
    return out;
}

} // namespace specshard
