#pragma once

// Diagnostics: the averaged normalized marginal entropy of a set of layer
// plans, and Monte-Carlo checks of the closed-form discrepancies.  The MC
// estimators work in spectral coordinates, where the squared reconstruction
// error of a draw is  sum_i lambda_i^2 (z_i omega_i - 1)^2  (z the inclusion
// indicator, averaged over the group for the collective variant); matching
// the matrix-space norm is covered by tests.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "specshard/designs.hpp"
#include "specshard/error.hpp"
#include "specshard/plans.hpp"
#include "specshard/rng.hpp"

namespace specshard {

namespace detail {

// reproducible reduction independent of accumulation order drift
inline double pairwise_sum(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
    const std::size_t len = hi - lo;
    if (len == 0) return 0.0;
    if (len <= 8) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += x[i];
        return s;
    }
    const std::size_t mid = lo + len / 2;
    return pairwise_sum(x, lo, mid) + pairwise_sum(x, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x, 0, x.size()); }

inline double bernoulli_entropy(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

} // namespace detail

// Averaged normalized marginal entropy.  Per layer: the mean Bernoulli
// entropy of the inclusion probabilities over all N terms, divided by the
// same mean for the uniform plan pi = n/N.  Layers with n = 0 or n = N have
// no uniform reference and are excluded (flagged, not errors).
struct AnmeReport {
    std::vector<double> per_layer;  // normalized entropy, 0 where undefined
    std::vector<char> defined;      // per layer
    double network = 0.0;           // mean over defined layers
    std::size_t defined_count = 0;
};

inline AnmeReport anme(const std::vector<std::vector<double>>& pi_layers,
                       const std::vector<std::size_t>& n_layers) {
    if (pi_layers.size() != n_layers.size())
        throw ValidationError("anme: layer count mismatch");
    if (pi_layers.empty()) throw ValidationError("anme: no layers");
    AnmeReport report;
    report.per_layer.assign(pi_layers.size(), 0.0);
    report.defined.assign(pi_layers.size(), 0);
    double total = 0.0;
    for (std::size_t l = 0; l < pi_layers.size(); ++l) {
        const auto& pi = pi_layers[l];
        const std::size_t count = pi.size();
        const std::size_t n = n_layers[l];
        if (count == 0) throw ValidationError("anme: empty layer");
        if (n > count) throw ValidationError("anme: sample size exceeds term count");
        for (double p : pi)
            if (!std::isfinite(p) || p < -1e-12 || p > 1.0 + 1e-12)
                throw ValidationError("anme: probabilities must lie in [0, 1]");
        if (n == 0 || n == count) continue; // undefined, excluded
        double mean_entropy = 0.0;
        for (double p : pi) mean_entropy += detail::bernoulli_entropy(p);
        mean_entropy /= static_cast<double>(count);
        const double reference =
            detail::bernoulli_entropy(static_cast<double>(n) / static_cast<double>(count));
        report.per_layer[l] = mean_entropy / reference;
        report.defined[l] = 1;
        total += report.per_layer[l];
        ++report.defined_count;
    }
    report.network = report.defined_count
                         ? total / static_cast<double>(report.defined_count)
                         : std::numeric_limits<double>::quiet_NaN();
    return report;
}

struct McEstimate {
    double mean = 0.0;
    double se = 0.0; // standard error of the mean
};

namespace detail {

inline McEstimate summarize_trials(std::vector<double>& values) {
    McEstimate est;
    const std::size_t trials = values.size();
    est.mean = pairwise_sum(values) / static_cast<double>(trials);
    if (trials > 1) {
        for (double& v : values) {
            const double d = v - est.mean;
            v = d * d;
        }
        const double var = pairwise_sum(values) / static_cast<double>(trials - 1);
        est.se = std::sqrt(var / static_cast<double>(trials));
    }
    return est;
}

} // namespace detail

// Monte-Carlo estimate of the single-client expected squared error for a plan
// sampled from the given design.
inline McEstimate mc_discrepancy_unbiased(const std::vector<double>& lambda,
                                          const InclusionPlan& plan, const SamplingDesign& design,
                                          std::size_t trials, RngStream& rng) {
    if (lambda.size() != plan.terms() || design.dimension() != lambda.size())
        throw ValidationError("mc_discrepancy_unbiased: size mismatch");
    if (trials < 2) throw ValidationError("mc_discrepancy_unbiased: need at least 2 trials");
    double base = 0.0; // value when nothing is drawn: every term contributes lambda^2
    std::vector<double> delta(lambda.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        const double l2 = lambda[i] * lambda[i];
        base += l2;
        const double w = plan.omega[i] - 1.0;
        delta[i] = l2 * (w * w - 1.0); // drawn term swaps lambda^2 for lambda^2 (omega-1)^2
    }
    std::vector<double> values(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        double v = base;
        for (std::size_t idx : design.sample(rng)) v += delta[idx];
        values[t] = v;
    }
    return detail::summarize_trials(values);
}

inline McEstimate mc_discrepancy_unbiased(const SpectralDecomposition& d, const InclusionPlan& plan,
                                          const SamplingDesign& design, std::size_t trials,
                                          RngStream& rng) {
    return mc_discrepancy_unbiased(d.lambda, plan, design, trials, rng);
}

// Monte-Carlo estimate of the group-averaged expected squared error: each
// trial draws `group` independent index sets, averages the estimators in
// spectral coordinates, and measures the reconstruction error.
inline McEstimate mc_discrepancy_collective(const std::vector<double>& lambda,
                                            const InclusionPlan& plan,
                                            const SamplingDesign& design, std::size_t group,
                                            std::size_t trials, RngStream& rng) {
    if (lambda.size() != plan.terms() || design.dimension() != lambda.size())
        throw ValidationError("mc_discrepancy_collective: size mismatch");
    if (group == 0) throw ValidationError("mc_discrepancy_collective: group size must be positive");
    if (trials < 2) throw ValidationError("mc_discrepancy_collective: need at least 2 trials");
    const double inv_group = 1.0 / static_cast<double>(group);
    std::vector<double> values(trials);
    std::vector<double> zbar(lambda.size());
    std::vector<std::size_t> touched;
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t c = 0; c < group; ++c)
            for (std::size_t idx : design.sample(rng)) {
                if (zbar[idx] == 0.0) touched.push_back(idx);
                zbar[idx] += inv_group;
            }
        double v = 0.0;
        for (std::size_t i = 0; i < lambda.size(); ++i) {
            const double err = plan.omega[i] * zbar[i] - 1.0;
            v += lambda[i] * lambda[i] * err * err;
        }
        values[t] = v;
        for (std::size_t idx : touched) zbar[idx] = 0.0;
        touched.clear();
    }
    return detail::summarize_trials(values);
}

inline McEstimate mc_discrepancy_collective(const SpectralDecomposition& d,
                                            const InclusionPlan& plan, const SamplingDesign& design,
                                            std::size_t group, std::size_t trials, RngStream& rng) {
    return mc_discrepancy_collective(d.lambda, plan, design, group, trials, rng);
}

} // namespace specshard
