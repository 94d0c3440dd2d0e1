#pragma once

// A shard is the sub-model a client trains: a subset of decomposition terms
// with the singular value split symmetrically into both factor columns
// (u'_i = sqrt(lambda_i) u_i, v'_i = sqrt(lambda_i) v_i) plus the frozen
// per-term multipliers chosen by the inclusion plan.  The effective weight a
// shard represents is  sum_i omega_i u'_i v'_i^T.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "specshard/error.hpp"
#include "specshard/matrix.hpp"
#include "specshard/svd.hpp"

namespace specshard {

struct Shard {
    std::vector<std::size_t> indices; // strictly increasing term ids, |indices| = keep_count(N, keep_ratio)
    Matrix u;                         // rows x |indices|, sqrt(lambda)-absorbed
    Matrix v;                         // cols x |indices|, sqrt(lambda)-absorbed
    std::vector<double> omega;        // per selected term, frozen during training
    double keep_ratio = 1.0;

    std::size_t terms() const { return indices.size(); }
};

// ceil(total * ratio) with a guard against floating-point spill (0.2 * 10
// must give 2, not 3), clamped to [1, total].
inline std::size_t keep_count(std::size_t total, double ratio) {
    if (total == 0) throw ValidationError("keep_count: total must be positive");
    if (!(ratio > 0.0) || ratio > 1.0) throw ValidationError("keep_count: ratio must lie in (0, 1]");
    const double x = static_cast<double>(total) * ratio;
    double n = std::ceil(x - 1e-9 * (1.0 + x));
    if (n < 1.0) n = 1.0;
    if (n > static_cast<double>(total)) n = static_cast<double>(total);
    return static_cast<std::size_t>(n);
}

// omega_full holds one multiplier per decomposition term; only the selected
// entries are copied into the shard.
inline Shard build_shard(const SpectralDecomposition& d, const std::vector<std::size_t>& indices,
                         const std::vector<double>& omega_full, double keep_ratio) {
    const std::size_t n_terms = d.terms();
    if (omega_full.size() != n_terms)
        throw ValidationError("build_shard: omega length " + std::to_string(omega_full.size()) +
                              " does not match term count " + std::to_string(n_terms));
    const std::size_t want = keep_count(n_terms, keep_ratio);
    if (indices.size() != want)
        throw ValidationError("build_shard: expected " + std::to_string(want) + " indices for keep ratio, got " +
                              std::to_string(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= n_terms) throw ValidationError("build_shard: index out of range");
        if (j > 0 && indices[j] <= indices[j - 1])
            throw ValidationError("build_shard: indices must be strictly increasing");
    }

    Shard s;
    s.indices = indices;
    s.keep_ratio = keep_ratio;
    s.omega.resize(indices.size());
    s.u = Matrix(d.u.rows(), indices.size());
    s.v = Matrix(d.v.rows(), indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const std::size_t t = indices[j];
        const double root = std::sqrt(d.lambda[t]);
        s.omega[j] = omega_full[t];
        for (std::size_t r = 0; r < d.u.rows(); ++r) s.u(r, j) = root * d.u(r, t);
        for (std::size_t r = 0; r < d.v.rows(); ++r) s.v(r, j) = root * d.v(r, t);
    }
    return s;
}

// sum_i omega_i u'_i v'_i^T
inline Matrix effective_weight(const Shard& s) {
    Matrix w(s.u.rows(), s.v.rows());
    for (std::size_t j = 0; j < s.terms(); ++j)
        for (std::size_t i = 0; i < s.u.rows(); ++i) {
            const double f = s.omega[j] * s.u(i, j);
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < s.v.rows(); ++c) w(i, c) += f * s.v(c, j);
        }
    return w;
}

// Multiplier that rescales a deterministic selection so the estimator keeps
// the spectral energy of the full matrix: sqrt(sum lambda^2 / sum_selected
// lambda^2) on selected terms, zero elsewhere.
inline std::vector<double> scaled_multipliers(const std::vector<double>& lambda,
                                              const std::vector<std::size_t>& selected) {
    if (lambda.empty()) throw ValidationError("scaled_multipliers: empty spectrum");
    if (selected.empty()) throw ValidationError("scaled_multipliers: empty selection");
    double total = 0.0;
    for (double l : lambda) total += l * l;
    double part = 0.0;
    for (std::size_t idx : selected) {
        if (idx >= lambda.size()) throw ValidationError("scaled_multipliers: index out of range");
        part += lambda[idx] * lambda[idx];
    }
    if (part <= 0.0) throw ValidationError("scaled_multipliers: selected spectral mass is zero");
    const double scale = std::sqrt(total / part);
    std::vector<double> omega(lambda.size(), 0.0);
    for (std::size_t idx : selected) omega[idx] = scale;
    return omega;
}

} // namespace specshard
