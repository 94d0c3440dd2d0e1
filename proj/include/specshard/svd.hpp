#pragma once

// Singular value decomposition via one-sided (Hestenes) Jacobi rotations.
// Small dense matrices only, which is all the sharding pipeline needs; the
// payoff is high relative accuracy for the trailing values and no external
// dependency.
//
// decompose() returns only the terms above a relative cutoff, values sorted
// non-increasing, and fixes signs so the first nonzero entry of each left
// vector is non-negative, making the decomposition deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "specshard/error.hpp"
#include "specshard/matrix.hpp"

namespace specshard {

struct SpectralDecomposition {
    Matrix u;                   // rows x N, orthonormal columns
    Matrix v;                   // cols x N, orthonormal columns
    std::vector<double> lambda; // N values, non-increasing, all positive

    std::size_t terms() const { return lambda.size(); }
};

namespace detail {

// One-sided Jacobi on the columns of b (m x k, any m); rotations are
// accumulated into v (k x k).  On return the columns of b are mutually
// orthogonal.
inline void jacobi_orthogonalize(Matrix& b, Matrix& v) {
    const std::size_t m = b.rows(), k = b.cols();
    constexpr double conv = 1e-15;
    constexpr int max_sweeps = 60;
    if (k < 2) return;

    double worst = 0.0;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        worst = 0.0;
        for (std::size_t i = 0; i + 1 < k; ++i) {
            for (std::size_t j = i + 1; j < k; ++j) {
                double aii = 0.0, aij = 0.0, ajj = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    const double x = b(r, i), y = b(r, j);
                    aii += x * x;
                    aij += x * y;
                    ajj += y * y;
                }
                if (aii == 0.0 || ajj == 0.0) continue;
                const double bound = conv * std::sqrt(aii * ajj);
                worst = std::max(worst, std::abs(aij) / std::sqrt(aii * ajj));
                if (std::abs(aij) <= bound) continue;

                const double zeta = (ajj - aii) / (2.0 * aij);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double x = b(r, i), y = b(r, j);
                    b(r, i) = c * x - s * y;
                    b(r, j) = s * x + c * y;
                }
                for (std::size_t r = 0; r < k; ++r) {
                    const double x = v(r, i), y = v(r, j);
                    v(r, i) = c * x - s * y;
                    v(r, j) = s * x + c * y;
                }
                rotated = true;
            }
        }
        if (!rotated) return;
    }
    throw NumericalError("jacobi_orthogonalize: no convergence after 60 sweeps, worst relative off-diagonal " +
                         std::to_string(worst));
}

} // namespace detail

// Relative truncation: terms with lambda_i <= tol * lambda_max are dropped.
inline SpectralDecomposition decompose(const Matrix& w, double tol = 1e-12) {
    if (w.rows() == 0 || w.cols() == 0) throw ValidationError("decompose: empty matrix");
    if (!w.all_finite()) throw ValidationError("decompose: matrix has non-finite entries");
    if (tol < 0.0 || tol >= 1.0) throw ValidationError("decompose: tol must lie in [0, 1)");

    const bool flipped = w.rows() < w.cols();
    Matrix b = flipped ? transpose(w) : w;
    const std::size_t k = b.cols();
    Matrix rot = Matrix::identity(k);
    detail::jacobi_orthogonalize(b, rot);

    std::vector<double> norms(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < b.rows(); ++r) s += b(r, j) * b(r, j);
        norms[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return norms[a] > norms[c]; });

    const double lambda_max = norms[order[0]];
    if (lambda_max == 0.0) throw ValidationError("decompose: matrix has rank zero");
    std::size_t keep = 0;
    while (keep < k && norms[order[keep]] > tol * lambda_max) ++keep;

    SpectralDecomposition d;
    d.lambda.resize(keep);
    Matrix left(b.rows(), keep), right(k, keep);
    for (std::size_t t = 0; t < keep; ++t) {
        const std::size_t j = order[t];
        d.lambda[t] = norms[j];
        for (std::size_t r = 0; r < b.rows(); ++r) left(r, t) = b(r, j) / norms[j];
        for (std::size_t r = 0; r < k; ++r) right(r, t) = rot(r, j);
    }

    d.u = flipped ? std::move(right) : std::move(left);
    d.v = flipped ? std::move(left) : std::move(right);

    // sign convention: first nonzero entry of each left vector is non-negative
    for (std::size_t t = 0; t < keep; ++t) {
        for (std::size_t r = 0; r < d.u.rows(); ++r) {
            const double x = d.u(r, t);
            if (x == 0.0) continue;
            if (x < 0.0) {
                for (std::size_t rr = 0; rr < d.u.rows(); ++rr) d.u(rr, t) = -d.u(rr, t);
                for (std::size_t rr = 0; rr < d.v.rows(); ++rr) d.v(rr, t) = -d.v(rr, t);
            }
            break;
        }
    }
    return d;
}

// sum of lambda_i * u_i v_i^T
inline Matrix reconstruct(const SpectralDecomposition& d) {
    Matrix w(d.u.rows(), d.v.rows());
    for (std::size_t t = 0; t < d.terms(); ++t)
        for (std::size_t i = 0; i < d.u.rows(); ++i) {
            const double s = d.lambda[t] * d.u(i, t);
            for (std::size_t j = 0; j < d.v.rows(); ++j) w(i, j) += s * d.v(j, t);
        }
    return w;
}

} // namespace specshard
