#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/tensor.hpp"

namespace voxgan {

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), a(std::move(values)) {
        if (a.size() != r * c) throw std::invalid_argument("Matrix: value count does not match extents");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    double frobenius() const {
        double s = 0.0;
        for (double v : a) s += v * v;
        return std::sqrt(s);
    }
};

inline Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw std::invalid_argument("matmul: inner extents differ");
    Matrix r(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double v = x(i, k);
            for (std::size_t j = 0; j < y.cols; ++j) r(i, j) += v * y(k, j);
        }
    return r;
}

/// Thin SVD: a = u diag(sigma) v^T with u (m x k), v (n x k), k = min(m, n).
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;  // descending, non-negative
    Matrix v;

    Matrix reconstruct() const {
        Matrix us = u;
        for (std::size_t i = 0; i < us.rows; ++i)
            for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= sigma[j];
        return matmul(us, v.transposed());
    }
};

namespace detail {

/// Fills columns of `q` whose norm is zero with unit vectors orthogonal to the others.
inline void complete_orthonormal(Matrix& q, const std::vector<bool>& valid) {
    const std::size_t m = q.rows, k = q.cols;
    std::size_t next_basis = 0;
    for (std::size_t j = 0; j < k; ++j) {
        if (valid[j]) continue;
        for (; next_basis < m; ++next_basis) {
            std::vector<double> c(m, 0.0);
            c[next_basis] = 1.0;
            for (int pass = 0; pass < 2; ++pass)
                for (std::size_t p = 0; p < k; ++p) {
                    if (p == j || (!valid[p] && p > j)) continue;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) dot += q(i, p) * c[i];
                    for (std::size_t i = 0; i < m; ++i) c[i] -= dot * q(i, p);
                }
            double nrm = 0.0;
            for (double v : c) nrm += v * v;
            nrm = std::sqrt(nrm);
            if (nrm > 1e-8) {
                for (std::size_t i = 0; i < m; ++i) q(i, j) = c[i] / nrm;
                ++next_basis;
                break;
            }
        }
    }
}

/// One-sided (Hestenes) Jacobi on a tall matrix (rows >= cols).
inline SvdResult jacobi_tall(const Matrix& a) {
    const std::size_t m = a.rows, n = a.cols;
    // Column-major working copies keep the rotations contiguous.
    std::vector<double> w(m * n), vt(n * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) w[j * m + i] = a(i, j);
    for (std::size_t j = 0; j < n; ++j) vt[j * n + j] = 1.0;

    constexpr double tol = 1e-12;
    constexpr int max_sweeps = 80;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double* cp = &w[p * m];
                double* cq = &w[q * m];
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += cp[i] * cp[i];
                    beta += cq[i] * cq[i];
                    gamma += cp[i] * cq[i];
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                const double c_off = std::abs(gamma) / std::sqrt(alpha * beta);
                off = std::max(off, c_off);
                if (c_off <= tol) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = cp[i], y = cq[i];
                    cp[i] = c * x - s * y;
                    cq[i] = s * x + c * y;
                }
                double* vp = &vt[p * n];
                double* vq = &vt[q * n];
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
            }
        if (off <= tol) break;
    }

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += w[j * m + i] * w[j * m + i];
        norms[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult r{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
    const double smax = norms.empty() ? 0.0 : norms[order[0]];
    std::vector<bool> valid(n, true);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        r.sigma[k] = norms[j];
        for (std::size_t i = 0; i < n; ++i) r.v(i, k) = vt[j * n + i];
        if (norms[j] > 1e-300 && norms[j] > smax * 1e-15) {
            for (std::size_t i = 0; i < m; ++i) r.u(i, k) = w[j * m + i] / norms[j];
        } else {
            r.sigma[k] = 0.0;
            valid[k] = false;
        }
    }
    complete_orthonormal(r.u, valid);
    return r;
}

inline Matrix matrixize(const Tensor& weight, const char* op) {
    if (weight.rank() < 2)
        throw std::invalid_argument(std::string(op) + ": weight must have rank >= 2, got shape " +
                                    shape_str(weight.shape()));
    const std::size_t rows = weight.dim(0);
    return Matrix(rows, weight.numel() / rows, std::vector<double>(weight.data().begin(), weight.data().end()));
}

}  // namespace detail

/// Singular value decomposition by one-sided Jacobi rotations.
inline SvdResult svd(const Matrix& a) {
    if (a.rows == 0 || a.cols == 0) throw std::invalid_argument("svd: empty matrix");
    for (double v : a.a)
        if (!std::isfinite(v)) throw std::invalid_argument("svd: non-finite input");
    if (a.rows >= a.cols) return detail::jacobi_tall(a);
    SvdResult t = detail::jacobi_tall(a.transposed());
    return {std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

/// Cap on singular values and how often (in iterations) it is enforced.
struct ClipPolicy {
    double max_singular_value = 1.0;
    int period_iterations = 5;

    void validate() const {
        if (!(max_singular_value > 0.0)) throw std::invalid_argument("ClipPolicy: max_singular_value must be > 0");
        if (period_iterations < 1) throw std::invalid_argument("ClipPolicy: period_iterations must be >= 1");
    }
};

/// Largest singular value of the weight viewed as (dim0) x (remaining dims).
inline double spectral_norm(const Tensor& weight) {
    return svd(detail::matrixize(weight, "spectral_norm")).sigma.front();
}

/// Clamps every singular value of the (dim0) x (rest) matrixization to the cap.
/// Components already below the cap are left untouched: the excess is subtracted.
inline Tensor clip_singular_values(const Tensor& weight, const ClipPolicy& policy = {}) {
    policy.validate();
    const Matrix m = detail::matrixize(weight, "clip_singular_values");
    const SvdResult s = svd(m);
    const double cap = policy.max_singular_value;
    if (s.sigma.front() <= cap) return weight.detached();

    std::vector<double> out(weight.data().begin(), weight.data().end());
    const std::size_t k = s.sigma.size();
    for (std::size_t c = 0; c < k && s.sigma[c] > cap; ++c) {
        const double excess = s.sigma[c] - cap;
        for (std::size_t i = 0; i < m.rows; ++i) {
            const double ui = s.u(i, c) * excess;
            for (std::size_t j = 0; j < m.cols; ++j) out[i * m.cols + j] -= ui * s.v(j, c);
        }
    }
    return Tensor(weight.shape(), std::move(out));
}

}  // namespace voxgan
