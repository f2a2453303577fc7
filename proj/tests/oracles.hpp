#pragma once

// Independent reference computations shared by the unit tests and the acceptance suite.
// None of them call the library routine they are used to check.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "voxgan/radiomics.hpp"
#include "voxgan/tensor.hpp"

namespace voxgan::testing {

using radiomics::GlcmFeatures;
using radiomics::StatsConfig;

// Naive oracle: enumerate every ordered pair of ROI voxels and count those whose displacement
// is +-distance * offset for some configured offset.
inline std::vector<double> naive_glcm(const Volume& v, const Volume& m, const StatsConfig& cfg) {
    std::vector<std::array<long, 3>> pos;
    std::vector<double> val;
    for (std::size_t z = 0; z < v.shape.depth; ++z)
        for (std::size_t y = 0; y < v.shape.height; ++y)
            for (std::size_t x = 0; x < v.shape.width; ++x)
                if (m.at(x, y, z) != 0.0) {
                    pos.push_back({static_cast<long>(x), static_cast<long>(y), static_cast<long>(z)});
                    val.push_back(v.at(x, y, z));
                }
    double lo = val[0], hi = val[0];
    for (double x : val) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const std::size_t ng = cfg.glcm_levels;
    auto bin = [&](double x) -> std::size_t {
        if (hi == lo) return 0;
        const auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(ng));
        return b >= ng ? ng - 1 : b;
    };
    std::vector<double> c(ng * ng, 0.0);
    double total = 0.0;
    for (std::size_t a = 0; a < pos.size(); ++a)
        for (std::size_t b = 0; b < pos.size(); ++b) {
            const long dx = pos[b][0] - pos[a][0], dy = pos[b][1] - pos[a][1], dz = pos[b][2] - pos[a][2];
            for (const auto& o : cfg.offsets)
                for (int sgn : {1, -1}) {
                    const long k = sgn * cfg.glcm_distance;
                    if (dx == k * o[0] && dy == k * o[1] && dz == k * o[2]) {
                        c[bin(val[a]) * ng + bin(val[b])] += 1.0;
                        total += 1.0;
                    }
                }
        }
    if (total == 0.0 || hi == lo) {
        std::vector<double> single(ng * ng, 0.0);
        single[0] = 1.0;
        return single;
    }
    for (double& x : c) x /= total;
    return c;
}

inline GlcmFeatures naive_features(const std::vector<double>& p, std::size_t ng) {
    GlcmFeatures f;
    for (std::size_t i = 0; i < ng; ++i)
        for (std::size_t j = 0; j < ng; ++j) {
            const double q = p[i * ng + j];
            if (q > 0) f.entropy += -q * std::log(q) / std::log(2.0);
            f.energy += q * q;
            f.homogeneity += q / (1.0 + (i > j ? i - j : j - i));
        }
    return f;
}

// Oracle: two-sided t tail from Simpson integration of the Student density on [0, |t|].
inline double t_tail_by_quadrature(double t, double df) {
    const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
    auto f = [&](double u) { return c * std::pow(1.0 + u * u / df, -(df + 1) / 2); };
    const int n = 20000;
    const double a = 0.0, b = std::abs(t), h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return 1.0 - 2.0 * s * h / 3.0;
}

/// True when every singular value of the (dim0) x (rest) view of `w` is at most `bound`:
/// b^2 I - G must admit a Cholesky factorization, with G the smaller Gram matrix.
inline bool spectral_bound_holds(const Tensor& w, double bound) {
    const std::size_t rows = w.dim(0), cols = w.numel() / rows;
    const bool by_rows = rows <= cols;
    const std::size_t n = by_rows ? rows : cols, m = by_rows ? cols : rows;
    auto at = [&](std::size_t i, std::size_t k) { return by_rows ? w[i * cols + k] : w[k * cols + i]; };
    std::vector<double> g(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += at(i, k) * at(j, k);
            g[i * n + j] = (i == j ? bound * bound : 0.0) - s;
        }
    for (std::size_t j = 0; j < n; ++j) {
        double d = g[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= g[j * n + k] * g[j * n + k];
        if (!(d > 0.0)) return false;
        const double l = std::sqrt(d);
        g[j * n + j] = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = g[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= g[i * n + k] * g[j * n + k];
            g[i * n + j] = s / l;
        }
    }
    return true;
}

}  // namespace voxgan::testing
