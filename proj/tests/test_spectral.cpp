#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "voxgan/spectral.hpp"

using namespace voxgan;
using voxgan::testing::random_tensor;

namespace {

Matrix random_matrix(Prng& p, std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = p.uniform(-1.0, 1.0);
    return Matrix(r, c, std::move(v));
}

// Power iteration on A^T A: test-only oracle for the largest singular value.
double power_sigma(const Matrix& a, int iters = 5000) {
    std::vector<double> v(a.cols, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        std::vector<double> av(a.rows, 0.0), w(a.cols, 0.0);
        for (std::size_t i = 0; i < a.rows; ++i)
            for (std::size_t j = 0; j < a.cols; ++j) av[i] += a(i, j) * v[j];
        for (std::size_t i = 0; i < a.rows; ++i)
            for (std::size_t j = 0; j < a.cols; ++j) w[j] += a(i, j) * av[i];
        double n = 0.0;
        for (double x : w) n += x * x;
        n = std::sqrt(n);
        if (n == 0.0) return 0.0;
        lambda = n;
        for (std::size_t j = 0; j < a.cols; ++j) v[j] = w[j] / n;
    }
    return std::sqrt(lambda);
}

double orthogonality_error(const Matrix& q) {
    const Matrix g = matmul(q.transposed(), q);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    return worst;
}

}  // namespace

TEST(Svd, IdentityHasUnitSpectrum) {
    const SvdResult s = svd(Matrix::identity(3));
    ASSERT_EQ(s.sigma.size(), 3u);
    for (double x : s.sigma) EXPECT_NEAR(x, 1.0, 1e-14);
}

TEST(Svd, DiagonalMatrix) {
    const SvdResult s = svd(Matrix(2, 2, {2.0, 0.0, 0.0, 0.5}));
    EXPECT_DOUBLE_EQ(s.sigma[0], 2.0);
    EXPECT_DOUBLE_EQ(s.sigma[1], 0.5);
}

TEST(Svd, ReconstructsRandomMatricesOfManyShapes) {
    Prng p(3);
    const std::vector<std::pair<std::size_t, std::size_t>> shapes{{8, 8}, {16, 9}, {9, 16}, {1, 5}, {5, 1}, {32, 32}, {3, 64}};
    for (auto [r, c] : shapes) {
        const Matrix a = random_matrix(p, r, c);
        const SvdResult s = svd(a);
        const Matrix rec = s.reconstruct();
        double diff = 0.0;
        for (std::size_t i = 0; i < a.a.size(); ++i) diff += (rec.a[i] - a.a[i]) * (rec.a[i] - a.a[i]);
        EXPECT_LT(std::sqrt(diff) / std::max(1.0, a.frobenius()), 1e-10) << r << "x" << c;
        EXPECT_LT(orthogonality_error(s.u), 1e-10);
        EXPECT_LT(orthogonality_error(s.v), 1e-10);
        for (std::size_t k = 0; k < s.sigma.size(); ++k) {
            EXPECT_GE(s.sigma[k], 0.0);
            if (k) {
                EXPECT_LE(s.sigma[k], s.sigma[k - 1]);
            }
        }
    }
}

TEST(Svd, RankDeficientStillOrthonormal) {
    // Two identical rows: rank 1.
    const SvdResult s = svd(Matrix(3, 2, {1.0, 2.0, 1.0, 2.0, 0.0, 0.0}));
    EXPECT_NEAR(s.sigma[1], 0.0, 1e-12);
    EXPECT_LT(orthogonality_error(s.u), 1e-10);
}

TEST(Svd, RejectsNonFinite) {
    EXPECT_THROW(svd(Matrix(1, 2, {1.0, std::nan("")})), std::invalid_argument);
}

TEST(SpectralNorm, KnownValues) {
    const double c = std::cos(0.3), s = std::sin(0.3);
    EXPECT_NEAR(spectral_norm(Tensor({2, 2}, {c, -s, s, c})), 1.0, 1e-14);
    EXPECT_NEAR(spectral_norm(Tensor({2, 2}, {3.0, 0.0, 0.0, 1.0})), 3.0, 1e-14);
    EXPECT_THROW(spectral_norm(Tensor::ones({4})), std::invalid_argument);
}

TEST(SpectralNorm, MatchesPowerIteration) {
    Prng p(17);
    for (int trial = 0; trial < 3; ++trial) {
        const Matrix a = random_matrix(p, 32, 32);
        EXPECT_NEAR(spectral_norm(Tensor({32, 32}, a.a)), power_sigma(a), 1e-8);
    }
}

TEST(Clip, DiagonalExample) {
    const Tensor w = clip_singular_values(Tensor({2, 2}, {2.0, 0.0, 0.0, 0.5}));
    EXPECT_EQ(w[0], 1.0);
    EXPECT_EQ(w[1], 0.0);
    EXPECT_EQ(w[2], 0.0);
    EXPECT_EQ(w[3], 0.5);
}

TEST(Clip, NoOpWhenAlreadyInsideBall) {
    Prng p(4);
    const Tensor a = random_tensor(p, {6, 5});
    const Tensor small = Tensor(a.shape(), [&] {
        std::vector<double> v(a.data().begin(), a.data().end());
        const double s = spectral_norm(a);
        for (double& x : v) x *= 0.9 / s;
        return v;
    }());
    const Tensor c = clip_singular_values(small);
    for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(c[i], small[i], 1e-9);
}

TEST(Clip, ConvKernelProjection) {
    Prng p(21);
    for (int trial = 0; trial < 10; ++trial) {
        // 16 output channels, 1 input channel, 3x3 kernel: a 16x9 matrix after flattening.
        Tensor a = random_tensor(p, {16, 1, 3, 3}, -1.5, 1.5);
        const Tensor c = clip_singular_values(a);
        EXPECT_EQ(c.shape(), a.shape());
        const Matrix cm(16, 9, {c.data().begin(), c.data().end()});
        EXPECT_LE(power_sigma(cm), 1.0 + 1e-9);
        // Minimal distance to the spectral ball: sum over sigma > 1 of (sigma - 1)^2.
        const SvdResult s = svd(Matrix(16, 9, {a.data().begin(), a.data().end()}));
        double expect = 0.0, got = 0.0;
        for (double x : s.sigma) expect += std::max(0.0, x - 1.0) * std::max(0.0, x - 1.0);
        for (std::size_t i = 0; i < a.numel(); ++i) got += (c[i] - a[i]) * (c[i] - a[i]);
        EXPECT_NEAR(got, expect, 1e-9);
        // Idempotent.
        const Tensor cc = clip_singular_values(c);
        for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(cc[i], c[i], 1e-9);
    }
}

TEST(Clip, RejectsVectorsAndBadPolicy) {
    EXPECT_THROW(clip_singular_values(Tensor::ones({3})), std::invalid_argument);
    EXPECT_THROW(clip_singular_values(Tensor::ones({2, 2}), ClipPolicy{0.0, 5}), std::invalid_argument);
    EXPECT_THROW((ClipPolicy{1.0, 0}.validate()), std::invalid_argument);
}
