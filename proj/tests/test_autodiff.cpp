#include <gtest/gtest.h>

#include <cmath>

#include "op_cases.hpp"
#include "voxgan/ops.hpp"

using namespace voxgan;
using voxgan::testing::gradcheck;
using voxgan::testing::random_tensor;

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferencesOnFiveRandomShapes) {
    const auto kinds = voxgan::testing::all_op_kinds();
    const auto& kind = kinds.at(GetParam());
    const double worst = voxgan::testing::worst_gradcheck(kind, 5, 2024);
    EXPECT_LT(worst, 1e-4) << kind.name;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, OpGradient,
                         ::testing::Range<std::size_t>(0, voxgan::testing::all_op_kinds().size()),
                         [](const auto& info) { return voxgan::testing::all_op_kinds()[info.param].name; });

TEST(Ops, Conv2dIdentityKernel) {
    Tape t;
    const Tensor x = Tensor::ones({1, 1, 4, 4});
    const Tensor w = Tensor::ones({1, 1, 1, 1});
    const Tensor y = op::conv2d(t, x, w);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
    for (double v : y.data()) EXPECT_EQ(v, 1.0);
}

TEST(Ops, ConvTranspose2dDoublesExtent) {
    Tape t;
    const Tensor y = op::conv_transpose2d(t, Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 2, 2}), nullptr, {2, 0});
    EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
}

TEST(Ops, ConvOutputArithmetic) {
    Tape t;
    // floor((9 + 2 - 4) / 2) + 1 = 4 ; transposed (4 - 1) * 2 - 2 + 4 = 8
    EXPECT_EQ(op::conv3d(t, Tensor::zeros({1, 1, 9, 9, 9}), Tensor::zeros({2, 1, 4, 4, 4}), nullptr, {2, 1}).shape(),
              (Shape{1, 2, 4, 4, 4}));
    EXPECT_EQ(op::conv_transpose1d(t, Tensor::zeros({1, 3, 4}), Tensor::zeros({3, 5, 4}), nullptr, {2, 1}).shape(),
              (Shape{1, 5, 8}));
}

TEST(Ops, ConcatLatentsOnChannelAxis) {
    Tape t;
    const Tensor z = op::concat(t, {Tensor::zeros({1, 50}), Tensor::ones({1, 50})}, 1);
    EXPECT_EQ(z.shape(), (Shape{1, 100}));
    EXPECT_EQ(z[49], 0.0);
    EXPECT_EQ(z[50], 1.0);
}

TEST(Ops, ShapeMismatchReportsBothExtents) {
    Tape t;
    try {
        op::add(t, Tensor::zeros({2, 3}), Tensor::zeros({4}));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
    }
    EXPECT_THROW(op::conv2d(t, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3})), ShapeError);
    EXPECT_THROW(op::matmul(t, Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Ops, UnknownKindIsRejected) {
    Tape t;
    const std::vector<Tensor> in{Tensor::zeros({2})};
    EXPECT_THROW(op::forward_op(t, "softplus", in), std::invalid_argument);
    EXPECT_EQ(op::forward_op(t, "relu", in).shape(), (Shape{2}));
}

TEST(Backward, SquareAtThree) {
    Tape t;
    const Tensor x = t.watch(Tensor::scalar(3.0));
    const Gradients g = t.backward(op::mul(t, x, x));
    EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(Backward, MeanOfRelu) {
    Tape t;
    const Tensor x = t.watch(Tensor({2}, {-1.0, 2.0}));
    const Gradients g = t.backward(op::mean(t, op::relu(t, x)));
    EXPECT_EQ(g.of(x)[0], 0.0);
    EXPECT_EQ(g.of(x)[1], 0.5);
}

TEST(Backward, FanOutAccumulates) {
    Tape t;
    const Tensor x = t.watch(Tensor({3}, {1.0, 2.0, 3.0}));
    const Tensor y = op::sum(t, op::add(t, op::scale(t, x, 2.0), op::mul(t, x, x)));
    const Tensor g = t.backward(y).of(x);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 + 2.0 * x[i]);
}

TEST(Backward, RootMustBeScalar) {
    Tape t;
    const Tensor x = t.watch(Tensor::ones({2}));
    EXPECT_THROW(t.backward(op::scale(t, x, 2.0)), AutodiffError);
}

TEST(Backward, TapeIsConsumedOnce) {
    Tape t;
    const Tensor x = t.watch(Tensor::scalar(1.0));
    const Tensor y = op::mul(t, x, x);
    t.backward(y);
    EXPECT_THROW(t.backward(y), AutodiffError);
    EXPECT_THROW(t.watch(Tensor::scalar(2.0)), AutodiffError);
}

TEST(Backward, UnwatchedInputsAreNotRecorded) {
    Tape t;
    const Tensor y = op::tanh(t, op::add(t, Tensor::ones({3}), Tensor::ones({3})));
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(t.size(), 0u);
}

TEST(Backward, UnreachedLeafHasZeroGradient) {
    Tape t;
    const Tensor x = t.watch(Tensor::ones({2}));
    const Tensor z = t.watch(Tensor::ones({3}));
    const Gradients g = t.backward(op::sum(t, x));
    EXPECT_FALSE(g.has(z));
    EXPECT_EQ(g.of(z).shape(), (Shape{3}));
    EXPECT_EQ(g.of(z)[2], 0.0);
}

TEST(Backward, RandomConv3dCompositeMatchesFiniteDifferences) {
    Prng p(99);
    const Tensor x = random_tensor(p, {2, 2, 4, 5, 4});
    const Tensor w1 = random_tensor(p, {3, 2, 3, 3, 3});
    const Tensor b1 = random_tensor(p, {3});
    const Tensor w2 = random_tensor(p, {3, 2, 2, 2, 2});
    const auto f = [](Tape& t, const std::vector<Tensor>& in) {
        Tensor h = op::conv3d(t, in[0], in[1], &in[2], {1, 1});
        h = op::instance_norm(t, h, 3);
        h = op::tanh(t, h);
        h = op::conv_transpose3d(t, h, in[3], nullptr, {2, 0});
        return op::global_avg_pool(t, op::sigmoid(t, h));
    };
    EXPECT_LT(gradcheck(f, {x, w1, b1, w2}).max_rel_err, 1e-4);
}

TEST(Broadcast, AgreesWithExplicitTiling) {
    Prng p(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t a = 1 + p.below(3), b = 1 + p.below(4), c = 1 + p.below(4);
        const Tensor big = random_tensor(p, {a, b, c});
        const Tensor small = random_tensor(p, {b, c});
        std::vector<double> tiled;
        for (std::size_t i = 0; i < a; ++i) tiled.insert(tiled.end(), small.data().begin(), small.data().end());
        const Tensor tile({a, b, c}, tiled);
        Tape t;
        const Tensor s1 = op::add(t, big, small), s2 = op::add(t, big, tile);
        const Tensor m1 = op::mul(t, big, small), m2 = op::mul(t, big, tile);
        for (std::size_t i = 0; i < s1.numel(); ++i) {
            EXPECT_EQ(s1[i], s2[i]);
            EXPECT_EQ(m1[i], m2[i]);
        }
    }
}

TEST(Concat, BackwardSplitsUpstreamExactly) {
    Prng p(8);
    const Tensor a0 = random_tensor(p, {2, 3}), b0 = random_tensor(p, {2, 4}), r = random_tensor(p, {2, 7});
    Tape t;
    const Tensor a = t.watch(a0), b = t.watch(b0);
    const Gradients g = t.backward(op::sum(t, op::mul(t, op::concat(t, {a, b}, 1), r)));
    const Tensor ga = g.of(a), gb = g.of(b);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ga[i * 3 + j], r[i * 7 + j]);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(gb[i * 4 + j], r[i * 7 + 3 + j]);
    }
}

TEST(SampleNormal, SameSeedSameDraws) {
    Prng a(42), b(42);
    const Tensor x = sample_normal(a, {4}), y = sample_normal(b, {4});
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(SampleNormal, LawOfLargeNumbers) {
    Prng p(42);
    const Tensor x = sample_normal(p, {100000});
    double m = 0.0, v = 0.0;
    for (double d : x.data()) m += d;
    m /= 1e5;
    for (double d : x.data()) v += (d - m) * (d - m);
    v /= 1e5;
    EXPECT_NEAR(m, 0.0, 0.02);
    EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(SampleNormal, RankZeroIsOneScalar) {
    Prng p(1);
    const Tensor s = sample_normal(p, {});
    EXPECT_EQ(s.rank(), 0u);
    EXPECT_EQ(s.numel(), 1u);
    EXPECT_TRUE(std::isfinite(s.item()));
}

TEST(Prng, KnownXoshiroStream) {
    // Reference: splitmix64 seeding of xoshiro256** with seed 0, first output.
    Prng p(0);
    std::uint64_t sm = 0;
    std::array<std::uint64_t, 4> s{};
    for (auto& w : s) w = splitmix64(sm);
    const std::uint64_t expect = ((s[1] * 5) << 7 | (s[1] * 5) >> 57) * 9;
    EXPECT_EQ(p.next(), expect);
}

TEST(Tensor, CopiesShareUntilWritten) {
    Tensor a = Tensor::ones({3});
    Tensor b = a;
    EXPECT_EQ(a.storage(), b.storage());
    b.mutable_data()[0] = 5.0;
    EXPECT_NE(a.storage(), b.storage());
    EXPECT_EQ(a[0], 1.0);
}

TEST(Tensor, RejectsInconsistentShape) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({1, 1, 1, 1, 1, 1}), ShapeError);
}
