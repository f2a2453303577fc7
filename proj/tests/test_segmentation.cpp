#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "voxgan/segmentation.hpp"

using namespace voxgan;
using namespace voxgan::seg;
using voxgan::testing::random_tensor;

namespace {

Volume mask_with(const VolumeShape& s, const std::vector<std::size_t>& on) {
    Volume m(s);
    for (auto i : on) m.data[i] = 1.0;
    return m;
}

SegConfig tiny_seg() {
    SegConfig c;
    c.depth_levels = 1;
    c.base_channels = 2;
    c.se_reduction = 2;
    return c;
}

ModelParams se_params(std::size_t c, std::uint64_t seed) {
    ModelParams p;
    Prng prng(seed);
    p.add("t.fc1.w", random_tensor(prng, {2, c}));
    p.add("t.fc1.b", random_tensor(prng, {2}));
    p.add("t.fc2.w", random_tensor(prng, {2 * c, 2}));
    p.add("t.fc2.b", random_tensor(prng, {2 * c}));
    return p;
}

}  // namespace

TEST(Dice, UnitValues) {
    const VolumeShape s{2, 4, 4, 1};
    std::vector<std::size_t> eight{0, 1, 2, 3, 4, 5, 6, 7}, sixteen = eight;
    for (std::size_t i = 8; i < 16; ++i) sixteen.push_back(i);
    const Volume a = mask_with(s, eight), b = mask_with(s, sixteen), c = mask_with(s, {20, 21});
    EXPECT_EQ(dice(a, a), 1.0);
    EXPECT_EQ(dice(a, c), 0.0);
    EXPECT_NEAR(dice(a, b), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(dice(Volume(s), Volume(s)), 1.0);
    EXPECT_EQ(dice(Volume(s), a), 0.0);
}

TEST(Dice, SymmetricAndBounded) {
    Prng p(1);
    const VolumeShape s{2, 4, 4, 1};
    for (int trial = 0; trial < 50; ++trial) {
        Volume a(s), b(s);
        for (auto& v : a.data) v = p.uniform() < 0.3 ? 1.0 : 0.0;
        for (auto& v : b.data) v = p.uniform() < 0.3 ? 1.0 : 0.0;
        const double d = dice(a, b);
        EXPECT_EQ(d, dice(b, a));
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
}

TEST(Dice, RejectsMismatch) {
    EXPECT_THROW(dice(Volume({2, 4, 4, 1}), Volume({2, 4, 8, 1})), ShapeError);
    Volume soft({2, 4, 4, 1}, {}, 0.5);
    EXPECT_THROW(dice(soft, soft), std::invalid_argument);
}

TEST(SoftDice, ZeroAtPerfectBinaryPrediction) {
    Tape t;
    const Tensor g({1, 1, 1, 2, 2}, {1.0, 0.0, 1.0, 1.0});
    EXPECT_EQ(soft_dice_loss(t, g, g).item(), 0.0);
    const Tensor p({1, 1, 1, 2, 2}, {0.0, 1.0, 0.0, 0.0});
    const double l = soft_dice_loss(t, p, g).item();
    EXPECT_NEAR(l, 1.0 - 1.0 / 5.0, 1e-15);
    EXPECT_LT(l, 1.0);
}

TEST(SoftDice, GradientMatchesFiniteDifferences) {
    Prng p(2);
    const Tensor g({1, 1, 2, 2, 2}, {1, 0, 1, 1, 0, 0, 1, 0});
    const auto f = [&](Tape& t, const std::vector<Tensor>& x) { return soft_dice_loss(t, op::sigmoid(t, x[0]), g); };
    EXPECT_LT(voxgan::testing::gradcheck(f, {random_tensor(p, g.shape())}).max_rel_err, 1e-4);
}

TEST(SeNorm, ConstantChannelNormalizesToZero) {
    const ModelParams p = se_params(2, 3);
    Tape t;
    const Tensor x = Tensor::full({1, 2, 2, 2, 2}, 3.0);
    const Tensor y = se_norm(t, x, p, "t");
    // Normalized part is zero, leaving only the shift beta per channel.
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 1; i < 8; ++i) EXPECT_EQ(y[c * 8 + i], y[c * 8]);
}

TEST(SeNorm, MomentsEqualShiftAndScale) {
    const std::size_t c = 3;
    const ModelParams p = se_params(c, 4);
    Prng prng(5);
    const Tensor x = random_tensor(prng, {2, c, 3, 4, 4}, -200.0, 200.0);
    Tape t;
    const Tensor y = se_norm(t, x, p, "t", 0.7);

    // Independent recomputation of gamma, beta from the SE block.
    for (std::size_t n = 0; n < 2; ++n) {
        std::vector<double> sq(c, 0.0);
        const std::size_t m = 48;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < m; ++i) sq[ch] += x[(n * c + ch) * m + i] / m;
        std::vector<double> h(2, 0.0), ab(2 * c, 0.0);
        for (std::size_t j = 0; j < 2; ++j) {
            h[j] = p.at("t.fc1.b")[j];
            for (std::size_t ch = 0; ch < c; ++ch) h[j] += p.at("t.fc1.w")[j * c + ch] * sq[ch];
            h[j] = std::max(0.0, h[j]);
        }
        for (std::size_t k = 0; k < 2 * c; ++k) {
            ab[k] = p.at("t.fc2.b")[k];
            for (std::size_t j = 0; j < 2; ++j) ab[k] += p.at("t.fc2.w")[k * 2 + j] * h[j];
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double gamma = 1.0 / (1.0 + std::exp(-ab[ch])), beta = 0.7 * std::tanh(ab[c + ch]);
            double mean = 0.0, var = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += y[(n * c + ch) * m + i] / m;
            for (std::size_t i = 0; i < m; ++i) var += std::pow(y[(n * c + ch) * m + i] - mean, 2) / m;
            EXPECT_NEAR(mean, beta, 1e-6);
            EXPECT_NEAR(var, gamma * gamma, 1e-6);
        }
    }
}

TEST(SeNorm, GradientMatchesFiniteDifferences) {
    const std::size_t c = 2;
    const ModelParams p = se_params(c, 6);
    Prng prng(7);
    const std::vector<std::string> names{"t.fc1.w", "t.fc1.b", "t.fc2.w", "t.fc2.b"};
    std::vector<Tensor> in{random_tensor(prng, {2, c, 2, 3, 3})};
    for (const auto& n : names) in.push_back(p.at(n));
    const auto f = [&](Tape& t, const std::vector<Tensor>& x) {
        ModelParams q;
        for (std::size_t i = 0; i < names.size(); ++i) q.add(names[i], x[i + 1]);
        return se_norm(t, x[0], q, "t", 1.0);
    };
    EXPECT_LT(voxgan::testing::gradcheck(f, in).max_rel_err, 1e-4);
}

TEST(SeNorm, ChannelMismatch) {
    const ModelParams p = se_params(3, 1);
    Tape t;
    EXPECT_THROW(se_norm(t, Tensor::ones({1, 2, 2, 2, 2}), p, "t"), ShapeError);
}

TEST(Unet, ShapeRangeAndDeterminism) {
    SegConfig c;
    const ModelParams p = init_unet(c, 1);
    Prng prng(8);
    Volume pet({8, 16, 16, 1});
    for (auto& v : pet.data) v = prng.uniform(0.0, 5.0);
    const Volume prob = unet_probabilities(p, c, pet);
    EXPECT_EQ(prob.shape, pet.shape);
    for (double v : prob.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(unet_probabilities(p, c, pet).data, prob.data);
    const SegmentationResult r = segment(p, c, pet);
    for (std::size_t i = 0; i < r.binary.data.size(); ++i) EXPECT_EQ(r.binary.data[i], prob.data[i] >= 0.5 ? 1.0 : 0.0);
}

TEST(Unet, RejectsIndivisibleDims) {
    SegConfig c;
    const ModelParams p = init_unet(c, 1);
    EXPECT_THROW(unet_probabilities(p, c, Volume({6, 16, 16, 1})), std::invalid_argument);
}

TEST(Unet, GradientMatchesFiniteDifferencesOnTinyNet) {
    const SegConfig c = tiny_seg();
    const ModelParams p = init_unet(c, 2);
    Prng prng(9);
    const Tensor x = random_tensor(prng, {1, 1, 2, 2, 2}, 0.0, 1.0);
    const std::vector<std::string> names{"seg.stem.w", "seg.dec0.up.b", "seg.bottom.res.se1.fc2.w", "seg.head.w"};
    std::vector<Tensor> in;
    for (const auto& n : names) in.push_back(p.at(n));
    const auto f = [&](Tape& t, const std::vector<Tensor>& v) {
        ModelParams q = p;
        for (std::size_t i = 0; i < names.size(); ++i) q.set(names[i], v[i]);
        return unet_forward(t, q, c, x);
    };
    EXPECT_LT(voxgan::testing::gradcheck(f, in).max_rel_err, 1e-4);
}

TEST(SegConfig, Validation) {
    SegConfig c;
    EXPECT_EQ(c.epochs, 150u);
    EXPECT_EQ(c.batch_size, 2u);
    c.depth_levels = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.threshold = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Threshold, NoiselessPhantomScoresHigh) {
    phantom::PhantomSpec spec;
    spec.noise_sigma = 0.0;
    spec.blur_sigma = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Prng p(seed);
        spec.seed = seed;
        const Volume m = phantom::random_lesion_mask(p, spec.shape, {}, spec.head());
        const Volume v = phantom::render_phantom(spec, m);
        EXPECT_GE(dice(threshold_baseline(v, 0.5), m), 0.8);
    }
}

TEST(Threshold, EmptyAboveMaxAndMonotone) {
    Prng p(3);
    Volume v({4, 8, 8, 1});
    for (auto& x : v.data) x = p.uniform(0.0, 2.0);
    EXPECT_EQ(threshold_baseline(v, 1.01).count_nonzero(), 0u);
    std::size_t prev = v.data.size() + 1;
    for (double k = 0.05; k < 1.0; k += 0.05) {
        const std::size_t n = threshold_baseline(v, k).count_nonzero();
        EXPECT_LE(n, prev);
        prev = n;
    }
    EXPECT_THROW(threshold_baseline(v, 0.0), std::invalid_argument);
}

TEST(TrainSeg, DeterministicUnderSeed) {
    SegConfig c = tiny_seg();
    c.iterations = 3;
    const auto d = phantom::build_dataset(2, {phantom::center_profiles()[0]}, 1, phantom::SplitRule{});
    const SegTrainResult a = train_seg(d, c), b = train_seg(d, c);
    EXPECT_EQ(a.log.losses, b.log.losses);
    EXPECT_EQ(a.log.epoch_dice, b.log.epoch_dice);
    EXPECT_TRUE(a.params == b.params);
    EXPECT_EQ(a.log.losses.size(), 3u);
    EXPECT_EQ(a.log.epoch_dice.size(), 3u);  // one sample per batch slot: batch 2 of 2 samples
    for (double l : a.log.losses) {
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, 1.0);
    }
}

TEST(TrainSeg, RejectsEmpty) {
    EXPECT_THROW(train_seg(std::vector<SegSample>{}, tiny_seg()), std::invalid_argument);
}
