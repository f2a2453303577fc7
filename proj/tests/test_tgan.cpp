#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "voxgan/tgan.hpp"

using namespace voxgan;
using namespace voxgan::tgan;

namespace {

GanConfig tiny(bool conditional = false) {
    GanConfig c;
    c.latent_z0 = 6;
    c.latent_z1 = 5;
    c.mask_code = 3;
    c.base_channels = 2;
    c.temporal_channels = 4;
    c.shape = {4, 8, 8, 1};
    c.conditional = conditional;
    return c;
}

Volume block_mask(const VolumeShape& s, std::size_t x0, std::size_t y0) {
    Volume m(s);
    for (std::size_t z = 0; z < s.depth; ++z)
        for (std::size_t y = y0; y < y0 + 3; ++y)
            for (std::size_t x = x0; x < x0 + 3; ++x) m.at(x, y, z) = 1.0;
    return m;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

TEST(GanConfig, ValidatesGeometry) {
    GanConfig c;
    EXPECT_NO_THROW(c.validate());
    c.shape.depth = 6;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.shape.height = 12;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.omega = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TemporalGenerator, OneLatentPerSlice) {
    GanConfig c;  // desk defaults: T = 8, K1 = 50
    const ModelParams p = init_params(c, 1);
    std::vector<double> z0(c.latent_z0, 0.3);
    const auto z1 = temporal_generate(p, c, z0);
    ASSERT_EQ(z1.size(), 8u);
    for (const auto& v : z1) EXPECT_EQ(v.size(), 50u);
    EXPECT_EQ(temporal_generate(p, c, z0), z1);
}

TEST(TemporalGenerator, EverySliceRespondsToZ0) {
    const GanConfig c = tiny();
    const ModelParams p = init_params(c, 2);
    Prng prng(9);
    std::vector<double> z0(c.latent_z0);
    for (double& v : z0) v = prng.normal();
    const auto base = temporal_generate(p, c, z0);
    std::vector<double> jac_norm(c.shape.depth, 0.0);
    for (std::size_t k = 0; k < z0.size(); ++k) {
        auto plus = z0, minus = z0;
        plus[k] += 1e-5;
        minus[k] -= 1e-5;
        const auto a = temporal_generate(p, c, plus), b = temporal_generate(p, c, minus);
        for (std::size_t t = 0; t < c.shape.depth; ++t) jac_norm[t] += l2(a[t], b[t]);
    }
    for (double j : jac_norm) EXPECT_GT(j, 0.0);
}

TEST(ImageGenerator, FrameShapeAndRange) {
    GanConfig c;
    c.base_channels = 4;
    const ModelParams p = init_params(c, 3);
    Prng prng(5);
    std::vector<double> z0(c.latent_z0), z1a(c.latent_z1), z1b(c.latent_z1);
    for (double& v : z0) v = prng.normal();
    for (double& v : z1a) v = prng.normal();
    for (double& v : z1b) v = prng.normal();
    const auto fa = image_generate(p, c, z0, z1a);
    ASSERT_EQ(fa.size(), 256u);
    for (double v : fa) {
        EXPECT_GT(v, -1.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_GT(l2(fa, image_generate(p, c, z0, z1b)), 0.0);
    const std::vector<double> za(c.latent_z0, 0.0), zb(c.latent_z1, 0.0);
    EXPECT_EQ(image_generate(p, c, za, zb), image_generate(p, c, za, zb));
}

TEST(Generator, DeskVolumeShape) {
    GanConfig c;
    c.base_channels = 4;
    const ModelParams p = init_params(c, 4);
    Prng prng(1);
    const Volume v = generate_volume(p, c, prng);
    EXPECT_EQ(v.shape, (VolumeShape{8, 16, 16, 1}));
}

TEST(Generator, PaperScaleVolumeShape) {
    GanConfig c;
    c.shape = {32, 64, 64, 1};
    c.base_channels = 1;
    c.temporal_channels = 8;
    c.latent_z0 = c.latent_z1 = 4;
    const ModelParams p = init_params(c, 4);
    Prng prng(1);
    EXPECT_EQ(generate_volume(p, c, prng).shape, (VolumeShape{32, 64, 64, 1}));
}

TEST(Generator, ConditionalMasksChangeOutput) {
    const GanConfig c = tiny(true);
    const ModelParams p = init_params(c, 5);
    const Volume m1 = block_mask(c.shape, 1, 1), m2 = block_mask(c.shape, 4, 4);
    Prng a(7), b(7);
    const Volume v1 = generate_volume(p, c, a, &m1), v2 = generate_volume(p, c, b, &m2);
    EXPECT_GT(l2(v1.data, v2.data), 0.0);
    Prng d(7);
    EXPECT_THROW(generate_volume(p, c, d), std::invalid_argument);
}

TEST(MaskEncoder, CodesAndZeroResponse) {
    const GanConfig c = tiny(true);
    const ModelParams p = init_params(c, 6);
    const std::vector<double> zero(64, 0.0);
    const auto z = encode_mask_slice(p, c, zero);
    EXPECT_EQ(z.size(), c.mask_code);
    EXPECT_EQ(z, encode_mask_slice(p, c, zero));
    std::vector<double> a(64, 0.0), b(64, 0.0);
    for (std::size_t y = 1; y < 4; ++y)
        for (std::size_t x = 1; x < 4; ++x) {
            a[y * 8 + x] = 1.0;
            b[(y + 3) * 8 + x + 3] = 1.0;
        }
    EXPECT_GT(l2(encode_mask_slice(p, c, a), encode_mask_slice(p, c, b)), 0.0);
    a[0] = 0.5;
    EXPECT_THROW(encode_mask_slice(p, c, a), std::invalid_argument);
}

TEST(Critic, OmegaWeightingIsExact) {
    for (double omega : {0.0, 0.01, 0.5, 1.0}) {
        GanConfig c = tiny(true);
        c.omega = omega;
        Prng prng(11);
        const Tensor img = voxgan::testing::random_tensor(prng, {2, 1, 4, 8, 8}, -3.0, 3.0);
        std::vector<double> mv(img.numel());
        for (double& v : mv) v = prng.uniform() < 0.3 ? 1.0 : 0.0;
        const Tensor mask(img.shape(), mv);
        Tape t;
        const Tensor in = critic_input(t, c, img, &mask);
        ASSERT_EQ(in.shape(), (Shape{2, 2, 4, 8, 8}));
        const std::size_t per = img.numel() / 2;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < per; ++i) {
                EXPECT_EQ(in[(2 * b) * per + i], (1.0 - omega) * img[b * per + i]);
                EXPECT_EQ(in[(2 * b + 1) * per + i], omega * mask[b * per + i]);
            }
        if (omega == 1.0) {
            for (std::size_t i = 0; i < per; ++i) EXPECT_EQ(in[i], 0.0);
        }
    }
}

TEST(Critic, ChannelArithmeticAtOneVoxel) {
    const GanConfig c = tiny(true);  // omega = 0.01
    const Tensor img = Tensor::full({1, 1, 4, 8, 8}, 2.0), mask = Tensor::ones({1, 1, 4, 8, 8});
    Tape t;
    const Tensor in = critic_input(t, c, img, &mask);
    EXPECT_DOUBLE_EQ(in[0], 1.98);
    EXPECT_DOUBLE_EQ(in[256], 0.01);
}

TEST(Critic, FullOmegaIgnoresImage) {
    GanConfig c = tiny(true);
    c.omega = 1.0;
    const ModelParams p = init_params(c, 8);
    const Volume m = block_mask(c.shape, 2, 2);
    Volume a(c.shape, {}, 0.4), b(c.shape, {}, -0.7);
    EXPECT_EQ(critic_score(p, c, a, &m), critic_score(p, c, b, &m));
}

TEST(Critic, UnconditionalScoreIsFinite) {
    GanConfig c;
    c.base_channels = 4;
    const ModelParams p = init_params(c, 9);
    Prng prng(2);
    Volume v(c.shape);
    for (double& x : v.data) x = prng.uniform(-1.0, 1.0);
    EXPECT_TRUE(std::isfinite(critic_score(p, c, v)));
    const Volume wrong({4, 16, 16, 1});
    EXPECT_THROW(critic_score(p, c, wrong), ShapeError);
}

TEST(Params, InitIsDeterministicAndNamed) {
    const GanConfig c = tiny(true);
    const ModelParams a = init_params(c, 10), b = init_params(c, 10), d = init_params(c, 11);
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a == d);
    EXPECT_TRUE(a.contains("g0.fc.w"));
    EXPECT_TRUE(a.contains("enc.conv1.w"));
    EXPECT_TRUE(a.contains("critic.fc.w"));
    EXPECT_NO_THROW(check_params(a, c));
    EXPECT_THROW(check_params(init_params(tiny(false), 10), c), std::exception);
}

TEST(Params, ClippedSetIsCriticMatricesByDefault) {
    const ModelParams p = init_params(tiny(), 1);
    for (const auto& n : clipped_weights(p, false)) {
        EXPECT_TRUE(n.starts_with("critic."));
        EXPECT_GE(p.at(n).rank(), 2u);
    }
    EXPECT_GT(clipped_weights(p, true).size(), clipped_weights(p, false).size());
}

TEST(Generator, LossGradientMatchesFiniteDifferences) {
    const GanConfig c = tiny(true);
    const ModelParams p = init_params(c, 12);
    Prng prng(3);
    const Tensor z = sample_normal(prng, {2, c.latent_z0});
    const Volume m = block_mask(c.shape, 2, 3);
    Tape scratch;
    const Tensor masks = op::concat(scratch, {m.to_tensor(), m.to_tensor()}, 0);

    // Differentiate -mean(D(G(z))) w.r.t. a few generator tensors.
    const std::vector<std::string> names{"g0.fc.b", "g1.deconv0.b", "enc.conv1.b", "g0.deconv0.w"};
    std::vector<Tensor> inputs;
    for (const auto& n : names) inputs.push_back(p.at(n));
    const auto f = [&](Tape& t, const std::vector<Tensor>& x) {
        ModelParams q = p;
        for (std::size_t i = 0; i < names.size(); ++i) q.set(names[i], x[i]);
        const Tensor fake = generator(t, q, c, z, &masks);
        return op::scale(t, op::mean(t, critic(t, q, c, critic_input(t, c, fake, &masks))), -1.0);
    };
    EXPECT_LT(voxgan::testing::gradcheck(f, inputs).max_rel_err, 1e-4);
}
