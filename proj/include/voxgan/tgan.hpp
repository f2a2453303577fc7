#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/ops.hpp"
#include "voxgan/params.hpp"
#include "voxgan/prng.hpp"
#include "voxgan/volume.hpp"

/// Temporal GAN for volumes: a 1-D temporal generator expands z0 into one latent per slice,
/// a 2-D image generator renders each slice, and a fully 3-D critic scores whole volumes.
/// The conditional variant encodes each mask slice into a code that joins the slice latent,
/// and feeds the critic the weighted pair [(1 - omega) I, omega M].
namespace voxgan::tgan {

struct GanConfig {
    std::size_t latent_z0 = 50;         // K0
    std::size_t latent_z1 = 50;         // K1
    std::size_t mask_code = 16;         // Km
    std::size_t base_channels = 16;     // image generator / critic width
    std::size_t temporal_channels = 64; // temporal generator width
    VolumeShape shape{8, 16, 16, 1};
    double omega = 0.01;
    bool conditional = false;
    double leaky_slope = 0.2;

    void validate() const {
        auto pow2 = [](std::size_t v) { return v != 0 && (v & (v - 1)) == 0; };
        if (!pow2(shape.height) || !pow2(shape.width) || shape.height < 8 || shape.width < 8)
            throw std::invalid_argument("GanConfig: height and width must be powers of two >= 8, got " + shape.str());
        if (shape.depth != 4 && shape.depth != 8 && shape.depth != 16 && shape.depth != 32)
            throw std::invalid_argument("GanConfig: depth must be one of 4, 8, 16, 32, got " +
                                        std::to_string(shape.depth));
        if (!(omega >= 0.0 && omega <= 1.0)) throw std::invalid_argument("GanConfig: omega must lie in [0, 1]");
        if (latent_z0 == 0 || latent_z1 == 0 || base_channels == 0 || temporal_channels == 0)
            throw std::invalid_argument("GanConfig: latent dims and widths must be positive");
        if (conditional && mask_code == 0) throw std::invalid_argument("GanConfig: mask_code must be positive");
    }

    std::size_t frame_latent_dim() const { return latent_z0 + latent_z1 + (conditional ? mask_code : 0); }
    std::size_t temporal_layers() const { return static_cast<std::size_t>(std::countr_zero(shape.depth)); }
    std::size_t image_layers() const {
        return static_cast<std::size_t>(std::countr_zero(std::min(shape.height, shape.width))) - 2;
    }
    std::size_t critic_layers() const { return temporal_layers() - 1; }
    std::size_t critic_channels(std::size_t layer) const { return base_channels << layer; }
    std::size_t image_seed_channels() const { return base_channels << image_layers(); }
};

/// Parameter name prefixes of the four networks.
inline const std::string kTemporal = "g0.";
inline const std::string kImage = "g1.";
inline const std::string kEncoder = "enc.";
inline const std::string kCritic = "critic.";

inline std::vector<std::string> generator_prefixes(const GanConfig& cfg) {
    std::vector<std::string> p{kTemporal, kImage};
    if (cfg.conditional) p.push_back(kEncoder);
    return p;
}

constexpr std::size_t kKernel = 4;  // every strided layer: kernel 4, stride 2, pad 1

/// Deterministic initialization of all networks from one seed.
inline ModelParams init_params(const GanConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    auto weight = [&](const std::string& name, Shape shape, std::size_t fan_in) {
        p.add(name, init_weight(seed, name, std::move(shape), fan_in));
    };
    auto bias = [&](const std::string& name, std::size_t n) { p.add(name, Tensor::zeros({n})); };

    const std::size_t ct = cfg.temporal_channels;
    weight("g0.fc.w", {ct, cfg.latent_z0}, cfg.latent_z0);
    bias("g0.fc.b", ct);
    for (std::size_t i = 0; i < cfg.temporal_layers(); ++i) {
        const bool last = i + 1 == cfg.temporal_layers();
        const std::size_t cout = last ? cfg.latent_z1 : ct;
        const std::string n = "g0.deconv" + std::to_string(i);
        weight(n + ".w", {ct, cout, kKernel}, ct * kKernel / 2);
        bias(n + ".b", cout);
    }

    const std::size_t seed_c = cfg.image_seed_channels();
    const std::size_t h0 = cfg.shape.height >> cfg.image_layers(), w0 = cfg.shape.width >> cfg.image_layers();
    weight("g1.fc.w", {seed_c * h0 * w0, cfg.frame_latent_dim()}, cfg.frame_latent_dim());
    bias("g1.fc.b", seed_c * h0 * w0);
    for (std::size_t i = 0; i < cfg.image_layers(); ++i) {
        const bool last = i + 1 == cfg.image_layers();
        const std::size_t cin = seed_c >> i, cout = last ? 1 : seed_c >> (i + 1);
        const std::string n = "g1.deconv" + std::to_string(i);
        weight(n + ".w", {cin, cout, kKernel, kKernel}, cin * kKernel * kKernel / 4);
        bias(n + ".b", cout);
    }

    if (cfg.conditional) {
        weight("enc.conv0.w", {cfg.base_channels, 1, kKernel, kKernel}, kKernel * kKernel);
        bias("enc.conv0.b", cfg.base_channels);
        weight("enc.conv1.w", {cfg.mask_code, cfg.base_channels, kKernel, kKernel},
               cfg.base_channels * kKernel * kKernel);
        bias("enc.conv1.b", cfg.mask_code);
    }

    std::size_t cin = cfg.conditional ? 2 : 1;
    for (std::size_t i = 0; i < cfg.critic_layers(); ++i) {
        const std::size_t cout = cfg.critic_channels(i);
        const std::string n = "critic.conv" + std::to_string(i);
        weight(n + ".w", {cout, cin, kKernel, kKernel, kKernel}, cin * kKernel * kKernel * kKernel);
        bias(n + ".b", cout);
        cin = cout;
    }
    const std::size_t l = cfg.critic_layers();
    const std::size_t flat = cin * (cfg.shape.depth >> l) * (cfg.shape.height >> l) * (cfg.shape.width >> l);
    weight("critic.fc.w", {1, flat}, flat);
    bias("critic.fc.b", 1);
    return p;
}

inline void check_params(const ModelParams& p, const GanConfig& cfg) {
    const Shape want{cfg.image_seed_channels() * (cfg.shape.height >> cfg.image_layers()) *
                         (cfg.shape.width >> cfg.image_layers()),
                     cfg.frame_latent_dim()};
    if (!p.contains("g1.fc.w") || p.at("g1.fc.w").shape() != want)
        throw ShapeError("parameters do not match config (g1.fc.w)", want,
                         p.contains("g1.fc.w") ? p.at("g1.fc.w").shape() : Shape{});
    if (cfg.conditional && !p.contains("enc.conv0.w"))
        throw std::invalid_argument("parameters lack the mask encoder required by a conditional config");
}

// ---------------------------------------------------------------------------
// Batched networks.

/// z0 (B, K0) -> per-slice latents (B, K1, T): linear lift to length 1, then stride-2
/// transposed 1-D convolutions doubling the slice axis up to T, tanh on the last layer.
inline Tensor temporal_generator(Tape& tape, const ModelParams& p, const GanConfig& cfg, const Tensor& z0) {
    if (z0.rank() != 2 || z0.dim(1) != cfg.latent_z0)
        throw ShapeError("temporal_generate z0", Shape{z0.rank() ? z0.dim(0) : 1, cfg.latent_z0}, z0.shape());
    const std::size_t b = z0.dim(0);
    Tensor h = op::linear(tape, z0, p.at("g0.fc.w"), p.at("g0.fc.b"));
    h = op::leaky_relu(tape, h, cfg.leaky_slope);
    h = op::reshape(tape, h, {b, cfg.temporal_channels, 1});
    for (std::size_t i = 0; i < cfg.temporal_layers(); ++i) {
        const std::string n = "g0.deconv" + std::to_string(i);
        h = op::conv_transpose1d(tape, h, p.at(n + ".w"), &p.at(n + ".b"), {2, 1});
        h = (i + 1 == cfg.temporal_layers()) ? op::tanh(tape, h) : op::leaky_relu(tape, h, cfg.leaky_slope);
    }
    return h;
}

/// Mask slices (N, 1, H, W) -> codes (N, Km): two stride-2 convolutions and a global average pool.
inline Tensor mask_encoder(Tape& tape, const ModelParams& p, const GanConfig& cfg, const Tensor& slices) {
    Tensor h = op::conv2d(tape, slices, p.at("enc.conv0.w"), &p.at("enc.conv0.b"), {2, 1});
    h = op::leaky_relu(tape, h, cfg.leaky_slope);
    h = op::conv2d(tape, h, p.at("enc.conv1.w"), &p.at("enc.conv1.b"), {2, 1});
    return op::global_avg_pool(tape, h);
}

/// Frame latents (N, K0 + K1 [+ Km]) -> frames (N, 1, H, W) in (-1, 1).
inline Tensor image_generator(Tape& tape, const ModelParams& p, const GanConfig& cfg, const Tensor& latents) {
    if (latents.rank() != 2 || latents.dim(1) != cfg.frame_latent_dim())
        throw ShapeError("image_generate latent", Shape{latents.rank() ? latents.dim(0) : 1, cfg.frame_latent_dim()},
                         latents.shape());
    const std::size_t n = latents.dim(0), l = cfg.image_layers();
    Tensor h = op::linear(tape, latents, p.at("g1.fc.w"), p.at("g1.fc.b"));
    h = op::leaky_relu(tape, h, cfg.leaky_slope);
    h = op::reshape(tape, h, {n, cfg.image_seed_channels(), cfg.shape.height >> l, cfg.shape.width >> l});
    for (std::size_t i = 0; i < l; ++i) {
        const std::string name = "g1.deconv" + std::to_string(i);
        h = op::conv_transpose2d(tape, h, p.at(name + ".w"), &p.at(name + ".b"), {2, 1});
        h = (i + 1 == l) ? op::tanh(tape, h) : op::leaky_relu(tape, h, cfg.leaky_slope);
    }
    return h;
}

/// Full generator: z0 (B, K0) [+ masks (B, 1, T, H, W)] -> volumes (B, 1, T, H, W).
inline Tensor generator(Tape& tape, const ModelParams& p, const GanConfig& cfg, const Tensor& z0,
                        const Tensor* masks = nullptr) {
    if (cfg.conditional && !masks) throw std::invalid_argument("conditional generation requires a mask");
    const std::size_t b = z0.dim(0), t = cfg.shape.depth, h = cfg.shape.height, w = cfg.shape.width;
    Tensor z1 = temporal_generator(tape, p, cfg, z0);                       // (B, K1, T)
    z1 = op::permute(tape, z1, {0, 2, 1});                                  // (B, T, K1)
    z1 = op::reshape(tape, z1, {b * t, cfg.latent_z1});
    Tensor z0r = op::reshape(tape, z0, {b, 1, cfg.latent_z0});
    z0r = op::broadcast_to(tape, z0r, {b, t, cfg.latent_z0});
    z0r = op::reshape(tape, z0r, {b * t, cfg.latent_z0});
    std::vector<Tensor> parts{z0r, z1};
    if (cfg.conditional) {
        const Shape want{b, 1, t, h, w};
        if (masks->shape() != want) throw ShapeError("generator mask", want, masks->shape());
        Tensor slices = op::reshape(tape, *masks, {b * t, 1, h, w});
        parts.push_back(mask_encoder(tape, p, cfg, slices));
    }
    Tensor latents = op::concat(tape, parts, 1);
    Tensor frames = image_generator(tape, p, cfg, latents);
    return op::reshape(tape, frames, {b, 1, t, h, w});
}

/// Critic input: the image alone, or channels [(1 - omega) I, omega M] when conditional.
inline Tensor critic_input(Tape& tape, const GanConfig& cfg, const Tensor& images, const Tensor* masks) {
    if (!cfg.conditional) return images;
    if (!masks) throw std::invalid_argument("conditional critic requires a mask");
    if (masks->shape() != images.shape()) throw ShapeError("critic mask", images.shape(), masks->shape());
    Tensor ic = op::scale(tape, images, 1.0 - cfg.omega);
    Tensor mc = op::scale(tape, *masks, cfg.omega);
    return op::concat(tape, {ic, mc}, 1);
}

/// Wasserstein critic: stride-2 3-D convolutions with leaky-relu, flatten, linear -> (B) scores.
inline Tensor critic(Tape& tape, const ModelParams& p, const GanConfig& cfg, const Tensor& input) {
    const Shape want{input.rank() ? input.dim(0) : 0, cfg.conditional ? 2u : 1u, cfg.shape.depth, cfg.shape.height,
                     cfg.shape.width};
    if (input.shape() != want) throw ShapeError("critic input", want, input.shape());
    const std::size_t b = input.dim(0);
    Tensor h = input;
    for (std::size_t i = 0; i < cfg.critic_layers(); ++i) {
        const std::string n = "critic.conv" + std::to_string(i);
        h = op::conv3d(tape, h, p.at(n + ".w"), &p.at(n + ".b"), {2, 1});
        h = op::leaky_relu(tape, h, cfg.leaky_slope);
    }
    h = op::reshape(tape, h, {b, h.numel() / b});
    h = op::linear(tape, h, p.at("critic.fc.w"), p.at("critic.fc.b"));
    return op::reshape(tape, h, {b});
}

/// Names of critic (or, with `all`, every network's) matrices subject to singular value clipping.
inline std::vector<std::string> clipped_weights(const ModelParams& p, bool all) {
    std::vector<std::string> out;
    for (const auto& [name, t] : p) {
        if (t.rank() < 2) continue;
        if (all || name.starts_with(kCritic)) out.push_back(name);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Single-sample API.

/// z0 (length K0) -> T latent vectors of length K1.
inline std::vector<std::vector<double>> temporal_generate(const ModelParams& p, const GanConfig& cfg,
                                                          const std::vector<double>& z0) {
    Tape tape;
    const Tensor z1 = temporal_generator(tape, p, cfg, Tensor({1, z0.size()}, z0));
    const std::size_t k1 = cfg.latent_z1, t = cfg.shape.depth;
    std::vector<std::vector<double>> out(t, std::vector<double>(k1));
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t k = 0; k < k1; ++k) out[s][k] = z1[k * t + s];
    return out;
}

/// One mask slice (H x W, binary within 1e-6) -> code of length Km.
inline std::vector<double> encode_mask_slice(const ModelParams& p, const GanConfig& cfg,
                                             const std::vector<double>& slice) {
    const std::size_t h = cfg.shape.height, w = cfg.shape.width;
    if (slice.size() != h * w) throw ShapeError("encode_mask_slice", Shape{h, w}, Shape{slice.size()});
    for (double v : slice)
        if (std::abs(v) > 1e-6 && std::abs(v - 1.0) > 1e-6)
            throw std::invalid_argument("encode_mask_slice: mask values must be binary, got " + std::to_string(v));
    Tape tape;
    const Tensor code = mask_encoder(tape, p, cfg, Tensor({1, 1, h, w}, slice));
    return {code.data().begin(), code.data().end()};
}

/// One frame (H x W, row-major) from z0, z1(t) and, when conditional, the slice's mask code.
inline std::vector<double> image_generate(const ModelParams& p, const GanConfig& cfg, const std::vector<double>& z0,
                                          const std::vector<double>& z1_t,
                                          const std::optional<std::vector<double>>& mask_code = std::nullopt) {
    if (cfg.conditional != mask_code.has_value())
        throw std::invalid_argument(cfg.conditional ? "image_generate: conditional config requires a mask code"
                                                    : "image_generate: mask code given to an unconditional config");
    std::vector<double> lat(z0);
    lat.insert(lat.end(), z1_t.begin(), z1_t.end());
    if (mask_code) lat.insert(lat.end(), mask_code->begin(), mask_code->end());
    Tape tape;
    const Tensor f = image_generator(tape, p, cfg, Tensor({1, lat.size()}, lat));
    return {f.data().begin(), f.data().end()};
}

/// Draws z0 from `prng` and renders a T x H x W volume with values in (-1, 1).
inline Volume generate_volume(const ModelParams& p, const GanConfig& cfg, Prng& prng,
                              const Volume* mask = nullptr, VoxelSize voxel = {}) {
    if (cfg.conditional && !mask) throw std::invalid_argument("generate_volume: mask missing in conditional mode");
    Tensor z0 = sample_normal(prng, {1, cfg.latent_z0});
    Tape tape;
    std::optional<Tensor> m;
    if (cfg.conditional) {
        VolumeShape want = cfg.shape;
        want.channels = 1;
        if (!(mask->shape == want)) throw ShapeError("generate_volume: mask " + mask->shape.str() + " != " + want.str());
        m = mask->to_tensor();
    }
    const Tensor v = generator(tape, p, cfg, z0, m ? &*m : nullptr);
    return Volume::from_tensor(v, mask ? mask->voxel_mm : voxel);
}

/// Critic score of one volume (and mask when conditional).
inline double critic_score(const ModelParams& p, const GanConfig& cfg, const Volume& volume,
                           const Volume* mask = nullptr) {
    Tape tape;
    const Tensor img = volume.to_tensor();
    std::optional<Tensor> m;
    if (mask) m = mask->to_tensor();
    if (cfg.conditional && !m) throw std::invalid_argument("critic_score: conditional config requires a mask");
    const Tensor in = critic_input(tape, cfg, img, m ? &*m : nullptr);
    return critic(tape, p, cfg, in).item();
}

}  // namespace voxgan::tgan
