#pragma once

// Residual U-Net with squeeze-and-excitation normalization, soft-Dice training,
// the Dice metric and an intensity-threshold baseline.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/ops.hpp"
#include "voxgan/params.hpp"
#include "voxgan/phantom.hpp"
#include "voxgan/trainer.hpp"
#include "voxgan/volume.hpp"

namespace voxgan::seg {

struct SegConfig {
    std::size_t depth_levels = 3;
    std::size_t base_channels = 4;
    std::size_t se_reduction = 4;
    double threshold = 0.5;
    double beta_scale = 1.0;  // tanh range of the SE shift
    std::size_t epochs = 150;
    std::size_t batch_size = 2;
    std::size_t iterations = 0;  // when non-zero, overrides epochs
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (depth_levels < 1) throw std::invalid_argument("SegConfig: depth_levels must be >= 1");
        if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("SegConfig: threshold must lie in (0, 1)");
        if (base_channels < 1) throw std::invalid_argument("SegConfig: base_channels must be >= 1");
        if (se_reduction < 1) throw std::invalid_argument("SegConfig: se_reduction must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("SegConfig: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("SegConfig: learning_rate must be > 0");
    }

    std::size_t channels(std::size_t level) const { return base_channels << level; }

    std::size_t total_iterations(std::size_t n_samples) const {
        if (iterations) return iterations;
        return epochs * ((n_samples + batch_size - 1) / batch_size);
    }
};

struct SegmentationResult {
    Volume probability;
    Volume binary;
    std::optional<double> dice;
};

// ---------------------------------------------------------------------------
// Metric

/// 2|A n B| / (|A| + |B|); both empty scores 1.
inline double dice(const Volume& a, const Volume& b) {
    if (!(a.shape == b.shape)) throw ShapeError("dice: " + a.shape.str() + " vs " + b.shape.str());
    if (!a.is_binary(0.0) || !b.is_binary(0.0)) throw std::invalid_argument("dice: masks must be binary");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] != 0.0, y = b.data[i] != 0.0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// 1 - (2 sum(p g) + 1) / (sum(p) + sum(g) + 1), summed over the whole batch.
inline Tensor soft_dice_loss(Tape& tape, const Tensor& prob, const Tensor& truth) {
    if (prob.shape() != truth.shape()) throw ShapeError("soft_dice_loss", prob.shape(), truth.shape());
    const Tensor inter = op::sum(tape, op::mul(tape, prob, truth));
    const Tensor sp = op::sum(tape, prob);
    double sg = 0.0;
    for (double v : truth.data()) sg += v;
    const Tensor num = op::add_scalar(tape, op::scale(tape, inter, 2.0), 1.0);
    const Tensor den = op::add_scalar(tape, sp, sg + 1.0);
    return op::add_scalar(tape, op::scale(tape, op::div(tape, num, den), -1.0), 1.0);
}

// ---------------------------------------------------------------------------
// Network

/// Instance normalization followed by a per-channel affine map whose scale (sigmoid) and
/// shift (tanh * beta_scale) come from a squeeze-excitation block on the input.
inline Tensor se_norm(Tape& tape, const Tensor& x, const ModelParams& p, const std::string& prefix,
                      double beta_scale = 1.0) {
    if (x.rank() < 3) throw ShapeError("se_norm: expected (N, C, ...) features, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const Tensor& w1 = p.at(prefix + ".fc1.w");
    if (w1.rank() != 2 || w1.dim(1) != c)
        throw ShapeError("se_norm " + prefix + ": parameters expect " + std::to_string(w1.rank() == 2 ? w1.dim(1) : 0) +
                         " channels, features have " + std::to_string(c));
    const Tensor y = op::instance_norm(tape, x, c);
    const Tensor squeeze = op::global_avg_pool(tape, x);
    const Tensor h = op::relu(tape, op::linear(tape, squeeze, w1, p.at(prefix + ".fc1.b")));
    const Tensor ab = op::linear(tape, h, p.at(prefix + ".fc2.w"), p.at(prefix + ".fc2.b"));
    Shape bshape{n, c};
    for (std::size_t d = 2; d < x.rank(); ++d) bshape.push_back(1);
    const Tensor gamma = op::reshape(tape, op::sigmoid(tape, op::slice(tape, ab, 1, 0, c)), bshape);
    const Tensor beta =
        op::reshape(tape, op::scale(tape, op::tanh(tape, op::slice(tape, ab, 1, c, c)), beta_scale), bshape);
    return op::add(tape, op::mul(tape, y, gamma), beta);
}

namespace detail {

inline void add_conv(ModelParams& p, std::uint64_t seed, const std::string& name, std::size_t out, std::size_t in,
                     std::size_t k) {
    p.add(name + ".w", init_weight(seed, name + ".w", {out, in, k, k, k}, in * k * k * k));
    p.add(name + ".b", Tensor::zeros({out}));
}

inline void add_deconv(ModelParams& p, std::uint64_t seed, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t k) {
    p.add(name + ".w", init_weight(seed, name + ".w", {in, out, k, k, k}, in));
    p.add(name + ".b", Tensor::zeros({out}));
}

inline void add_se(ModelParams& p, std::uint64_t seed, const std::string& name, std::size_t c, std::size_t r) {
    const std::size_t hidden = std::max<std::size_t>(1, c / r);
    p.add(name + ".fc1.w", init_weight(seed, name + ".fc1.w", {hidden, c}, c));
    p.add(name + ".fc1.b", Tensor::zeros({hidden}));
    Tensor w2 = init_weight(seed, name + ".fc2.w", {2 * c, hidden}, hidden);
    for (double& v : w2.mutable_data()) v *= 0.1;
    p.add(name + ".fc2.w", std::move(w2));
    p.add(name + ".fc2.b", Tensor::zeros({2 * c}));
}

inline void add_res(ModelParams& p, std::uint64_t seed, const std::string& name, std::size_t c, std::size_t r) {
    add_conv(p, seed, name + ".conv1", c, c, 3);
    add_se(p, seed, name + ".se1", c, r);
    add_conv(p, seed, name + ".conv2", c, c, 3);
    add_se(p, seed, name + ".se2", c, r);
}

inline Tensor conv(Tape& t, const ModelParams& p, const std::string& name, const Tensor& x, op::ConvOptions o) {
    return op::conv3d(t, x, p.at(name + ".w"), &p.at(name + ".b"), o);
}

/// relu(x + se(conv(relu(se(conv(x)))))).
inline Tensor res_block(Tape& t, const ModelParams& p, const SegConfig& cfg, const std::string& name, const Tensor& x) {
    Tensor h = conv(t, p, name + ".conv1", x, {1, 1});
    h = op::relu(t, se_norm(t, h, p, name + ".se1", cfg.beta_scale));
    h = conv(t, p, name + ".conv2", h, {1, 1});
    h = se_norm(t, h, p, name + ".se2", cfg.beta_scale);
    return op::relu(t, op::add(t, h, x));
}

}  // namespace detail

inline ModelParams init_unet(const SegConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    const std::size_t r = cfg.se_reduction;
    detail::add_conv(p, seed, "seg.stem", cfg.channels(0), 1, 3);
    for (std::size_t l = 0; l < cfg.depth_levels; ++l) {
        const std::string n = "seg.enc" + std::to_string(l);
        detail::add_res(p, seed, n + ".res", cfg.channels(l), r);
        detail::add_conv(p, seed, n + ".down", cfg.channels(l + 1), cfg.channels(l), 2);
    }
    detail::add_res(p, seed, "seg.bottom.res", cfg.channels(cfg.depth_levels), r);
    for (std::size_t l = 0; l < cfg.depth_levels; ++l) {
        const std::string n = "seg.dec" + std::to_string(l);
        detail::add_deconv(p, seed, n + ".up", cfg.channels(l + 1), cfg.channels(l), 2);
        detail::add_conv(p, seed, n + ".merge", cfg.channels(l), 2 * cfg.channels(l), 3);
        detail::add_res(p, seed, n + ".res", cfg.channels(l), r);
    }
    detail::add_conv(p, seed, "seg.head", 1, cfg.channels(0), 1);
    return p;
}

/// (N, 1, D, H, W) normalized PET -> (N, 1, D, H, W) lesion probabilities.
inline Tensor unet_forward(Tape& t, const ModelParams& p, const SegConfig& cfg, const Tensor& x) {
    if (x.rank() != 5 || x.dim(1) != 1)
        throw ShapeError("unet_forward: expected (N, 1, D, H, W) input, got " + shape_str(x.shape()));
    const std::size_t f = std::size_t{1} << cfg.depth_levels;
    for (std::size_t d = 2; d < 5; ++d)
        if (x.dim(d) % f)
            throw std::invalid_argument("unet_forward: spatial dims " + shape_str(x.shape()) + " not divisible by " +
                                        std::to_string(f));
    Tensor h = op::relu(t, detail::conv(t, p, "seg.stem", x, {1, 1}));
    std::vector<Tensor> skips;
    for (std::size_t l = 0; l < cfg.depth_levels; ++l) {
        const std::string n = "seg.enc" + std::to_string(l);
        h = detail::res_block(t, p, cfg, n + ".res", h);
        skips.push_back(h);
        h = op::relu(t, detail::conv(t, p, n + ".down", h, {2, 0}));
    }
    h = detail::res_block(t, p, cfg, "seg.bottom.res", h);
    for (std::size_t l = cfg.depth_levels; l-- > 0;) {
        const std::string n = "seg.dec" + std::to_string(l);
        h = op::relu(t, op::conv_transpose3d(t, h, p.at(n + ".up.w"), &p.at(n + ".up.b"), {2, 0}));
        h = op::concat(t, {h, skips[l]}, 1);
        h = op::relu(t, detail::conv(t, p, n + ".merge", h, {1, 1}));
        h = detail::res_block(t, p, cfg, n + ".res", h);
    }
    return op::sigmoid(t, detail::conv(t, p, "seg.head", h, {1, 0}));
}

/// Network input: intensities divided by the volume maximum (so scale differences between
/// sources do not matter).
inline Volume normalize_input(const Volume& pet) {
    Volume out = pet;
    const double mx = pet.max();
    if (mx > 0.0)
        for (double& v : out.data) v /= mx;
    return out;
}

inline Volume unet_probabilities(const ModelParams& p, const SegConfig& cfg, const Volume& pet) {
    if (pet.shape.channels != 1) throw ShapeError("unet: expected single-channel PET, got " + pet.shape.str());
    Tape t;
    const Tensor prob = unet_forward(t, p, cfg, normalize_input(pet).to_tensor());
    return Volume::from_tensor(prob, pet.voxel_mm);
}

inline Volume binarize(const Volume& prob, double threshold) {
    Volume out = prob;
    for (double& v : out.data) v = v >= threshold ? 1.0 : 0.0;
    return out;
}

inline SegmentationResult segment(const ModelParams& p, const SegConfig& cfg, const Volume& pet,
                                  const Volume* truth = nullptr) {
    SegmentationResult r;
    r.probability = unet_probabilities(p, cfg, pet);
    r.binary = binarize(r.probability, cfg.threshold);
    if (truth) r.dice = dice(r.binary, *truth);
    return r;
}

/// Voxels at or above k times the volume maximum, restricted to the head (voxels > 0).
inline Volume threshold_baseline(const Volume& pet, double k) {
    if (!(k > 0.0)) throw std::invalid_argument("threshold_baseline: k must be > 0");
    const double cut = k * pet.max();
    Volume out(pet.shape, pet.voxel_mm);
    for (std::size_t i = 0; i < pet.data.size(); ++i) out.data[i] = pet.data[i] > 0.0 && pet.data[i] >= cut ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct SegSample {
    const Volume* image = nullptr;
    const Volume* mask = nullptr;
};

struct SegTrainLog {
    std::vector<double> losses;      // one per iteration
    std::vector<double> epoch_dice;  // mean training Dice at the end of each full pass
};

struct SegTrainResult {
    ModelParams params;
    SegTrainLog log;
};

/// Called with (iteration, params) after every iteration.
using SegObserver = std::function<void(std::size_t, const ModelParams&)>;

inline double mean_dice(const ModelParams& p, const SegConfig& cfg, const std::vector<SegSample>& samples) {
    if (samples.empty()) return 0.0;
    double s = 0.0;
    for (const auto& x : samples) s += *segment(p, cfg, *x.image, x.mask).dice;
    return s / static_cast<double>(samples.size());
}

/// Soft-Dice RMSProp training on (image, mask) pairs. Deterministic under cfg.seed.
inline SegTrainResult train_seg(const std::vector<SegSample>& samples, const SegConfig& cfg,
                                const SegObserver& observer = {}, bool log_epoch_dice = true) {
    cfg.validate();
    if (samples.empty()) throw std::invalid_argument("train_seg: empty dataset");
    std::vector<Volume> inputs;
    for (const auto& s : samples) {
        if (!s.image || !s.mask) throw std::invalid_argument("train_seg: every sample needs an image and a mask");
        if (!(s.image->shape == s.mask->shape))
            throw ShapeError("train_seg: mask " + s.mask->shape.str() + " != image " + s.image->shape.str());
        inputs.push_back(normalize_input(*s.image));
    }
    SegTrainResult res;
    res.params = init_unet(cfg, cfg.seed);
    ModelParams& params = res.params;
    const auto names = params.names_with_prefix("seg.");
    train::RmsProp opt({cfg.learning_rate, 0.9, 1e-8});

    Prng prng(derive_seed(cfg.seed, 0x5E6));
    std::vector<std::size_t> order(samples.size());
    std::size_t cursor = order.size();
    const std::size_t iters = cfg.total_iterations(samples.size());
    const std::size_t per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t it = 1; it <= iters; ++it) {
        std::vector<const Volume*> xs, ys;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[prng.below(k)]);
                cursor = 0;
            }
            const std::size_t i = order[cursor++];
            xs.push_back(&inputs[i]);
            ys.push_back(samples[i].mask);
        }
        Tape tape;
        const ModelParams w = params.watched(tape, {"seg."});
        const Tensor prob = unet_forward(tape, w, cfg, stack_volumes(xs));
        const Tensor loss = soft_dice_loss(tape, prob, stack_volumes(ys));
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw std::domain_error("train_seg: non-finite loss at iteration " + std::to_string(it));
        opt.step(params, w, tape.backward(loss), names);
        res.log.losses.push_back(lv);
        if (log_epoch_dice && it % per_epoch == 0) res.log.epoch_dice.push_back(mean_dice(params, cfg, samples));
        if (observer) observer(it, params);
    }
    return res;
}

inline SegTrainResult train_seg(const phantom::Dataset& data, const SegConfig& cfg, const SegObserver& observer = {},
                                bool log_epoch_dice = true) {
    std::vector<SegSample> s;
    for (const auto& x : data.samples)
        if (x.split == phantom::Split::Train) s.push_back({&x.image, &x.mask});
    return train_seg(s, cfg, observer, log_epoch_dice);
}

}  // namespace voxgan::seg
