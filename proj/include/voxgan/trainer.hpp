#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxgan/io/csv.hpp"
#include "voxgan/params.hpp"
#include "voxgan/phantom.hpp"
#include "voxgan/spectral.hpp"
#include "voxgan/tgan.hpp"

namespace voxgan::train {

// ---------------------------------------------------------------------------
// RMSProp

struct RmsPropConfig {
    double learning_rate = 5e-5;
    double rho = 0.9;
    double eps = 1e-8;
};

/// s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(s) + eps).
inline void rmsprop_step(Tensor& param, const Tensor& grad, Tensor& mean_square, const RmsPropConfig& cfg) {
    if (param.shape() != grad.shape()) throw ShapeError("rmsprop_step gradient", param.shape(), grad.shape());
    if (param.shape() != mean_square.shape()) throw ShapeError("rmsprop_step state", param.shape(), mean_square.shape());
    const auto g = grad.data();
    for (double v : g)
        if (!std::isfinite(v)) throw std::domain_error("rmsprop_step: non-finite gradient");
    auto s = mean_square.mutable_data();
    auto th = param.mutable_data();
    for (std::size_t i = 0; i < th.size(); ++i) {
        s[i] = cfg.rho * s[i] + (1.0 - cfg.rho) * g[i] * g[i];
        th[i] -= cfg.learning_rate * g[i] / (std::sqrt(s[i]) + cfg.eps);
    }
}

/// Per-parameter optimizer state keyed by parameter name.
class RmsProp {
public:
    explicit RmsProp(RmsPropConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("RmsProp: learning rate must be > 0");
    }

    /// Updates every listed parameter from gradients taken against its watched twin.
    void step(ModelParams& params, const ModelParams& watched, const Gradients& grads,
              const std::vector<std::string>& names) {
        for (const auto& name : names) {
            Tensor p = params.at(name);
            auto [it, fresh] = state_.try_emplace(name, Tensor::zeros(p.shape()));
            rmsprop_step(p, grads.of(watched.at(name)), it->second, cfg_);
            params.set(name, std::move(p));
        }
    }

    const std::map<std::string, Tensor>& state() const { return state_; }
    const RmsPropConfig& config() const { return cfg_; }

private:
    RmsPropConfig cfg_;
    std::map<std::string, Tensor> state_;
};

// ---------------------------------------------------------------------------
// Wasserstein objective

struct WganLosses {
    double critic = 0.0;     // mean D(fake) - mean D(real)
    double generator = 0.0;  // -mean D(fake)
};

inline WganLosses wgan_losses(const std::vector<double>& real_scores, const std::vector<double>& fake_scores) {
    if (real_scores.empty() || fake_scores.empty()) throw std::invalid_argument("wgan_losses: empty batch");
    double mr = 0.0, mf = 0.0;
    for (double v : real_scores) mr += v;
    for (double v : fake_scores) mf += v;
    mr /= static_cast<double>(real_scores.size());
    mf /= static_cast<double>(fake_scores.size());
    if (!std::isfinite(mr) || !std::isfinite(mf)) throw std::domain_error("wgan_losses: non-finite critic score");
    return {mf - mr, -mf};
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    double learning_rate = 5e-5;
    std::size_t batch_size = 32;
    std::size_t epochs = 5000;
    std::size_t iterations = 0;  // when non-zero, overrides epochs
    std::size_t critic_steps_per_gen_step = 1;
    std::size_t svc_period = 5;
    double max_singular_value = 1.0;
    bool clip_all_networks = false;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // 0: no intermediate checkpoints
    bool log_timing = true;            // false writes millis = 0 so logs are byte-reproducible

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
        if (svc_period < 1) throw std::invalid_argument("TrainConfig: svc_period must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (critic_steps_per_gen_step < 1) throw std::invalid_argument("TrainConfig: critic steps must be >= 1");
    }

    /// Iterations to run: explicit count, or epochs x ceil(N / batch).
    std::size_t total_iterations(std::size_t n_samples) const {
        if (iterations) return iterations;
        return epochs * ((n_samples + batch_size - 1) / batch_size);
    }
};

struct LogRecord {
    std::size_t iteration = 0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double max_sigma = 0.0;
    std::int64_t millis = 0;
    bool clipped = false;
};

struct TrainLog {
    std::vector<LogRecord> records;

    std::vector<std::size_t> clip_iterations() const {
        std::vector<std::size_t> out;
        for (const auto& r : records)
            if (r.clipped) out.push_back(r.iteration);
        return out;
    }

    /// Columns: iter, loss_d, loss_g, max_sigma, millis.
    void write_csv(std::ostream& os) const {
        io::CsvWriter w(os);
        w.header({"iter", "loss_d", "loss_g", "max_sigma", "millis"});
        for (const auto& r : records) w.row(r.iteration, r.loss_d, r.loss_g, r.max_sigma, r.millis);
    }
};

struct Checkpoint {
    std::size_t iteration = 0;
    ModelParams params;
};

struct TrainResult {
    ModelParams params;
    TrainLog log;
    std::vector<Checkpoint> checkpoints;
    double intensity_scale = 1.0;  // inverse of the [-1, 1] ingestion mapping
};

/// Raised on a non-finite loss or parameter; carries the last state that was fully finite.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t iteration, ModelParams last_good)
        : std::runtime_error("training diverged at iteration " + std::to_string(iteration) +
                             " (non-finite loss or parameter)"),
          iteration_(iteration),
          last_good_(std::move(last_good)) {}

    std::size_t iteration() const { return iteration_; }
    const ModelParams& last_good() const { return last_good_; }

private:
    std::size_t iteration_;
    ModelParams last_good_;
};

using CheckpointSink = std::function<void(const Checkpoint&)>;

/// Training images prepared for the networks: per-volume max normalization to [-1, 1].
struct PreparedData {
    std::vector<Volume> images;
    std::vector<Volume> masks;
    double intensity_scale = 1.0;
};

inline PreparedData prepare(const std::vector<const phantom::Sample*>& samples) {
    PreparedData d;
    double sum_max = 0.0;
    for (const auto* s : samples) {
        const double mx = s->image.max();
        const double scale = mx > 0.0 ? mx : 1.0;
        sum_max += scale;
        d.images.push_back(normalize_intensity(s->image, scale));
        d.masks.push_back(s->mask);
    }
    d.intensity_scale = samples.empty() ? 1.0 : sum_max / static_cast<double>(samples.size());
    return d;
}

/// Clips the selected weights in place and returns the largest spectral norm afterwards.
inline double apply_clipping(ModelParams& params, const std::vector<std::string>& names, const ClipPolicy& policy) {
    double mx = 0.0;
    for (const auto& n : names) {
        Tensor w = clip_singular_values(params.at(n), policy);
        mx = std::max(mx, spectral_norm(w));
        params.set(n, std::move(w));
    }
    return mx;
}

inline double max_spectral_norm(const ModelParams& params, const std::vector<std::string>& names) {
    double mx = 0.0;
    for (const auto& n : names) mx = std::max(mx, spectral_norm(params.at(n)));
    return mx;
}

/// Alternating critic / generator RMSProp steps with singular value clipping every
/// `svc_period` iterations. Deterministic given (data, configs, seed).
inline TrainResult train(const phantom::Dataset& data, const tgan::GanConfig& gan, const TrainConfig& cfg,
                         const CheckpointSink& sink = {}) {
    gan.validate();
    cfg.validate();
    std::vector<const phantom::Sample*> samples;
    for (const auto& s : data.samples)
        if (s.split == phantom::Split::Train) samples.push_back(&s);
    if (samples.empty()) throw std::invalid_argument("train: empty dataset");
    VolumeShape want = gan.shape;
    want.channels = 1;
    for (const auto* s : samples) {
        if (!(s->image.shape == want)) throw ShapeError("train: sample " + s->id + " has shape " + s->image.shape.str() +
                                                        ", config expects " + want.str());
        if (gan.conditional && !(s->mask.shape == want))
            throw std::invalid_argument("train: conditional mode requires a mask for sample " + s->id);
    }

    const PreparedData prepared = prepare(samples);
    TrainResult result;
    result.params = tgan::init_params(gan, cfg.seed);
    result.intensity_scale = prepared.intensity_scale;
    ModelParams& params = result.params;

    RmsProp critic_opt({cfg.learning_rate, 0.9, 1e-8});
    RmsProp gen_opt({cfg.learning_rate, 0.9, 1e-8});
    const auto critic_names = params.names_with_prefix(tgan::kCritic);
    std::vector<std::string> gen_names;
    for (const auto& p : tgan::generator_prefixes(gan))
        for (auto& n : params.names_with_prefix(p)) gen_names.push_back(std::move(n));
    const auto clip_names = tgan::clipped_weights(params, cfg.clip_all_networks);
    std::vector<std::string> critic_mats;
    for (const auto& n : clip_names)
        if (n.starts_with(tgan::kCritic)) critic_mats.push_back(n);
    const ClipPolicy policy{cfg.max_singular_value, static_cast<int>(cfg.svc_period)};

    Prng prng(derive_seed(cfg.seed, 0x7AA1));
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_batch = [&] {
        std::vector<std::size_t> b;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            if (cursor == order.size()) {
                order.resize(samples.size());
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[prng.below(k)]);
                cursor = 0;
            }
            b.push_back(order[cursor++]);
        }
        return b;
    };
    auto gather = [&](const std::vector<Volume>& src, const std::vector<std::size_t>& idx) {
        std::vector<const Volume*> v;
        for (auto i : idx) v.push_back(&src[i]);
        return stack_volumes(v);
    };

    ModelParams last_good = params;
    const std::size_t iters = cfg.total_iterations(samples.size());
    const auto t_start = std::chrono::steady_clock::now();
    for (std::size_t it = 1; it <= iters; ++it) {
        LogRecord rec;
        rec.iteration = it;
        Tensor masks;
        for (std::size_t c = 0; c < cfg.critic_steps_per_gen_step; ++c) {
            const auto idx = next_batch();
            const Tensor real = gather(prepared.images, idx);
            masks = gather(prepared.masks, idx);
            const Tensor z = sample_normal(prng, {cfg.batch_size, gan.latent_z0});
            Tensor fake;
            {
                Tape frozen;
                fake = tgan::generator(frozen, params, gan, z, gan.conditional ? &masks : nullptr);
            }
            Tape tape;
            const ModelParams w = params.watched(tape, {tgan::kCritic});
            const Tensor* m = gan.conditional ? &masks : nullptr;
            const Tensor dr = tgan::critic(tape, w, gan, tgan::critic_input(tape, gan, real, m));
            const Tensor df = tgan::critic(tape, w, gan, tgan::critic_input(tape, gan, fake, m));
            const Tensor loss = op::sub(tape, op::mean(tape, df), op::mean(tape, dr));
            rec.loss_d = loss.item();
            if (!std::isfinite(rec.loss_d)) throw TrainingDiverged(it, last_good);
            critic_opt.step(params, w, tape.backward(loss), critic_names);
        }
        {
            const Tensor z = sample_normal(prng, {cfg.batch_size, gan.latent_z0});
            Tape tape;
            const ModelParams w = params.watched(tape, tgan::generator_prefixes(gan));
            const Tensor* m = gan.conditional ? &masks : nullptr;
            const Tensor fake = tgan::generator(tape, w, gan, z, m);
            const Tensor df = tgan::critic(tape, w, gan, tgan::critic_input(tape, gan, fake, m));
            const Tensor loss = op::scale(tape, op::mean(tape, df), -1.0);
            rec.loss_g = loss.item();
            if (!std::isfinite(rec.loss_g)) throw TrainingDiverged(it, last_good);
            gen_opt.step(params, w, tape.backward(loss), gen_names);
        }
        if (it % cfg.svc_period == 0) {
            apply_clipping(params, clip_names, policy);
            rec.clipped = true;
        }
        if (!params.all_finite()) throw TrainingDiverged(it, last_good);
        rec.max_sigma = max_spectral_norm(params, critic_mats);
        if (cfg.log_timing)
            rec.millis = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t_start)
                             .count();
        result.log.records.push_back(rec);
        last_good = params;
        if (cfg.checkpoint_every && it % cfg.checkpoint_every == 0) {
            Checkpoint ck{it, params};
            if (sink) sink(ck);
            result.checkpoints.push_back(std::move(ck));
        }
    }
    return result;
}

}  // namespace voxgan::train
