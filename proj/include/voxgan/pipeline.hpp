#pragma once

// End-to-end drivers behind the command-line tool. Every command reads and writes plain
// files (VOL1 volumes, CKPT checkpoints, CSV tables) and is deterministic given the config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxgan/io/ckpt.hpp"
#include "voxgan/io/config.hpp"
#include "voxgan/io/csv.hpp"
#include "voxgan/io/pgm.hpp"
#include "voxgan/io/vol1.hpp"
#include "voxgan/parallel.hpp"
#include "voxgan/phantom.hpp"
#include "voxgan/radiomics.hpp"
#include "voxgan/segmentation.hpp"
#include "voxgan/stats.hpp"
#include "voxgan/tgan.hpp"
#include "voxgan/trainer.hpp"

namespace voxgan::pipeline {

namespace fs = std::filesystem;

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Dataset directories: manifest.csv (id, center, split), images/<id>.vol1, masks/<id>.vol1

inline void save_dataset(const fs::path& dir, const phantom::Dataset& d) {
    fs::create_directories(dir / "images");
    std::ofstream man(dir / "manifest.csv");
    if (!man) throw PipelineError("cannot write " + (dir / "manifest.csv").string());
    io::CsvWriter w(man);
    w.header({"id", "center", "split"});
    for (const auto& s : d.samples) {
        w.row(s.id, s.center, std::string(phantom::split_name(s.split)));
        io::write_vol1(dir / "images" / (s.id + ".vol1"), s.image);
        if (!s.mask.data.empty()) io::write_vol1(dir / "masks" / (s.id + ".vol1"), s.mask, io::Vol1Type::U8Mask);
    }
}

/// Loads a dataset directory. Masks are optional here (an empty Volume when absent);
/// commands that need them check with require_masks.
inline phantom::Dataset load_dataset(const fs::path& dir) {
    const fs::path man = dir / "manifest.csv";
    if (!fs::exists(man)) throw PipelineError("no manifest.csv in " + dir.string());
    const io::CsvTable t = io::read_csv(man.string());
    const std::size_t ci = t.column("id"), cc = t.column("center"), cs = t.column("split");
    phantom::Dataset d;
    for (const auto& r : t.rows) {
        phantom::Sample s;
        s.id = r[ci];
        if (r[cc].size() != 1) throw PipelineError(man.string() + ": bad center '" + r[cc] + "'");
        s.center = r[cc][0];
        if (r[cs] != "train" && r[cs] != "test") throw PipelineError(man.string() + ": bad split '" + r[cs] + "'");
        s.split = r[cs] == "train" ? phantom::Split::Train : phantom::Split::Test;
        s.image = io::read_vol1(dir / "images" / (s.id + ".vol1"));
        const fs::path mp = dir / "masks" / (s.id + ".vol1");
        if (fs::exists(mp)) {
            s.mask = io::read_mask_vol1(mp);
            if (!(s.mask.shape == s.image.shape))
                throw PipelineError(mp.string() + ": mask shape " + s.mask.shape.str() + " != image " + s.image.shape.str());
        }
        d.samples.push_back(std::move(s));
    }
    if (d.empty()) throw PipelineError(dir.string() + ": dataset is empty");
    return d;
}

inline void require_masks(const phantom::Dataset& d, const fs::path& dir) {
    for (const auto& s : d.samples)
        if (s.mask.data.empty()) throw PipelineError(dir.string() + ": missing mask for " + s.id);
}

/// Samples whose center letter appears in `centers` (all samples when empty).
inline phantom::Dataset filter_centers(const phantom::Dataset& d, const std::string& centers) {
    if (centers.empty()) return d;
    phantom::Dataset out;
    for (const auto& s : d.samples)
        if (centers.find(s.center) != std::string::npos) out.samples.push_back(s);
    if (out.empty()) throw PipelineError("no samples from centers '" + centers + "'");
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata

struct TganModel {
    ModelParams params;
    tgan::GanConfig gan;
    double intensity_scale = 1.0;
    VoxelSize voxel;
};

inline ModelParams pack_tgan(const TganModel& m) {
    ModelParams out = m.params;
    const auto& g = m.gan;
    auto d = [](std::size_t v) { return static_cast<double>(v); };
    out.add("meta.kind", Tensor({1}, {1.0}));
    out.add("meta.shape", Tensor({3}, {d(g.shape.depth), d(g.shape.height), d(g.shape.width)}));
    out.add("meta.latent", Tensor({3}, {d(g.latent_z0), d(g.latent_z1), d(g.mask_code)}));
    out.add("meta.channels", Tensor({2}, {d(g.base_channels), d(g.temporal_channels)}));
    out.add("meta.conditional", Tensor({1}, {g.conditional ? 1.0 : 0.0}));
    out.add("meta.gan_scalars", Tensor({2}, {g.omega, g.leaky_slope}));
    out.add("meta.intensity_scale", Tensor({1}, {m.intensity_scale}));
    out.add("meta.voxel", Tensor({3}, {m.voxel.x, m.voxel.y, m.voxel.z}));
    return out;
}

inline std::size_t meta_size(double v) { return static_cast<std::size_t>(std::llround(v)); }

inline TganModel unpack_tgan(const ModelParams& all, const std::string& what) {
    if (!all.contains("meta.kind") || all.at("meta.kind")[0] != 1.0)
        throw PipelineError(what + ": not a TGAN checkpoint");
    TganModel m;
    const Tensor& s = all.at("meta.shape");
    m.gan.shape = {meta_size(s[0]), meta_size(s[1]), meta_size(s[2]), 1};
    const Tensor& l = all.at("meta.latent");
    m.gan.latent_z0 = meta_size(l[0]);
    m.gan.latent_z1 = meta_size(l[1]);
    m.gan.mask_code = meta_size(l[2]);
    const Tensor& c = all.at("meta.channels");
    m.gan.base_channels = meta_size(c[0]);
    m.gan.temporal_channels = meta_size(c[1]);
    m.gan.conditional = all.at("meta.conditional")[0] != 0.0;
    m.gan.omega = all.at("meta.gan_scalars")[0];
    m.gan.leaky_slope = all.at("meta.gan_scalars")[1];
    m.intensity_scale = all.at("meta.intensity_scale")[0];
    const Tensor& v = all.at("meta.voxel");
    m.voxel = {v[0], v[1], v[2]};
    for (const auto& [name, t] : all)
        if (!name.starts_with("meta.")) m.params.add(name, t);
    try {
        m.gan.validate();
        tgan::check_params(m.params, m.gan);
    } catch (const std::invalid_argument& e) {
        throw PipelineError(what + ": " + e.what());
    }
    return m;
}

inline TganModel load_tgan(const fs::path& path) {
    if (path.empty()) throw PipelineError("no TGAN checkpoint given");
    if (!fs::exists(path)) throw PipelineError("TGAN checkpoint not found: " + path.string());
    return unpack_tgan(io::read_ckpt(path), path.string());
}

struct SegModel {
    ModelParams params;
    seg::SegConfig cfg;
};

inline ModelParams pack_seg(const SegModel& m) {
    ModelParams out = m.params;
    out.add("meta.kind", Tensor({1}, {2.0}));
    out.add("meta.seg", Tensor({5}, {static_cast<double>(m.cfg.depth_levels), static_cast<double>(m.cfg.base_channels),
                                     static_cast<double>(m.cfg.se_reduction), m.cfg.threshold, m.cfg.beta_scale}));
    return out;
}

inline SegModel load_seg(const fs::path& path) {
    if (path.empty()) throw PipelineError("no segmenter checkpoint given (train one with train-seg)");
    if (!fs::exists(path)) throw PipelineError("segmenter checkpoint not found: " + path.string());
    const ModelParams all = io::read_ckpt(path);
    if (!all.contains("meta.kind") || all.at("meta.kind")[0] != 2.0)
        throw PipelineError(path.string() + ": not a segmenter checkpoint");
    SegModel m;
    const Tensor& s = all.at("meta.seg");
    m.cfg.depth_levels = meta_size(s[0]);
    m.cfg.base_channels = meta_size(s[1]);
    m.cfg.se_reduction = meta_size(s[2]);
    m.cfg.threshold = s[3];
    m.cfg.beta_scale = s[4];
    for (const auto& [name, t] : all)
        if (!name.starts_with("meta.")) m.params.add(name, t);
    const ModelParams fresh = seg::init_unet(m.cfg, 0);
    for (const auto& [name, t] : fresh)
        if (!m.params.contains(name) || m.params.at(name).shape() != t.shape())
            throw PipelineError(path.string() + ": parameter " + name + " missing or misshapen");
    if (m.params.size() != fresh.size()) throw PipelineError(path.string() + ": unexpected parameters");
    return m;
}

// ---------------------------------------------------------------------------
// Commands

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PipelineError("cannot write " + path.string());
    out << text;
}

inline phantom::Dataset make_phantoms(const io::RunConfig& cfg) {
    phantom::PhantomSpec base;
    base.shape = cfg.gan.shape;
    base.shape.channels = 1;
    return phantom::build_dataset(cfg.phantom.per_center, io::selected_profiles(cfg.phantom.centers), cfg.seed,
                                  io::split_rule(cfg.phantom), base);
}

/// phantom: renders the configured centers into a dataset directory.
inline phantom::Dataset cmd_phantom(const io::RunConfig& cfg, const fs::path& out_dir) {
    phantom::Dataset d = make_phantoms(cfg);
    save_dataset(out_dir, d);
    return d;
}

/// train-tgan / train-ctgan: trains on the train split of `data_dir` (optionally restricted
/// to some centers) and writes <out_dir>/tgan.ckpt plus train_log.csv.
inline train::TrainResult cmd_train_tgan(const io::RunConfig& cfg, bool conditional, const fs::path& data_dir,
                                         const fs::path& out_dir, const std::string& centers = "") {
    phantom::Dataset d = filter_centers(load_dataset(data_dir), centers);
    if (conditional) require_masks(d, data_dir);
    tgan::GanConfig gan = cfg.gan;
    gan.conditional = conditional;
    double vx = 0.0, vy = 0.0, vz = 0.0, scale = 0.0;
    std::size_t n = 0;
    for (const auto& s : d.samples)
        if (s.split == phantom::Split::Train) {
            vx += s.image.voxel_mm.x;
            vy += s.image.voxel_mm.y;
            vz += s.image.voxel_mm.z;
            const double mx = s.image.max();
            scale += mx > 0.0 ? mx : 1.0;
            ++n;
        }
    if (n == 0) throw PipelineError(data_dir.string() + ": no training samples");
    const double dn = static_cast<double>(n);
    const VoxelSize voxel{vx / dn, vy / dn, vz / dn};
    scale /= dn;
    fs::create_directories(out_dir);
    train::TrainResult r;
    auto sink = [&](const train::Checkpoint& ck) {
        io::write_ckpt(out_dir / ("tgan_" + std::to_string(ck.iteration) + ".ckpt"),
                       pack_tgan({ck.params, gan, scale, voxel}));
    };
    try {
        r = train::train(d, gan, cfg.train, sink);
    } catch (const train::TrainingDiverged& e) {
        io::write_ckpt(out_dir / "tgan_last_good.ckpt", pack_tgan({e.last_good(), gan, scale, voxel}));
        throw;
    }
    io::write_ckpt(out_dir / "tgan.ckpt", pack_tgan({r.params, gan, r.intensity_scale, voxel}));
    std::ofstream log(out_dir / "train_log.csv");
    r.log.write_csv(log);
    return r;
}

/// Masks to condition on: a dataset directory (masks of the chosen split) or a directory of
/// mask .vol1 files (all of them, sorted by name).
inline std::vector<std::pair<std::string, Volume>> load_condition_masks(const fs::path& dir,
                                                                        std::optional<phantom::Split> split) {
    std::vector<std::pair<std::string, Volume>> out;
    if (fs::exists(dir / "manifest.csv")) {
        const phantom::Dataset d = load_dataset(dir);
        require_masks(d, dir);
        for (const auto& s : d.samples)
            if (!split || s.split == *split) out.emplace_back(s.id, s.mask);
    } else {
        if (!fs::is_directory(dir)) throw PipelineError("masks directory not found: " + dir.string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".vol1") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.emplace_back(f.stem().string(), io::read_mask_vol1(f));
    }
    if (out.empty()) throw PipelineError("no masks found in " + dir.string());
    return out;
}

/// Synthetic volume on the real intensity scale (negative values clamped to zero).
inline Volume synthesize(const TganModel& m, std::uint64_t seed, std::size_t index, const Volume* mask) {
    Prng prng(derive_seed(seed, 0x6E4, index));
    Volume v = tgan::generate_volume(m.params, m.gan, prng, mask, mask ? mask->voxel_mm : m.voxel);
    v = denormalize_intensity(v, m.intensity_scale);
    for (double& x : v.data) x = std::max(0.0, x);
    return v;
}

/// generate: `count` unconditional volumes, or one per mask in conditional mode. Output is a
/// dataset directory (center 'S', split test) so it can be evaluated directly.
inline phantom::Dataset cmd_generate(const io::RunConfig& cfg, const fs::path& ckpt, const fs::path& out_dir,
                                     std::size_t count, const fs::path& masks_dir = {},
                                     std::optional<phantom::Split> mask_split = phantom::Split::Test) {
    const TganModel m = load_tgan(ckpt);
    std::vector<std::pair<std::string, Volume>> masks;
    if (m.gan.conditional) {
        if (masks_dir.empty()) throw PipelineError("conditional checkpoint requires --masks");
        masks = load_condition_masks(masks_dir, mask_split);
        count = masks.size();
    } else if (count == 0) {
        throw PipelineError("count must be >= 1");
    }
    phantom::Dataset d;
    d.samples.resize(count);
    parallel_for(count, [&](std::size_t i) {
        phantom::Sample& s = d.samples[i];
        char buf[32];
        std::snprintf(buf, sizeof buf, "S%04zu", i);
        s.id = m.gan.conditional ? "S_" + masks[i].first : buf;
        s.center = 'S';
        s.split = phantom::Split::Test;
        const Volume* mask = m.gan.conditional ? &masks[i].second : nullptr;
        s.image = synthesize(m, cfg.seed, i, mask);
        if (mask) s.mask = *mask;
    });
    save_dataset(out_dir, d);
    return d;
}

inline std::vector<seg::SegSample> seg_samples(const phantom::Dataset& d, std::optional<phantom::Split> split) {
    std::vector<seg::SegSample> out;
    for (const auto& s : d.samples)
        if (!split || s.split == *split) out.push_back({&s.image, &s.mask});
    return out;
}

/// train-seg: trains the segmenter on the train split; writes seg.ckpt and seg_log.csv
/// (iter, loss).
inline seg::SegTrainResult cmd_train_seg(const io::RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
                                         const std::string& centers = "") {
    const phantom::Dataset d = filter_centers(load_dataset(data_dir), centers);
    require_masks(d, data_dir);
    const auto samples = seg_samples(d, phantom::Split::Train);
    if (samples.empty()) throw PipelineError(data_dir.string() + ": no training samples");
    seg::SegTrainResult r = seg::train_seg(samples, cfg.seg, {}, false);
    fs::create_directories(out_dir);
    io::write_ckpt(out_dir / "seg.ckpt", pack_seg({r.params, cfg.seg}));
    std::ofstream log(out_dir / "seg_log.csv");
    io::CsvWriter w(log);
    w.header({"iter", "loss"});
    for (std::size_t i = 0; i < r.log.losses.size(); ++i) w.row(i + 1, r.log.losses[i]);
    return r;
}

struct SegmentedCase {
    std::string id;
    Volume binary;
    std::optional<double> dice;
};

inline std::vector<SegmentedCase> segment_all(const SegModel& m, const phantom::Dataset& d) {
    std::vector<SegmentedCase> out(d.size());
    parallel_for(d.size(), [&](std::size_t i) {
        const auto& s = d.samples[i];
        seg::SegmentationResult r = seg::segment(m.params, m.cfg, s.image, s.mask.data.empty() ? nullptr : &s.mask);
        out[i] = {s.id, std::move(r.binary), r.dice};
    });
    return out;
}

/// segment: writes one u8 mask per input volume into <out_dir>/<id>.vol1 and, when the
/// inputs carry masks, segment_dice.csv (id, dice).
inline std::vector<SegmentedCase> cmd_segment(const fs::path& seg_ckpt, const fs::path& input, const fs::path& out_dir) {
    const SegModel m = load_seg(seg_ckpt);
    phantom::Dataset d;
    if (fs::is_directory(input)) {
        d = load_dataset(input);
    } else {
        phantom::Sample s;
        s.id = input.stem().string();
        s.image = io::read_vol1(input);
        d.samples.push_back(std::move(s));
    }
    const auto cases = segment_all(m, d);
    fs::create_directories(out_dir);
    bool any_dice = false;
    for (const auto& c : cases) {
        io::write_vol1(out_dir / (c.id + ".vol1"), c.binary, io::Vol1Type::U8Mask);
        any_dice = any_dice || c.dice.has_value();
    }
    if (any_dice) {
        std::ofstream os(out_dir / "segment_dice.csv");
        io::CsvWriter w(os);
        w.header({"id", "dice"});
        for (const auto& c : cases)
            if (c.dice) w.row(c.id, *c.dice);
    }
    return cases;
}

struct EvaluateResult {
    double mean_dice_real = 0.0;
    double mean_dice_synthetic = 0.0;
    stats::StatsReport report;
    bool has_stats = false;  // false when either set has fewer than 3 non-empty segmentations
};

inline constexpr std::size_t kDiceBins = 20;

inline std::vector<std::size_t> dice_histogram(const std::vector<double>& dice) {
    std::vector<std::size_t> h(kDiceBins, 0);
    for (double d : dice) {
        const auto b = static_cast<std::size_t>(std::clamp(d, 0.0, 1.0) * kDiceBins);
        ++h[std::min(b, kDiceBins - 1)];
    }
    return h;
}

/// evaluate: segments both sets, compares Dice distributions and lesion features. Writes
/// dice.csv, dice_histogram.csv, summary.csv, features.csv, stats.csv and stats.txt.
inline EvaluateResult cmd_evaluate(const io::RunConfig& cfg, const fs::path& real_dir, const fs::path& syn_dir,
                                   const fs::path& seg_ckpt, const fs::path& out_dir) {
    const SegModel m = load_seg(seg_ckpt);
    const phantom::Dataset real = load_dataset(real_dir), syn = load_dataset(syn_dir);
    require_masks(real, real_dir);
    require_masks(syn, syn_dir);
    const auto real_cases = segment_all(m, real), syn_cases = segment_all(m, syn);

    fs::create_directories(out_dir);
    std::vector<std::string> warnings;
    std::vector<radiomics::FeatureRow> rows;
    std::vector<radiomics::FeatureVector> real_f, syn_f;
    std::vector<double> real_dice, syn_dice;
    auto collect = [&](const phantom::Dataset& d, const std::vector<SegmentedCase>& cases, const std::string& source,
                       std::vector<radiomics::FeatureVector>& feats, std::vector<double>& dice) {
        std::vector<std::optional<radiomics::FeatureVector>> fv(cases.size());
        parallel_for(cases.size(), [&](std::size_t i) {
            if (cases[i].binary.count_nonzero() > 0)
                fv[i] = radiomics::extract_features(d.samples[i].image, cases[i].binary, cfg.stats);
        });
        for (std::size_t i = 0; i < cases.size(); ++i) {
            dice.push_back(*cases[i].dice);
            if (!fv[i]) {
                warnings.push_back(source + " case " + cases[i].id + ": empty segmentation, excluded from features");
                continue;
            }
            feats.push_back(*fv[i]);
            rows.push_back({cases[i].id, source, *fv[i]});
        }
    };
    collect(real, real_cases, "real", real_f, real_dice);
    collect(syn, syn_cases, "synthetic", syn_f, syn_dice);

    EvaluateResult res;
    res.mean_dice_real = stats::mean(real_dice);
    res.mean_dice_synthetic = stats::mean(syn_dice);
    {
        std::ofstream os(out_dir / "dice.csv");
        io::CsvWriter w(os);
        w.header({"id", "source", "dice"});
        for (std::size_t i = 0; i < real_cases.size(); ++i) w.row(real_cases[i].id, "real", real_dice[i]);
        for (std::size_t i = 0; i < syn_cases.size(); ++i) w.row(syn_cases[i].id, "synthetic", syn_dice[i]);
    }
    {
        const auto hr = dice_histogram(real_dice), hs = dice_histogram(syn_dice);
        std::ofstream os(out_dir / "dice_histogram.csv");
        io::CsvWriter w(os);
        w.header({"bin_lo", "bin_hi", "real", "synthetic"});
        for (std::size_t b = 0; b < kDiceBins; ++b)
            w.row(static_cast<double>(b) / kDiceBins, static_cast<double>(b + 1) / kDiceBins, hr[b], hs[b]);
    }
    {
        std::ofstream os(out_dir / "summary.csv");
        io::CsvWriter w(os);
        w.header({"source", "cases", "mean_dice"});
        w.row("real", real_dice.size(), res.mean_dice_real);
        w.row("synthetic", syn_dice.size(), res.mean_dice_synthetic);
    }
    {
        std::ofstream os(out_dir / "features.csv");
        radiomics::write_feature_csv(os, rows);
    }
    res.has_stats = real_f.size() >= 3 && syn_f.size() >= 3;
    if (res.has_stats) {
        res.report = stats::table1_report(real_f, syn_f, cfg.stats.alpha);
    } else {
        res.report.warnings.push_back("statistics skipped: need at least 3 non-empty segmentations per set (real " +
                                      std::to_string(real_f.size()) + ", synthetic " + std::to_string(syn_f.size()) +
                                      ")");
    }
    res.report.warnings.insert(res.report.warnings.begin(), warnings.begin(), warnings.end());
    {
        std::ofstream os(out_dir / "stats.csv");
        res.report.write_csv(os);
    }
    {
        std::ofstream os(out_dir / "stats.txt");
        os << "mean Dice: real " << io::fmt_double(res.mean_dice_real) << ", synthetic "
           << io::fmt_double(res.mean_dice_synthetic) << "\n\n";
        res.report.write_text(os);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Augmentation study

/// Applies the split rule to each center separately so every center has held-out cases.
inline void split_within_centers(phantom::Dataset& d, const phantom::SplitRule& rule, std::uint64_t seed) {
    std::map<char, std::vector<std::size_t>> by_center;
    for (std::size_t i = 0; i < d.size(); ++i) by_center[d.samples[i].center].push_back(i);
    for (const auto& [center, idx] : by_center) {
        phantom::Dataset part = d.subset(idx);
        phantom::apply_split(part, rule, derive_seed(seed, static_cast<std::uint64_t>(center)));
        for (std::size_t k = 0; k < idx.size(); ++k) d.samples[idx[k]].split = part.samples[k].split;
    }
}

struct AugmentRow {
    std::size_t iter = 0;
    std::string condition;       // "real_only" or "augmented"
    std::string validation_set;  // "in_center" or "out_of_center"
    double dice = 0.0;
};

struct AugmentResult {
    std::vector<AugmentRow> rows;

    /// Dice of (condition, validation_set) at the last logged iteration.
    double final_dice(const std::string& condition, const std::string& set) const {
        for (auto it = rows.rbegin(); it != rows.rend(); ++it)
            if (it->condition == condition && it->validation_set == set) return it->dice;
        throw std::out_of_range("no rows for " + condition + "/" + set);
    }

    void write_csv(std::ostream& os) const {
        io::CsvWriter w(os);
        w.header({"iter", "condition", "validation_set", "dice"});
        for (const auto& r : rows) w.row(r.iter, r.condition, r.validation_set, r.dice);
    }
};

/// Trains the segmenter on the first center's real cases alone and with `synthetic_count`
/// conditioned synthetic cases from a TGAN trained on the other centers; logs validation
/// Dice on held-out cases from the first center and from the others.
inline AugmentResult run_augment_experiment(const io::RunConfig& cfg, const std::optional<TganModel>& pretrained = {}) {
    const auto profiles = io::selected_profiles(cfg.phantom.centers);
    if (profiles.size() < 2) throw PipelineError("augment-experiment needs at least 2 centers, got " + cfg.phantom.centers);
    const char home = profiles.front().id;
    phantom::Dataset data = make_phantoms(cfg);
    split_within_centers(data, io::split_rule(cfg.phantom), cfg.seed);

    std::vector<seg::SegSample> home_train, in_val, out_val;
    phantom::Dataset others;
    for (const auto& s : data.samples) {
        const bool train = s.split == phantom::Split::Train;
        if (s.center == home)
            (train ? home_train : in_val).push_back({&s.image, &s.mask});
        else if (train)
            others.samples.push_back(s);
        else
            out_val.push_back({&s.image, &s.mask});
    }
    if (home_train.empty() || in_val.empty() || out_val.empty() || others.empty())
        throw PipelineError("augment-experiment: split leaves an empty training or validation set");

    std::vector<Volume> syn_images, syn_masks;
    if (cfg.augment.synthetic_count > 0) {
        TganModel model;
        if (pretrained) {
            model = *pretrained;
        } else {
            tgan::GanConfig gan = cfg.gan;
            gan.conditional = true;
            train::TrainConfig tc = cfg.train;
            tc.iterations = cfg.augment.tgan_iterations;
            tc.log_timing = false;
            train::TrainResult tr = train::train(others, gan, tc);
            model = {std::move(tr.params), gan, tr.intensity_scale, others.samples.front().image.voxel_mm};
        }
        if (!model.gan.conditional) throw PipelineError("augment-experiment requires a conditional TGAN");
        const std::size_t k = cfg.augment.synthetic_count;
        syn_images.resize(k);
        syn_masks.resize(k);
        parallel_for(k, [&](std::size_t i) {
            syn_masks[i] = others.samples[i % others.size()].mask;
            syn_images[i] = synthesize(model, derive_seed(cfg.seed, 0xA06), i, &syn_masks[i]);
        });
    }

    seg::SegConfig sc = cfg.seg;
    sc.iterations = sc.total_iterations(home_train.size());
    AugmentResult res;
    auto run = [&](const std::string& condition, const std::vector<seg::SegSample>& samples) {
        auto observe = [&](std::size_t it, const ModelParams& p) {
            if (it % cfg.augment.eval_every != 0 && it != sc.iterations) return;
            std::array<double, 2> d{};
            parallel_for(2, [&](std::size_t j) { d[j] = seg::mean_dice(p, sc, j == 0 ? in_val : out_val); });
            res.rows.push_back({it, condition, "in_center", d[0]});
            res.rows.push_back({it, condition, "out_of_center", d[1]});
        };
        seg::train_seg(samples, sc, observe, false);
    };
    run("real_only", home_train);
    std::vector<seg::SegSample> augmented = home_train;
    for (std::size_t i = 0; i < syn_images.size(); ++i) augmented.push_back({&syn_images[i], &syn_masks[i]});
    run("augmented", augmented);
    return res;
}

/// augment-experiment: writes augment_curves.csv.
inline AugmentResult cmd_augment_experiment(const io::RunConfig& cfg, const fs::path& out_dir,
                                            const fs::path& tgan_ckpt = {}) {
    std::optional<TganModel> pre;
    if (!tgan_ckpt.empty()) pre = load_tgan(tgan_ckpt);
    AugmentResult r = run_augment_experiment(cfg, pre);
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "augment_curves.csv");
    r.write_csv(os);
    return r;
}

/// export-slices: one mosaic per volume under a window shared by the whole set (or the
/// given one), with optional mask outlines. Outputs <out_dir>/<stem>.pgm.
inline std::vector<fs::path> cmd_export_slices(const std::vector<fs::path>& volumes, const std::vector<fs::path>& masks,
                                               const fs::path& out_dir, std::optional<io::Window> window = {}) {
    if (volumes.empty()) throw PipelineError("export-slices: no volumes given");
    if (!masks.empty() && masks.size() != volumes.size())
        throw PipelineError("export-slices: got " + std::to_string(masks.size()) + " masks for " +
                            std::to_string(volumes.size()) + " volumes");
    std::vector<Volume> vols;
    for (const auto& p : volumes) vols.push_back(io::read_vol1(p));
    std::vector<const Volume*> ptrs;
    for (const auto& v : vols) ptrs.push_back(&v);
    const io::Window w = window ? *window : io::window_of(ptrs);
    std::vector<fs::path> out;
    for (std::size_t i = 0; i < vols.size(); ++i) {
        std::optional<Volume> m;
        if (!masks.empty()) m = io::read_mask_vol1(masks[i]);
        out.push_back(out_dir / (volumes[i].stem().string() + ".pgm"));
        io::write_pgm(out.back(), io::mosaic(vols[i], w, m ? &*m : nullptr));
    }
    return out;
}

}  // namespace voxgan::pipeline
