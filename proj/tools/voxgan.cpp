#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "voxgan/pipeline.hpp"

using namespace voxgan;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::optional<fs::path> config;
    std::optional<unsigned long long> seed;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "key = value run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "random seed (overrides the config)");
}

io::RunConfig load(const Common& c) {
    io::RunConfig cfg = c.config ? io::load_config(*c.config) : io::parse_config("");
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.train.seed = *c.seed;
        cfg.seg.seed = *c.seed;
    }
    return cfg;
}

template <class T, class U>
void override_with(const std::optional<T>& flag, U& field) {
    if (flag) field = static_cast<U>(*flag);
}

fs::path pick(const std::optional<fs::path>& flag, const fs::path& from_config, const char* what) {
    if (flag) return *flag;
    if (!from_config.empty()) return from_config;
    throw pipeline::PipelineError(std::string("missing ") + what);
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

struct GanFlags {
    std::optional<double> lr, omega;
    std::optional<std::size_t> batch, epochs, iterations, svc, checkpoint_every, critic_steps, base, temporal;
    bool no_timing = false;
    bool clip_all = false;
};

void add_gan_flags(CLI::App* s, GanFlags& f, bool conditional) {
    s->add_option("--lr", f.lr, "RMSProp learning rate")->default_str("5e-05");
    s->add_option("--batch", f.batch, "batch size")->default_str("32");
    s->add_option("--epochs", f.epochs, "training epochs (passes over the train split)")->default_str("50");
    s->add_option("--iterations", f.iterations, "iteration count; overrides --epochs when non-zero");
    s->add_option("--svc-period", f.svc, "singular value clipping period in iterations")->default_str("5");
    s->add_option("--critic-steps", f.critic_steps, "critic steps per generator step")->default_str("1");
    s->add_option("--checkpoint-every", f.checkpoint_every, "write tgan_<iter>.ckpt every N iterations (0: never)");
    s->add_option("--base-channels", f.base, "image generator and critic width")->default_str("16");
    s->add_option("--temporal-channels", f.temporal, "temporal generator width")->default_str("64");
    s->add_flag("--no-timing", f.no_timing, "write millis = 0 so the log is byte-reproducible");
    s->add_flag("--clip-all", f.clip_all, "clip generator weights as well as the critic");
    if (conditional) s->add_option("--omega", f.omega, "mask weight in the critic input")->default_str("0.01");
}

void apply_gan_flags(const GanFlags& f, io::RunConfig& cfg) {
    override_with(f.lr, cfg.train.learning_rate);
    override_with(f.batch, cfg.train.batch_size);
    override_with(f.epochs, cfg.train.epochs);
    override_with(f.iterations, cfg.train.iterations);
    override_with(f.svc, cfg.train.svc_period);
    override_with(f.critic_steps, cfg.train.critic_steps_per_gen_step);
    override_with(f.checkpoint_every, cfg.train.checkpoint_every);
    override_with(f.base, cfg.gan.base_channels);
    override_with(f.temporal, cfg.gan.temporal_channels);
    override_with(f.omega, cfg.gan.omega);
    if (f.no_timing) cfg.train.log_timing = false;
    if (f.clip_all) cfg.train.clip_all_networks = true;
    cfg.validate();
}

struct SegFlags {
    std::optional<double> lr;
    std::optional<std::size_t> batch, epochs, iterations, levels, base;
};

void add_seg_flags(CLI::App* s, SegFlags& f) {
    s->add_option("--lr", f.lr, "segmenter learning rate")->default_str("0.001");
    s->add_option("--batch", f.batch, "batch size")->default_str("2");
    s->add_option("--epochs", f.epochs, "training epochs")->default_str("150");
    s->add_option("--iterations", f.iterations, "iteration count; overrides --epochs when non-zero");
    s->add_option("--levels", f.levels, "U-Net resolution levels")->default_str("3");
    s->add_option("--base-channels", f.base, "U-Net width at full resolution")->default_str("4");
}

void apply_seg_flags(const SegFlags& f, io::RunConfig& cfg) {
    override_with(f.lr, cfg.seg.learning_rate);
    override_with(f.batch, cfg.seg.batch_size);
    override_with(f.epochs, cfg.seg.epochs);
    override_with(f.iterations, cfg.seg.iterations);
    override_with(f.levels, cfg.seg.depth_levels);
    override_with(f.base, cfg.seg.base_channels);
    cfg.validate();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxgan: temporal GAN synthesis of PET-like volumes with segmentation and radiomics evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "voxgan 1.0");
    app.footer("Environment: VOXGAN_THREADS sets the worker count for per-case work (default: all cores).");
    std::function<void()> run;

    // phantom
    Common c_ph;
    std::optional<fs::path> ph_out;
    std::optional<std::size_t> ph_per, ph_withhold;
    std::optional<double> ph_frac;
    std::optional<std::string> ph_centers;
    auto* ph = app.add_subcommand("phantom", "render a synthetic multi-center phantom dataset");
    add_common(ph, c_ph);
    ph->add_option("--out", ph_out, "output dataset directory");
    ph->add_option("--per-center", ph_per, "cases per center")->default_str("16");
    ph->add_option("--centers", ph_centers, "center letters from ABCD")->default_str("ABCD");
    ph->add_option("--withhold", ph_withhold, "number of cases withheld for testing");
    ph->add_option("--withhold-fraction", ph_frac, "fraction withheld when --withhold is absent")->default_str("0.2");
    ph->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_ph);
            override_with(ph_per, cfg.phantom.per_center);
            override_with(ph_centers, cfg.phantom.centers);
            if (ph_withhold) cfg.phantom.withhold_count = *ph_withhold;
            override_with(ph_frac, cfg.phantom.withhold_fraction);
            cfg.validate();
            const fs::path out = pick(ph_out, cfg.paths.out_dir, "--out");
            const auto d = pipeline::cmd_phantom(cfg, out);
            std::cout << "wrote " << d.size() << " cases (" << d.indices(phantom::Split::Train).size() << " train, "
                      << d.indices(phantom::Split::Test).size() << " test) to " << out.string() << "\n";
        };
    });

    // train-tgan / train-ctgan
    Common c_tg[2];
    GanFlags f_tg[2];
    std::optional<fs::path> tg_data[2], tg_out[2];
    std::optional<std::string> tg_centers[2];
    for (int k = 0; k < 2; ++k) {
        const bool cond = k == 1;
        auto* s = app.add_subcommand(cond ? "train-ctgan" : "train-tgan",
                                     cond ? "train the mask-conditioned TGAN" : "train the unconditional TGAN");
        add_common(s, c_tg[k]);
        s->add_option("--data", tg_data[k], "dataset directory");
        s->add_option("--out", tg_out[k], "output directory for tgan.ckpt and train_log.csv");
        s->add_option("--centers", tg_centers[k], "restrict training to these centers");
        add_gan_flags(s, f_tg[k], cond);
        s->callback([&, k, cond] {
            run = [&, k, cond] {
                io::RunConfig cfg = load(c_tg[k]);
                apply_gan_flags(f_tg[k], cfg);
                const fs::path data = pick(tg_data[k], cfg.paths.data_dir, "--data");
                const fs::path out = pick(tg_out[k], cfg.paths.out_dir, "--out");
                const auto r = pipeline::cmd_train_tgan(cfg, cond, data, out, tg_centers[k].value_or(""));
                const auto& last = r.log.records.back();
                std::cout << "trained " << r.log.records.size() << " iterations; final loss_d "
                          << io::fmt_double(last.loss_d) << ", loss_g " << io::fmt_double(last.loss_g) << "; wrote "
                          << (out / "tgan.ckpt").string() << "\n";
            };
        });
    }

    // generate
    Common c_gen;
    std::optional<fs::path> gen_ckpt, gen_out, gen_masks;
    std::optional<std::size_t> gen_count;
    std::string gen_split = "test";
    auto* gen = app.add_subcommand("generate", "sample synthetic volumes from a TGAN checkpoint");
    add_common(gen, c_gen);
    gen->add_option("--checkpoint", gen_ckpt, "TGAN checkpoint");
    gen->add_option("--out", gen_out, "output dataset directory");
    gen->add_option("--count", gen_count, "volumes to generate (unconditional)")->default_str("200");
    gen->add_option("--masks", gen_masks, "dataset or mask directory to condition on (conditional)");
    gen->add_option("--split", gen_split, "split of a dataset masks directory to use")
        ->check(CLI::IsMember({"train", "test", "all"}))
        ->capture_default_str();
    gen->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_gen);
            override_with(gen_count, cfg.generate_count);
            const fs::path ckpt = pick(gen_ckpt, cfg.paths.tgan_checkpoint, "--checkpoint");
            const fs::path out = pick(gen_out, cfg.paths.out_dir, "--out");
            std::optional<phantom::Split> split;
            if (gen_split != "all") split = gen_split == "train" ? phantom::Split::Train : phantom::Split::Test;
            const fs::path masks = gen_masks ? *gen_masks : cfg.paths.masks_dir;
            const auto d = pipeline::cmd_generate(cfg, ckpt, out, cfg.generate_count, masks, split);
            std::cout << "wrote " << d.size() << " synthetic volumes to " << out.string() << "\n";
        };
    });

    // train-seg
    Common c_ts;
    SegFlags f_ts;
    std::optional<fs::path> ts_data, ts_out;
    std::optional<std::string> ts_centers;
    auto* ts = app.add_subcommand("train-seg", "train the SE-normalized residual U-Net segmenter");
    add_common(ts, c_ts);
    ts->add_option("--data", ts_data, "dataset directory");
    ts->add_option("--out", ts_out, "output directory for seg.ckpt and seg_log.csv");
    ts->add_option("--centers", ts_centers, "restrict training to these centers");
    add_seg_flags(ts, f_ts);
    ts->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_ts);
            apply_seg_flags(f_ts, cfg);
            const fs::path data = pick(ts_data, cfg.paths.data_dir, "--data");
            const fs::path out = pick(ts_out, cfg.paths.out_dir, "--out");
            const auto r = pipeline::cmd_train_seg(cfg, data, out, ts_centers.value_or(""));
            std::cout << "trained " << r.log.losses.size() << " iterations; final loss "
                      << io::fmt_double(r.log.losses.back()) << "; wrote " << (out / "seg.ckpt").string() << "\n";
        };
    });

    // segment
    Common c_sg;
    std::optional<fs::path> sg_ckpt, sg_in, sg_out;
    auto* sg = app.add_subcommand("segment", "segment a volume or every volume of a dataset directory");
    add_common(sg, c_sg);
    sg->add_option("--checkpoint", sg_ckpt, "segmenter checkpoint");
    sg->add_option("--input", sg_in, "VOL1 volume or dataset directory")->required();
    sg->add_option("--out", sg_out, "output directory for masks");
    sg->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_sg);
            const auto cases = pipeline::cmd_segment(pick(sg_ckpt, cfg.paths.seg_checkpoint, "--checkpoint"), *sg_in,
                                                     pick(sg_out, cfg.paths.out_dir, "--out"));
            std::vector<double> dice;
            for (const auto& c : cases)
                if (c.dice) dice.push_back(*c.dice);
            std::cout << "segmented " << cases.size() << " volumes";
            if (!dice.empty()) std::cout << "; mean Dice " << io::fmt_double(stats::mean(dice));
            std::cout << "\n";
        };
    });

    // evaluate
    Common c_ev;
    std::optional<fs::path> ev_real, ev_syn, ev_seg, ev_out;
    std::optional<double> ev_alpha;
    std::optional<std::size_t> ev_levels;
    auto* ev = app.add_subcommand("evaluate", "compare real and synthetic sets: Dice, features, t-tests, correlations");
    add_common(ev, c_ev);
    ev->add_option("--real", ev_real, "real dataset directory")->required();
    ev->add_option("--synthetic", ev_syn, "synthetic dataset directory")->required();
    ev->add_option("--seg-checkpoint", ev_seg, "trained segmenter checkpoint");
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--alpha", ev_alpha, "t-test significance level")->default_str("0.05");
    ev->add_option("--glcm-levels", ev_levels, "GLCM gray levels")->default_str("32");
    ev->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_ev);
            override_with(ev_alpha, cfg.stats.alpha);
            override_with(ev_levels, cfg.stats.glcm_levels);
            cfg.validate();
            const auto r = pipeline::cmd_evaluate(cfg, *ev_real, *ev_syn,
                                                  pick(ev_seg, cfg.paths.seg_checkpoint, "--seg-checkpoint"),
                                                  pick(ev_out, cfg.paths.out_dir, "--out"));
            std::cout << "mean Dice real " << io::fmt_double(r.mean_dice_real) << ", synthetic "
                      << io::fmt_double(r.mean_dice_synthetic) << "\n";
            r.report.write_text(std::cout);
        };
    });

    // augment-experiment
    Common c_ax;
    std::optional<fs::path> ax_out, ax_tgan;
    std::optional<std::size_t> ax_k, ax_every, ax_titers, ax_per, ax_seeds;
    std::optional<std::string> ax_centers;
    SegFlags f_ax;
    auto* ax = app.add_subcommand("augment-experiment",
                                  "segmentation Dice vs iteration with and without synthetic augmentation");
    add_common(ax, c_ax);
    ax->add_option("--out", ax_out, "output directory");
    ax->add_option("--tgan-checkpoint", ax_tgan, "conditional TGAN trained on the other centers (trained here if absent)");
    ax->add_option("--synthetic-count", ax_k, "synthetic cases added to the first center's data")->default_str("16");
    ax->add_option("--eval-every", ax_every, "validation interval in iterations")->default_str("10");
    ax->add_option("--tgan-iterations", ax_titers, "TGAN iterations when training here")->default_str("100");
    ax->add_option("--per-center", ax_per, "phantom cases per center")->default_str("16");
    ax->add_option("--centers", ax_centers, "centers; the first is the home center")->default_str("ABCD");
    ax->add_option("--seeds", ax_seeds, "repeat with this many consecutive seeds and report medians")->default_str("1");
    add_seg_flags(ax, f_ax);
    ax->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_ax);
            override_with(ax_k, cfg.augment.synthetic_count);
            override_with(ax_every, cfg.augment.eval_every);
            override_with(ax_titers, cfg.augment.tgan_iterations);
            override_with(ax_per, cfg.phantom.per_center);
            override_with(ax_centers, cfg.phantom.centers);
            apply_seg_flags(f_ax, cfg);
            const fs::path out = pick(ax_out, cfg.paths.out_dir, "--out");
            const fs::path tgan = ax_tgan ? *ax_tgan : cfg.paths.tgan_checkpoint;
            const std::size_t seeds = ax_seeds.value_or(1);
            if (seeds < 1) throw pipeline::PipelineError("--seeds must be >= 1");
            std::vector<double> gain_out, gain_in;
            std::ofstream summary;
            if (seeds > 1) {
                fs::create_directories(out);
                summary.open(out / "augment_summary.csv");
                summary << "seed,in_real_only,in_augmented,out_real_only,out_augmented\n";
            }
            const unsigned long long base = cfg.seed;
            for (std::size_t i = 0; i < seeds; ++i) {
                io::RunConfig sc = cfg;
                sc.seed = sc.train.seed = sc.seg.seed = base + i;
                const fs::path dir = seeds == 1 ? out : out / ("seed_" + std::to_string(sc.seed));
                const auto r = pipeline::cmd_augment_experiment(sc, dir, tgan);
                const double ir = r.final_dice("real_only", "in_center"), ia = r.final_dice("augmented", "in_center");
                const double orr = r.final_dice("real_only", "out_of_center"),
                             oa = r.final_dice("augmented", "out_of_center");
                gain_in.push_back(ia - ir);
                gain_out.push_back(oa - orr);
                if (summary.is_open())
                    summary << sc.seed << "," << io::fmt_double(ir) << "," << io::fmt_double(ia) << ","
                            << io::fmt_double(orr) << "," << io::fmt_double(oa) << "\n";
                std::cout << "seed " << sc.seed << ": in-center Dice " << io::fmt_double(ir) << " -> "
                          << io::fmt_double(ia) << ", out-of-center Dice " << io::fmt_double(orr) << " -> "
                          << io::fmt_double(oa) << "\n";
            }
            std::cout << "median augmentation gain: in-center " << io::fmt_double(median(gain_in))
                      << ", out-of-center " << io::fmt_double(median(gain_out)) << "\n";
        };
    });

    // export-slices
    Common c_ex;
    std::vector<fs::path> ex_vols, ex_masks;
    std::optional<fs::path> ex_out;
    std::optional<double> ex_lo, ex_hi;
    auto* ex = app.add_subcommand("export-slices", "write PGM slice mosaics under one shared window");
    add_common(ex, c_ex);
    ex->add_option("--volumes", ex_vols, "VOL1 volumes")->required()->check(CLI::ExistingFile);
    ex->add_option("--masks", ex_masks, "masks outlined at full gray, one per volume")->check(CLI::ExistingFile);
    ex->add_option("--out", ex_out, "output directory");
    ex->add_option("--window-lo", ex_lo, "window lower bound (default: set minimum)");
    ex->add_option("--window-hi", ex_hi, "window upper bound (default: set maximum)");
    ex->callback([&] {
        run = [&] {
            io::RunConfig cfg = load(c_ex);
            if (ex_lo.has_value() != ex_hi.has_value())
                throw pipeline::PipelineError("give both --window-lo and --window-hi or neither");
            std::optional<io::Window> w;
            if (ex_lo) w = io::Window{*ex_lo, *ex_hi};
            const auto files = pipeline::cmd_export_slices(ex_vols, ex_masks, pick(ex_out, cfg.paths.out_dir, "--out"), w);
            std::cout << "wrote " << files.size() << " mosaics\n";
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 2;
    }
    try {
        run();
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
