#pragma once

// Command-line front end: train | eval | metrics | gradcheck | make-scene.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "s3im/gradcheck.hpp"
#include "s3im/io.hpp"
#include "s3im/losses.hpp"
#include "s3im/metrics.hpp"
#include "s3im/scene.hpp"
#include "s3im/train.hpp"

namespace s3im::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct Streams {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

/// Dataset loaded from `--data`: a scene directory (manifest.txt + views) is a radiance-field
/// dataset; a PPM file, or a directory holding image.ppm, is a single 2-D image.
inline Dataset load_dataset(const fs::path& path, FieldTask task) {
    if (!fs::exists(path)) throw ConfigError("data", "no such file or directory: " + path.string());
    const bool is_scene = fs::is_directory(path) && fs::exists(path / "manifest.txt");
    if (task == FieldTask::ToyNerf) {
        if (!is_scene) throw ConfigError("data", "toy-nerf needs a scene directory with manifest.txt");
        auto scene = load_scene(path);
        return Dataset::scene(std::move(scene.rig), std::move(scene.images));
    }
    if (is_scene) throw ConfigError("data", "image2d needs a PPM image, got a scene directory");
    const fs::path file = fs::is_directory(path) ? path / "image.ppm" : path;
    if (!fs::exists(file)) throw ConfigError("data", "no image.ppm in " + path.string());
    return Dataset::image(read_ppm(file));
}

inline FieldTask detect_task(const fs::path& data) {
    return fs::is_directory(data) && fs::exists(data / "manifest.txt") ? FieldTask::ToyNerf : FieldTask::Image2d;
}

inline std::vector<std::size_t> parse_sizes(const std::string& text, const char* flag) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(item, &used);
            if (used != item.size() || v <= 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError(flag, "expected a comma-separated list of positive integers, got '" + text + "'");
        }
    }
    if (out.empty()) throw ConfigError(flag, "empty list");
    return out;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

/// Resolved configuration, one `key = value` per line.
inline std::string format_config(const TrainConfig& cfg, const fs::path& data) {
    const auto enc = cfg.resolved_encoding();
    std::ostringstream o;
    o << "task = " << to_string(cfg.task) << "\n"
      << "data = " << data.string() << "\n"
      << "base-loss = " << to_string(cfg.loss.base) << "\n"
      << "lambda = " << format_g17(cfg.loss.lambda) << "\n"
      << "M = " << cfg.loss.repeats << "\n"
      << "kernel = " << cfg.loss.window.kernel << "\n"
      << "stride = " << cfg.loss.window.stride << "\n"
      << "batch = " << cfg.batch << "\n"
      << "iters = " << cfg.iterations << "\n"
      << "seed = " << cfg.seed << "\n"
      << "lr = " << format_g17(cfg.adam.lr) << "\n"
      << "beta1 = " << format_g17(cfg.adam.beta1) << "\n"
      << "beta2 = " << format_g17(cfg.adam.beta2) << "\n"
      << "eps = " << format_g17(cfg.adam.eps) << "\n"
      << "lr-decay = " << format_g17(cfg.schedule.factor) << "\n"
      << "lr-decay-period = " << cfg.schedule.period << "\n"
      << "eval-period = " << cfg.eval_period << "\n"
      << "train-frac = " << format_g17(cfg.train_fraction) << "\n"
      << "noise-std = " << format_g17(cfg.noise_std) << "\n"
      << "local-patch-baseline = " << (cfg.local_patch_baseline ? 1 : 0) << "\n"
      << "single-image-batch = " << (cfg.single_image_batches ? 1 : 0) << "\n"
      << "wall-clock = " << (cfg.record_wall_time ? 1 : 0) << "\n"
      << "hidden = " << join_sizes(cfg.resolved_hidden()) << "\n"
      << "pos-freqs = " << enc.pos_freqs << "\n"
      << "dir-freqs = " << enc.dir_freqs << "\n";
    return o.str();
}

/// Per-view metrics table shared by `train` (final renders) and `eval`.
inline std::string format_eval_csv(const std::vector<std::size_t>& views, const EvalMetrics& m) {
    std::string s = "view,test_psnr,test_ssim\n";
    for (std::size_t k = 0; k < views.size(); ++k) {
        s += std::to_string(views[k]) + "," + format_g9(m.image_psnr[k]) + "," + format_g9(m.image_ssim[k]) + "\n";
    }
    s += "mean," + format_g9(m.psnr) + "," + format_g9(m.ssim) + "\n";
    return s;
}

inline void write_renders(const fs::path& dir, const std::vector<std::size_t>& views,
                          const std::vector<ImageBuffer>& images) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < views.size(); ++k) write_ppm(dir / view_filename(views[k]), images[k]);
}

// ---------------------------------------------------------------------------
// Subcommands. Each registers its flags on `app` and returns the action to run after parsing.

using Action = std::function<int(Streams&)>;

inline Action add_train(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Train a neural field with the standard or multiplex loss");
    struct Flags {
        std::string task = "image2d";
        std::string data;
        std::string out;
        std::string base = "mse";
        std::string hidden;
        double lambda = 0.0;
        std::size_t m = 10, kernel = 4, batch = 4096, iters = 2000, eval_period = 250;
        std::uint64_t seed = 0;
        double lr = 2e-3, lr_decay = 1.0;
        std::size_t lr_decay_period = 0;
        double train_frac = 1.0, noise_std = 0.0;
        long pos_freqs = -1, dir_freqs = -1;
        bool local = false, single_image = false, wall_clock = false;
    };
    auto f = std::make_shared<Flags>();
    cmd->add_option("--task", f->task, "Field task: image2d or toy-nerf")->capture_default_str();
    cmd->add_option("--data", f->data, "PPM image (image2d) or scene directory (toy-nerf)")->required();
    cmd->add_option("--out", f->out, "Output directory")->required();
    cmd->add_option("--lambda", f->lambda, "Weight of the S3IM loss; 0 trains with the base loss only")
        ->capture_default_str();
    cmd->add_option("--M", f->m, "Stochastic patches per step")->capture_default_str();
    cmd->add_option("--kernel", f->kernel, "S3IM kernel size K (stride = K)")->capture_default_str();
    cmd->add_option("--batch", f->batch, "Rays/pixels per step; a perfect square with sqrt divisible by K when lambda > 0")
        ->capture_default_str();
    cmd->add_option("--iters", f->iters, "Optimizer steps")->capture_default_str();
    cmd->add_option("--seed", f->seed, "Run seed")->capture_default_str();
    cmd->add_option("--lr", f->lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--lr-decay", f->lr_decay, "Multiply the learning rate by this every --lr-decay-period steps")
        ->capture_default_str();
    cmd->add_option("--lr-decay-period", f->lr_decay_period, "Steps between decays; 0 disables decay")
        ->capture_default_str();
    cmd->add_option("--train-frac", f->train_frac, "Fraction of training pixels (image2d) or views (toy-nerf) kept")
        ->capture_default_str();
    cmd->add_option("--noise-std", f->noise_std, "Gaussian noise std added to training images")->capture_default_str();
    cmd->add_option("--eval-period", f->eval_period, "Steps between evaluations (the last step is always evaluated)")
        ->capture_default_str();
    cmd->add_option("--base-loss", f->base, "Point-wise loss: mse or l1")->capture_default_str();
    cmd->add_option("--hidden", f->hidden,
                    "Hidden widths, comma-separated (default 128,128,128,128 for image2d, 96,96,96,96 for toy-nerf)");
    cmd->add_option("--pos-freqs", f->pos_freqs, "Positional-encoding frequencies (default 10 image2d, 6 toy-nerf)");
    cmd->add_option("--dir-freqs", f->dir_freqs, "View-direction encoding frequencies (default 2, toy-nerf only)");
    cmd->add_flag("--local-patch-baseline", f->local, "Replace stochastic patches with one local crop per step");
    cmd->add_flag("--single-image-batch", f->single_image, "Draw every minibatch from one training view");
    cmd->add_flag("--wall-clock", f->wall_clock, "Record wall time in log.csv (otherwise the column is 0)");

    return [f](Streams& io) {
        TrainConfig cfg;
        cfg.task = parse_task(f->task);
        if (f->base == "mse") {
            cfg.loss.base = BaseLoss::Mse;
        } else if (f->base == "l1") {
            cfg.loss.base = BaseLoss::L1;
        } else {
            throw ConfigError("base-loss", "expected mse or l1, got '" + f->base + "'");
        }
        cfg.loss.lambda = f->lambda;
        cfg.loss.repeats = f->m;
        cfg.loss.window = WindowSpec::uniform(f->kernel);
        cfg.batch = f->batch;
        cfg.iterations = f->iters;
        cfg.seed = f->seed;
        cfg.adam.lr = f->lr;
        cfg.schedule = {f->lr_decay, f->lr_decay_period};
        cfg.train_fraction = f->train_frac;
        cfg.noise_std = f->noise_std;
        cfg.eval_period = f->eval_period;
        cfg.local_patch_baseline = f->local;
        cfg.single_image_batches = f->single_image;
        cfg.record_wall_time = f->wall_clock;
        if (!f->hidden.empty()) cfg.hidden = parse_sizes(f->hidden, "hidden");
        if (f->pos_freqs >= 0 || f->dir_freqs >= 0) {
            auto enc = cfg.resolved_encoding();
            if (f->pos_freqs >= 0) enc.pos_freqs = static_cast<std::size_t>(f->pos_freqs);
            if (f->dir_freqs >= 0) enc.dir_freqs = static_cast<std::size_t>(f->dir_freqs);
            cfg.encoding = enc;
        }
        cfg.validate();

        const fs::path out(f->out);
        const auto data = load_dataset(f->data, cfg.task);
        fs::create_directories(out);
        detail::write_text(out / "config.txt", format_config(cfg, f->data));

        auto result = train(cfg, data, [&](const EvalRecord& r) {
            io.out << "iter " << r.iteration << "  train_mse " << format_g9(r.train_mse) << "  train_s3im "
                   << format_g9(r.train_s3im) << "  test_psnr " << format_g9(r.test_psnr) << "  test_ssim "
                   << format_g9(r.test_ssim) << "\n";
        });
        write_csv_log(result.log, out / "log.csv");
        save_checkpoint(result.model, out / "final.ckpt");
        write_renders(out / "renders", test_indices(data), result.log.test_images);
        return kExitOk;
    };
}

inline Action add_eval(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "Render the test split with a checkpoint and score it");
    struct Flags {
        std::string checkpoint, data, out;
    };
    auto f = std::make_shared<Flags>();
    cmd->add_option("--checkpoint", f->checkpoint, "Checkpoint written by train")->required();
    cmd->add_option("--data", f->data, "Dataset the checkpoint was trained on")->required();
    cmd->add_option("--out", f->out, "Output directory (created if absent)")->required();

    return [f](Streams& io) {
        if (!fs::exists(f->checkpoint)) throw ConfigError("checkpoint", "no such file: " + f->checkpoint);
        if (!fs::exists(f->data)) throw ConfigError("data", "no such file or directory: " + f->data);
        const auto model = load_checkpoint(f->checkpoint);
        const FieldTask data_task = detect_task(f->data);
        if (model.task != data_task) {
            throw ConfigError("checkpoint", "checkpoint task " + to_string(model.task) + " does not match " +
                                                to_string(data_task) + " data");
        }
        const auto data = load_dataset(f->data, data_task);
        const auto views = test_indices(data);
        const auto m = evaluate(model, data, views);
        const fs::path out(f->out);
        fs::create_directories(out);
        detail::write_text(out / "metrics.csv", format_eval_csv(views, m));
        write_renders(out / "renders", views, m.renders);
        io.out << "test_psnr " << format_g9(m.psnr) << "  test_ssim " << format_g9(m.ssim) << "\n";
        return kExitOk;
    };
}

inline std::vector<std::string> ppm_names(const fs::path& dir, const char* flag) {
    if (!fs::is_directory(dir)) throw ConfigError(flag, "not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ppm") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

struct ImageScores {
    double psnr = 0;
    double ssim = 0;
    double s3im = 0;
};

/// S3IM of one image pair: raster-order pixels cut into consecutive batches of `batch`
/// (the tail is dropped), each scored with `repeats` stochastic patches and averaged.
inline double image_s3im(const ImageBuffer& test, const ImageBuffer& ref, std::size_t batch, std::size_t repeats,
                         const Rng& stream) {
    const std::size_t n = ref.pixels();
    if (n < batch) {
        throw ConfigError("s3im-batch", "image has " + std::to_string(n) + " pixels, fewer than the S3IM batch " +
                                            std::to_string(batch));
    }
    const std::size_t chunks = n / batch;
    const auto window = WindowSpec::s3im_default();
    double total = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const auto first = test.rgb.begin() + static_cast<std::ptrdiff_t>(3 * c * batch);
        const auto first_ref = ref.rgb.begin() + static_cast<std::ptrdiff_t>(3 * c * batch);
        PixelBatch b;
        b.predicted = Tensor(Shape{batch, 3}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(3 * batch)));
        b.target = Tensor(Shape{batch, 3}, std::vector<double>(first_ref, first_ref + static_cast<std::ptrdiff_t>(3 * batch)));
        total += s3im(b, repeats, window, {}, stream.split(c)).value.item();
    }
    return total / static_cast<double>(chunks);
}

inline Action add_metrics(CLI::App& app) {
    auto* cmd = app.add_subcommand("metrics", "Compare identically named PPMs in two directories");
    struct Flags {
        std::string ref, test, out;
        std::size_t batch = 4096, m = 10;
        std::uint64_t seed = 0;
    };
    auto f = std::make_shared<Flags>();
    cmd->add_option("--ref", f->ref, "Directory of reference PPMs")->required();
    cmd->add_option("--test", f->test, "Directory of test PPMs with the same names")->required();
    cmd->add_option("--out", f->out, "CSV output path")->required();
    cmd->add_option("--s3im-batch", f->batch, "Pixels per S3IM batch (perfect square, sqrt divisible by 4)")
        ->capture_default_str();
    cmd->add_option("--s3im-M", f->m, "Stochastic patches per S3IM batch")->capture_default_str();
    cmd->add_option("--seed", f->seed, "Seed of the S3IM permutations")->capture_default_str();

    return [f](Streams& io) {
        if (f->m == 0) throw ConfigError("s3im-M", "s3im-M must be >= 1");
        try {
            patch_side(f->batch, 4);
        } catch (const ShapeError& e) {
            throw ConfigError("s3im-batch", e.what());
        }
        const auto ref_names = ppm_names(f->ref, "ref");
        const auto test_names = ppm_names(f->test, "test");
        if (ref_names.empty()) throw ConfigError("ref", "no PPM images in " + f->ref);
        if (ref_names != test_names) throw ConfigError("test", "image names differ between --ref and --test");

        const Rng root(f->seed);
        std::string csv = "image,psnr,ssim,s3im\n";
        ImageScores mean;
        for (std::size_t i = 0; i < ref_names.size(); ++i) {
            const auto ref = read_ppm(fs::path(f->ref) / ref_names[i]);
            const auto test = read_ppm(fs::path(f->test) / ref_names[i]);
            if (ref.width != test.width || ref.height != test.height) {
                throw ConfigError("test", ref_names[i] + ": image sizes differ");
            }
            ImageScores s;
            s.psnr = psnr(test.rgb, ref.rgb, 1.0);
            s.ssim = msssim_eval(test.tensor(), ref.tensor());
            s.s3im = image_s3im(test, ref, f->batch, f->m, root.split(i));
            csv += ref_names[i] + "," + format_g9(s.psnr) + "," + format_g9(s.ssim) + "," + format_g9(s.s3im) + "\n";
            mean.psnr += s.psnr;
            mean.ssim += s.ssim;
            mean.s3im += s.s3im;
        }
        const double n = static_cast<double>(ref_names.size());
        csv += "mean," + format_g9(mean.psnr / n) + "," + format_g9(mean.ssim / n) + "," + format_g9(mean.s3im / n) + "\n";
        const fs::path out(f->out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        detail::write_text(out, csv);
        io.out << ref_names.size() << " image pairs, mean psnr " << format_g9(mean.psnr / n) << "\n";
        return kExitOk;
    };
}

inline Action add_gradcheck(CLI::App& app) {
    auto* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable path");
    struct Flags {
        std::uint64_t seed = 0;
        double tolerance = 1e-4;
        double step = 1e-5;
    };
    auto f = std::make_shared<Flags>();
    cmd->add_option("--seed", f->seed, "Seed of the random probe inputs")->capture_default_str();
    cmd->add_option("--tolerance", f->tolerance, "Largest accepted relative error")->capture_default_str();
    cmd->add_option("--step", f->step, "Central-difference step")->capture_default_str();

    return [f](Streams& io) {
        if (!(f->tolerance > 0)) throw ConfigError("tolerance", "tolerance must be > 0");
        if (!(f->step > 0)) throw ConfigError("step", "step must be > 0");
        const auto checks = run_gradcheck_suite(f->seed, f->tolerance, f->step);
        std::size_t failed = 0;
        for (const auto& c : checks) {
            char err[32];
            std::snprintf(err, sizeof err, "%.3e", c.max_rel_error);
            io.out << (c.passed ? "PASS  " : "FAIL  ") << c.group << "/" << c.name << "  max_rel_err " << err << "\n";
            if (!c.passed) ++failed;
        }
        if (failed) {
            io.err << failed << " of " << checks.size() << " checks failed:\n";
            for (const auto& c : checks) {
                if (!c.passed) io.err << "  " << c.group << "/" << c.name << "\n";
            }
            return kExitRuntime;
        }
        io.out << "all " << checks.size() << " checks passed\n";
        return kExitOk;
    };
}

inline Action add_make_scene(CLI::App& app) {
    auto* cmd = app.add_subcommand("make-scene", "Write a procedural dataset");
    struct Flags {
        std::string task = "toy-nerf";
        std::string out;
        std::uint64_t seed = 0;
        std::size_t resolution = 64, cameras = 12, samples = 32;
        double t_near = 0.1, t_far = 1.9;
    };
    auto f = std::make_shared<Flags>();
    cmd->add_option("--task", f->task, "toy-nerf (views + manifest.txt) or image2d (image.ppm test card)")
        ->capture_default_str();
    cmd->add_option("--out", f->out, "Output directory")->required();
    cmd->add_option("--seed", f->seed, "Scene seed")->capture_default_str();
    cmd->add_option("--resolution", f->resolution, "Image side in pixels (toy-nerf at most 128)")->capture_default_str();
    cmd->add_option("--cameras", f->cameras, "Ring cameras, at most 12 (toy-nerf)")->capture_default_str();
    cmd->add_option("--samples", f->samples, "Samples per ray (toy-nerf)")->capture_default_str();
    cmd->add_option("--near", f->t_near, "Near ray bound (toy-nerf)")->capture_default_str();
    cmd->add_option("--far", f->t_far, "Far ray bound (toy-nerf)")->capture_default_str();

    return [f](Streams& io) {
        const FieldTask task = parse_task(f->task);
        const fs::path out(f->out);
        if (task == FieldTask::Image2d) {
            if (f->resolution == 0) throw ConfigError("resolution", "resolution must be >= 1");
            fs::create_directories(out);
            write_ppm(out / "image.ppm", procedural_image(f->resolution, f->resolution, f->seed));
            io.out << "wrote " << (out / "image.ppm").string() << "\n";
            return kExitOk;
        }
        if (f->samples == 0) throw ConfigError("samples", "samples must be >= 1");
        if (!(f->t_near >= 0 && f->t_far > f->t_near)) throw ConfigError("far", "need 0 <= near < far");
        build_synthetic_scene(f->seed, f->resolution, f->cameras, out, {f->t_near, f->t_far, f->samples});
        io.out << "wrote " << f->cameras << " views to " << out.string() << "\n";
        return kExitOk;
    };
}

/// Parse `args` (without the program name) and run the chosen subcommand.
inline int run(const std::vector<std::string>& args, Streams io = {}) {
    CLI::App app{"Neural-field training with stochastic structural similarity (S3IM)", "s3im"};
    app.require_subcommand(1);
    app.allow_extras(false);
    const std::vector<std::pair<std::string, Action>> actions{
        {"train", add_train(app)},           {"eval", add_eval(app)},
        {"metrics", add_metrics(app)},       {"gradcheck", add_gradcheck(app)},
        {"make-scene", add_make_scene(app)},
    };

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        // help requests exit 0, every other parse failure is a usage error
        return app.exit(e, io.out, io.err) == 0 ? kExitOk : kExitUsage;
    }

    for (const auto& [name, action] : actions) {
        if (!app.get_subcommand(name)->parsed()) continue;
        try {
            return action(io);
        } catch (const ConfigError& e) {
            io.err << "error: --" << e.flag() << ": " << e.what() << "\n";
            return kExitUsage;
        } catch (const std::exception& e) {
            io.err << "error: " << e.what() << "\n";
            return kExitRuntime;
        }
    }
    return kExitUsage;
}

} // namespace s3im::cli
