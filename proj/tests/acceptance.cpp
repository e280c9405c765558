// Acceptance run: one PASS/FAIL line per criterion on stdout, run details on stderr.
// Usage: s3im_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "oracles.hpp"
#include "s3im/cli.hpp"
#include "s3im/s3im.hpp"

using namespace s3im;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> random_values(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform();
    return v;
}

// ---------------------------------------------------------------------------
// Property criteria

Outcome ssim_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_values(64 * 64 * 3, rng), b = random_values(64 * 64 * 3, rng);
        const auto m = ssim_map(Tensor(Shape{64, 64, 3}, a), Tensor(Shape{64, 64, 3}, b), WindowSpec::uniform(4));
        worst = std::max(worst, std::abs(m.mean.item() - oracle::blockwise_mssim(a, b, 64, 64, 4)));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-12 && secs < 10, fmt("max |diff| %.3g over 200 pairs, %.2f s", worst, secs)};
}

Outcome analytic_ssim() {
    const std::vector<double> zeros(16, 0.0), ones(16, 1.0), w16(16, 1.0 / 16);
    const double constant = ssim_window(zeros, ones, w16);
    const std::vector<double> a{0, 1, 0, 1}, b{1, 0, 1, 0}, w4(4, 0.25);
    const double checker = ssim_window(a, b, w4);
    const double shift = msssim_eval(Tensor::full(Shape{20, 20, 3}, 0.4), Tensor::full(Shape{20, 20, 3}, 0.6));
    // closed forms: l = C1 / (1 + C1); s = (-1/4 + C2/2) / (1/4 + C2/2); l = (2 mu (mu + d) + C1) / (mu^2 + (mu + d)^2 + C1)
    const double e_constant = 1e-4 / 1.0001;
    const double e_checker = (-0.25 + 4.5e-4) / (0.25 + 4.5e-4);
    const double e_shift = (2 * 0.4 * 0.6 + 1e-4) / (0.16 + 0.36 + 1e-4);
    const double worst = std::max({std::abs(constant - e_constant), std::abs(checker - e_checker),
                                   std::abs(shift - e_shift)});
    // the quoted five-digit figures agree to their last printed digit; the shift figure 0.92327 does not
    // follow from its own formula (0.4801 / 0.5201 = 0.923092), so it is reported, not enforced
    const bool quoted = std::abs(constant - 9.99900e-5) <= 5e-11 && std::abs(checker + 0.99641) <= 5e-6;
    return {worst <= 1e-6 && quoted,
            fmt("constant %.6g, checkerboard %.6f, shift %.6f; max |diff| to closed forms %.3g; "
                "shift vs quoted 0.92327: %.2g",
                constant, checker, shift, worst, shift - 0.92327)};
}

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::ostringstream out, err;
    const int code = cli::run({"gradcheck", "--tolerance", "1e-4"}, cli::Streams{out, err});
    const double secs = seconds_since(t0);
    const std::string text = out.str();
    const bool covers = text.find("s3im-M4") != std::string::npos &&
                        text.find("multiplex-through-render") != std::string::npos;
    const auto checks = run_gradcheck_suite(0, 1e-4);
    double worst = 0;
    for (const auto& c : checks) worst = std::max(worst, c.max_rel_error);
    return {code == 0 && covers && secs < 60,
            fmt("%zu checks, worst relative error %.3g, exit %d, %.1f s", checks.size(), worst, code, secs)};
}

Outcome identities() {
    Rng rng(104);
    const std::size_t n = 1024;
    const PixelBatch batch(Tensor(Shape{n, 3}, random_values(n * 3, rng)), Tensor(Shape{n, 3}, random_values(n * 3, rng)));
    const Rng stream(7);
    LossConfig cfg;
    cfg.repeats = 10;

    // average of independently assembled patches
    const double metric = s3im::s3im(batch, cfg.repeats, cfg.window, cfg.constants, stream).value.item();
    double sum = 0;
    for (std::size_t m = 0; m < cfg.repeats; ++m) {
        Rng r = stream.split(m);
        const auto patch = make_patch(batch, r, cfg.window.kernel);
        auto p = std::vector<double>(patch.predicted.values().begin(), patch.predicted.values().end());
        auto t = std::vector<double>(patch.target.values().begin(), patch.target.values().end());
        sum += oracle::blockwise_mssim(p, t, patch.predicted.dim(0), patch.predicted.dim(1), 4);
    }
    const double decomposition = std::abs(metric - sum / static_cast<double>(cfg.repeats));

    const bool one_minus = s3im_loss(batch, cfg, stream).value.item() == 1.0 - metric;

    double total_err = 0;
    for (double lambda : lambda_grid_nerf()) {
        cfg.lambda = lambda;
        const auto r = multiplex_loss(batch, cfg, stream);
        total_err = std::max(total_err, std::abs(r.total.item() - (r.base + lambda * r.s3im_component)));
    }

    cfg.lambda = 0;
    bool lambda_zero = true;
    for (auto base : {BaseLoss::Mse, BaseLoss::L1}) {
        cfg.base = base;
        lambda_zero = lambda_zero && multiplex_loss(batch, cfg, stream).total.item() == base_loss(batch, base).item();
    }
    return {decomposition <= 1e-15 && one_minus && total_err <= 1e-15 && lambda_zero,
            fmt("M-average |diff| %.3g, 1 - S3IM exact: %s, total |diff| %.3g, lambda 0 bit-equal: %s",
                decomposition, one_minus ? "yes" : "no", total_err, lambda_zero ? "yes" : "no")};
}

Outcome quadrature() {
    const auto hand = volume_render_ray(Tensor::vector({1, 2}), Tensor(Shape{2, 3}, {1, 0, 0, 0, 1, 0}),
                                        Tensor::vector({0.5, 0.5}));
    const double e0 = 1 - std::exp(-0.5);
    const double e1 = std::exp(-0.5) * (1 - std::exp(-1.0));
    const double hand_err = std::max(std::abs(hand.color[0] - e0), std::abs(hand.color[1] - e1));
    const bool hand_ok = hand_err <= 1e-9 && hand.color[2] == 0.0 && std::abs(hand.color[0] - 0.393469) < 1e-6 &&
                         std::abs(hand.color[1] - 0.383401) < 1e-6;

    Rng rng(105);
    double split_err = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(14);
        const std::size_t split = rng.below(n);
        std::vector<double> sigma(n), delta(n), col(n * 3), s2, d2, c2;
        for (auto& v : sigma) v = rng.uniform(0, 5);
        for (auto& v : delta) v = rng.uniform(0.01, 0.5);
        for (auto& v : col) v = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) {
            const int parts = i == split ? 2 : 1;
            for (int p = 0; p < parts; ++p) {
                s2.push_back(sigma[i]);
                d2.push_back(delta[i] / parts);
                c2.insert(c2.end(), col.begin() + 3 * i, col.begin() + 3 * i + 3);
            }
        }
        const auto a = volume_render_ray(Tensor::vector(sigma), Tensor(Shape{n, 3}, col), Tensor::vector(delta));
        const auto b = volume_render_ray(Tensor::vector(s2), Tensor(Shape{n + 1, 3}, c2), Tensor::vector(d2));
        for (int k = 0; k < 3; ++k) split_err = std::max(split_err, std::abs(a.color[k] - b.color[k]));
    }

    const Tensor colors(Shape{3, 3}, {0.9, 0.5, 0.2, 0.1, 0.3, 0.7, 0.4, 0.4, 0.4});
    const auto opaque = volume_render_ray(Tensor::vector({1e6, 2, 3}), colors, Tensor::vector({1, 1, 1}));
    const auto vacuum = volume_render_ray(Tensor::zeros({3}), colors, Tensor::vector({1, 1, 1}));
    bool limits = true;
    for (int k = 0; k < 3; ++k) limits = limits && opaque.color[k] == colors[k] && vacuum.color[k] == 0.0;
    return {hand_ok && split_err <= 1e-12 && limits,
            fmt("hand case (%.6f, %.6f, %g) |diff| %.3g, splitting |diff| %.3g, limits exact: %s", hand.color[0],
                hand.color[1], hand.color[2], hand_err, split_err, limits ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// Training trends on the 2-D image task

constexpr std::uint64_t kValidationSeed = 100;
const std::vector<std::uint64_t> kScoreSeeds{0, 1, 2};

TrainConfig image_protocol(std::uint64_t seed, double frac, double noise, double lambda) {
    TrainConfig cfg;
    cfg.task = FieldTask::Image2d;
    cfg.batch = 1024;
    cfg.iterations = 3000;
    cfg.eval_period = cfg.iterations;
    cfg.seed = seed;
    cfg.train_fraction = frac;
    cfg.noise_std = noise;
    cfg.loss.lambda = lambda;
    cfg.hidden = {64, 64, 64};
    cfg.encoding = EncodingConfig{8, 0};
    cfg.adam.lr = 2e-3;
    cfg.schedule = LrSchedule{0.5, 1000};
    return cfg;
}

const Dataset& test_card() {
    static const Dataset data = Dataset::image(procedural_image(128, 128, 0));
    return data;
}

double image_psnr(std::uint64_t seed, double frac, double noise, double lambda) {
    const auto r = train(image_protocol(seed, frac, noise, lambda), test_card());
    const double p = r.log.records.back().test_psnr;
    std::cerr << fmt("  image2d seed %llu frac %.2f noise %.1f lambda %g: %.3f dB\n",
                     static_cast<unsigned long long>(seed), frac, noise, lambda, p);
    return p;
}

// Best lambda of the grid on the validation seed.
double select_lambda(double frac, double noise) {
    double best = 0, best_psnr = -1e300;
    for (double lambda : lambda_grid_nerf()) {
        const double p = image_psnr(kValidationSeed, frac, noise, lambda);
        if (p > best_psnr) {
            best_psnr = p;
            best = lambda;
        }
    }
    return best;
}

double mean_gap(double frac, double noise, double lambda) {
    std::vector<double> gaps;
    for (auto seed : kScoreSeeds) gaps.push_back(image_psnr(seed, frac, noise, lambda) - image_psnr(seed, frac, noise, 0));
    return mean(gaps);
}

Outcome sparse_trend() {
    const double c0 = cpu_seconds();
    const double lambda = select_lambda(0.25, 0.0);
    const double sparse = mean_gap(0.25, 0.0, lambda);
    const double full = mean_gap(1.0, 0.0, lambda);
    const double cpu = cpu_seconds() - c0;
    return {sparse >= 0 && sparse >= full - 0.3 && cpu < 900,
            fmt("lambda %g, gap %+.3f dB at frac 0.25, %+.3f dB at frac 1.0, %.0f s CPU", lambda, sparse, full, cpu)};
}

Outcome corruption_trend() {
    const double lambda = select_lambda(0.25, 0.4);
    const double gap = mean_gap(0.25, 0.4, lambda);
    return {gap >= 0, fmt("lambda %g, multiplex - standard %+.3f dB at noise 0.4", lambda, gap)};
}

Outcome overhead() {
    auto cfg = TrainConfig{};
    cfg.task = FieldTask::Image2d;
    cfg.batch = 4096;
    cfg.iterations = 20;
    cfg.eval_period = 1000;
    const Dataset data = Dataset::image(procedural_image(128, 128, 0));
    std::vector<double> standard, multiplex;
    // alternate short runs so drift in machine speed hits both sides
    for (int round = 0; round < 4; ++round) {
        for (double lambda : {0.0, 1.0}) {
            cfg.loss.lambda = lambda;
            cfg.loss.repeats = 1;
            cfg.seed = static_cast<std::uint64_t>(round);
            auto r = train(cfg, data);
            auto& dst = lambda == 0 ? standard : multiplex;
            dst.insert(dst.end(), r.step_ms.begin() + 2, r.step_ms.end());
        }
    }
    auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
    };
    const double s = median(standard), m = median(multiplex);
    return {m / s <= 1.25, fmt("median step %.2f ms standard, %.2f ms multiplex (M = 1), ratio %.3f", s, m, m / s)};
}

// ---------------------------------------------------------------------------
// Command-line determinism

std::string file_bytes(const fs::path& p) {
    const auto b = detail::read_bytes(p);
    return {b.begin(), b.end()};
}

Outcome determinism() {
    const auto dir = fs::temp_directory_path() / "s3im_acceptance" / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto cli = [&](const std::vector<std::string>& args) {
        std::string cmd = std::string("\"") + S3IM_CLI_PATH + "\"";
        for (const auto& a : args) cmd += " \"" + a + "\"";
        cmd += " > /dev/null";
        return std::system(cmd.c_str());
    };
    bool ok = cli({"make-scene", "--task", "image2d", "--out", (dir / "card").string(), "--resolution", "48"}) == 0 &&
              cli({"make-scene", "--task", "toy-nerf", "--out", (dir / "scene").string(), "--resolution", "16",
                   "--cameras", "6", "--samples", "8"}) == 0;
    int compared = 0;
    const std::vector<std::vector<std::string>> runs{
        {"--data", (dir / "card" / "image.ppm").string(), "--batch", "256", "--iters", "150", "--eval-period", "50",
         "--hidden", "32,32", "--lambda", "1", "--M", "4", "--noise-std", "0.1", "--train-frac", "0.5", "--seed", "9"},
        {"--task", "toy-nerf", "--data", (dir / "scene").string(), "--batch", "256", "--iters", "40", "--eval-period",
         "20", "--hidden", "16,16", "--lambda", "0.5", "--seed", "4"}};
    for (std::size_t i = 0; ok && i < runs.size(); ++i) {
        std::vector<fs::path> outs;
        for (const char* copy : {"a", "b"}) {
            outs.push_back(dir / (std::to_string(i) + copy));
            std::vector<std::string> args{"train", "--out", outs.back().string()};
            args.insert(args.end(), runs[i].begin(), runs[i].end());
            ok = ok && cli(args) == 0;
        }
        ok = ok && file_bytes(outs[0] / "log.csv") == file_bytes(outs[1] / "log.csv") &&
             file_bytes(outs[0] / "final.ckpt") == file_bytes(outs[1] / "final.ckpt");
        compared += 2;
    }
    return {ok && compared == 4, fmt("%d file pairs compared across separate processes", compared)};
}

// ---------------------------------------------------------------------------
// Toy radiance-field ablations

struct NerfProtocol {
    std::size_t resolution;
    std::size_t batch;
    std::size_t iterations;
};

double nerf_psnr(const NerfProtocol& p, std::uint64_t seed, std::size_t kernel, bool local) {
    RayBounds bounds;
    bounds.samples = 16;
    const auto scene = make_synthetic_scene(0, p.resolution, 12, bounds);
    std::vector<ImageBuffer> views;
    for (std::size_t c = 0; c < 12; ++c) views.push_back(quantize(scene.reference_image(c)));
    TrainConfig cfg;
    cfg.task = FieldTask::ToyNerf;
    cfg.batch = p.batch;
    cfg.iterations = p.iterations;
    cfg.eval_period = p.iterations;
    cfg.seed = seed;
    cfg.loss.lambda = 1;
    cfg.loss.window = WindowSpec::uniform(kernel);
    cfg.local_patch_baseline = local;
    cfg.hidden = {32, 32};
    cfg.encoding = EncodingConfig{6, 2};
    cfg.adam.lr = 5e-3;
    const auto r = train(cfg, Dataset::scene(scene.rig, views));
    const double psnr = r.log.records.back().test_psnr;
    std::cerr << fmt("  toy-nerf seed %llu K %zu %s: %.3f dB\n", static_cast<unsigned long long>(seed), kernel,
                     local ? "local" : "stochastic", psnr);
    return psnr;
}

Outcome kernel_ablation() {
    const NerfProtocol p{32, 4096, 400};
    std::vector<double> small, large;
    for (std::uint64_t seed : {0, 1}) {
        small.push_back(nerf_psnr(p, seed, 4, false));
        large.push_back(nerf_psnr(p, seed, 64, false));
    }
    return {mean(small) >= mean(large), fmt("K = 4 %.3f dB, K = 64 %.3f dB (mean of 2 seeds)", mean(small), mean(large))};
}

Outcome local_vs_stochastic() {
    const NerfProtocol p{48, 1024, 800};
    std::vector<double> stochastic, local;
    for (std::uint64_t seed : kScoreSeeds) {
        stochastic.push_back(nerf_psnr(p, seed, 4, false));
        local.push_back(nerf_psnr(p, seed, 4, true));
    }
    return {mean(stochastic) >= mean(local),
            fmt("stochastic %.3f dB, local %.3f dB (mean of 3 seeds)", mean(stochastic), mean(local))};
}

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // keep freed tensor storage in the heap instead of returning it to the kernel every step
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
        {1, {"ssim oracle equivalence", ssim_oracle}},
        {2, {"analytic ssim cases", analytic_ssim}},
        {3, {"gradient suite", gradient_suite}},
        {4, {"loss identities", identities}},
        {5, {"volume-rendering quadrature", quadrature}},
        {6, {"sparse-input trend", sparse_trend}},
        {7, {"corruption trend", corruption_trend}},
        {8, {"kernel ablation", kernel_ablation}},
        {9, {"overhead bound", overhead}},
        {10, {"determinism", determinism}},
        {11, {"local vs stochastic patches", local_vs_stochastic}},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    if (selected.empty()) {
        for (const auto& [id, c] : criteria) selected.push_back(id);
    }
    int failed = 0;
    for (int id : selected) {
        const auto it = criteria.find(id);
        if (it == criteria.end()) {
            std::cerr << "unknown criterion " << id << "\n";
            return 2;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = it->second.second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << fmt("criterion %2d %s  %s: %s (%.0f s)", id, o.pass ? "PASS" : "FAIL", it->second.first,
                         o.detail.c_str(), seconds_since(t0))
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
