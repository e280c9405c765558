#pragma once

// Multiplex training loop: minibatch sampling, combined loss, one backward pass, Adam.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/field.hpp"
#include "s3im/image.hpp"
#include "s3im/losses.hpp"
#include "s3im/metrics.hpp"
#include "s3im/patch.hpp"
#include "s3im/rng.hpp"
#include "s3im/runlog.hpp"
#include "s3im/scene.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// Step decay: lr(step) = lr0 * factor^floor(step / period). period 0 disables decay.
struct LrSchedule {
    double factor = 1.0;
    std::size_t period = 0;

    double at(double lr0, std::size_t step) const {
        if (period == 0) return lr0;
        return lr0 * std::pow(factor, static_cast<double>(step / period));
    }
};

struct AdamState {
    std::vector<double> first;
    std::vector<double> second;
    std::size_t step = 0;

    explicit AdamState(std::size_t n = 0) : first(n, 0.0), second(n, 0.0) {}

    /// One bias-corrected Adam update of `params` in place.
    void update(std::vector<double>& params, std::span<const double> grad, const AdamConfig& cfg, double lr) {
        if (grad.size() != params.size() || first.size() != params.size()) {
            throw ShapeError("AdamState::update: parameter/gradient size mismatch");
        }
        ++step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * grad[i];
            second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double mhat = first[i] / bc1;
            const double vhat = second[i] / bc2;
            params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
};

struct TrainConfig {
    FieldTask task = FieldTask::Image2d;
    LossConfig loss{};
    std::size_t batch = 4096;
    std::size_t iterations = 2000;
    AdamConfig adam{};
    LrSchedule schedule{};
    std::size_t eval_period = 250;
    std::uint64_t seed = 0;
    double train_fraction = 1.0;
    double noise_std = 0.0;
    bool local_patch_baseline = false;
    bool single_image_batches = false;
    bool record_wall_time = false;
    std::vector<std::size_t> hidden;  ///< empty: task default
    std::optional<EncodingConfig> encoding;

    std::vector<std::size_t> resolved_hidden() const {
        if (!hidden.empty()) return hidden;
        return task == FieldTask::Image2d ? std::vector<std::size_t>{128, 128, 128, 128}
                                          : std::vector<std::size_t>{96, 96, 96, 96};
    }

    EncodingConfig resolved_encoding() const {
        if (encoding) return *encoding;
        return task == FieldTask::Image2d ? EncodingConfig{10, 0} : EncodingConfig{6, 2};
    }

    /// Patch side length used by the S3IM term (or the local crop).
    std::size_t patch_side() const { return s3im::patch_side(batch, loss.window.kernel); }

    void validate() const {
        loss.validate();
        if (batch == 0) throw ConfigError("batch", "batch must be >= 1");
        if (iterations == 0) throw ConfigError("iters", "iterations must be >= 1");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train-frac", "train-frac must be in (0, 1]");
        if (!(noise_std >= 0.0)) throw ConfigError("noise-std", "noise-std must be >= 0");
        if (!(adam.lr >= 0.0)) throw ConfigError("lr", "lr must be >= 0");
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1", "beta1 must be in [0, 1)");
        if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2", "beta2 must be in [0, 1)");
        if (!(schedule.factor > 0.0)) throw ConfigError("lr-decay", "lr-decay must be > 0");
        if (loss.lambda > 0.0 || local_patch_baseline) {
            try {
                patch_side();
            } catch (const ShapeError& e) {
                throw ConfigError("batch", std::string("batch incompatible with the patch layout: ") + e.what());
            }
        }
        if (local_patch_baseline && loss.window.stride != loss.window.kernel) {
            throw ConfigError("kernel", "local-patch baseline needs stride == kernel");
        }
    }
};

// ---------------------------------------------------------------------------
// Datasets and protocols

/// Images plus, for radiance fields, the cameras that produced them.
struct Dataset {
    FieldTask task = FieldTask::Image2d;
    std::vector<ImageBuffer> images;
    CameraRig rig;  ///< toy-nerf only

    static Dataset image(ImageBuffer img) {
        Dataset d;
        d.task = FieldTask::Image2d;
        d.images.push_back(std::move(img));
        return d;
    }

    static Dataset scene(CameraRig rig, std::vector<ImageBuffer> images) {
        Dataset d;
        d.task = FieldTask::ToyNerf;
        d.rig = std::move(rig);
        d.images = std::move(images);
        if (d.images.size() != d.rig.cameras.size()) throw ShapeError("Dataset: one image per camera required");
        return d;
    }
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Image indices divisible by 10 go to the test set, the rest to training.
inline Split split_train_test(std::size_t image_count) {
    Split s;
    for (std::size_t i = 0; i < image_count; ++i) (i % 10 == 0 ? s.test : s.train).push_back(i);
    return s;
}

/// Keep ceil(fraction * n) of the items, chosen uniformly at random and returned sorted.
inline std::vector<std::size_t> subsample_train(const std::vector<std::size_t>& items, double fraction, Rng rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("train-frac", "train-frac must be in (0, 1]");
    if (fraction == 1.0) return items;
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(items.size()) - 1e-9));
    auto chosen = rng.sample_without_replacement(items.size(), std::min(keep, items.size()));
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> out;
    out.reserve(chosen.size());
    for (auto i : chosen) out.push_back(items[i]);
    return out;
}

/// Add i.i.d. N(0, std^2) noise to every channel and clip into [0, 1].
inline ImageBuffer corrupt_image(const ImageBuffer& img, double std_dev, Rng& rng) {
    if (!(std_dev >= 0.0)) throw ConfigError("noise-std", "noise-std must be >= 0");
    if (std_dev == 0.0) return img;
    ImageBuffer out = img;
    for (double& v : out.rgb) v = std::clamp(v + std_dev * rng.normal(), 0.0, 1.0);
    return out;
}

/// Corrupt only the images listed in `train`; test images are returned untouched.
inline std::vector<ImageBuffer> corrupt_images(const std::vector<ImageBuffer>& images,
                                               const std::vector<std::size_t>& train, double std_dev, Rng rng) {
    std::vector<ImageBuffer> out = images;
    for (std::size_t i : train) {
        Rng stream = rng.split(i);
        out.at(i) = corrupt_image(images.at(i), std_dev, stream);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalMetrics {
    double psnr = 0;  ///< mean over test images
    double ssim = 0;  ///< mean evaluation-grade SSIM
    std::vector<double> image_psnr;
    std::vector<double> image_ssim;
    std::vector<ImageBuffer> renders;
};

/// Render a full view of the dataset with the model.
inline ImageBuffer render_view(const FieldModel& model, const Dataset& data, std::size_t image) {
    if (model.task == FieldTask::Image2d) {
        return render_image_field(model, data.images.at(image).width, data.images.at(image).height);
    }
    const auto params = FieldParams::bind(model);
    const auto rays = data.rig.rays(image);
    ImageBuffer img(data.rig.width, data.rig.height);
    // a row at a time keeps the sample tensors small
    const std::size_t w = data.rig.width;
    for (std::size_t r = 0; r < data.rig.height; ++r) {
        const auto c = render_rays(model, params, std::span<const RaySample>(rays.data() + r * w, w)).color;
        std::copy(c.values().begin(), c.values().end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(r * w * 3));
    }
    return img;
}

/// Test images: the single clean image for image fields, the held-out views otherwise.
inline std::vector<std::size_t> test_indices(const Dataset& data) {
    if (data.task == FieldTask::Image2d) return {0};
    return split_train_test(data.images.size()).test;
}

inline EvalMetrics evaluate(const FieldModel& model, const Dataset& data, const std::vector<std::size_t>& test) {
    if (test.empty()) throw ConfigError("data", "evaluate: empty test set");
    if (model.task != data.task) throw ConfigError("checkpoint", "model task does not match the dataset");
    EvalMetrics m;
    for (std::size_t i : test) {
        auto img = render_view(model, data, i);
        const auto& ref = data.images.at(i);
        m.image_psnr.push_back(psnr(img.rgb, ref.rgb, 1.0));
        m.image_ssim.push_back(msssim_eval(img.tensor(), ref.tensor()));
        m.renders.push_back(std::move(img));
    }
    for (std::size_t k = 0; k < test.size(); ++k) {
        m.psnr += m.image_psnr[k];
        m.ssim += m.image_ssim[k];
    }
    m.psnr /= static_cast<double>(test.size());
    m.ssim /= static_cast<double>(test.size());
    return m;
}

inline EvalMetrics evaluate(const FieldModel& model, const Dataset& data) { return evaluate(model, data, test_indices(data)); }

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    RunLog log;
    FieldModel model;
    FieldModel initial_model;
    std::vector<double> step_ms;                       ///< wall time of every step
    std::vector<std::vector<std::size_t>> first_batches;  ///< pool indices of the first three minibatches
    std::vector<std::size_t> train_images;             ///< dataset images used for training
};

namespace detail {

// stream tags under the run seed
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kSubsampleStream = 2;
inline constexpr std::uint64_t kNoiseStream = 3;
inline constexpr std::uint64_t kBatchStream = 4;
inline constexpr std::uint64_t kPatchStream = 5;
inline constexpr std::uint64_t kJitterStream = 6;

struct PoolEntry {
    std::uint32_t image;
    std::uint32_t pixel;  ///< row-major pixel index
};

struct TrainingPool {
    std::vector<PoolEntry> entries;
    std::vector<ImageBuffer> targets;               ///< possibly corrupted copies, indexed like the dataset
    std::vector<std::vector<std::size_t>> by_image;  ///< pool indices per image
    std::vector<std::size_t> images;                ///< training image ids
    bool complete_images = true;                    ///< every pixel of each training image is present
    std::vector<std::vector<RaySample>> rays;       ///< per image, toy-nerf only
    std::vector<PixelSamples> pixels;               ///< per image, image2d only
};

inline TrainingPool build_pool(const Dataset& data, const TrainConfig& cfg, const Rng& root) {
    TrainingPool pool;
    std::vector<std::size_t> pixel_subset;
    if (data.task == FieldTask::Image2d) {
        if (data.images.size() != 1) throw ConfigError("data", "image2d expects exactly one image");
        pool.images = {0};
        std::vector<std::size_t> all(data.images[0].pixels());
        std::iota(all.begin(), all.end(), std::size_t{0});
        pixel_subset = subsample_train(all, cfg.train_fraction, root.split(kSubsampleStream));
        pool.complete_images = pixel_subset.size() == all.size();
    } else {
        const auto split = split_train_test(data.images.size());
        if (split.train.empty()) throw ConfigError("data", "scene has no training views");
        pool.images = subsample_train(split.train, cfg.train_fraction, root.split(kSubsampleStream));
    }
    pool.targets = corrupt_images(data.images, pool.images, cfg.noise_std, root.split(kNoiseStream));
    pool.by_image.resize(data.images.size());
    pool.rays.resize(data.images.size());
    pool.pixels.resize(data.images.size());
    for (std::size_t img : pool.images) {
        const auto& ref = data.images[img];
        if (data.task == FieldTask::Image2d) {
            pool.pixels[img] = image_field_dataset(ref, static_cast<std::uint32_t>(img));
            for (std::size_t p : pixel_subset) {
                pool.by_image[img].push_back(pool.entries.size());
                pool.entries.push_back({static_cast<std::uint32_t>(img), static_cast<std::uint32_t>(p)});
            }
        } else {
            pool.rays[img] = data.rig.rays(img);
            for (std::size_t p = 0; p < ref.pixels(); ++p) {
                pool.by_image[img].push_back(pool.entries.size());
                pool.entries.push_back({static_cast<std::uint32_t>(img), static_cast<std::uint32_t>(p)});
            }
        }
    }
    return pool;
}

/// Pool indices of one minibatch. Local-patch batches are contiguous crops in row-major order.
inline std::vector<std::size_t> draw_batch(const TrainingPool& pool, const Dataset& data, const TrainConfig& cfg,
                                           Rng rng) {
    if (cfg.local_patch_baseline) {
        const std::size_t side = cfg.patch_side();
        const std::size_t img = pool.images[rng.below(pool.images.size())];
        const auto& ref = data.images[img];
        if (ref.height < side || ref.width < side) {
            throw ConfigError("batch", "local patch of side " + std::to_string(side) + " exceeds the image size");
        }
        const auto top = static_cast<std::size_t>(rng.below(ref.height - side + 1));
        const auto left = static_cast<std::size_t>(rng.below(ref.width - side + 1));
        auto idx = local_patch_indices(ref.height, ref.width, top, left, side);
        for (auto& p : idx) p = pool.by_image[img][p];
        return idx;
    }
    if (cfg.single_image_batches) {
        const std::size_t img = pool.images[rng.below(pool.images.size())];
        const auto& members = pool.by_image[img];
        if (members.size() < cfg.batch) throw ConfigError("batch", "batch exceeds the pixels of one training image");
        auto pick = rng.sample_without_replacement(members.size(), cfg.batch);
        for (auto& p : pick) p = members[p];
        return pick;
    }
    return rng.sample_without_replacement(pool.entries.size(), cfg.batch);
}

/// Predicted colors [B, 3] of the batch and its targets.
inline PixelBatch forward_batch(const FieldModel& model, const FieldParams& params, const TrainingPool& pool,
                                const std::vector<std::size_t>& batch, Rng* jitter) {
    std::vector<double> target;
    target.reserve(batch.size() * 3);
    std::vector<PixelSource> meta;
    meta.reserve(batch.size());
    for (std::size_t i : batch) {
        const auto& e = pool.entries[i];
        const auto& img = pool.targets[e.image];
        for (int c = 0; c < 3; ++c) target.push_back(img.rgb[e.pixel * 3 + c]);
        meta.push_back({e.image, static_cast<std::uint32_t>(e.pixel / img.width),
                        static_cast<std::uint32_t>(e.pixel % img.width)});
    }
    Tensor predicted;
    if (model.task == FieldTask::Image2d) {
        std::vector<double> coords;
        coords.reserve(batch.size() * 2);
        for (std::size_t i : batch) {
            const auto& e = pool.entries[i];
            const auto& px = pool.pixels[e.image];
            coords.push_back(px.coords[e.pixel * 2]);
            coords.push_back(px.coords[e.pixel * 2 + 1]);
        }
        predicted = field_forward(model, params, encode_image_inputs(coords, model.encoding)).color;
    } else {
        std::vector<RaySample> rays;
        rays.reserve(batch.size());
        for (std::size_t i : batch) {
            const auto& e = pool.entries[i];
            rays.push_back(pool.rays[e.image][e.pixel]);
        }
        predicted = render_rays(model, params, rays, jitter).color;
    }
    const std::size_t n = batch.size();
    return PixelBatch(predicted, Tensor(Shape{n, 3}, std::move(target)), std::move(meta));
}

/// Base loss plus lambda * (1 - mean SSIM) of a contiguous crop laid out as its own patch.
inline MultiplexLoss local_patch_loss(const PixelBatch& batch, const LossConfig& cfg, std::size_t side) {
    MultiplexLoss out;
    Tensor base = base_loss(batch, cfg.base);
    out.base = base.item();
    if (cfg.lambda == 0.0) {
        out.total = std::move(base);
        return out;
    }
    const auto map = ssim_map(reshape(batch.predicted, {side, side, 3}), reshape(batch.target, {side, side, 3}),
                              cfg.window, cfg.constants);
    const Tensor component = 1.0 - map.mean;
    out.s3im_component = component.item();
    out.per_patch = {map.mean.item()};
    out.total = base + cfg.lambda * component;
    return out;
}

} // namespace detail

/// Run `cfg.iterations` optimizer steps on `data` and evaluate on its test views.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data,
                         const std::function<void(const EvalRecord&)>& on_eval = {}) {
    cfg.validate();
    if (cfg.task != data.task) throw ConfigError("task", "task does not match the dataset");
    if (cfg.local_patch_baseline && cfg.train_fraction < 1.0 && data.task == FieldTask::Image2d) {
        throw ConfigError("local-patch-baseline", "local-patch baseline on image2d needs train-frac 1");
    }
    using Clock = std::chrono::steady_clock;
    const Rng root(cfg.seed);

    const auto pool = detail::build_pool(data, cfg, root);
    if (pool.entries.empty()) throw ConfigError("train-frac", "no training data left after subsampling");
    if (!cfg.local_patch_baseline && pool.entries.size() < cfg.batch) {
        throw ConfigError("batch", "batch " + std::to_string(cfg.batch) + " exceeds the " +
                                       std::to_string(pool.entries.size()) + " training pixels");
    }
    const auto test = test_indices(data);
    if (test.empty()) throw ConfigError("data", "dataset has no test views");

    TrainResult result;
    result.model = FieldModel::create(cfg.task, cfg.resolved_encoding(), cfg.resolved_hidden(), root.split(detail::kInitStream));
    result.initial_model = result.model;
    result.train_images = pool.images;
    std::vector<double> params = result.model.flat();
    AdamState adam(params.size());
    double train_ms = 0;

    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        const auto start = Clock::now();
        const auto batch_idx = detail::draw_batch(pool, data, cfg, root.split(detail::kBatchStream, step));
        if (result.first_batches.size() < 3) result.first_batches.push_back(batch_idx);

        Tape tape;
        const auto bound = FieldParams::bind(result.model, &tape);
        Rng jitter = root.split(detail::kJitterStream, step);
        const auto batch = detail::forward_batch(result.model, bound, pool, batch_idx, &jitter);
        const auto loss = cfg.local_patch_baseline
                              ? detail::local_patch_loss(batch, cfg.loss, cfg.patch_side())
                              : multiplex_loss(batch, cfg.loss, root.split(detail::kPatchStream, step));
        const auto grads = tape.backward(loss.total);
        const auto flat_grad = bound.flat_gradient(grads);
        adam.update(params, flat_grad, cfg.adam, cfg.schedule.at(cfg.adam.lr, step));
        result.model.set_flat(params);

        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        result.step_ms.push_back(ms);
        train_ms += ms;

        const std::size_t done = step + 1;
        const bool tick = cfg.eval_period > 0 && done % cfg.eval_period == 0;
        if (tick || done == cfg.iterations) {
            auto metrics = evaluate(result.model, data, test);
            EvalRecord rec;
            rec.iteration = done;
            rec.train_mse = loss.base;
            rec.train_s3im = loss.s3im_component;
            rec.test_psnr = metrics.psnr;
            rec.test_ssim = metrics.ssim;
            rec.wall_ms = cfg.record_wall_time ? train_ms : 0.0;
            result.log.records.push_back(rec);
            if (on_eval) on_eval(rec);
            if (done == cfg.iterations) result.log.test_images = std::move(metrics.renders);
        }
    }
    return result;
}

} // namespace s3im
