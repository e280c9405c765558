#pragma once

// Central-difference verification of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "s3im/field.hpp"
#include "s3im/losses.hpp"
#include "s3im/metrics.hpp"
#include "s3im/rng.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

/// |a - b| / max(|a|, |b|, floor). The floor keeps gradients that are zero up to
/// roundoff from dominating the relative measure.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Scalar function of a tensor, built on whatever tape the argument lives on.
using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max relative error between the tape gradient of f at x0 and central differences.
inline double gradient_check(const ScalarFn& f, const Tensor& x0, double h = 1e-5) {
    Tape tape;
    const Tensor x = tape.variable(x0);
    const Tensor y = f(x);
    const auto grads = tape.backward(y);
    const auto analytic = grads[x];

    std::vector<double> probe(x0.values().begin(), x0.values().end());
    double worst = 0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = f(Tensor(x0.shape(), probe)).item();
        probe[i] = saved - h;
        const double down = f(Tensor(x0.shape(), probe)).item();
        probe[i] = saved;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
    }
    return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

/// Uniform in [lo, hi] but at least `gap` away from zero.
inline Tensor random_tensor_off_zero(Shape shape, Rng& rng, double lo, double hi, double gap) {
    std::vector<double> v(numel(shape));
    for (double& x : v) {
        do {
            x = rng.uniform(lo, hi);
        } while (std::abs(x) < gap);
    }
    return Tensor(std::move(shape), std::move(v));
}

struct GradCheck {
    std::string group;
    std::string name;
    double max_rel_error = 0;
    bool passed = false;
};

/// Run every differentiable path of the library through the finite-difference oracle.
inline std::vector<GradCheck> run_gradcheck_suite(std::uint64_t seed, double tolerance, double h = 1e-5) {
    std::vector<GradCheck> out;
    Rng rng = Rng(seed).split(0x6C4ECC);
    auto add = [&](const std::string& group, const std::string& name, double err) {
        out.push_back({group, name, err, err < tolerance});
    };

    // elementwise
    {
        const Tensor x = random_tensor_off_zero({6}, rng, -2, 2, 0.05);
        const Tensor pos = random_tensor({6}, rng, 0.5, 2);
        const Tensor other = random_tensor_off_zero({6}, rng, -2, 2, 0.3);
        const std::vector<std::pair<std::string, UnaryOp>> unary{
            {"neg", UnaryOp::Neg},         {"exp", UnaryOp::Exp},   {"square", UnaryOp::Square},
            {"relu", UnaryOp::Relu},       {"sigmoid", UnaryOp::Sigmoid}, {"sin", UnaryOp::Sin},
            {"cos", UnaryOp::Cos},         {"abs", UnaryOp::Abs},   {"softplus", UnaryOp::Softplus}};
        for (const auto& [name, op] : unary) {
            add("elementwise", name, gradient_check([op](const Tensor& t) { return sum(elementwise(op, t)); }, x, h));
        }
        add("elementwise", "ln", gradient_check([](const Tensor& t) { return sum(log(t)); }, pos, h));
        add("elementwise", "sqrt", gradient_check([](const Tensor& t) { return sum(sqrt(t)); }, pos, h));
        add("elementwise", "clamp", gradient_check([](const Tensor& t) { return sum(square(clamp(t, -1.0, 1.0))); }, x, h));
        add("elementwise", "add", gradient_check([&](const Tensor& t) { return sum(square(t + other)); }, x, h));
        add("elementwise", "sub", gradient_check([&](const Tensor& t) { return sum(square(other - t)); }, x, h));
        add("elementwise", "mul", gradient_check([&](const Tensor& t) { return sum(t * other * t); }, x, h));
        add("elementwise", "div", gradient_check([&](const Tensor& t) { return sum(t / other + other / t); }, x, h));
        add("elementwise", "scalar-broadcast",
            gradient_check([](const Tensor& t) { return sum(t * reshape(gather(reshape(t, {6}), {2}), {})); }, x, h));
    }

    // reduce
    {
        const Tensor x = random_tensor({2, 3, 4}, rng, -2, 2);
        add("reduce", "sum-axis1", gradient_check([](const Tensor& t) { return sum(square(sum(t, {1}))); }, x, h));
        add("reduce", "mean-axes02", gradient_check([](const Tensor& t) { return sum(square(mean(t, {0, 2}))); }, x, h));
    }

    // matmul
    {
        const Tensor a = random_tensor({3, 4}, rng, -2, 2);
        const Tensor b = random_tensor({4, 2}, rng, -2, 2);
        add("matmul", "lhs", gradient_check([&](const Tensor& t) { return sum(square(matmul(t, b))); }, a, h));
        add("matmul", "rhs", gradient_check([&](const Tensor& t) { return sum(square(matmul(a, t))); }, b, h));
        const Tensor bias = random_tensor({1, 2}, rng, -2, 2);
        add("linear", "input", gradient_check([&](const Tensor& t) { return sum(square(linear(t, b, bias))); }, a, h));
        add("linear", "weight", gradient_check([&](const Tensor& t) { return sum(square(linear(a, t, bias))); }, b, h));
        add("linear", "bias", gradient_check([&](const Tensor& t) { return sum(square(linear(a, b, t))); }, bias, h));
    }

    // gather
    {
        const Tensor x = random_tensor({5, 2}, rng, -2, 2);
        add("gather", "repeat-rows",
            gradient_check([](const Tensor& t) { return sum(square(gather(t, {4, 0, 0, 2, 4, 4}))); }, x, h));
    }

    const SsimConstants constants{};

    // SSIM window and map
    {
        const Tensor a = random_tensor({16}, rng, 0, 1);
        const Tensor b = random_tensor({16}, rng, 0, 1);
        const auto uw = WindowSpec::uniform(4).weights();
        add("ssim", "window-uniform", gradient_check([&](const Tensor& t) { return ssim_window(t, b, uw, constants); }, a, h));
        const auto gw = WindowSpec{WindowKind::Gaussian, 4, 1, 1.5}.weights();
        add("ssim", "window-gaussian", gradient_check([&](const Tensor& t) { return ssim_window(t, b, gw, constants); }, a, h));

        const Tensor pa = random_tensor({8, 8, 3}, rng, 0, 1);
        const Tensor pb = random_tensor({8, 8, 3}, rng, 0, 1);
        add("ssim", "map-k4-s4", gradient_check([&](const Tensor& t) {
                return ssim_map(t, pb, WindowSpec::uniform(4), constants).mean;
            }, pa, h));
        add("ssim", "map-gauss-k5-s1", gradient_check([&](const Tensor& t) {
                return ssim_map(t, pb, WindowSpec{WindowKind::Gaussian, 5, 1, 1.5}, constants).mean;
            }, pa, h));
    }

    // S3IM through the permutation gather
    {
        const Tensor pred = random_tensor({16, 3}, rng, 0, 1);
        const Tensor target = random_tensor({16, 3}, rng, 0, 1);
        const Rng stream = rng.split(77);
        add("s3im", "s3im-M1", gradient_check([&](const Tensor& t) {
                return s3im(PixelBatch(t, target), 1, WindowSpec::uniform(4), constants, stream).value;
            }, pred, h));
        add("s3im", "s3im-M4", gradient_check([&](const Tensor& t) {
                return s3im(PixelBatch(t, target), 4, WindowSpec::uniform(2), constants, stream).value;
            }, pred, h));
    }

    // losses
    {
        const Tensor pred = random_tensor({16, 3}, rng, 0, 1);
        Tensor target = random_tensor({16, 3}, rng, 0, 1);
        // keep L1 residuals away from the kink
        std::vector<double> tv(target.values().begin(), target.values().end());
        for (std::size_t i = 0; i < tv.size(); ++i) {
            if (std::abs(tv[i] - pred[i]) < 0.1) tv[i] = pred[i] > 0.5 ? pred[i] - 0.3 : pred[i] + 0.3;
        }
        target = Tensor(target.shape(), tv);
        LossConfig cfg;
        cfg.lambda = 1.0;
        cfg.repeats = 3;
        const Rng stream = rng.split(78);
        add("losses", "mse", gradient_check([&](const Tensor& t) { return mse_loss(PixelBatch(t, target)); }, pred, h));
        add("losses", "l1", gradient_check([&](const Tensor& t) { return l1_color_loss(PixelBatch(t, target)); }, pred, h));
        add("losses", "multiplex-mse", gradient_check([&](const Tensor& t) {
                return multiplex_loss(PixelBatch(t, target), cfg, stream).total;
            }, pred, h));
        LossConfig l1cfg = cfg;
        l1cfg.base = BaseLoss::L1;
        add("losses", "multiplex-l1", gradient_check([&](const Tensor& t) {
                return multiplex_loss(PixelBatch(t, target), l1cfg, stream).total;
            }, pred, h));
    }

    // volume rendering
    {
        const Tensor dens = random_tensor({2, 5}, rng, 0.1, 3);
        const Tensor cols = random_tensor({2, 5, 3}, rng, 0, 1);
        const Tensor deltas = random_tensor({2, 5}, rng, 0.05, 0.5);
        const Tensor probe = random_tensor({2, 3}, rng, -1, 1);
        add("volume_render", "densities", gradient_check([&](const Tensor& t) {
                return sum(volume_render(t, cols, deltas).color * probe);
            }, dens, h));
        add("volume_render", "colors", gradient_check([&](const Tensor& t) {
                return sum(volume_render(dens, t, deltas).color * probe);
            }, cols, h));
    }

    // field networks, differentiated with respect to the flat weights
    auto model_check = [&](const FieldModel& proto, const std::function<Tensor(const FieldModel&, const FieldParams&)>& loss) {
        const std::vector<double> theta0 = proto.flat();
        auto value_grad = [&](const std::vector<double>& theta, bool want_grad, std::vector<double>* grad) {
            FieldModel m = proto;
            m.set_flat(theta);
            Tape tape;
            const auto params = FieldParams::bind(m, want_grad ? &tape : nullptr);
            const Tensor y = loss(m, params);
            if (want_grad) *grad = params.flat_gradient(tape.backward(y));
            return y.item();
        };
        std::vector<double> analytic;
        value_grad(theta0, true, &analytic);
        std::vector<double> probe = theta0;
        double worst = 0;
        for (std::size_t i = 0; i < probe.size(); ++i) {
            const double saved = probe[i];
            probe[i] = saved + h;
            const double up = value_grad(probe, false, nullptr);
            probe[i] = saved - h;
            const double down = value_grad(probe, false, nullptr);
            probe[i] = saved;
            worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
        }
        return worst;
    };

    {
        // 2-16-3 image field on 8 random inputs
        FieldModel m = FieldModel::create(FieldTask::Image2d, EncodingConfig{0, 0}, {16}, rng.split(1));
        for (auto& l : m.layers) {
            for (double& b : l.bias) b = rng.uniform(-0.5, 0.5);
        }
        const Tensor inputs = random_tensor({8, 2}, rng, 0, 1);
        const Tensor probe = random_tensor({8, 3}, rng, -1, 1);
        add("field", "image-field-2-16-3", model_check(m, [&](const FieldModel& mm, const FieldParams& p) {
                return sum(field_forward(mm, p, inputs).color * probe);
            }));
    }

    {
        // tiny radiance field, 16 rays of 4 samples, multiplex loss through the renderer
        FieldModel m = FieldModel::create(FieldTask::ToyNerf, EncodingConfig{1, 0}, {6}, rng.split(2));
        for (auto& l : m.layers) {
            for (double& b : l.bias) b = rng.uniform(-0.5, 0.5);
        }
        std::vector<RaySample> rays(16);
        for (auto& r : rays) {
            r.origin = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), -0.1};
            r.direction = normalized({rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.0});
            r.t_near = 0.1;
            r.t_far = 1.1;
            r.samples = 4;
        }
        const Tensor target = random_tensor({16, 3}, rng, 0, 1);
        LossConfig cfg;
        cfg.lambda = 0.5;
        cfg.repeats = 2;
        const Rng stream = rng.split(79);
        add("end_to_end", "render-ray-mse", model_check(m, [&](const FieldModel& mm, const FieldParams& p) {
                const Tensor c = render_ray(mm, p, rays[0]);
                return mse_loss(PixelBatch(reshape(c, {1, 3}), reshape(gather(target, {0}), {1, 3})));
            }));
        add("end_to_end", "multiplex-through-render", model_check(m, [&](const FieldModel& mm, const FieldParams& p) {
                const Tensor c = render_rays(mm, p, rays).color;
                return multiplex_loss(PixelBatch(c, target), cfg, stream).total;
            }));
    }
    return out;
}

} // namespace s3im
