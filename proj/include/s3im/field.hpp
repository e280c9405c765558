#pragma once

// Coordinate networks and the volume-rendering quadrature.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/image.hpp"
#include "s3im/patch.hpp"
#include "s3im/rng.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

enum class FieldTask : std::uint32_t { Image2d = 1, ToyNerf = 2 };

inline std::string to_string(FieldTask t) { return t == FieldTask::Image2d ? "image2d" : "toy-nerf"; }

inline FieldTask parse_task(const std::string& s) {
    if (s == "image2d") return FieldTask::Image2d;
    if (s == "toy-nerf") return FieldTask::ToyNerf;
    throw ConfigError("task", "unknown task '" + s + "' (expected image2d or toy-nerf)");
}

// ---------------------------------------------------------------------------
// Positional encoding

/// Write p followed by sin(2^k pi p) and cos(2^k pi p) for k = 0..freqs-1 into `out`
/// (dim * (1 + 2 freqs) values). Octaves above the first use the double-angle identities,
/// which stay within ~1e-13 of direct evaluation for the frequency counts used here.
inline void positional_encode_into(std::span<const double> p, std::size_t freqs, double* out) {
    const std::size_t dim = p.size();
    std::copy(p.begin(), p.end(), out);
    if (freqs == 0) return;
    double* sin_row = out + dim;
    for (std::size_t d = 0; d < dim; ++d) {
        sin_row[d] = std::sin(std::numbers::pi * p[d]);
        sin_row[dim + d] = std::cos(std::numbers::pi * p[d]);
    }
    for (std::size_t k = 1; k < freqs; ++k) {
        const double* prev = out + dim + 2 * dim * (k - 1);
        double* cur = out + dim + 2 * dim * k;
        for (std::size_t d = 0; d < dim; ++d) {
            const double sv = prev[d], cv = prev[dim + d];
            cur[d] = 2.0 * sv * cv;
            cur[dim + d] = (cv - sv) * (cv + sv);
        }
    }
}

/// p followed by sin(2^k pi p) and cos(2^k pi p) for k = 0..freqs-1; length dim * (1 + 2 freqs).
inline std::vector<double> positional_encode(std::span<const double> p, std::size_t freqs) {
    std::vector<double> out(p.size() * (1 + 2 * freqs));
    positional_encode_into(p, freqs, out.data());
    return out;
}

inline std::size_t encoded_width(std::size_t dim, std::size_t freqs) { return dim * (1 + 2 * freqs); }

/// Network input width and raw coordinate layout of each task.
struct EncodingConfig {
    std::size_t pos_freqs = 10;
    std::size_t dir_freqs = 0;

    std::size_t width(FieldTask task) const {
        return task == FieldTask::Image2d ? encoded_width(2, pos_freqs)
                                          : encoded_width(3, pos_freqs) + encoded_width(2, dir_freqs);
    }
};

// ---------------------------------------------------------------------------
// FieldModel

struct DenseLayer {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::vector<double> weight;  ///< [fan_in, fan_out], row-major
    std::vector<double> bias;    ///< [fan_out]
};

/// MLP parameters. Hidden layers use ReLU; image fields end in 3 sigmoid colors, radiance
/// fields in 3 sigmoid colors plus a softplus density.
struct FieldModel {
    FieldTask task = FieldTask::Image2d;
    EncodingConfig encoding;
    std::vector<std::size_t> dims;  ///< encoded input width, hidden widths..., output width
    std::vector<DenseLayer> layers;

    static std::size_t output_width(FieldTask task) { return task == FieldTask::Image2d ? 3 : 4; }

    /// Glorot-uniform weights and zero biases drawn from `rng`.
    static FieldModel create(FieldTask task, EncodingConfig encoding, const std::vector<std::size_t>& hidden, Rng rng) {
        FieldModel m;
        m.task = task;
        m.encoding = encoding;
        m.dims.push_back(encoding.width(task));
        m.dims.insert(m.dims.end(), hidden.begin(), hidden.end());
        m.dims.push_back(output_width(task));
        for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
            DenseLayer layer{m.dims[l], m.dims[l + 1], {}, {}};
            const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in + layer.fan_out));
            layer.weight.resize(layer.fan_in * layer.fan_out);
            for (double& v : layer.weight) v = rng.uniform(-limit, limit);
            layer.bias.assign(layer.fan_out, 0.0);
            m.layers.push_back(std::move(layer));
        }
        return m;
    }

    /// Same architecture with every weight and bias set to zero.
    static FieldModel zeros(FieldTask task, EncodingConfig encoding, const std::vector<std::size_t>& hidden) {
        FieldModel m = create(task, encoding, hidden, Rng(0));
        for (auto& layer : m.layers) {
            std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
        }
        return m;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Parameters flattened layer by layer, weight then bias.
    std::vector<double> flat() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& l : layers) {
            out.insert(out.end(), l.weight.begin(), l.weight.end());
            out.insert(out.end(), l.bias.begin(), l.bias.end());
        }
        return out;
    }

    void set_flat(std::span<const double> values) {
        if (values.size() != parameter_count()) throw ShapeError("FieldModel::set_flat: wrong parameter count");
        std::size_t off = 0;
        for (auto& l : layers) {
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), l.weight.size(), l.weight.begin());
            off += l.weight.size();
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), l.bias.size(), l.bias.begin());
            off += l.bias.size();
        }
    }

    void validate() const {
        if (dims.size() < 2 || layers.size() + 1 != dims.size()) throw ShapeError("FieldModel: inconsistent layer dims");
        if (dims.front() != encoding.width(task)) throw ShapeError("FieldModel: input width does not match encoding");
        if (dims.back() != output_width(task)) throw ShapeError("FieldModel: output width does not match task");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& layer = layers[l];
            if (layer.fan_in != dims[l] || layer.fan_out != dims[l + 1] ||
                layer.weight.size() != layer.fan_in * layer.fan_out || layer.bias.size() != layer.fan_out) {
                throw ShapeError("FieldModel: layer " + std::to_string(l) + " shapes do not chain");
            }
        }
    }
};

/// Parameters of a FieldModel as tensors, either tape leaves or constants.
struct FieldParams {
    std::vector<Tensor> weights;  ///< [fan_in, fan_out]
    std::vector<Tensor> biases;   ///< [1, fan_out]

    static FieldParams bind(const FieldModel& model, Tape* tape = nullptr) {
        FieldParams p;
        for (const auto& l : model.layers) {
            Tensor w(Shape{l.fan_in, l.fan_out}, l.weight);
            Tensor b(Shape{1, l.fan_out}, l.bias);
            p.weights.push_back(tape ? tape->variable(w) : w);
            p.biases.push_back(tape ? tape->variable(b) : b);
        }
        return p;
    }

    /// Flat gradient in FieldModel::flat() order.
    std::vector<double> flat_gradient(const Gradients& g) const {
        std::vector<double> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const auto gw = g[weights[l]];
            const auto gb = g[biases[l]];
            out.insert(out.end(), gw.begin(), gw.end());
            out.insert(out.end(), gb.begin(), gb.end());
        }
        return out;
    }
};

struct FieldOutput {
    Tensor color;    ///< [n, 3] in (0, 1)
    Tensor density;  ///< [n] >= 0; radiance fields only
};

/// Evaluate the MLP on a batch of encoded coordinates [n, width].
inline FieldOutput field_forward(const FieldModel& model, const FieldParams& params, const Tensor& inputs) {
    if (inputs.rank() != 2 || inputs.dim(1) != model.dims.front()) {
        throw ShapeError("field_forward: expected inputs [n," + std::to_string(model.dims.front()) + "], got " +
                         to_string(inputs.shape()));
    }
    const std::size_t n = inputs.dim(0);
    Tensor x = inputs;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        x = linear(x, params.weights[l], params.biases[l]);
        if (l + 1 < params.weights.size()) x = relu(x);
    }
    FieldOutput out;
    if (model.task == FieldTask::Image2d) {
        out.color = sigmoid(x);
        return out;
    }
    std::vector<std::size_t> color_idx(n * 3), density_idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) color_idx[i * 3 + c] = i * 4 + c;
        density_idx[i] = i * 4 + 3;
    }
    const Tensor flat = reshape(x, {n * 4});
    out.color = sigmoid(reshape(gather(flat, std::move(color_idx)), {n, 3}));
    out.density = softplus(gather(flat, std::move(density_idx)));
    return out;
}

// ---------------------------------------------------------------------------
// Volume rendering

struct RenderResult {
    Tensor color;    ///< [R, 3]
    Tensor weights;  ///< [R, N], w_i = T_i (1 - exp(-sigma_i delta_i))
};

/// Alpha-compositing quadrature over a batch of rays against a black background:
/// C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i with T_i = exp(-sum_{j<i} sigma_j delta_j).
/// densities [R, N], colors [R, N, 3], deltas [R, N]. Differentiable in densities and colors.
inline RenderResult volume_render(const Tensor& densities, const Tensor& colors, const Tensor& deltas) {
    if (densities.rank() != 2 || deltas.shape() != densities.shape() || colors.rank() != 3 ||
        colors.dim(0) != densities.dim(0) || colors.dim(1) != densities.dim(1) || colors.dim(2) != 3) {
        throw ShapeError("volume_render: expected densities [R,N], colors [R,N,3], deltas [R,N]; got " +
                         to_string(densities.shape()) + ", " + to_string(colors.shape()) + ", " +
                         to_string(deltas.shape()));
    }
    for (double v : densities.values()) {
        if (!(v >= 0.0)) throw DomainError("volume_render: negative density");
    }
    for (double v : deltas.values()) {
        if (!(v > 0.0)) throw DomainError("volume_render: non-positive segment length");
    }
    const std::size_t rays = densities.dim(0);
    const std::size_t n = densities.dim(1);

    // strictly upper triangular: (tau . U)[r, i] = sum_{j<i} tau[r, j]
    std::vector<double> upper(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = j + 1; i < n; ++i) upper[j * n + i] = 1.0;
    }
    const Tensor tau = densities * deltas.detached();
    const Tensor transmittance = exp(-matmul(tau, Tensor(Shape{n, n}, std::move(upper))));
    const Tensor alpha = 1.0 - exp(-tau);
    const Tensor w = transmittance * alpha;

    std::vector<std::size_t> rep(rays * n * 3);
    for (std::size_t k = 0; k < rays * n; ++k) rep[3 * k] = rep[3 * k + 1] = rep[3 * k + 2] = k;
    const Tensor w3 = reshape(gather(reshape(w, {rays * n}), std::move(rep)), {rays, n, 3});
    return RenderResult{sum(w3 * colors, {1}), w};
}

/// Single-ray convenience form: densities [N], colors [N, 3], deltas [N] -> color [3].
inline RenderResult volume_render_ray(const Tensor& densities, const Tensor& colors, const Tensor& deltas) {
    const std::size_t n = densities.size();
    auto r = volume_render(reshape(densities, {1, n}), reshape(colors, {1, n, 3}), reshape(deltas, {1, n}));
    return RenderResult{reshape(r.color, {3}), reshape(r.weights, {n})};
}

using Vec3 = std::array<double, 3>;

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline Vec3 normalized(const Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}


struct RaySample {
    Vec3 origin{};
    Vec3 direction{0, 0, 1};
    double t_near = 0.0;
    double t_far = 1.0;
    std::size_t samples = 32;
    Vec3 color{};  ///< ground truth C(r)

    void validate() const {
        const double norm = std::sqrt(direction[0] * direction[0] + direction[1] * direction[1] + direction[2] * direction[2]);
        if (std::abs(norm - 1.0) > 1e-9) throw DomainError("RaySample: direction is not unit length");
        if (!(t_near < t_far)) throw DomainError("RaySample: t_near must be < t_far");
        if (samples < 2) throw DomainError("RaySample: need at least 2 samples");
    }
};

/// (theta, phi) of a unit direction, each scaled into [0, 1].
inline std::array<double, 2> direction_angles(const Vec3& d) {
    const double theta = std::acos(std::clamp(d[2], -1.0, 1.0)) / std::numbers::pi;
    const double phi = (std::atan2(d[1], d[0]) + std::numbers::pi) / (2.0 * std::numbers::pi);
    return {theta, phi};
}

/// Sample positions along a batch of rays.
struct RayBatchSamples {
    std::size_t rays = 0;
    std::size_t samples = 0;
    std::vector<Vec3> points;      ///< rays * samples, ray-major
    std::vector<Vec3> directions;  ///< one per point
    Tensor deltas;                 ///< [rays, samples]
};

/// Stratified samples: t_i = t_n + (i + u_i) (t_f - t_n) / N with u_i ~ U[0, 1) when `jitter`
/// is given and u_i = 1/2 otherwise. delta_i = t_{i+1} - t_i; the last delta is (t_f - t_n) / N.
inline RayBatchSamples sample_rays(std::span<const RaySample> rays, Rng* jitter) {
    RayBatchSamples out;
    out.rays = rays.size();
    out.samples = rays.empty() ? 0 : rays.front().samples;
    std::vector<double> deltas;
    deltas.reserve(out.rays * out.samples);
    out.points.reserve(out.rays * out.samples);
    out.directions.reserve(out.rays * out.samples);
    std::vector<double> t(out.samples);
    for (const auto& ray : rays) {
        ray.validate();
        if (ray.samples != out.samples) throw ShapeError("sample_rays: rays in one batch must share N");
        const double step = (ray.t_far - ray.t_near) / static_cast<double>(ray.samples);
        for (std::size_t i = 0; i < ray.samples; ++i) {
            const double u = jitter ? jitter->uniform() : 0.5;
            t[i] = ray.t_near + (static_cast<double>(i) + u) * step;
        }
        for (std::size_t i = 0; i < ray.samples; ++i) {
            deltas.push_back(i + 1 < ray.samples ? t[i + 1] - t[i] : step);
            out.points.push_back({ray.origin[0] + t[i] * ray.direction[0], ray.origin[1] + t[i] * ray.direction[1],
                                  ray.origin[2] + t[i] * ray.direction[2]});
            out.directions.push_back(ray.direction);
        }
    }
    out.deltas = Tensor(Shape{out.rays, out.samples}, std::move(deltas));
    return out;
}

/// Encoded network inputs for radiance-field sample points: PE(position) ++ PE(direction angles).
inline Tensor encode_radiance_inputs(const RayBatchSamples& s, const EncodingConfig& enc) {
    const std::size_t width = enc.width(FieldTask::ToyNerf);
    const std::size_t pos_width = encoded_width(3, enc.pos_freqs);
    const std::size_t dir_width = encoded_width(2, enc.dir_freqs);
    std::vector<double> values(s.points.size() * width);
    std::vector<double> dir_code(dir_width);
    for (std::size_t i = 0; i < s.points.size(); ++i) {
        double* row = values.data() + i * width;
        positional_encode_into(s.points[i], enc.pos_freqs, row);
        // samples of one ray share a direction
        if (i == 0 || s.directions[i] != s.directions[i - 1]) {
            positional_encode_into(direction_angles(s.directions[i]), enc.dir_freqs, dir_code.data());
        }
        std::copy(dir_code.begin(), dir_code.end(), row + pos_width);
    }
    return Tensor(Shape{s.points.size(), width}, std::move(values));
}

/// Render a batch of rays through a radiance MLP.
inline RenderResult render_rays(const FieldModel& model, const FieldParams& params, std::span<const RaySample> rays,
                                Rng* jitter = nullptr) {
    if (model.task != FieldTask::ToyNerf) throw ShapeError("render_rays: model is not a radiance field");
    const auto s = sample_rays(rays, jitter);
    const auto out = field_forward(model, params, encode_radiance_inputs(s, model.encoding));
    return volume_render(reshape(out.density, {s.rays, s.samples}), reshape(out.color, {s.rays, s.samples, 3}),
                         s.deltas);
}

inline Tensor render_ray(const FieldModel& model, const FieldParams& params, const RaySample& ray, Rng* jitter = nullptr) {
    return reshape(render_rays(model, params, std::span<const RaySample>(&ray, 1), jitter).color, {3});
}

// ---------------------------------------------------------------------------
// Image-field samples

/// Pixel-centre coordinates in [0, 1]^2 (x = column, y = row) paired with their colors.
struct PixelSamples {
    std::size_t width = 0, height = 0;
    std::vector<double> coords;  ///< n * 2
    std::vector<double> colors;  ///< n * 3
    std::vector<PixelSource> meta;

    std::size_t size() const { return meta.size(); }
};

inline PixelSamples image_field_dataset(const ImageBuffer& image, std::uint32_t image_id = 0) {
    PixelSamples s;
    s.width = image.width;
    s.height = image.height;
    s.coords.reserve(image.pixels() * 2);
    s.colors = image.rgb;
    s.meta.reserve(image.pixels());
    for (std::size_t r = 0; r < image.height; ++r) {
        for (std::size_t c = 0; c < image.width; ++c) {
            s.coords.push_back((static_cast<double>(c) + 0.5) / static_cast<double>(image.width));
            s.coords.push_back((static_cast<double>(r) + 0.5) / static_cast<double>(image.height));
            s.meta.push_back({image_id, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
        }
    }
    return s;
}

/// Encoded inputs [n, width] for image-field coordinates (x, y) given as n * 2 values.
inline Tensor encode_image_inputs(std::span<const double> coords, const EncodingConfig& enc) {
    const std::size_t n = coords.size() / 2;
    const std::size_t width = enc.width(FieldTask::Image2d);
    std::vector<double> values(n * width);
    for (std::size_t i = 0; i < n; ++i) positional_encode_into(coords.subspan(2 * i, 2), enc.pos_freqs, values.data() + i * width);
    return Tensor(Shape{n, width}, std::move(values));
}

/// Evaluate an image field at every pixel centre of a width x height grid.
inline ImageBuffer render_image_field(const FieldModel& model, std::size_t width, std::size_t height) {
    const auto params = FieldParams::bind(model);
    const auto grid = image_field_dataset(ImageBuffer(width, height));
    const auto out = field_forward(model, params, encode_image_inputs(grid.coords, model.encoding));
    return ImageBuffer(width, height, std::vector<double>(out.color.values().begin(), out.color.values().end()));
}

} // namespace s3im
