#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/patch.hpp"
#include "s3im/rng.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

/// Stabilizing constants of SSIM. C3 is tied to C2 as C2 / 2.
struct SsimConstants {
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;  ///< data range L

    double c1() const { return (k1 * range) * (k1 * range); }
    double c2() const { return (k2 * range) * (k2 * range); }
    double c3() const { return c2() / 2.0; }
};

enum class WindowKind { Uniform, Gaussian };

struct WindowSpec {
    WindowKind kind = WindowKind::Uniform;
    std::size_t kernel = 4;
    std::size_t stride = 4;
    double sigma = 1.5;

    /// Stochastic-patch preset: uniform K x K blocks with stride K.
    static WindowSpec uniform(std::size_t k) { return {WindowKind::Uniform, k, k, 1.5}; }
    static WindowSpec s3im_default() { return uniform(4); }
    /// Evaluation preset: 11 x 11 Gaussian, std 1.5, stride 1.
    static WindowSpec evaluation() { return {WindowKind::Gaussian, 11, 1, 1.5}; }

    /// Row-major K x K weights summing to one.
    std::vector<double> weights() const;
};

/// Normalized 1-D Gaussian taps centred on the middle of a `taps`-long window.
inline std::vector<double> gaussian_taps(std::size_t taps, double sigma) {
    if (taps == 0 || !(sigma > 0)) throw DomainError("gaussian_taps: need taps > 0 and sigma > 0");
    std::vector<double> w(taps);
    const double centre = (static_cast<double>(taps) - 1.0) / 2.0;
    double total = 0;
    for (std::size_t i = 0; i < taps; ++i) {
        const double d = static_cast<double>(i) - centre;
        w[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
}

inline std::vector<double> WindowSpec::weights() const {
    if (kernel == 0 || stride == 0) throw DomainError("WindowSpec: kernel and stride must be positive");
    const std::size_t n = kernel * kernel;
    if (kind == WindowKind::Uniform) return std::vector<double>(n, 1.0 / static_cast<double>(n));
    // circularly symmetric: separable outer product of normalized 1-D taps
    const auto g = gaussian_taps(kernel, sigma);
    std::vector<double> w(n);
    for (std::size_t r = 0; r < kernel; ++r) {
        for (std::size_t c = 0; c < kernel; ++c) w[r * kernel + c] = g[r] * g[c];
    }
    return w;
}

inline void check_normalized(std::span<const double> w) {
    double total = 0;
    for (double v : w) total += v;
    if (std::abs(total - 1.0) > 1e-12) {
        throw DomainError("SSIM window weights must sum to 1, got " + std::to_string(total));
    }
}

// ---------------------------------------------------------------------------
// PSNR

/// 10 log10(L^2 / MSE) over all elements. Returns +infinity when the inputs are identical.
inline double psnr(std::span<const double> test, std::span<const double> reference, double range = 1.0) {
    if (test.size() != reference.size()) {
        throw ShapeError("psnr: " + std::to_string(test.size()) + " vs " + std::to_string(reference.size()) + " values");
    }
    if (test.empty()) throw ShapeError("psnr: empty images");
    if (!(range > 0)) throw DomainError("psnr: data range must be positive");
    double se = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const double d = test[i] - reference[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(test.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(range * range / mse);
}

inline double psnr(const Tensor& test, const Tensor& reference, double range = 1.0) {
    if (test.shape() != reference.shape()) {
        throw ShapeError("psnr: shape " + to_string(test.shape()) + " vs " + to_string(reference.shape()));
    }
    return psnr(test.values(), reference.values(), range);
}

// ---------------------------------------------------------------------------
// Single-window SSIM

struct LocalStats {
    double mean_a = 0, mean_b = 0;
    double std_a = 0, std_b = 0;
    double cov_ab = 0;
};

inline LocalStats local_stats(std::span<const double> a, std::span<const double> b, std::span<const double> w) {
    LocalStats s;
    for (std::size_t i = 0; i < w.size(); ++i) {
        s.mean_a += w[i] * a[i];
        s.mean_b += w[i] * b[i];
    }
    double va = 0, vb = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double da = a[i] - s.mean_a;
        const double db = b[i] - s.mean_b;
        va += w[i] * da * da;
        vb += w[i] * db * db;
        s.cov_ab += w[i] * da * db;
    }
    s.std_a = std::sqrt(va);
    s.std_b = std::sqrt(vb);
    return s;
}

struct SsimTerms {
    double luminance = 1, contrast = 1, structure = 1;
    double value() const { return luminance * contrast * structure; }
};

/// Luminance, contrast and structure comparison of one weighted window.
inline SsimTerms ssim_terms(std::span<const double> a, std::span<const double> b, std::span<const double> w,
                            const SsimConstants& c = {}) {
    if (a.size() != b.size() || a.size() != w.size()) throw ShapeError("ssim_window: a, b, w differ in length");
    check_normalized(w);
    const auto s = local_stats(a, b, w);
    SsimTerms t;
    t.luminance = (2 * s.mean_a * s.mean_b + c.c1()) / (s.mean_a * s.mean_a + s.mean_b * s.mean_b + c.c1());
    t.contrast = (2 * s.std_a * s.std_b + c.c2()) / (s.std_a * s.std_a + s.std_b * s.std_b + c.c2());
    t.structure = (s.cov_ab + c.c3()) / (s.std_a * s.std_b + c.c3());
    return t;
}

inline double ssim_window(std::span<const double> a, std::span<const double> b, std::span<const double> w,
                          const SsimConstants& c = {}) {
    return ssim_terms(a, b, w, c).value();
}

// ---------------------------------------------------------------------------
// Windowed SSIM over [H, W, 3] images

struct SsimMap {
    Tensor scores;  ///< [3, rows, cols]: one score per channel per window position
    Tensor mean;    ///< scalar mean over all windows and channels
};

namespace detail {

struct WindowCache {
    double mean_a, mean_b, num1, num2, den1, den2, score;
};

// d score / d a_t divided by the window weight w_t, for score = N1 N2 / (D1 D2) with
// dN1 = 2 mu_b, dN2 = 2 (b_t - mu_b), dD1 = 2 mu_a, dD2 = 2 (a_t - mu_a).
inline double score_slope(const WindowCache& wc, double a, double b) {
    const double num = 2 * wc.mean_b * wc.num2 + 2 * (b - wc.mean_b) * wc.num1;
    return num / (wc.den1 * wc.den2) - wc.score * (2 * wc.mean_a / wc.den1 + 2 * (a - wc.mean_a) / wc.den2);
}

} // namespace detail

/// SSIM of every valid window position (no padding), per channel, differentiable in `pred`.
///
/// With C3 = C2 / 2 the contrast and structure terms collapse, so each window is scored
/// as (2 mu_a mu_b + C1)(2 cov + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2)).
inline SsimMap ssim_map(const Tensor& pred, const Tensor& target, const WindowSpec& window,
                        const SsimConstants& c = {}) {
    if (pred.rank() != 3 || pred.dim(2) != 3 || target.shape() != pred.shape()) {
        throw ShapeError("ssim_map: expected paired [H,W,3] images, got " + to_string(pred.shape()) + " and " +
                         to_string(target.shape()));
    }
    const std::size_t h = pred.dim(0);
    const std::size_t w = pred.dim(1);
    const std::size_t k = window.kernel;
    const std::size_t s = window.stride;
    auto weights = std::make_shared<const std::vector<double>>(window.weights());
    check_normalized(*weights);
    if (h < k || w < k) {
        throw ShapeError("ssim_map: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than kernel " +
                         std::to_string(k));
    }
    if (s == k && (h % k != 0 || w % k != 0)) {
        throw ShapeError("ssim_map: " + std::to_string(h) + "x" + std::to_string(w) +
                         " image does not tile with kernel = stride = " + std::to_string(k));
    }
    const std::size_t rows = (h - k) / s + 1;
    const std::size_t cols = (w - k) / s + 1;
    const double c1 = c.c1();
    const double c2 = c.c2();

    const auto av = pred.storage();
    const auto bv = target.storage();
    auto cache = std::make_shared<std::vector<detail::WindowCache>>(3 * rows * cols);
    std::vector<double> scores(3 * rows * cols);

    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                double ma = 0, mb = 0;
                for (std::size_t u = 0; u < k; ++u) {
                    const std::size_t base = ((i * s + u) * w + j * s) * 3 + ch;
                    const double* wr = weights->data() + u * k;
                    for (std::size_t v = 0; v < k; ++v) {
                        ma += wr[v] * (*av)[base + v * 3];
                        mb += wr[v] * (*bv)[base + v * 3];
                    }
                }
                double va = 0, vb = 0, cov = 0;
                for (std::size_t u = 0; u < k; ++u) {
                    const std::size_t base = ((i * s + u) * w + j * s) * 3 + ch;
                    const double* wr = weights->data() + u * k;
                    for (std::size_t v = 0; v < k; ++v) {
                        const double da = (*av)[base + v * 3] - ma;
                        const double db = (*bv)[base + v * 3] - mb;
                        va += wr[v] * da * da;
                        vb += wr[v] * db * db;
                        cov += wr[v] * da * db;
                    }
                }
                const std::size_t idx = (ch * rows + i) * cols + j;
                auto& wc = (*cache)[idx];
                wc.mean_a = ma;
                wc.mean_b = mb;
                wc.num1 = 2 * ma * mb + c1;
                wc.num2 = 2 * cov + c2;
                wc.den1 = ma * ma + mb * mb + c1;
                wc.den2 = va + vb + c2;
                wc.score = (wc.num1 * wc.num2) / (wc.den1 * wc.den2);
                scores[idx] = wc.score;
            }
        }
    }

    Tensor score_tensor = Tape::make(
        "ssim_map", Shape{3, rows, cols}, std::move(scores), {&pred},
        [pred, av, bv, cache, weights, w, k, s, rows, cols](std::span<const double> g, GradSink& sink) {
            double* ga = sink.slot(pred);
            if (!ga) return;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        const std::size_t idx = (ch * rows + i) * cols + j;
                        const auto& wc = (*cache)[idx];
                        if (g[idx] == 0.0) continue;
                        for (std::size_t u = 0; u < k; ++u) {
                            const std::size_t base = ((i * s + u) * w + j * s) * 3 + ch;
                            const double* wr = weights->data() + u * k;
                            for (std::size_t v = 0; v < k; ++v) {
                                const std::size_t p = base + v * 3;
                                ga[p] += g[idx] * wr[v] * detail::score_slope(wc, (*av)[p], (*bv)[p]);
                            }
                        }
                    }
                }
            }
        });
    Tensor m = mean(score_tensor);
    return SsimMap{std::move(score_tensor), std::move(m)};
}

/// Differentiable single-window SSIM of two equal-length signals, as a scalar tensor.
inline Tensor ssim_window(const Tensor& a, const Tensor& b, std::span<const double> w, const SsimConstants& c = {}) {
    if (a.size() != b.size() || a.size() != w.size()) throw ShapeError("ssim_window: a, b, w differ in length");
    check_normalized(w);
    const std::size_t n = a.size();
    const auto av = a.storage();
    const auto bv = b.storage();
    auto wv = std::make_shared<const std::vector<double>>(w.begin(), w.end());
    const auto s = local_stats(*av, *bv, *wv);
    const double var_a = s.std_a * s.std_a;
    const double var_b = s.std_b * s.std_b;
    detail::WindowCache wc{s.mean_a,
                           s.mean_b,
                           2 * s.mean_a * s.mean_b + c.c1(),
                           2 * s.cov_ab + c.c2(),
                           s.mean_a * s.mean_a + s.mean_b * s.mean_b + c.c1(),
                           var_a + var_b + c.c2(),
                           0};
    wc.score = (wc.num1 * wc.num2) / (wc.den1 * wc.den2);
    return Tape::make("ssim_window", Shape{}, std::vector<double>{wc.score}, {&a},
                      [a, av, bv, wv, wc, n](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.slot(a);
                          if (!ga) return;
                          for (std::size_t t = 0; t < n; ++t) {
                              ga[t] += g[0] * (*wv)[t] * detail::score_slope(wc, (*av)[t], (*bv)[t]);
                          }
                      });
}

// ---------------------------------------------------------------------------
// S3IM

struct S3imResult {
    Tensor value;                   ///< scalar, (1/M) sum_m mean-SSIM of patch m
    std::vector<double> per_patch;  ///< the M individual mean-SSIM values, in m order
};

/// Stochastic structural similarity of a minibatch: average mean-SSIM over `repeats`
/// stochastic patches. Patch m uses the permutation stream `stream.split(m)`.
inline S3imResult s3im(const PixelBatch& batch, std::size_t repeats, const WindowSpec& window, const SsimConstants& c,
                       const Rng& stream) {
    if (repeats == 0) throw DomainError("s3im: need at least one patch (M >= 1)");
    patch_side(batch.size(), window.kernel);
    S3imResult out;
    Tensor total;
    for (std::size_t m = 0; m < repeats; ++m) {
        Rng rng = stream.split(m);
        const auto patch = make_patch(batch, rng, window.kernel);
        const auto map = ssim_map(patch.predicted, patch.target, window, c);
        out.per_patch.push_back(map.mean.item());
        total = m == 0 ? map.mean : total + map.mean;
    }
    out.value = repeats == 1 ? total : total * (1.0 / static_cast<double>(repeats));
    return out;
}

/// Evaluation-grade mean SSIM: 11 x 11 Gaussian window (std 1.5), stride 1, channel mean.
inline double msssim_eval(const Tensor& pred, const Tensor& target, const SsimConstants& c = {}) {
    if (pred.rank() != 3 || pred.dim(0) < 11 || pred.dim(1) < 11) {
        throw ShapeError("msssim_eval: images must be at least 11x11, got " + to_string(pred.shape()));
    }
    return ssim_map(pred.detached(), target.detached(), WindowSpec::evaluation(), c).mean.item();
}

} // namespace s3im
