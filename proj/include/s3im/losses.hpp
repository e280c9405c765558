#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/metrics.hpp"
#include "s3im/patch.hpp"
#include "s3im/rng.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

enum class BaseLoss { Mse, L1 };

inline std::string to_string(BaseLoss b) { return b == BaseLoss::Mse ? "mse" : "l1"; }

struct LossConfig {
    BaseLoss base = BaseLoss::Mse;
    double lambda = 0.0;       ///< weight of the S3IM term
    std::size_t repeats = 10;  ///< M, stochastic patches per step
    WindowSpec window = WindowSpec::s3im_default();
    SsimConstants constants{};

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda", "lambda must be >= 0");
        if (repeats == 0) throw ConfigError("M", "M must be >= 1");
        if (window.kernel == 0) throw ConfigError("kernel", "kernel must be >= 1");
        if (window.stride == 0) throw ConfigError("stride", "stride must be >= 1");
    }
};

/// S3IM weight grid used for NeRF-style (MSE color loss) models.
inline const std::vector<double>& lambda_grid_nerf() {
    static const std::vector<double> grid{0.05, 0.1, 0.2, 0.5, 1, 2, 5};
    return grid;
}

/// S3IM weight grid used for surface (L1 color loss) models.
inline const std::vector<double>& lambda_grid_surface() {
    static const std::vector<double> grid{1, 2, 5, 10, 20, 50, 100};
    return grid;
}

namespace detail {

inline void require_nonempty(const PixelBatch& batch, const char* who) {
    batch.validate();
    if (batch.size() == 0) throw ShapeError(std::string(who) + ": empty batch");
}

} // namespace detail

/// Mean over rays of the squared Euclidean color error (channels summed).
inline Tensor mse_loss(const PixelBatch& batch) {
    detail::require_nonempty(batch, "mse_loss");
    return sum(square(batch.predicted - batch.target.detached())) * (1.0 / static_cast<double>(batch.size()));
}

/// Mean over rays of the L1 color error (channels summed). Subgradient 0 at exact fits.
inline Tensor l1_color_loss(const PixelBatch& batch) {
    detail::require_nonempty(batch, "l1_color_loss");
    return sum(abs(batch.predicted - batch.target.detached())) * (1.0 / static_cast<double>(batch.size()));
}

inline Tensor base_loss(const PixelBatch& batch, BaseLoss kind) {
    return kind == BaseLoss::Mse ? mse_loss(batch) : l1_color_loss(batch);
}

struct S3imLoss {
    Tensor value;                   ///< 1 - S3IM
    std::vector<double> per_patch;  ///< mean SSIM of each stochastic patch
};

/// 1 - S3IM over `cfg.repeats` stochastic patches drawn from `stream`.
inline S3imLoss s3im_loss(const PixelBatch& batch, const LossConfig& cfg, const Rng& stream) {
    detail::require_nonempty(batch, "s3im_loss");
    auto r = s3im(batch, cfg.repeats, cfg.window, cfg.constants, stream);
    return S3imLoss{1.0 - r.value, std::move(r.per_patch)};
}

struct MultiplexLoss {
    Tensor total;                   ///< base + lambda * (1 - S3IM), scalar
    double base = 0;                ///< base loss value
    double s3im_component = 0;      ///< 1 - S3IM value; 0 when lambda == 0
    std::vector<double> per_patch;  ///< empty when lambda == 0
};

/// Base color loss plus lambda times the S3IM loss. With lambda == 0 the total is the
/// base-loss tensor itself and no patches are drawn.
inline MultiplexLoss multiplex_loss(const PixelBatch& batch, const LossConfig& cfg, const Rng& stream) {
    cfg.validate();
    MultiplexLoss out;
    Tensor base = base_loss(batch, cfg.base);
    out.base = base.item();
    if (cfg.lambda == 0.0) {
        out.total = std::move(base);
        return out;
    }
    auto s = s3im_loss(batch, cfg, stream);
    out.s3im_component = s.value.item();
    out.per_patch = std::move(s.per_patch);
    out.total = base + cfg.lambda * s.value;
    return out;
}

} // namespace s3im
