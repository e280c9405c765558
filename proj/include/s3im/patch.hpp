#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/rng.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

/// Where a batch pixel came from.
struct PixelSource {
    std::uint32_t image = 0;
    std::uint32_t row = 0;
    std::uint32_t col = 0;
};

/// Paired predicted / ground-truth pixels of one minibatch.
struct PixelBatch {
    Tensor predicted;               ///< [B, 3], differentiable
    Tensor target;                  ///< [B, 3], constant, values in [0, 1]
    std::vector<PixelSource> meta;  ///< empty or one entry per pixel

    PixelBatch() = default;
    PixelBatch(Tensor predicted_, Tensor target_, std::vector<PixelSource> meta_ = {})
        : predicted(std::move(predicted_)), target(std::move(target_)), meta(std::move(meta_)) {
        validate();
    }

    std::size_t size() const { return predicted.rank() == 0 ? 0 : predicted.dim(0); }

    void validate() const {
        if (predicted.rank() != 2 || predicted.dim(1) != 3) {
            throw ShapeError("PixelBatch: predicted must be [B,3], got " + to_string(predicted.shape()));
        }
        if (target.shape() != predicted.shape()) {
            throw ShapeError("PixelBatch: target shape " + to_string(target.shape()) + " differs from predicted " +
                             to_string(predicted.shape()));
        }
        if (!meta.empty() && meta.size() != predicted.dim(0)) {
            throw ShapeError("PixelBatch: meta has " + std::to_string(meta.size()) + " entries for " +
                             std::to_string(predicted.dim(0)) + " pixels");
        }
        for (double v : target.values()) {
            if (!(v >= 0.0 && v <= 1.0)) throw DomainError("PixelBatch: target value outside [0, 1]");
        }
    }
};

/// A permuted minibatch laid out as a pseudo-image. Both sides share one permutation.
struct StochasticPatch {
    std::vector<std::size_t> permutation;  ///< patch cell p holds batch pixel permutation[p]
    std::size_t height = 0;
    std::size_t width = 0;
    Tensor predicted;  ///< [H, W, 3]
    Tensor target;     ///< [H, W, 3]
};

/// Side length of the square patch for a batch of `batch_size` pixels and kernel `kernel`.
/// Throws ShapeError when the batch cannot be tiled exactly.
inline std::size_t patch_side(std::size_t batch_size, std::size_t kernel) {
    if (kernel == 0) throw ShapeError("patch: kernel size must be positive");
    auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(batch_size))));
    while (side * side > batch_size) --side;
    while ((side + 1) * (side + 1) <= batch_size) ++side;
    if (batch_size == 0 || side * side != batch_size) {
        throw ShapeError("patch: batch size " + std::to_string(batch_size) + " is not a perfect square");
    }
    if (side % kernel != 0) {
        throw ShapeError("patch: side " + std::to_string(side) + " of batch " + std::to_string(batch_size) +
                         " is not divisible by kernel " + std::to_string(kernel));
    }
    return side;
}

/// Lay out the batch through a caller-supplied permutation.
inline StochasticPatch make_patch(const PixelBatch& batch, std::vector<std::size_t> permutation, std::size_t kernel) {
    const std::size_t n = batch.size();
    const std::size_t side = patch_side(n, kernel);
    if (permutation.size() != n) throw ShapeError("make_patch: permutation length differs from batch size");
    std::vector<bool> seen(n, false);
    for (std::size_t p : permutation) {
        if (p >= n || seen[p]) throw IndexError("make_patch: permutation is not a bijection on 0..B-1");
        seen[p] = true;
    }
    auto idx = std::make_shared<const std::vector<std::size_t>>(permutation);
    StochasticPatch patch;
    patch.height = side;
    patch.width = side;
    patch.predicted = reshape(gather(batch.predicted, idx), {side, side, 3});
    patch.target = reshape(gather(batch.target.detached(), idx), {side, side, 3});
    patch.permutation = std::move(permutation);
    return patch;
}

/// Draw one uniform permutation from `rng` and lay out the batch with it.
inline StochasticPatch make_patch(const PixelBatch& batch, Rng& rng, std::size_t kernel) {
    patch_side(batch.size(), kernel);
    return make_patch(batch, rng.permutation(batch.size()), kernel);
}

/// Flat row-major pixel indices of a size x size crop at (top, left) in a height x width image.
inline std::vector<std::size_t> local_patch_indices(std::size_t height, std::size_t width, std::size_t top,
                                                    std::size_t left, std::size_t size) {
    if (size == 0 || top + size > height || left + size > width) {
        throw IndexError("local patch: crop " + std::to_string(size) + "x" + std::to_string(size) + " at (" +
                         std::to_string(top) + "," + std::to_string(left) + ") does not fit in " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    std::vector<std::size_t> idx;
    idx.reserve(size * size);
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) idx.push_back((top + r) * width + left + c);
    }
    return idx;
}

struct LocalPatch {
    Tensor predicted;  ///< [size, size, 3]
    Tensor target;     ///< [size, size, 3]
};

/// Contiguous crop of a predicted/target image pair ([H, W, 3] each) at the same location.
inline LocalPatch make_local_patch(const Tensor& predicted, const Tensor& target, std::size_t top, std::size_t left,
                                   std::size_t size) {
    if (predicted.rank() != 3 || predicted.dim(2) != 3 || target.shape() != predicted.shape()) {
        throw ShapeError("make_local_patch: expected paired [H,W,3] images");
    }
    const std::size_t h = predicted.dim(0);
    const std::size_t w = predicted.dim(1);
    auto idx = std::make_shared<const std::vector<std::size_t>>(local_patch_indices(h, w, top, left, size));
    return LocalPatch{reshape(gather(reshape(predicted, {h * w, 3}), idx), {size, size, 3}),
                      reshape(gather(reshape(target.detached(), {h * w, 3}), idx), {size, size, 3})};
}

} // namespace s3im
