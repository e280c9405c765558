#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

/// RGB image with float64 channels in [0, 1], row-major, interleaved.
struct ImageBuffer {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> rgb;

    ImageBuffer() = default;
    ImageBuffer(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), rgb(w * h * 3, fill) {}
    ImageBuffer(std::size_t w, std::size_t h, std::vector<double> values)
        : width(w), height(h), rgb(std::move(values)) {
        if (rgb.size() != w * h * 3) throw ShapeError("ImageBuffer: expected " + std::to_string(w * h * 3) + " values");
    }

    std::size_t pixels() const { return width * height; }
    double& at(std::size_t row, std::size_t col, std::size_t ch) { return rgb[(row * width + col) * 3 + ch]; }
    double at(std::size_t row, std::size_t col, std::size_t ch) const { return rgb[(row * width + col) * 3 + ch]; }

    void clamp01() {
        for (double& v : rgb) v = std::clamp(v, 0.0, 1.0);
    }

    /// [H, W, 3] constant tensor view of the pixels.
    Tensor tensor() const { return Tensor(Shape{height, width, 3}, rgb); }

    static ImageBuffer from_tensor(const Tensor& t) {
        if (t.rank() != 3 || t.dim(2) != 3) throw ShapeError("ImageBuffer: expected [H,W,3], got " + to_string(t.shape()));
        return ImageBuffer(t.dim(1), t.dim(0), std::vector<double>(t.values().begin(), t.values().end()));
    }

    bool operator==(const ImageBuffer&) const = default;
};

} // namespace s3im
