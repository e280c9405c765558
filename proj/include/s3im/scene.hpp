#pragma once

// Procedural box scenes and orthographic camera rigs for the toy radiance-field task.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "s3im/errors.hpp"
#include "s3im/field.hpp"
#include "s3im/image.hpp"
#include "s3im/rng.hpp"
#include "s3im/tensor.hpp"

namespace s3im {

struct Camera {
    Vec3 origin{};     ///< centre of the image plane
    Vec3 direction{};  ///< unit viewing direction
};

struct RayBounds {
    double t_near = 0.1;
    double t_far = 1.9;
    std::size_t samples = 32;
};

/// Orthographic cameras sharing one resolution and ray bounds. Pixel (r, c) of a camera
/// emits a ray from origin + x * right + y * up, with x, y spanning [-extent/2, extent/2]
/// across pixel centres (row 0 at the top), right = normalize(direction x helper),
/// up = right x direction, helper = +z unless |direction_z| > 0.9, then +y.
struct CameraRig {
    static constexpr double kExtent = 1.2;

    std::vector<Camera> cameras;
    RayBounds bounds;
    std::size_t width = 0;
    std::size_t height = 0;

    std::vector<RaySample> rays(std::size_t camera) const {
        const auto& cam = cameras.at(camera);
        const Vec3 d = cam.direction;
        const Vec3 helper = std::abs(d[2]) > 0.9 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
        const Vec3 right = normalized(cross(d, helper));
        const Vec3 up = cross(right, d);
        std::vector<RaySample> out;
        out.reserve(width * height);
        for (std::size_t r = 0; r < height; ++r) {
            const double y = (0.5 - (static_cast<double>(r) + 0.5) / static_cast<double>(height)) * kExtent;
            for (std::size_t c = 0; c < width; ++c) {
                const double x = ((static_cast<double>(c) + 0.5) / static_cast<double>(width) - 0.5) * kExtent;
                RaySample ray;
                for (int k = 0; k < 3; ++k) ray.origin[k] = cam.origin[k] + x * right[k] + y * up[k];
                ray.direction = d;
                ray.t_near = bounds.t_near;
                ray.t_far = bounds.t_far;
                ray.samples = bounds.samples;
                out.push_back(ray);
            }
        }
        return out;
    }
};

struct SceneBox {
    Vec3 lo{}, hi{};
    Vec3 color{};
    Vec3 color_gradient{};  ///< color change per unit length along x, y, z
    double density = 0;

    bool contains(const Vec3& p) const {
        return p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1] && p[2] >= lo[2] && p[2] <= hi[2];
    }
};

/// Axis-aligned colored boxes in empty space inside [0, 1]^3. The first box containing a
/// point decides its density and color; everything else is vacuum.
struct SyntheticScene {
    std::uint64_t seed = 0;
    std::vector<SceneBox> boxes;
    CameraRig rig;

    double density(const Vec3& p) const {
        for (const auto& b : boxes) {
            if (b.contains(p)) return b.density;
        }
        return 0.0;
    }

    Vec3 color(const Vec3& p) const {
        for (const auto& b : boxes) {
            if (!b.contains(p)) continue;
            Vec3 c{};
            for (int k = 0; k < 3; ++k) {
                double v = b.color[k];
                for (int a = 0; a < 3; ++a) v += b.color_gradient[a] * (p[a] - b.lo[a]) * (k == a ? 1.0 : 0.5);
                c[k] = std::clamp(v, 0.0, 1.0);
            }
            return c;
        }
        return {0, 0, 0};
    }

    /// Render a batch of rays through the analytic density/color fields with midpoint samples.
    Tensor render(std::span<const RaySample> rays) const {
        const auto s = sample_rays(rays, nullptr);
        std::vector<double> dens(s.points.size()), cols(s.points.size() * 3);
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            dens[i] = density(s.points[i]);
            const auto c = color(s.points[i]);
            std::copy(c.begin(), c.end(), cols.begin() + static_cast<std::ptrdiff_t>(3 * i));
        }
        return volume_render(Tensor(Shape{s.rays, s.samples}, std::move(dens)),
                             Tensor(Shape{s.rays, s.samples, 3}, std::move(cols)), s.deltas)
            .color;
    }

    ImageBuffer reference_image(std::size_t camera) const {
        const auto rays = rig.rays(camera);
        const Tensor c = render(rays);
        return ImageBuffer(rig.width, rig.height, std::vector<double>(c.values().begin(), c.values().end()));
    }
};

/// Cameras on a ring around the unit cube centre, alternating elevation, all looking inward.
inline std::vector<Camera> ring_cameras(std::size_t count) {
    const Vec3 centre{0.5, 0.5, 0.5};
    std::vector<Camera> cams;
    for (std::size_t i = 0; i < count; ++i) {
        const double az = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count) + 0.3;
        const double el = (i % 2 == 0 ? 25.0 : -15.0) * std::numbers::pi / 180.0;
        const Vec3 out{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
        Camera cam;
        cam.direction = normalized({-out[0], -out[1], -out[2]});
        for (int k = 0; k < 3; ++k) cam.origin[k] = centre[k] + out[k];
        cams.push_back(cam);
    }
    return cams;
}

inline constexpr std::size_t kMaxSceneResolution = 128;
inline constexpr std::size_t kMaxSceneCameras = 12;

/// Deterministic procedural scene: 3 to 5 boxes, `camera_count` ring cameras.
inline SyntheticScene make_synthetic_scene(std::uint64_t seed, std::size_t resolution, std::size_t camera_count,
                                           RayBounds bounds = {}) {
    if (resolution == 0 || resolution > kMaxSceneResolution) {
        throw ConfigError("resolution", "scene resolution must be in [1, 128]");
    }
    if (camera_count == 0 || camera_count > kMaxSceneCameras) {
        throw ConfigError("cameras", "camera count must be in [1, 12]");
    }
    Rng rng = Rng(seed).split(0x5CE4E);
    SyntheticScene scene;
    scene.seed = seed;
    const std::size_t boxes = 3 + static_cast<std::size_t>(rng.below(3));
    for (std::size_t b = 0; b < boxes; ++b) {
        SceneBox box;
        for (int k = 0; k < 3; ++k) {
            const double size = rng.uniform(0.2, 0.45);
            const double lo = rng.uniform(0.1, 0.9 - size);
            box.lo[k] = lo;
            box.hi[k] = lo + size;
            box.color[k] = rng.uniform(0.1, 0.9);
            box.color_gradient[k] = rng.uniform(-0.8, 0.8);
        }
        box.density = rng.uniform(20.0, 60.0);
        scene.boxes.push_back(box);
    }
    scene.rig.cameras = ring_cameras(camera_count);
    scene.rig.bounds = bounds;
    scene.rig.width = resolution;
    scene.rig.height = resolution;
    return scene;
}

/// Deterministic 2-D test card: smooth background, discs, bars and a striped patch.
inline ImageBuffer procedural_image(std::size_t width, std::size_t height, std::uint64_t seed = 0) {
    Rng rng = Rng(seed).split(0x1A6E);
    ImageBuffer img(width, height);
    const Vec3 c0{rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), rng.uniform(0.3, 0.7)};
    const Vec3 c1{rng.uniform(0.5, 0.9), rng.uniform(0.4, 0.8), rng.uniform(0.1, 0.5)};
    struct Disc {
        double x, y, r;
        Vec3 color;
    };
    std::vector<Disc> discs(6);
    for (auto& d : discs) d = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.2),
                               {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)}};
    const double stripe_freq = rng.uniform(18.0, 26.0);
    for (std::size_t r = 0; r < height; ++r) {
        const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
        for (std::size_t c = 0; c < width; ++c) {
            const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
            Vec3 v;
            const double t = 0.5 * (x + y);
            for (int k = 0; k < 3; ++k) v[k] = (1 - t) * c0[k] + t * c1[k];
            if (x > 0.55 && x < 0.95 && y > 0.05 && y < 0.4) {
                const double s = 0.5 + 0.5 * std::sin(stripe_freq * (x + 0.5 * y));
                for (int k = 0; k < 3; ++k) v[k] = 0.15 + 0.7 * s * (k == 1 ? 0.6 : 1.0);
            }
            if (y > 0.7 && y < 0.78) v = {0.95, 0.95, 0.9};
            for (const auto& d : discs) {
                if ((x - d.x) * (x - d.x) + (y - d.y) * (y - d.y) < d.r * d.r) v = d.color;
            }
            for (int k = 0; k < 3; ++k) img.at(r, c, k) = std::clamp(v[k], 0.0, 1.0);
        }
    }
    return img;
}

} // namespace s3im
