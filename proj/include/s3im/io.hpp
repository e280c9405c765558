#pragma once

// File formats: binary PPM (P6), CSV run logs, model checkpoints and scene manifests.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "s3im/errors.hpp"
#include "s3im/field.hpp"
#include "s3im/image.hpp"
#include "s3im/runlog.hpp"
#include "s3im/scene.hpp"

namespace s3im {

namespace fs = std::filesystem;

namespace detail {

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace detail

// ---------------------------------------------------------------------------
// PPM

/// Parse a binary P6 PPM with maxval 255. Channels are divided by 255.
inline ImageBuffer decode_ppm(const std::vector<unsigned char>& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* what) {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(std::string("ppm: malformed ") + what);
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > 1u << 24) throw FormatError(std::string("ppm: ") + what + " too large");
        }
        return static_cast<std::size_t>(v);
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("ppm: missing P6 magic");
    pos = 2;
    const std::size_t width = read_uint("width");
    const std::size_t height = read_uint("height");
    const std::size_t maxval = read_uint("maxval");
    if (width == 0 || height == 0) throw FormatError("ppm: zero dimension");
    if (maxval != 255) throw FormatError("ppm: unsupported maxval " + std::to_string(maxval) + " (only 255)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("ppm: malformed header terminator");
    ++pos;
    const std::size_t n = width * height * 3;
    if (bytes.size() - pos < n) throw FormatError("ppm: truncated payload");

    ImageBuffer img(width, height);
    for (std::size_t i = 0; i < n; ++i) img.rgb[i] = static_cast<double>(bytes[pos + i]) / 255.0;
    return img;
}

/// Canonical P6 encoding: "P6\n<w> <h>\n255\n" then 8-bit channels rounded half away from zero.
inline std::vector<unsigned char> encode_ppm(const ImageBuffer& img) {
    if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3) {
        throw ShapeError("ppm: invalid image buffer");
    }
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + img.rgb.size());
    for (double v : img.rgb) {
        const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
        out.push_back(static_cast<unsigned char>(q));
    }
    return out;
}

inline ImageBuffer read_ppm(const fs::path& path) { return decode_ppm(detail::read_bytes(path)); }

inline void write_ppm(const fs::path& path, const ImageBuffer& img) { detail::write_bytes(path, encode_ppm(img)); }

/// The image after one save/load cycle.
inline ImageBuffer quantize(const ImageBuffer& img) { return decode_ppm(encode_ppm(img)); }

// ---------------------------------------------------------------------------
// CSV run log

inline std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string format_csv_log(const RunLog& log) {
    std::string out = "iter,train_mse,train_s3im,test_psnr,test_ssim,wall_ms\n";
    for (const auto& r : log.records) {
        out += std::to_string(r.iteration) + "," + format_g9(r.train_mse) + "," + format_g9(r.train_s3im) + "," +
               format_g9(r.test_psnr) + "," + format_g9(r.test_ssim) + "," + format_g9(r.wall_ms) + "\n";
    }
    return out;
}

inline void write_csv_log(const RunLog& log, const fs::path& path) { detail::write_text(path, format_csv_log(log)); }

// ---------------------------------------------------------------------------
// Checkpoint
//
//   "S3IMCKPT"              8 bytes
//   version                 u32 (1)
//   task                    u32 (1 = image2d, 2 = toy-nerf)
//   pos_freqs, dir_freqs    u32, u32
//   dim count, dims...      u32, u32 * count
//   payload                 f64 * parameter count (layer by layer, weight then bias)
//   crc32(payload)          u32
//
// All integers and floats little-endian.

inline constexpr std::array<char, 8> kCheckpointMagic{'S', '3', 'I', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    out.insert(out.end(), b.begin(), b.end());
}

template <class T>
T get_le(const std::vector<unsigned char>& in, std::size_t& pos) {
    if (in.size() - pos < sizeof(T) || pos > in.size()) throw FormatError("checkpoint: truncated file");
    std::array<unsigned char, sizeof(T)> b;
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(pos), sizeof(T), b.begin());
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, data, static_cast<uInt>(n));
    return static_cast<std::uint32_t>(crc);
}

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const FieldModel& model) {
    model.validate();
    std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.task));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.encoding.pos_freqs));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.encoding.dir_freqs));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.dims.size()));
    for (auto d : model.dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const std::size_t payload_start = out.size();
    for (double v : model.flat()) detail::put_le<double>(out, v);
    const auto crc = detail::crc32_of(out.data() + payload_start, out.size() - payload_start);
    detail::put_le<std::uint32_t>(out, crc);
    return out;
}

inline FieldModel decode_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < kCheckpointMagic.size() ||
        !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
        throw FormatError("checkpoint: bad magic");
    }
    std::size_t pos = kCheckpointMagic.size();
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto task = detail::get_le<std::uint32_t>(bytes, pos);
    if (task != 1 && task != 2) throw FormatError("checkpoint: unknown task tag " + std::to_string(task));
    FieldModel m;
    m.task = static_cast<FieldTask>(task);
    m.encoding.pos_freqs = detail::get_le<std::uint32_t>(bytes, pos);
    m.encoding.dir_freqs = detail::get_le<std::uint32_t>(bytes, pos);
    const auto count = detail::get_le<std::uint32_t>(bytes, pos);
    if (count < 2 || count > 64) throw FormatError("checkpoint: implausible layer count");
    for (std::uint32_t i = 0; i < count; ++i) m.dims.push_back(detail::get_le<std::uint32_t>(bytes, pos));
    std::size_t params = 0;
    for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
        m.layers.push_back(DenseLayer{m.dims[l], m.dims[l + 1], std::vector<double>(m.dims[l] * m.dims[l + 1]),
                                      std::vector<double>(m.dims[l + 1])});
        params += m.dims[l] * m.dims[l + 1] + m.dims[l + 1];
    }
    if (bytes.size() < pos || bytes.size() - pos != params * 8 + 4) {
        throw FormatError("checkpoint: payload length does not match layer dims");
    }
    const auto crc = detail::crc32_of(bytes.data() + pos, params * 8);
    std::vector<double> flat(params);
    for (auto& v : flat) v = detail::get_le<double>(bytes, pos);
    if (detail::get_le<std::uint32_t>(bytes, pos) != crc) throw FormatError("checkpoint: CRC mismatch (corrupt file)");
    m.set_flat(flat);
    try {
        m.validate();
    } catch (const ShapeError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return m;
}

inline void save_checkpoint(const FieldModel& model, const fs::path& path) {
    detail::write_bytes(path, encode_checkpoint(model));
}

inline FieldModel load_checkpoint(const fs::path& path) { return decode_checkpoint(detail::read_bytes(path)); }

// ---------------------------------------------------------------------------
// Scene directories: manifest.txt + view_NNN.ppm

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_manifest(const CameraRig& rig) {
    std::string out;
    for (const auto& c : rig.cameras) {
        out += "camera";
        for (double v : c.origin) out += " " + format_g17(v);
        for (double v : c.direction) out += " " + format_g17(v);
        out += "\n";
    }
    out += "bounds " + format_g17(rig.bounds.t_near) + " " + format_g17(rig.bounds.t_far) + " " +
           std::to_string(rig.bounds.samples) + "\n";
    return out;
}

/// Parse camera and bounds lines. Width and height are left at zero.
inline CameraRig parse_manifest(const std::string& text) {
    CameraRig rig;
    bool have_bounds = false;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind) || kind[0] == '#') continue;
        if (kind == "camera") {
            Camera c;
            if (!(ls >> c.origin[0] >> c.origin[1] >> c.origin[2] >> c.direction[0] >> c.direction[1] >> c.direction[2])) {
                throw FormatError("manifest line " + std::to_string(lineno) + ": malformed camera");
            }
            rig.cameras.push_back(c);
        } else if (kind == "bounds") {
            if (!(ls >> rig.bounds.t_near >> rig.bounds.t_far >> rig.bounds.samples)) {
                throw FormatError("manifest line " + std::to_string(lineno) + ": malformed bounds");
            }
            have_bounds = true;
        } else {
            throw FormatError("manifest line " + std::to_string(lineno) + ": unknown record '" + kind + "'");
        }
    }
    if (!have_bounds) throw FormatError("manifest: missing bounds line");
    if (rig.cameras.empty()) throw FormatError("manifest: no cameras");
    return rig;
}

inline std::string view_filename(std::size_t camera) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%03zu.ppm", camera);
    return buf;
}

/// Views and cameras of a toy radiance-field dataset.
struct SceneData {
    CameraRig rig;
    std::vector<ImageBuffer> images;  ///< one per camera
};

/// Build the procedural scene, render its reference views and write them with a manifest.
inline SceneData build_synthetic_scene(std::uint64_t seed, std::size_t resolution, std::size_t camera_count,
                                       const fs::path& dir, RayBounds bounds = {}) {
    const auto scene = make_synthetic_scene(seed, resolution, camera_count, bounds);
    fs::create_directories(dir);
    SceneData data;
    data.rig = scene.rig;
    for (std::size_t c = 0; c < camera_count; ++c) {
        auto img = scene.reference_image(c);
        write_ppm(dir / view_filename(c), img);
        data.images.push_back(quantize(img));
    }
    detail::write_text(dir / "manifest.txt", format_manifest(scene.rig));
    return data;
}

inline SceneData load_scene(const fs::path& dir) {
    const auto bytes = detail::read_bytes(dir / "manifest.txt");
    SceneData data;
    data.rig = parse_manifest(std::string(bytes.begin(), bytes.end()));
    for (std::size_t c = 0; c < data.rig.cameras.size(); ++c) {
        data.images.push_back(read_ppm(dir / view_filename(c)));
        const auto& img = data.images.back();
        if (c == 0) {
            data.rig.width = img.width;
            data.rig.height = img.height;
        } else if (img.width != data.rig.width || img.height != data.rig.height) {
            throw FormatError("scene: view " + std::to_string(c) + " differs in size");
        }
    }
    return data;
}

} // namespace s3im
