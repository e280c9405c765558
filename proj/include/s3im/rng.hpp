#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "s3im/errors.hpp"

namespace s3im {

/// Counter-based generator.
///
/// Output i of a stream with key k is splitmix64_mix(k + (i + 1) * 0x9E3779B97F4A7C15),
/// i.e. the SplitMix64 sequence seeded with k, addressed by position. Child streams
/// are derived with split(tag), which hashes (key, tag) into a fresh key, so a trainer
/// seed fans out into per-iteration and per-patch streams without any shared state.
/// Bounded integers use Lemire's multiply-shift with rejection (unbiased), doubles take
/// the top 53 bits, normals use the Box-Muller cosine branch. Every step is plain
/// integer arithmetic, so permutation sequences agree across platforms.
class Rng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x5851F42D4C957F2DULL)) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Independent child stream identified by `tag`. Does not advance this stream.
    Rng split(std::uint64_t tag) const {
        Rng child;
        child.key_ = mix(key_ ^ mix(tag * kGolden + 0x2545F4914F6CDD1DULL));
        return child;
    }

    Rng split(std::uint64_t a, std::uint64_t b) const { return split(a).split(b); }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * kGolden);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw DomainError("Rng::below: empty range");
        std::uint64_t x = next_u64();
        auto m = static_cast<unsigned __int128>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = next_u64();
                m = static_cast<unsigned __int128>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal deviate. Consumes exactly two outputs.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Advance the stream by `n` outputs without producing them.
    void skip(std::uint64_t n) { counter_ += n; }

    std::uint64_t position() const { return counter_; }

    /// Uniform random permutation of 0..n-1 (Fisher-Yates, n-1 draws).
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    /// k distinct indices from 0..n-1 in random order (partial Fisher-Yates, k draws).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw DomainError("Rng::sample_without_replacement: k exceeds n");
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(below(n - i));
            std::swap(p[i], p[j]);
        }
        p.resize(k);
        return p;
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace s3im
