#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "s3im/metrics.hpp"
#include "s3im/rng.hpp"

using namespace s3im;

namespace {

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = 0, double hi = 1) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

PixelBatch random_batch(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return PixelBatch(Tensor(Shape{n, 3}, random_values(n * 3, rng)), Tensor(Shape{n, 3}, random_values(n * 3, rng)));
}

} // namespace

TEST(Psnr, Cases) {
    const std::vector<double> a{0.1, 0.2, 0.3};
    EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
    const std::vector<double> b{0.2, 0.3, 0.4};  // uniform error 0.1 -> MSE 0.01
    EXPECT_NEAR(psnr(b, a, 1.0), 20.0, 1e-12);
    const std::vector<double> z{0.0, 0.0}, f{255.0, 255.0};
    EXPECT_NEAR(psnr(z, f, 255.0), 0.0, 1e-12);
    EXPECT_THROW(psnr(std::vector<double>{1.0}, a), ShapeError);
}

TEST(SsimWindow, IdenticalWindowsScoreOne) {
    Rng rng(1);
    const auto a = random_values(16, rng);
    EXPECT_NEAR(ssim_window(a, a, uniform_weights(16)), 1.0, 1e-15);
}

TEST(SsimWindow, ConstantPairClosedForm) {
    const std::vector<double> a(16, 0.0), b(16, 1.0);
    // zero variances: c = s = 1, l = C1 / (1 + C1)
    const double expected = 1e-4 / 1.0001;
    EXPECT_NEAR(ssim_window(a, b, uniform_weights(16)), expected, 1e-15);
    EXPECT_NEAR(ssim_window(a, b, uniform_weights(16)), 9.99900e-5, 1e-6);
}

TEST(SsimWindow, CheckerboardClosedForm) {
    const std::vector<double> a{0, 1, 0, 1}, b{1, 0, 1, 0};
    const auto t = ssim_terms(a, b, uniform_weights(4));
    EXPECT_NEAR(t.luminance, 1.0, 1e-15);
    EXPECT_NEAR(t.contrast, 1.0, 1e-15);
    const double s = (-0.25 + 4.5e-4) / (0.25 + 4.5e-4);
    EXPECT_NEAR(t.structure, s, 1e-15);
    EXPECT_NEAR(t.value(), -0.99641, 1e-5);
    EXPECT_NEAR(t.value(), oracle::block_ssim(a, b), 1e-15);
}

TEST(SsimWindow, SymmetricAndBounded) {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 4 + rng.below(30);
        auto a = random_values(n, rng, -1, 2), b = random_values(n, rng, -1, 2);
        auto w = random_values(n, rng, 0.1, 1);
        double total = 0;
        for (double x : w) total += x;
        for (double& x : w) x /= total;
        const double ab = ssim_window(a, b, w);
        EXPECT_NEAR(ab, ssim_window(b, a, w), 1e-14);
        EXPECT_GE(ab, -1 - 1e-9);
        EXPECT_LE(ab, 1 + 1e-9);
        const auto st = local_stats(a, b, w);
        EXPECT_LE(std::abs(st.cov_ab), st.std_a * st.std_b + 1e-9);
    }
}

TEST(SsimWindow, RejectsUnnormalizedWeights) {
    const std::vector<double> a{0.1, 0.2}, w{0.5, 0.6};
    EXPECT_THROW(ssim_window(a, a, w), DomainError);
}

TEST(SsimWindow, TensorPathMatchesSpanPathAndGradient) {
    Rng rng(3);
    const auto a0 = random_values(16, rng), b = random_values(16, rng);
    const auto w16 = uniform_weights(16);
    Tape tape;
    const auto a = tape.variable(Tensor(Shape{16}, a0));
    const auto score = ssim_window(a, Tensor(Shape{16}, b), w16);
    EXPECT_NEAR(score.item(), ssim_window(a0, b, w16), 1e-15);
    const auto g = tape.backward(score);
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& x) { return oracle::block_ssim(x, b); }, a0);
    EXPECT_LT(oracle::max_relative_error(as_vector(g[a]), fd), 1e-6);
}

TEST(Window, GaussianTapsNormalized) {
    const auto taps = gaussian_taps(11, 1.5);
    double total = 0;
    for (double t : taps) total += t;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(taps[0], taps[10], 1e-15);
    EXPECT_GT(taps[5], taps[4]);
    const auto w = WindowSpec::evaluation().weights();
    EXPECT_EQ(w.size(), 121u);
    total = 0;
    for (double t : w) total += t;
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (double t : WindowSpec::uniform(4).weights()) EXPECT_EQ(t, 1.0 / 16.0);
}

TEST(SsimMap, IdenticalImages) {
    Rng rng(4);
    const Tensor img(Shape{16, 16, 3}, random_values(768, rng));
    const auto m = ssim_map(img, img, WindowSpec::uniform(4));
    EXPECT_NEAR(m.mean.item(), 1.0, 1e-15);
    for (double v : m.scores.values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(SsimMap, TilingCount) {
    Rng rng(5);
    const Tensor a(Shape{8, 8, 3}, random_values(192, rng)), b(Shape{8, 8, 3}, random_values(192, rng));
    const auto m = ssim_map(a, b, WindowSpec::uniform(4));
    EXPECT_EQ(m.scores.shape(), (Shape{3, 2, 2}));
    const auto g = ssim_map(a, b, WindowSpec{WindowKind::Gaussian, 5, 1, 1.5});
    EXPECT_EQ(g.scores.shape(), (Shape{3, 4, 4}));
}

TEST(SsimMap, MatchesBlockOracle) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_values(64 * 64 * 3, rng), b = random_values(64 * 64 * 3, rng);
        const auto m = ssim_map(Tensor(Shape{64, 64, 3}, a), Tensor(Shape{64, 64, 3}, b), WindowSpec::uniform(4));
        EXPECT_NEAR(m.mean.item(), oracle::blockwise_mssim(a, b, 64, 64, 4), 1e-12);
    }
}

TEST(SsimMap, PerBlockScoresMatchOracle) {
    Rng rng(7);
    const auto a = random_values(8 * 12 * 3, rng), b = random_values(8 * 12 * 3, rng);
    const auto m = ssim_map(Tensor(Shape{8, 12, 3}, a), Tensor(Shape{8, 12, 3}, b), WindowSpec::uniform(4));
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                std::vector<double> wa, wb;
                for (std::size_t r = 4 * i; r < 4 * i + 4; ++r) {
                    for (std::size_t c = 4 * j; c < 4 * j + 4; ++c) {
                        wa.push_back(a[(r * 12 + c) * 3 + ch]);
                        wb.push_back(b[(r * 12 + c) * 3 + ch]);
                    }
                }
                EXPECT_NEAR(m.scores[(ch * 2 + i) * 3 + j], oracle::block_ssim(wa, wb), 1e-13);
            }
        }
    }
}

TEST(SsimMap, Errors) {
    const Tensor small(Shape{3, 3, 3}, std::vector<double>(27, 0.5));
    EXPECT_THROW(ssim_map(small, small, WindowSpec::uniform(4)), ShapeError);
    const Tensor odd(Shape{6, 8, 3}, std::vector<double>(144, 0.5));
    EXPECT_THROW(ssim_map(odd, odd, WindowSpec::uniform(4)), ShapeError);
    EXPECT_THROW(ssim_map(odd, small, WindowSpec::uniform(2)), ShapeError);
}

TEST(SsimMap, GradientMatchesFiniteDifferences) {
    Rng rng(8);
    const auto a0 = random_values(8 * 8 * 3, rng), b = random_values(8 * 8 * 3, rng);
    for (const auto& window : {WindowSpec::uniform(4), WindowSpec{WindowKind::Gaussian, 5, 1, 1.5}}) {
        Tape tape;
        const auto a = tape.variable(Tensor(Shape{8, 8, 3}, a0));
        const auto g = tape.backward(ssim_map(a, Tensor(Shape{8, 8, 3}, b), window).mean);
        const auto fd = oracle::central_difference(
            [&](const std::vector<double>& x) {
                return ssim_map(Tensor(Shape{8, 8, 3}, x), Tensor(Shape{8, 8, 3}, b), window).mean.item();
            },
            a0);
        EXPECT_LT(oracle::max_relative_error(as_vector(g[a]), fd), 1e-5);
    }
}

TEST(SsimMap, GradientFiniteWhereNumeratorVanishes) {
    // mu_a = mu_b = 0 makes C1 the whole luminance numerator, and cov = -C2 / 2 zeroes the
    // contrast-structure numerator; the slope must stay finite there.
    std::vector<double> a(16 * 3, 0.0), b(16 * 3, 0.0);
    const double c2 = SsimConstants{}.c2();
    for (std::size_t i = 0; i < 16; ++i) {
        const double sign = i % 2 == 0 ? 1.0 : -1.0;
        for (std::size_t ch = 0; ch < 3; ++ch) {
            a[i * 3 + ch] = 0.5 + sign * std::sqrt(c2 / 2);
            b[i * 3 + ch] = 0.5 - sign * 0.5;
        }
    }
    Tape tape;
    const auto x = tape.variable(Tensor(Shape{4, 4, 3}, a));
    const auto g = tape.backward(ssim_map(x, Tensor(Shape{4, 4, 3}, b), WindowSpec::uniform(4)).mean);
    for (double v : g[x]) EXPECT_TRUE(std::isfinite(v));
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& v) {
            return ssim_map(Tensor(Shape{4, 4, 3}, v), Tensor(Shape{4, 4, 3}, b), WindowSpec::uniform(4)).mean.item();
        },
        a, 1e-7);
    EXPECT_LT(oracle::max_relative_error(as_vector(g[x]), fd, 1e-4), 1e-4);
}

TEST(S3im, PerfectPredictionIsOne) {
    auto batch = random_batch(64, 9);
    batch.target = batch.predicted;
    for (std::uint64_t seed : {0u, 1u, 99u}) {
        for (std::size_t m : {1u, 3u, 10u}) {
            EXPECT_NEAR(s3im::s3im(batch, m, WindowSpec::uniform(4), {}, Rng(seed)).value.item(), 1.0, 1e-15);
        }
    }
}

TEST(S3im, SinglePatchEqualsSsimMapOfThatPatch) {
    const auto batch = random_batch(256, 10);
    const Rng stream(11);
    const auto r = s3im::s3im(batch, 1, WindowSpec::uniform(4), {}, stream);
    Rng same = stream.split(0);
    const auto patch = make_patch(batch, same, 4);
    EXPECT_EQ(r.value.item(), ssim_map(patch.predicted, patch.target, WindowSpec::uniform(4)).mean.item());
}

TEST(S3im, AverageOfPerPatchValues) {
    const auto batch = random_batch(1024, 12);
    const auto r = s3im::s3im(batch, 10, WindowSpec::uniform(4), {}, Rng(13));
    ASSERT_EQ(r.per_patch.size(), 10u);
    double total = 0;
    for (double v : r.per_patch) total += v;
    EXPECT_NEAR(r.value.item(), total / 10.0, 1e-15);
    for (std::size_t m = 0; m < 10; ++m) {
        Rng rng = Rng(13).split(m);
        const auto patch = make_patch(batch, rng, 4);
        EXPECT_EQ(r.per_patch[m], ssim_map(patch.predicted, patch.target, WindowSpec::uniform(4)).mean.item());
    }
}

TEST(S3im, GradientThroughPermutation) {
    const auto batch = random_batch(16, 14);
    const auto p0 = as_vector(batch.predicted.values());
    Tape tape;
    const auto pred = tape.variable(batch.predicted);
    const auto g = tape.backward(s3im::s3im(PixelBatch(pred, batch.target), 3, WindowSpec::uniform(4), {}, Rng(15)).value);
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& x) {
            return s3im::s3im(PixelBatch(Tensor(Shape{16, 3}, x), batch.target), 3, WindowSpec::uniform(4), {}, Rng(15))
                .value.item();
        },
        p0);
    EXPECT_LT(oracle::max_relative_error(as_vector(g[pred]), fd), 1e-4);
}

TEST(S3im, MoreRepeatsReduceVariance) {
    const auto batch = random_batch(256, 16);
    auto variance = [&](std::size_t m) {
        double s = 0, sq = 0;
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            const double v = s3im::s3im(batch, m, WindowSpec::uniform(4), {}, Rng(seed)).value.item();
            s += v;
            sq += v * v;
        }
        return sq / 200 - (s / 200) * (s / 200);
    };
    EXPECT_LE(variance(10), variance(1));
}

TEST(S3im, PropagatesPatchErrors) {
    EXPECT_THROW(s3im::s3im(random_batch(20, 1), 1, WindowSpec::uniform(4), {}, Rng(0)), ShapeError);
    EXPECT_THROW(s3im::s3im(random_batch(16, 1), 0, WindowSpec::uniform(4), {}, Rng(0)), DomainError);
}

TEST(Msssim, IdenticalAndConstantShift) {
    Rng rng(17);
    const Tensor img(Shape{16, 16, 3}, random_values(768, rng));
    EXPECT_NEAR(msssim_eval(img, img), 1.0, 1e-15);
    const Tensor a = Tensor::full(Shape{20, 20, 3}, 0.4);
    const Tensor b = Tensor::full(Shape{20, 20, 3}, 0.6);
    const double expected = (2 * 0.4 * 0.6 + 1e-4) / (0.16 + 0.36 + 1e-4);
    EXPECT_NEAR(msssim_eval(a, b), expected, 1e-12);
    EXPECT_NEAR(msssim_eval(a, b), 0.4801 / 0.5201, 1e-12);
}

TEST(Msssim, ShiftOfTexturedImageKeepsContrastAndStructure) {
    // a + d with in-range values: only the luminance term moves
    Rng rng(18);
    std::vector<double> a(14 * 14 * 3), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform(0.2, 0.6);
        b[i] = a[i] + 0.2;
    }
    const auto w = WindowSpec::evaluation().weights();
    double expected = 0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                double mu = 0;
                for (std::size_t u = 0; u < 11; ++u) {
                    for (std::size_t v = 0; v < 11; ++v) mu += w[u * 11 + v] * a[((i + u) * 14 + j + v) * 3 + ch];
                }
                expected += (2 * mu * (mu + 0.2) + 1e-4) / (mu * mu + (mu + 0.2) * (mu + 0.2) + 1e-4);
            }
        }
    }
    expected /= 48;
    EXPECT_NEAR(msssim_eval(Tensor(Shape{14, 14, 3}, a), Tensor(Shape{14, 14, 3}, b)), expected, 1e-12);
}

TEST(Msssim, TooSmall) {
    const Tensor img(Shape{10, 12, 3}, std::vector<double>(360, 0.5));
    EXPECT_THROW(msssim_eval(img, img), ShapeError);
}
