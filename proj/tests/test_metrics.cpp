#include "swm/metrics.hpp"

#include <numeric>
#include <random>

#include <gtest/gtest.h>

using namespace swm;

namespace {

Raster random_raster(int w, int h, int c, std::mt19937_64& rng) {
    Raster r(w, h, c);
    std::uniform_real_distribution<float> d(0, 1);
    for (auto& v : r.data) v = d(rng);
    return r;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::vector<float> v(n);
    std::normal_distribution<float> d(0, 1);
    for (auto& x : v) x = d(rng);
    return v;
}

// Two-pass: mean of squares, then root.
double naive_rmse(const Raster& a, const Raster& b) {
    std::vector<double> sq;
    for (std::size_t i = 0; i < a.data.size(); ++i) sq.push_back((double(a.data[i]) - b.data[i]) * (double(a.data[i]) - b.data[i]));
    double mean = 0;
    for (double s : sq) mean += s / static_cast<double>(sq.size());
    return std::sqrt(mean);
}

// Direct 2-D window evaluation with an explicitly built 2-D Gaussian kernel.
double naive_ssim(const Raster& a, const Raster& b, const SsimConfig& cfg) {
    const int n = cfg.window, r = n / 2;
    std::vector<double> k2d(static_cast<std::size_t>(n * n));
    double tot = 0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) tot += k2d[static_cast<std::size_t>((y + r) * n + x + r)] = std::exp(-(x * x + y * y) / (2 * cfg.sigma * cfg.sigma));
    for (auto& v : k2d) v /= tot;
    const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2), c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
    double chan_sum = 0;
    for (int c = 0; c < a.channels; ++c) {
        double s = 0;
        int count = 0;
        for (int y0 = 0; y0 + n <= a.height; ++y0)
            for (int x0 = 0; x0 + n <= a.width; ++x0) {
                double ma = 0, mb = 0;
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x) {
                        const double w = k2d[static_cast<std::size_t>(y * n + x)];
                        ma += w * a.at(c, x0 + x, y0 + y);
                        mb += w * b.at(c, x0 + x, y0 + y);
                    }
                double va = 0, vb = 0, cov = 0;
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x) {
                        const double w = k2d[static_cast<std::size_t>(y * n + x)];
                        const double da = a.at(c, x0 + x, y0 + y) - ma, db = b.at(c, x0 + x, y0 + y) - mb;
                        va += w * da * da;
                        vb += w * db * db;
                        cov += w * da * db;
                    }
                s += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        chan_sum += s / count;
    }
    return chan_sum / a.channels;
}

double naive_cosine(const std::vector<float>& u, const std::vector<float>& v) {
    double dot = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += double(u[i]) * v[i];
        a += double(u[i]) * u[i];
        b += double(v[i]) * v[i];
    }
    return dot / (std::sqrt(a) * std::sqrt(b));
}

} // namespace

TEST(Rmse, Examples) {
    Raster a(4, 3, 2, 0.25f);
    EXPECT_EQ(rmse(a, a), 0.0);
    Raster b(4, 3, 2, 0.75f);
    EXPECT_DOUBLE_EQ(rmse(a, b), 0.5);
    EXPECT_THROW(rmse(a, Raster(3, 4, 2)), Error);
}

TEST(Rmse, MatchesTwoPassOracle) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
        auto a = random_raster(9, 7, 2, rng), b = random_raster(9, 7, 2, rng);
        EXPECT_NEAR(rmse(a, b), naive_rmse(a, b), 1e-10);
    }
}

TEST(Ssim, IdenticalIsExactlyOne) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        auto a = random_raster(16, 13, 2, rng);
        EXPECT_EQ(ssim(a, a), 1.0);
    }
    Raster flat(12, 12, 1, 0.3f);
    EXPECT_EQ(ssim(flat, flat), 1.0);
}

TEST(Ssim, ConstantZeroVersusOne) {
    Raster a(16, 16, 1, 0.0f), b(16, 16, 1, 1.0f);
    const double c1 = 1e-4, c2 = 9e-4;
    EXPECT_NEAR(ssim(a, b), c1 * c2 / ((1 + c1) * c2), 1e-12);
    EXPECT_NEAR(ssim(a, b), 9.999e-5, 1e-8);
}

TEST(Ssim, MatchesDirectWindowOracle) {
    std::mt19937_64 rng(3);
    SsimConfig cfg;
    for (int t = 0; t < 100; ++t) {
        auto a = random_raster(16, 16, 1 + t % 2, rng), b = random_raster(16, 16, 1 + t % 2, rng);
        EXPECT_NEAR(ssim(a, b, cfg), naive_ssim(a, b, cfg), 1e-8);
    }
    cfg.window = 5;
    cfg.sigma = 0.8;
    auto a = random_raster(12, 10, 1, rng), b = random_raster(12, 10, 1, rng);
    EXPECT_NEAR(ssim(a, b, cfg), naive_ssim(a, b, cfg), 1e-8);
}

TEST(Ssim, InvalidInputs) {
    Raster small(8, 8, 1);
    EXPECT_THROW(ssim(small, small), Error);
    SsimConfig even;
    even.window = 4;
    Raster big(16, 16, 1);
    EXPECT_THROW(ssim(big, big, even), Error);
}

TEST(Ssim, BoundedOnRandomPairs) {
    std::mt19937_64 rng(4);
    std::bernoulli_distribution coin(0.5);
    for (int t = 0; t < 10000; ++t) {
        Raster a(11, 11, 1), b(11, 11, 1);
        // Mix of continuous, binary and inverted inputs to probe the extremes.
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = t % 3 == 0 ? float(coin(rng)) : std::uniform_real_distribution<float>(0, 1)(rng);
            b.data[i] = t % 5 == 0 ? 1.0f - a.data[i] : std::uniform_real_distribution<float>(0, 1)(rng);
        }
        ASSERT_LE(std::fabs(ssim(a, b)), 1 + 1e-9);
    }
}

TEST(Cosine, Examples) {
    std::vector<float> e0{1, 0}, e1{0, 1}, d{1, 1};
    EXPECT_EQ(cosine(e0, e0), 1.0);
    EXPECT_EQ(cosine(e0, e1), 0.0);
    EXPECT_NEAR(cosine(e0, d), std::sqrt(2.0) / 2, 1e-15);
    std::vector<float> z{0, 0};
    try {
        cosine(e0, z);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
    }
    std::vector<float> nan{std::nanf(""), 1};
    EXPECT_THROW(cosine(nan, e0), Error);
    EXPECT_THROW(cosine(e0, std::vector<float>{1, 2, 3}), Error);
}

TEST(Cosine, SelfIsExactlyOne) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 1000; ++t) {
        auto u = random_vec(1 + rng() % 300, rng);
        ASSERT_EQ(cosine(u, u), 1.0);
    }
}

TEST(Cosine, MatchesOracleAndScaleInvariant) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> pos(0.1f, 10.0f);
    for (int t = 0; t < 100; ++t) {
        auto u = random_vec(32, rng), v = random_vec(32, rng);
        EXPECT_NEAR(cosine(u, v), naive_cosine(u, v), 1e-8);
        const float a = pos(rng), b = pos(rng);
        std::vector<float> su(u), sv(v);
        for (auto& x : su) x *= a;
        for (auto& x : sv) x *= b;
        // Float rescaling perturbs components by an ulp; compare against the oracle on the rescaled data too.
        EXPECT_NEAR(cosine(su, sv), naive_cosine(su, sv), 1e-12);
        EXPECT_NEAR(cosine(su, sv), cosine(u, v), 1e-6);
    }
}

TEST(Cosine, ScaleInvariantForPowerOfTwoScales) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 100; ++t) {
        auto u = random_vec(40, rng), v = random_vec(40, rng);
        std::vector<float> su(u), sv(v);
        for (auto& x : su) x *= 8.0f;
        for (auto& x : sv) x *= 0.25f;
        EXPECT_NEAR(cosine(su, sv), cosine(u, v), 1e-12);
    }
}

TEST(Euclidean, Examples) {
    std::vector<float> a{0, 0}, b{3, 4};
    EXPECT_EQ(euclidean(a, a), 0.0);
    EXPECT_EQ(euclidean(a, b), 5.0);
    std::vector<float> sa{0, 0}, sb{-6, -8};
    EXPECT_EQ(euclidean(sa, sb), 10.0);
    EXPECT_THROW(euclidean(a, std::vector<float>{1}), Error);
}

TEST(Euclidean, MatchesOracle) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 100; ++t) {
        auto u = random_vec(17, rng), v = random_vec(17, rng);
        double s = 0;
        for (std::size_t i = 0; i < u.size(); ++i) s += std::pow(double(u[i]) - v[i], 2);
        EXPECT_NEAR(euclidean(u, v), std::sqrt(s), 1e-10);
    }
}

TEST(Metrics, SymmetryAndSelfIdentity) {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 100; ++t) {
        auto a = random_raster(12, 12, 2, rng), b = random_raster(12, 12, 2, rng);
        ASSERT_EQ(rmse(a, b), rmse(b, a));
        ASSERT_EQ(ssim(a, b), ssim(b, a));
        ASSERT_EQ(rmse(a, a), 0.0);
        auto u = random_vec(20, rng), v = random_vec(20, rng);
        ASSERT_EQ(cosine(u, v), cosine(v, u));
        ASSERT_EQ(euclidean(u, v), euclidean(v, u));
        ASSERT_EQ(euclidean(u, u), 0.0);
    }
}

TEST(MetricKind, OrientationAndParsing) {
    EXPECT_TRUE(lower_is_better(MetricKind::Rmse));
    EXPECT_TRUE(lower_is_better(MetricKind::Euclidean));
    EXPECT_FALSE(lower_is_better(MetricKind::Ssim));
    EXPECT_FALSE(lower_is_better(MetricKind::Cosine));
    EXPECT_EQ(parse_metric("SSIM"), MetricKind::Ssim);
    EXPECT_THROW(parse_metric("psnr"), Error);
    for (auto k : {MetricKind::Rmse, MetricKind::Ssim, MetricKind::Cosine, MetricKind::Euclidean}) EXPECT_EQ(parse_metric(to_string(k)), k);
}

TEST(MetricKind, AscendingEqualsNegatedDescending) {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> s(30);
        for (auto& v : s) v = static_cast<double>(rng() % 8);  // plenty of ties
        std::vector<std::size_t> p1(s.size()), p2(s.size());
        std::iota(p1.begin(), p1.end(), 0);
        std::iota(p2.begin(), p2.end(), 0);
        std::stable_sort(p1.begin(), p1.end(), [&](auto a, auto b) { return better(MetricKind::Rmse, s[a], s[b]); });
        std::stable_sort(p2.begin(), p2.end(), [&](auto a, auto b) { return better(MetricKind::Ssim, -s[a], -s[b]); });
        ASSERT_EQ(p1, p2);
    }
}
