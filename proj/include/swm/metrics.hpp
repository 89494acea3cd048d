#pragma once

// Pixel-space metrics (RMSE, SSIM) over rasters and vector metrics (cosine,
// Euclidean) over embeddings. All arithmetic is in double.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "swm/error.hpp"
#include "swm/imgproc.hpp"

namespace swm {

enum class MetricKind { Rmse, Ssim, Cosine, Euclidean };

inline std::string to_string(MetricKind k) {
    switch (k) {
        case MetricKind::Rmse: return "rmse";
        case MetricKind::Ssim: return "ssim";
        case MetricKind::Cosine: return "cosine";
        case MetricKind::Euclidean: return "euclidean";
    }
    return "?";
}

inline MetricKind parse_metric(const std::string& s) {
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "rmse") return MetricKind::Rmse;
    if (l == "ssim") return MetricKind::Ssim;
    if (l == "cosine") return MetricKind::Cosine;
    if (l == "euclidean") return MetricKind::Euclidean;
    fail(ErrorCode::InvalidArgument, "unknown metric '" + s + "' (expected rmse, ssim, cosine or euclidean)");
}

/// Rmse and Euclidean are distances; Ssim and Cosine are similarities.
inline bool lower_is_better(MetricKind k) { return k == MetricKind::Rmse || k == MetricKind::Euclidean; }
inline bool is_pixel_metric(MetricKind k) { return k == MetricKind::Rmse || k == MetricKind::Ssim; }

/// True when score `a` ranks strictly ahead of `b` under `k`.
inline bool better(MetricKind k, double a, double b) { return lower_is_better(k) ? a < b : a > b; }

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    void validate() const {
        if (window < 3 || window % 2 == 0) fail(ErrorCode::InvalidArgument, "SSIM window must be odd and >= 3");
        if (!(sigma > 0)) fail(ErrorCode::InvalidArgument, "SSIM sigma must be positive");
        if (!(k1 > 0) || !(k2 > 0)) fail(ErrorCode::InvalidArgument, "SSIM K1 and K2 must be positive");
        if (!(dynamic_range > 0)) fail(ErrorCode::InvalidArgument, "SSIM dynamic range must be positive");
    }
};

namespace detail {
inline void check_same_raster(const Raster& a, const Raster& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        fail(ErrorCode::ShapeMismatch, std::string(what) + ": rasters differ in shape (" + std::to_string(a.channels) + "x" +
                                           std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " + std::to_string(b.channels) +
                                           "x" + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    }
}

inline void check_vectors(std::span<const float> u, std::span<const float> v, const char* what) {
    if (u.size() != v.size()) {
        fail(ErrorCode::DimMismatch, std::string(what) + ": lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!std::isfinite(u[i]) || !std::isfinite(v[i])) fail(ErrorCode::NonFinite, std::string(what) + ": non-finite component " + std::to_string(i));
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(int window, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(window));
    const int r = window / 2;
    double total = 0;
    for (int i = -r; i <= r; ++i) total += w[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2 * sigma * sigma));
    for (auto& v : w) v /= total;
    return w;
}

/// Valid-mode separable filter of one plane.
inline std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h, const std::vector<double>& taps) {
    const int n = static_cast<int>(taps.size());
    const int ow = w - n + 1, oh = h - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int t = 0; t < n; ++t) acc += taps[static_cast<std::size_t>(t)] * plane[static_cast<std::size_t>(y) * w + x + t];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int t = 0; t < n; ++t) acc += taps[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}
} // namespace detail

inline double rmse(const Raster& a, const Raster& b) {
    detail::check_same_raster(a, b, "rmse");
    if (a.data.empty()) fail(ErrorCode::InvalidArgument, "rmse of empty rasters");
    double acc = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.data.size()));
}

/// Mean SSIM over Gaussian windows lying fully inside the image; channels averaged.
inline double ssim(const Raster& a, const Raster& b, const SsimConfig& cfg = {}) {
    detail::check_same_raster(a, b, "ssim");
    cfg.validate();
    if (a.width < cfg.window || a.height < cfg.window) {
        fail(ErrorCode::InvalidArgument, "ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) + " smaller than window " +
                                             std::to_string(cfg.window));
    }
    const auto taps = detail::gaussian_taps(cfg.window, cfg.sigma);
    const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
    const std::size_t n = static_cast<std::size_t>(a.width) * a.height;
    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
        const auto sa = a.plane(c), sb = b.plane(c);
        for (std::size_t i = 0; i < n; ++i) {
            pa[i] = sa[i];
            pb[i] = sb[i];
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = detail::filter_valid(pa, a.width, a.height, taps);
        const auto mu_b = detail::filter_valid(pb, a.width, a.height, taps);
        const auto e_aa = detail::filter_valid(aa, a.width, a.height, taps);
        const auto e_bb = detail::filter_valid(bb, a.width, a.height, taps);
        const auto e_ab = detail::filter_valid(ab, a.width, a.height, taps);
        double sum = 0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
            sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / static_cast<double>(mu_a.size());
    }
    return total / a.channels;
}

/// <u,v> / sqrt(|u|^2 |v|^2); a zero vector is an error, not a 0 score.
inline double cosine(std::span<const float> u, std::span<const float> v) {
    detail::check_vectors(u, v, "cosine");
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double a = u[i], b = v[i];
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if (nu == 0 || nv == 0) fail(ErrorCode::ZeroVector, "cosine similarity of a zero vector is undefined");
    return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

inline double euclidean(std::span<const float> u, std::span<const float> v) {
    detail::check_vectors(u, v, "euclidean");
    double acc = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = static_cast<double>(u[i]) - static_cast<double>(v[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline double vector_metric(MetricKind k, std::span<const float> u, std::span<const float> v) {
    if (k == MetricKind::Cosine) return cosine(u, v);
    if (k == MetricKind::Euclidean) return euclidean(u, v);
    fail(ErrorCode::InvalidArgument, to_string(k) + " is a pixel metric, not an embedding metric");
}

inline double pixel_metric(MetricKind k, const Raster& a, const Raster& b, const SsimConfig& cfg = {}) {
    if (k == MetricKind::Rmse) return rmse(a, b);
    if (k == MetricKind::Ssim) return ssim(a, b, cfg);
    fail(ErrorCode::InvalidArgument, to_string(k) + " is an embedding metric, not a pixel metric");
}

} // namespace swm
