#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/digest.hpp"
#include "swm/error.hpp"
#include "swm/png.hpp"

namespace swm {

struct RectRegion {
    int x = 0;
    int y = 0;
    int w = 1;
    int h = 1;

    bool operator==(const RectRegion&) const = default;
    std::string describe() const {
        return "(" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(w) + "," + std::to_string(h) + ")";
    }
};

/// Hue in degrees; h_lo > h_hi wraps through 0.
struct HsvRange {
    double h_lo = 0, h_hi = 359.999;
    double s_lo = 0, s_hi = 1;
    double v_lo = 0, v_hi = 1;

    bool operator==(const HsvRange&) const = default;

    void validate() const {
        auto hue_ok = [](double h) { return h >= 0 && h < 360; };
        if (!hue_ok(h_lo) || !hue_ok(h_hi)) fail(ErrorCode::ConfigError, "hue bounds must lie in [0,360)");
        if (!(s_lo >= 0 && s_hi <= 1 && s_lo <= s_hi)) fail(ErrorCode::ConfigError, "saturation bounds invalid");
        if (!(v_lo >= 0 && v_hi <= 1 && v_lo <= v_hi)) fail(ErrorCode::ConfigError, "value bounds invalid");
    }

    bool contains(double h, double s, double v) const {
        bool hue = h_lo <= h_hi ? (h >= h_lo && h <= h_hi) : (h >= h_lo || h <= h_hi);
        return hue && s >= s_lo && s <= s_hi && v >= v_lo && v <= v_hi;
    }
};

enum class ChannelLayout { RedBlue2ch, CompositeGray1ch };

struct PreprocessConfig {
    std::vector<RectRegion> blackout{{136, 136, 64, 24}};
    RectRegion crop{128, 128, 256, 256};
    std::vector<HsvRange> red_ranges{{340, 15, 0.25, 1, 0.35, 1}};
    std::vector<HsvRange> blue_ranges{{195, 255, 0.25, 1, 0.35, 1}};
    int out_w = 256;
    int out_h = 256;
    ChannelLayout channel_layout = ChannelLayout::RedBlue2ch;

    int out_channels() const { return channel_layout == ChannelLayout::RedBlue2ch ? 2 : 1; }

    void validate() const {
        if (out_w <= 0 || out_h <= 0) fail(ErrorCode::ConfigError, "out_w/out_h must be positive");
        if (red_ranges.empty() || blue_ranges.empty()) fail(ErrorCode::ConfigError, "colour range lists must be non-empty");
        for (const auto& r : red_ranges) r.validate();
        for (const auto& r : blue_ranges) r.validate();
        if (crop.w < 1 || crop.h < 1) fail(ErrorCode::ConfigError, "crop region must be at least 1x1");
    }

    bool operator==(const PreprocessConfig&) const = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(ChannelLayout, {{ChannelLayout::RedBlue2ch, "RedBlue2ch"},
                                             {ChannelLayout::CompositeGray1ch, "CompositeGray1ch"}})

namespace detail {
inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const char* what) {
    if (!j.is_object()) fail(ErrorCode::ConfigError, std::string(what) + " must be a JSON object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) fail(ErrorCode::ConfigError, std::string("unknown key '") + k + "' in " + what);
    }
}
} // namespace detail

inline void to_json(nlohmann::json& j, const RectRegion& r) { j = {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }
inline void from_json(const nlohmann::json& j, RectRegion& r) {
    detail::require_keys(j, {"x", "y", "w", "h"}, "RectRegion");
    r = {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
}
inline void to_json(nlohmann::json& j, const HsvRange& r) {
    j = {{"h_lo", r.h_lo}, {"h_hi", r.h_hi}, {"s_lo", r.s_lo}, {"s_hi", r.s_hi}, {"v_lo", r.v_lo}, {"v_hi", r.v_hi}};
}
inline void from_json(const nlohmann::json& j, HsvRange& r) {
    detail::require_keys(j, {"h_lo", "h_hi", "s_lo", "s_hi", "v_lo", "v_hi"}, "HsvRange");
    HsvRange d;
    r.h_lo = j.value("h_lo", d.h_lo);
    r.h_hi = j.value("h_hi", d.h_hi);
    r.s_lo = j.value("s_lo", d.s_lo);
    r.s_hi = j.value("s_hi", d.s_hi);
    r.v_lo = j.value("v_lo", d.v_lo);
    r.v_hi = j.value("v_hi", d.v_hi);
}
inline void to_json(nlohmann::json& j, const PreprocessConfig& c) {
    j = {{"blackout", c.blackout},       {"crop", c.crop},   {"red_ranges", c.red_ranges},
         {"blue_ranges", c.blue_ranges}, {"out_w", c.out_w}, {"out_h", c.out_h},
         {"channel_layout", c.channel_layout}};
}
/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, PreprocessConfig& c) {
    detail::require_keys(j, {"blackout", "crop", "red_ranges", "blue_ranges", "out_w", "out_h", "channel_layout"},
                         "PreprocessConfig");
    PreprocessConfig d;
    c.blackout = j.value("blackout", d.blackout);
    c.crop = j.value("crop", d.crop);
    c.red_ranges = j.value("red_ranges", d.red_ranges);
    c.blue_ranges = j.value("blue_ranges", d.blue_ranges);
    c.out_w = j.value("out_w", d.out_w);
    c.out_h = j.value("out_h", d.out_h);
    if (j.contains("channel_layout")) {
        auto s = j["channel_layout"].get<std::string>();
        if (s != "RedBlue2ch" && s != "CompositeGray1ch") fail(ErrorCode::ConfigError, "unknown channel_layout " + s);
        c.channel_layout = j["channel_layout"].get<ChannelLayout>();
    }
}

/// Lowercase hex SHA-256 of the sorted-key, whitespace-free JSON encoding.
inline std::string config_hash(const PreprocessConfig& c) { return to_hex(sha256(nlohmann::json(c).dump())); }

/// Planar (channel-major) float raster, each plane row-major.
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Raster() = default;
    Raster(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    float& at(int c, int x, int y) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int x, int y) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::span<const float> plane(int c) const {
        return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * width * height,
                                                    static_cast<std::size_t>(width) * height);
    }

    bool operator==(const Raster&) const = default;
};

/// Model-ready map: planar channels with samples in [0,1].
struct PreprocessedMap {
    Raster raster;
    std::string source_id;
    std::string config_hash;

    int width() const { return raster.width; }
    int height() const { return raster.height; }
    int channels() const { return raster.channels; }

    bool operator==(const PreprocessedMap&) const = default;
};

struct HsvPixel {
    float h = 0, s = 0, v = 0;
};

struct HsvImage {
    int width = 0;
    int height = 0;
    std::vector<HsvPixel> pixels;
};

struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}
    std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

    bool operator==(const Mask&) const = default;
};

namespace detail {
inline void check_region(const RectRegion& r, int w, int h) {
    if (r.w < 1 || r.h < 1) fail(ErrorCode::InvalidRegion, "region " + r.describe() + " has zero extent");
    if (r.x < 0 || r.y < 0 || r.x + r.w > w || r.y + r.h > h) {
        fail(ErrorCode::OutOfBounds, "region " + r.describe() + " exceeds " + std::to_string(w) + "x" + std::to_string(h) + " image");
    }
}
} // namespace detail

inline ImageU8 blackout(const ImageU8& img, const std::vector<RectRegion>& regions) {
    for (const auto& r : regions) detail::check_region(r, img.width, img.height);
    ImageU8 out = img;
    for (const auto& r : regions) {
        for (int y = r.y; y < r.y + r.h; ++y) std::fill_n(out.px(r.x, y), static_cast<std::size_t>(r.w) * img.channels, 0);
    }
    return out;
}

inline ImageU8 crop(const ImageU8& img, const RectRegion& r) {
    detail::check_region(r, img.width, img.height);
    ImageU8 out(r.w, r.h, img.channels);
    for (int y = 0; y < r.h; ++y) std::copy_n(img.px(r.x, r.y + y), static_cast<std::size_t>(r.w) * img.channels, out.px(0, y));
    return out;
}

/// Hexcone conversion of one 8-bit RGB triple.
inline HsvPixel rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
    const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double delta = mx - mn;
    double h = 0;
    if (delta > 0) {
        if (mx == r) h = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
        else if (mx == g) h = 60.0 * ((b - r) / delta + 2.0);
        else h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h >= 360.0) h -= 360.0;
    const double s = mx > 0 ? delta / mx : 0.0;
    return {static_cast<float>(h), static_cast<float>(s), static_cast<float>(mx)};
}

inline HsvImage rgb_to_hsv(const ImageU8& img) {
    if (img.channels != 3) fail(ErrorCode::InvalidArgument, "rgb_to_hsv needs a 3-channel image");
    HsvImage out{img.width, img.height, {}};
    out.pixels.reserve(static_cast<std::size_t>(img.width) * img.height);
    for (std::size_t i = 0; i < img.data.size(); i += 3) out.pixels.push_back(rgb_to_hsv(img.data[i], img.data[i + 1], img.data[i + 2]));
    return out;
}

/// Inverse hexcone, rounded to 8 bits.
inline std::array<std::uint8_t, 3> hsv_to_rgb(HsvPixel p) {
    const double c = p.v * p.s;
    const double hp = p.h / 60.0;
    const double x = c * (1 - std::fabs(std::fmod(hp, 2.0) - 1));
    double r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    const double m = p.v - c;
    auto to8 = [](double u) { return static_cast<std::uint8_t>(std::clamp(std::lround(u * 255.0), 0L, 255L)); };
    return {to8(r + m), to8(g + m), to8(b + m)};
}

inline Mask color_mask(const HsvImage& hsv, const std::vector<HsvRange>& ranges) {
    for (const auto& r : ranges) r.validate();
    Mask m(hsv.width, hsv.height);
    for (std::size_t i = 0; i < hsv.pixels.size(); ++i) {
        const auto& p = hsv.pixels[i];
        for (const auto& r : ranges) {
            if (r.contains(p.h, p.s, p.v)) {
                m.bits[i] = 1;
                break;
            }
        }
    }
    return m;
}

/// Nearest-neighbour resampling with centre-aligned sample positions; keeps masks binary.
inline Mask resize_nearest(const Mask& m, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) fail(ErrorCode::InvalidArgument, "resize target must be positive");
    if (out_w == m.width && out_h == m.height) return m;
    Mask out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / out_w));
            out.bits[static_cast<std::size_t>(y) * out_w + x] = m.at(sx, sy);
        }
    }
    return out;
}

/// Bilinear resampling with centre-aligned sample positions and clamped edges.
inline Raster resize_bilinear(const Raster& src, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) fail(ErrorCode::InvalidArgument, "resize target must be positive");
    if (src.width <= 0 || src.height <= 0) fail(ErrorCode::InvalidArgument, "resize source is empty");
    if (out_w == src.width && out_h == src.height) return src;
    Raster out(out_w, out_h, src.channels);
    const double sx = static_cast<double>(src.width) / out_w;
    const double sy = static_cast<double>(src.height) / out_h;
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, src.height - 1);
            const double wy = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, src.width - 1);
                const double wx = fx - x0;
                const double top = src.at(c, x0, y0) * (1 - wx) + src.at(c, x1, y0) * wx;
                const double bot = src.at(c, x0, y1) * (1 - wx) + src.at(c, x1, y1) * wx;
                out.at(c, x, y) = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

/// Resizes masks to the configured output size (nearest) and stacks them per channel layout.
inline PreprocessedMap assemble(const Mask& red, const Mask& blue, const PreprocessConfig& cfg, std::string source_id = {}) {
    if (red.width != blue.width || red.height != blue.height) {
        fail(ErrorCode::ShapeMismatch, "red and blue masks differ in size");
    }
    cfg.validate();
    const Mask r = resize_nearest(red, cfg.out_w, cfg.out_h);
    const Mask b = resize_nearest(blue, cfg.out_w, cfg.out_h);
    PreprocessedMap out{Raster(cfg.out_w, cfg.out_h, cfg.out_channels()), std::move(source_id), config_hash(cfg)};
    const std::size_t n = r.bits.size();
    if (cfg.channel_layout == ChannelLayout::RedBlue2ch) {
        for (std::size_t i = 0; i < n; ++i) {
            out.raster.data[i] = r.bits[i];
            out.raster.data[n + i] = b.bits[i];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) out.raster.data[i] = std::max(r.bits[i], b.bits[i]);
    }
    return out;
}

/// blackout -> crop -> HSV -> red/blue masks -> assemble (with nearest resize).
inline PreprocessedMap preprocess(const ImageU8& img, const PreprocessConfig& cfg, std::string source_id = {}) {
    auto stage = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const Error& e) {
            throw Error(e.code(), std::string("stage ") + name + ": " + e.what());
        }
    };
    stage("config", [&] { cfg.validate(); return 0; });
    ImageU8 dark = stage("blackout", [&] { return blackout(img, cfg.blackout); });
    ImageU8 roi = stage("crop", [&] { return crop(dark, cfg.crop); });
    HsvImage hsv = stage("hsv", [&] { return rgb_to_hsv(roi); });
    Mask red = stage("mask", [&] { return color_mask(hsv, cfg.red_ranges); });
    Mask blue = stage("mask", [&] { return color_mask(hsv, cfg.blue_ranges); });
    return stage("assemble", [&] { return assemble(red, blue, cfg, std::move(source_id)); });
}

} // namespace swm
