#pragma once

// Synthetic seasonal "500 hPa" charts with ground truth. Blue solid lines
// stand in for height contours, red dashed lines for isotherms. Wave number,
// phase, amplitude and line counts follow the month; a day-phase term and
// seeded jitter make every map distinct.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/dataio.hpp"
#include "swm/digest.hpp"
#include "swm/imgproc.hpp"
#include "swm/png.hpp"

namespace swm {

struct MonthParams {
    int n_troughs = 4;
    double trough_phase = 0;  // radians
    double amplitude = 0.06;  // fraction of image height
    double noise_sigma = 0.4;
    int n_contours = 7;   // blue lines
    int n_isotherms = 4;  // red dashed lines
    double isotherm_lat = 0.5;  // centre of the isotherm band, fraction of height from the top

    bool operator==(const MonthParams&) const = default;
};

/// Cyclic defaults: w = cos(2 pi (m-1)/12) peaks in January, bottoms in July.
/// Winter charts carry more lines, and the isotherm band sits further south
/// (lower in the image), lagging the height field by about a month.
inline MonthParams default_month(unsigned month) {
    const double a = 2 * std::numbers::pi * (static_cast<double>(month) - 1) / 12;
    const double w = std::cos(a);
    MonthParams p;
    p.n_troughs = static_cast<int>(std::lround(4 + w));
    p.trough_phase = 0.6 * std::numbers::pi * std::sin(a);
    p.amplitude = 0.07 + 0.02 * w + 0.03 * std::sin(a);
    p.noise_sigma = 0.4;
    p.n_contours = static_cast<int>(std::lround(7 + 3 * w));
    p.n_isotherms = static_cast<int>(std::lround(4 + 2 * w));
    p.isotherm_lat = 0.5 + 0.15 * std::cos(a - 0.5);
    return p;
}

struct SynthSpec {
    int start_year = 2021;
    int n_years = 2;
    std::vector<unsigned> hours{0, 12};
    int width = 512;
    int height = 512;
    int line_width = 2;
    std::uint64_t seed = 42;
    std::string pattern = "up50_{YYYY}{MM}{DD}{HH}.png";
    std::array<MonthParams, 12> months = [] {
        std::array<MonthParams, 12> m;
        for (unsigned i = 0; i < 12; ++i) m[i] = default_month(i + 1);
        return m;
    }();

    void validate() const {
        auto bad = [](const std::string& s) { fail(ErrorCode::ConfigError, "synth spec: " + s); };
        if (n_years < 1) bad("n_years must be >= 1");
        if (hours.empty()) bad("hours must be non-empty");
        for (std::size_t i = 0; i < hours.size(); ++i) {
            if (hours[i] > 23) bad("hour out of range");
            for (std::size_t j = 0; j < i; ++j) {
                if (hours[i] == hours[j]) bad("duplicate hour");
            }
        }
        if (width < 64 || height < 64) bad("image must be at least 64x64");
        if (line_width < 1 || line_width > 4) bad("line_width must be in [1,4]");
        for (const auto& m : months) {
            if (m.n_troughs < 1 || m.n_contours < 1 || m.n_isotherms < 0) bad("month line counts out of range");
            if (!(m.noise_sigma >= 0)) bad("noise_sigma must be >= 0");
            if (!(m.amplitude >= 0)) bad("amplitude must be >= 0");
            if (!(m.isotherm_lat >= 0 && m.isotherm_lat <= 1)) bad("isotherm_lat must lie in [0,1]");
        }
        FilenamePattern{pattern};
    }

    /// Every calendar day of every year (Feb 29 included in leap years) at each hour.
    std::vector<UtcHour> timestamps() const {
        std::vector<UtcHour> out;
        const auto first = UtcHour::from_civil(start_year, 1, 1, 0).epoch_hours() / 24;
        const auto last = UtcHour::from_civil(start_year + n_years, 1, 1, 0).epoch_hours() / 24;
        auto hs = hours;
        std::sort(hs.begin(), hs.end());
        for (auto d = first; d < last; ++d) {
            for (auto h : hs) out.emplace_back(d * 24 + h);
        }
        return out;
    }

    /// Legend box; sits where the default blackout lands for a 512x512 chart, scaled otherwise.
    RectRegion legend() const { return {width * 136 / 512, height * 136 / 512, width * 64 / 512, height * 24 / 512}; }

    /// Preprocessing that blacks out the legend and crops the central half.
    PreprocessConfig preprocess_config(int out_w = 0, int out_h = 0) const {
        PreprocessConfig c;
        c.blackout = {legend()};
        c.crop = {width / 4, height / 4, width / 2, height / 2};
        c.out_w = out_w > 0 ? out_w : width / 2;
        c.out_h = out_h > 0 ? out_h : height / 2;
        return c;
    }
};

/// Month anchors sit at mid-month; parameters for a given hour blend the two
/// nearest anchors linearly so the season evolves day by day.
inline MonthParams params_at(const SynthSpec& spec, UtcHour t) {
    using namespace std::chrono;
    const auto ymd = t.date();
    const auto ym = ymd.year() / ymd.month();
    const double len = static_cast<double>(static_cast<unsigned>((ym / last).day()));
    const double x = static_cast<double>(t.month()) - 1 + (t.day() - 1 + t.hour() / 24.0) / len - 0.5 + 0.5 / len;
    const double fl = std::floor(x);
    const double f = x - fl;
    const auto i0 = static_cast<std::size_t>((static_cast<int>(fl) + 12) % 12);
    const auto& a = spec.months[i0];
    const auto& b = spec.months[(i0 + 1) % 12];
    auto mix = [f](double u, double v) { return u + (v - u) * f; };
    auto mixi = [&](int u, int v) { return static_cast<int>(std::lround(mix(u, v))); };
    MonthParams p;
    p.n_troughs = mixi(a.n_troughs, b.n_troughs);
    // shortest way round the circle
    const double dphi = std::remainder(b.trough_phase - a.trough_phase, 2 * std::numbers::pi);
    p.trough_phase = a.trough_phase + dphi * f;
    p.amplitude = mix(a.amplitude, b.amplitude);
    p.noise_sigma = mix(a.noise_sigma, b.noise_sigma);
    p.n_contours = mixi(a.n_contours, b.n_contours);
    p.n_isotherms = mixi(a.n_isotherms, b.n_isotherms);
    p.isotherm_lat = mix(a.isotherm_lat, b.isotherm_lat);
    return p;
}

/// One line of the truth manifest.
struct SynthTruth {
    UtcHour timestamp;
    int n_troughs = 0;
    double trough_phase = 0;
    double amplitude = 0;
    std::string noise_draws_digest;

    bool operator==(const SynthTruth&) const = default;
};

inline nlohmann::json to_json(const SynthTruth& t) {
    return {{"timestamp", t.timestamp.iso()}, {"n_troughs", t.n_troughs}, {"trough_phase", t.trough_phase},
            {"amplitude", t.amplitude}, {"noise_draws_digest", t.noise_draws_digest}};
}

inline SynthTruth truth_from_json(const nlohmann::json& j) {
    detail::require_keys(j, {"timestamp", "n_troughs", "trough_phase", "amplitude", "noise_draws_digest"}, "truth record");
    try {
        return {UtcHour::parse(j.at("timestamp").get<std::string>()), j.at("n_troughs").get<int>(), j.at("trough_phase").get<double>(),
                j.at("amplitude").get<double>(), j.at("noise_draws_digest").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, std::string("bad truth record: ") + e.what());
    }
}

/// Rendered chart plus the exact red/blue line pixels (legend excluded).
struct SynthMap {
    ImageU8 image;
    Mask red;
    Mask blue;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Per-map jitter drawn from (seed, timestamp) only. Phases are in radians,
/// offsets in line spacings, amp relative; sigma scales all of them.
struct SynthDraws {
    double phase = 0;
    double amp = 0;
    double iso_phase = 0;
    std::vector<double> contour_offsets, contour_phases;
    std::vector<double> isotherm_offsets, isotherm_phases;

    std::string digest() const {
        std::vector<double> all{phase, amp, iso_phase};
        for (const auto* v : {&contour_offsets, &contour_phases, &isotherm_offsets, &isotherm_phases}) all.insert(all.end(), v->begin(), v->end());
        return to_hex(sha256(std::span(reinterpret_cast<const std::uint8_t*>(all.data()), all.size() * sizeof(double))));
    }
};

inline SynthDraws synth_draws(const SynthSpec& spec, const MonthParams& mp, UtcHour t) {
    std::mt19937_64 rng(splitmix(spec.seed ^ splitmix(static_cast<std::uint64_t>(t.epoch_hours()))));
    std::normal_distribution<double> n01(0, 1);
    // sigma = 0 must give +0.0, not -0.0, so the digest only sees the draws that matter
    auto jitter = [&](double scale) {
        const double v = scale * mp.noise_sigma * n01(rng);
        return v == 0 ? 0.0 : v;
    };
    SynthDraws d;
    d.phase = jitter(1);
    d.amp = jitter(0.25);
    d.iso_phase = jitter(1);
    for (int i = 0; i < mp.n_contours; ++i) {
        d.contour_offsets.push_back(jitter(0.25));
        d.contour_phases.push_back(jitter(1));
    }
    for (int i = 0; i < mp.n_isotherms; ++i) {
        d.isotherm_offsets.push_back(jitter(0.25));
        d.isotherm_phases.push_back(jitter(1));
    }
    return d;
}

/// Days since 1970 (not day of year, so the pattern never repeats annually).
inline double synth_days(UtcHour t) { return static_cast<double>(t.epoch_hours()) / 24.0; }

/// Day-to-day drift: troughs move east and the line field slides north/south.
/// All three rates repeat after 100 days.
inline double day_phase(UtcHour t) { return 0.8 * std::sin(2 * std::numbers::pi * std::fmod(0.13 * synth_days(t), 1.0)); }
inline double day_shift(UtcHour t, double rate) {
    const double v = rate * synth_days(t);
    return v - std::floor(v);
}

struct Canvas {
    ImageU8 img;
    Mask red, blue;

    void put(int x, int y, std::array<std::uint8_t, 3> c, int kind) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        auto* p = img.px(x, y);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
        const auto i = static_cast<std::size_t>(y) * img.width + x;
        red.bits[i] = kind == 1;
        blue.bits[i] = kind == 2;
    }
};

/// Wavy line y(x) = y0 + A sin(2 pi n x / W + phi), drawn column by column so it stays connected.
inline void wave(Canvas& cv, double y0, double amp, int n, double phi, int lw, std::array<std::uint8_t, 3> c, int kind, bool dashed) {
    const int w = cv.img.width;
    auto yat = [&](int x) { return static_cast<int>(std::lround(y0 + amp * std::sin(2 * std::numbers::pi * n * x / w + phi))); };
    const int dash = std::max(6, w / 40);
    int prev = yat(0);
    for (int x = 0; x < w; ++x) {
        const int y = yat(x);
        if (!dashed || (x % dash) < dash * 2 / 3) {
            for (int yy = std::min(prev, y); yy <= std::max(prev, y); ++yy) {
                for (int k = 0; k < lw; ++k) cv.put(x, yy + k, c, kind);
            }
        }
        prev = y;
    }
}

} // namespace detail

inline constexpr std::array<std::uint8_t, 3> kSynthBlue{30, 60, 220};
inline constexpr std::array<std::uint8_t, 3> kSynthRed{220, 30, 40};

inline SynthTruth synth_truth(const SynthSpec& spec, UtcHour t) {
    const auto mp = params_at(spec, t);
    return {t, mp.n_troughs, mp.trough_phase, mp.amplitude, detail::synth_draws(spec, mp, t).digest()};
}

/// Draws the chart described by `truth`; the jitter is regenerated from (seed, timestamp)
/// and must hash to the recorded digest.
inline SynthMap render_synth(const SynthSpec& spec, const SynthTruth& truth) {
    spec.validate();
    const auto mp = params_at(spec, truth.timestamp);
    const auto draws = detail::synth_draws(spec, mp, truth.timestamp);
    if (draws.digest() != truth.noise_draws_digest) {
        fail(ErrorCode::InvalidArgument, "noise draws for " + truth.timestamp.iso() + " do not match the recorded digest (different seed?)");
    }
    const int W = spec.width, H = spec.height;
    detail::Canvas cv{ImageU8(W, H, 3, 255), Mask(W, H), Mask(W, H)};

    // Grey graticule and a coastline-like polyline; neither should survive masking.
    const std::array<std::uint8_t, 3> grey{150, 150, 150}, dark{60, 60, 60};
    for (int g = W / 8; g < W; g += W / 8) {
        for (int y = 0; y < H; y += 2) cv.put(g, y, grey, 0);
    }
    for (int g = H / 8; g < H; g += H / 8) {
        for (int x = 0; x < W; x += 2) cv.put(x, g, grey, 0);
    }
    detail::wave(cv, H * 0.7, H * 0.05, 3, 1.0, 1, dark, 0, false);

    const double phi = truth.trough_phase + detail::day_phase(truth.timestamp) + draws.phase;
    const double amp = truth.amplitude * (1 + draws.amp) * H;
    for (int i = 0; i < mp.n_contours; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double y0 = (i + 0.5 + detail::day_shift(truth.timestamp, 0.29) + draws.contour_offsets[k]) * H / mp.n_contours;
        detail::wave(cv, y0, amp, truth.n_troughs, phi + draws.contour_phases[k], spec.line_width, kSynthBlue, 2, false);
    }
    // Isotherms lag the height field by a quarter wave.
    for (int i = 0; i < mp.n_isotherms; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double u = (i + 0.5 + detail::day_shift(truth.timestamp, 0.41) + draws.isotherm_offsets[k]) / mp.n_isotherms;
        const double y0 = (mp.isotherm_lat + 0.4 * (u - 0.5)) * H;
        detail::wave(cv, y0, 0.7 * amp, truth.n_troughs, phi - std::numbers::pi / 2 + draws.iso_phase + draws.isotherm_phases[k], spec.line_width,
                     kSynthRed, 1, true);
    }

    // Legend: framed box with red and blue swatches. Not part of the truth masks.
    const auto lg = spec.legend();
    for (int y = lg.y; y < lg.y + lg.h; ++y) {
        for (int x = lg.x; x < lg.x + lg.w; ++x) {
            const bool edge = x == lg.x || y == lg.y || x == lg.x + lg.w - 1 || y == lg.y + lg.h - 1;
            const bool left = x < lg.x + lg.w / 2;
            const bool swatch = !edge && y > lg.y + lg.h / 4 && y < lg.y + 3 * lg.h / 4 && (x - lg.x) % (lg.w / 2) > 2;
            cv.put(x, y, edge ? std::array<std::uint8_t, 3>{0, 0, 0} : swatch ? (left ? kSynthRed : kSynthBlue) : std::array<std::uint8_t, 3>{255, 255, 255}, 0);
        }
    }
    return {std::move(cv.img), std::move(cv.red), std::move(cv.blue)};
}

inline SynthMap render_synth(const SynthSpec& spec, UtcHour t) { return render_synth(spec, synth_truth(spec, t)); }

struct SynthArchive {
    std::vector<SynthTruth> truth;
    std::filesystem::path dir;
};

inline constexpr const char* kTruthFile = "truth.jsonl";

/// Writes one PNG per timestamp (named by spec.pattern) and truth.jsonl.
inline SynthArchive generate_synth(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) fail(ErrorCode::Io, "cannot create " + out_dir.string());
    const FilenamePattern pat(spec.pattern);
    SynthArchive out{{}, out_dir};
    std::string lines;
    for (auto t : spec.timestamps()) {
        auto truth = synth_truth(spec, t);
        save_png(render_synth(spec, truth).image, out_dir / pat.format(t));
        lines += to_json(truth).dump() + "\n";
        out.truth.push_back(std::move(truth));
    }
    std::ofstream f(out_dir / kTruthFile, std::ios::trunc);
    if (!f) fail(ErrorCode::Io, "cannot write truth manifest in " + out_dir.string());
    f << lines;
    if (!f) fail(ErrorCode::Io, "write failed for truth manifest");
    return out;
}

inline std::vector<SynthTruth> load_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    std::vector<SynthTruth> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(truth_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::FormatError, path.string() + " line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

} // namespace swm
