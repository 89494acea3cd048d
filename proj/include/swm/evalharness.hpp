#pragma once

// Metric comparison reports, seasonal month-distance scoring, the external
// embedding exchange format, and contact-sheet montages.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/cache.hpp"
#include "swm/font.hpp"
#include "swm/index.hpp"
#include "swm/metrics.hpp"
#include "swm/png.hpp"

namespace swm {

inline std::string display_name(MetricKind k) {
    switch (k) {
        case MetricKind::Rmse: return "RMSE";
        case MetricKind::Ssim: return "SSIM";
        case MetricKind::Cosine: return "Cosine";
        case MetricKind::Euclidean: return "Euclidean";
    }
    return "?";
}

/// Fixed two-decimal rendering used in tables and captions.
inline std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

// ---------------------------------------------------------------- reports

/// A query map with its identity and, for latent metrics, its embedding.
struct QueryInput {
    std::string id;
    UtcHour timestamp;
    PreprocessedMap map;
    std::optional<Embedding> embedding;
};

/// What a report searches. Pixel metrics need `cache`; latent metrics need `index`.
/// `pool` restricts pixel scans to a manifest; it defaults to the cache manifest.
struct SearchSources {
    const EmbeddingIndex* index = nullptr;
    const MapCache* cache = nullptr;
    const Manifest* pool = nullptr;
    SsimConfig ssim;
};

struct ReportRow {
    MetricKind metric = MetricKind::Cosine;
    QueryResult result;

    bool operator==(const ReportRow&) const = default;
};

struct MetricReport {
    std::string query_id;
    UtcHour query_timestamp;
    std::size_t k = 0;
    std::vector<ReportRow> rows;

    bool operator==(const MetricReport&) const = default;

    /// Aligned text: a score block (metric x rank) then the retrieved timestamps.
    std::string table() const {
        std::ostringstream os;
        std::size_t name_w = 6;
        for (const auto& r : rows) name_w = std::max(name_w, display_name(r.metric).size());
        auto pad = [](std::string s, std::size_t w, bool right) {
            if (s.size() >= w) return s;
            return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
        };
        os << "query " << query_id << " (" << query_timestamp.iso() << ")  k=" << k << "\n";
        os << pad("metric", name_w, false);
        for (std::size_t i = 1; i <= k; ++i) os << "  " << pad("#" + std::to_string(i), 7, true);
        os << "\n";
        for (const auto& r : rows) {
            os << pad(display_name(r.metric), name_w, false);
            for (std::size_t i = 0; i < k; ++i) os << "  " << pad(i < r.result.hits.size() ? fmt2(r.result.hits[i].score) : "-", 7, true);
            os << "\n";
        }
        os << "\n" << pad("metric", name_w, false);
        for (std::size_t i = 1; i <= k; ++i) os << "  " << pad("#" + std::to_string(i), 13, false);
        os << "\n";
        for (const auto& r : rows) {
            os << pad(display_name(r.metric), name_w, false);
            for (std::size_t i = 0; i < k; ++i) os << "  " << pad(i < r.result.hits.size() ? r.result.hits[i].timestamp.iso() : "-", 13, false);
            os << "\n";
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json flat = nlohmann::json::array();
        for (const auto& r : rows) {
            for (const auto& h : r.result.hits) {
                flat.push_back({{"query_id", query_id},
                                {"metric", swm::to_string(r.metric)},
                                {"rank", h.rank},
                                {"id", h.source_id},
                                {"timestamp", h.timestamp.iso()},
                                {"score", h.score}});
            }
        }
        nlohmann::json per = nlohmann::json::array();
        for (const auto& r : rows) per.push_back(swm::to_json(r.result));
        return {{"query_id", query_id}, {"query_timestamp", query_timestamp.iso()}, {"k", k}, {"rows", flat}, {"queries", per}};
    }
};

inline MetricReport compare_metrics(const QueryInput& q, const SearchSources& src, const std::vector<MetricKind>& metrics, std::size_t k,
                                    const ExclusionWindow& exclude = {}) {
    if (metrics.empty()) fail(ErrorCode::InvalidArgument, "no metrics requested");
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
    MetricReport rep{q.id, q.timestamp, k, {}};
    for (auto m : metrics) {
        if (is_pixel_metric(m)) {
            if (src.cache == nullptr) fail(ErrorCode::InvalidArgument, to_string(m) + " compares rasters and needs a map cache");
            const Manifest& pool = src.pool != nullptr ? *src.pool : src.cache->manifest();
            rep.rows.push_back({m, query_pixel(pool, *src.cache, q.map, m, k, exclude, src.ssim)});
        } else {
            if (src.index == nullptr) fail(ErrorCode::InvalidArgument, to_string(m) + " compares embeddings and needs an index");
            if (!q.embedding) fail(ErrorCode::InvalidArgument, "query " + q.id + " has no embedding for " + to_string(m));
            rep.rows.push_back({m, query_latent(*src.index, *q.embedding, m, k, exclude)});
        }
    }
    return rep;
}

// ---------------------------------------------------------------- seasonal

inline int circular_month_distance(unsigned a, unsigned b) {
    if (a < 1 || a > 12 || b < 1 || b > 12) fail(ErrorCode::InvalidArgument, "month out of range");
    const int d = std::abs(static_cast<int>(a) - static_cast<int>(b));
    return std::min(d, 12 - d);
}

struct SeasonalScore {
    unsigned query_month = 0;
    std::vector<unsigned> retrieved_months;
    std::vector<int> distances;
    double mean = 0;

    bool operator==(const SeasonalScore&) const = default;
};

inline SeasonalScore seasonal_consistency(UtcHour query, const QueryResult& result) {
    if (result.hits.empty()) fail(ErrorCode::InvalidArgument, "seasonal score needs at least one result");
    SeasonalScore s{query.month(), {}, {}, 0};
    long sum = 0;
    for (const auto& h : result.hits) {
        s.retrieved_months.push_back(h.timestamp.month());
        s.distances.push_back(circular_month_distance(s.query_month, h.timestamp.month()));
        sum += s.distances.back();
    }
    s.mean = static_cast<double>(sum) / static_cast<double>(s.distances.size());
    return s;
}

inline nlohmann::json to_json(const SeasonalScore& s) {
    return {{"query_month", s.query_month}, {"retrieved_months", s.retrieved_months}, {"distances", s.distances}, {"mean", s.mean}};
}

struct SeasonalRow {
    std::string query_id;
    MetricKind metric = MetricKind::Cosine;
    SeasonalScore score;
};

/// Reports for many queries plus one seasonal score per (query, metric).
struct EvalReport {
    std::size_t k = 0;
    std::vector<MetricKind> metrics;
    std::vector<MetricReport> reports;
    std::vector<SeasonalRow> seasonal;

    /// Mean of the per-query mean distances for one metric.
    double mean_distance(MetricKind m) const {
        double sum = 0;
        std::size_t n = 0;
        for (const auto& s : seasonal) {
            if (s.metric != m) continue;
            sum += s.score.mean;
            ++n;
        }
        if (n == 0) fail(ErrorCode::InvalidArgument, "no seasonal scores for " + to_string(m));
        return sum / static_cast<double>(n);
    }

    nlohmann::json to_json() const {
        nlohmann::json ms = nlohmann::json::array(), reps = nlohmann::json::array(), seas = nlohmann::json::array(),
                       summary = nlohmann::json::object();
        for (auto m : metrics) {
            ms.push_back(swm::to_string(m));
            summary[swm::to_string(m)] = mean_distance(m);
        }
        for (const auto& r : reports) reps.push_back(r.to_json());
        for (const auto& s : seasonal) {
            auto j = swm::to_json(s.score);
            j["query_id"] = s.query_id;
            j["metric"] = swm::to_string(s.metric);
            seas.push_back(j);
        }
        return {{"k", k}, {"metrics", ms}, {"reports", reps}, {"seasonal", seas}, {"mean_month_distance", summary}};
    }

    std::string table() const {
        std::string out;
        for (const auto& r : reports) out += r.table() + "\n";
        out += "mean circular month distance\n";
        for (auto m : metrics) {
            std::string name = display_name(m);
            name.resize(std::max<std::size_t>(name.size(), 10), ' ');
            out += name + "  " + fmt2(mean_distance(m)) + "\n";
        }
        return out;
    }
};

inline EvalReport run_eval(const std::vector<QueryInput>& queries, const SearchSources& src, const std::vector<MetricKind>& metrics,
                           std::size_t k, int exclude_days) {
    if (queries.empty()) fail(ErrorCode::InvalidArgument, "query list is empty");
    EvalReport ev{k, metrics, {}, {}};
    for (const auto& q : queries) {
        const auto excl = exclude_days > 0 ? ExclusionWindow::days_around(q.timestamp, exclude_days) : ExclusionWindow::none();
        auto rep = compare_metrics(q, src, metrics, k, excl);
        for (const auto& row : rep.rows) ev.seasonal.push_back({q.id, row.metric, seasonal_consistency(q.timestamp, row.result)});
        ev.reports.push_back(std::move(rep));
    }
    return ev;
}

// ---------------------------------------------------------------- external embeddings

/// An index read from the exchange format, with the label its model_hash was taken from.
struct ExternalEmbeddings {
    std::string model;
    EmbeddingIndex index;
};

inline Digest model_label_hash(const std::string& label) { return sha256(label); }

inline ExternalEmbeddings parse_external_embeddings(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt,
                                                    const std::string& what = "embeddings") {
    std::vector<Embedding> rows;
    std::string label;
    std::optional<std::size_t> dim = expected_dim;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = what + " line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::FormatError, where + ": " + e.what());
        }
        Embedding e;
        std::string model;
        try {
            detail::require_keys(j, {"id", "timestamp", "model", "vector"}, "embedding row");
            e.source_id = j.at("id").get<std::string>();
            e.timestamp = UtcHour::parse(j.at("timestamp").get<std::string>());
            model = j.at("model").get<std::string>();
            if (!j.at("vector").is_array()) fail(ErrorCode::FormatError, "vector is not an array");
            for (const auto& v : j.at("vector")) {
                if (!v.is_number()) fail(ErrorCode::FormatError, "vector holds a non-number");
                e.vector.push_back(static_cast<float>(v.get<double>()));
            }
        } catch (const Error& err) {
            fail(ErrorCode::FormatError, where + ": " + err.what());
        } catch (const nlohmann::json::exception& err) {
            fail(ErrorCode::FormatError, where + ": " + err.what());
        }
        if (e.vector.empty()) fail(ErrorCode::FormatError, where + ": empty vector");
        if (!dim) dim = e.dim();
        if (e.dim() != *dim) {
            fail(ErrorCode::DimMismatch, where + " (id " + e.source_id + "): dim " + std::to_string(e.dim()) + ", expected " +
                                             std::to_string(*dim));
        }
        if (rows.empty()) {
            label = model;
        } else if (model != label) {
            fail(ErrorCode::ModelMismatch, where + " (id " + e.source_id + "): model '" + model + "' differs from '" + label + "'");
        }
        e.model_hash = model_label_hash(model);
        rows.push_back(std::move(e));
    }
    if (rows.empty()) fail(ErrorCode::EmptyIndex, what + " holds no rows");
    return {label, EmbeddingIndex(std::move(rows))};
}

inline ExternalEmbeddings import_external_embeddings(const std::filesystem::path& path,
                                                     std::optional<std::size_t> expected_dim = std::nullopt) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    return parse_external_embeddings(in, expected_dim, path.filename().string());
}

/// One JSON object per entry, in timestamp order. Floats print at round-trip precision.
inline void write_external_embeddings(std::ostream& out, const EmbeddingIndex& idx, const std::string& model) {
    for (const auto& e : idx.entries()) {
        nlohmann::json v = nlohmann::json::array();
        for (float x : e.vector) v.push_back(x);
        out << nlohmann::json{{"id", e.source_id}, {"timestamp", e.timestamp.iso()}, {"model", model}, {"vector", v}}.dump() << "\n";
    }
}

inline void export_external_embeddings(const EmbeddingIndex& idx, const std::string& model, const std::filesystem::path& path) {
    std::ostringstream os;
    write_external_embeddings(os, idx, model);
    const auto s = os.str();
    bin::write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

// ---------------------------------------------------------------- montage

inline constexpr std::array<std::uint8_t, 3> kInkRed{220, 30, 40};
inline constexpr std::array<std::uint8_t, 3> kInkBlue{30, 60, 220};

/// Draws a preprocessed raster on white: 2-channel maps as red and blue ink,
/// 1-channel maps as black. Each sample becomes a scale x scale block.
inline ImageU8 render_raster(const Raster& r, int scale = 1) {
    if (scale < 1) fail(ErrorCode::InvalidArgument, "scale must be >= 1");
    if (r.channels != 1 && r.channels != 2) fail(ErrorCode::InvalidArgument, "cannot render a " + std::to_string(r.channels) + "-channel raster");
    ImageU8 img(r.width * scale, r.height * scale, 3, 255);
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            std::array<double, 3> c{255, 255, 255};
            auto ink = [&c](double a, const std::array<std::uint8_t, 3>& col) {
                a = std::clamp(a, 0.0, 1.0);
                for (int i = 0; i < 3; ++i) c[i] = c[i] * (1 - a) + col[i] * a;
            };
            if (r.channels == 1) {
                ink(r.at(0, x, y), {0, 0, 0});
            } else {
                ink(r.at(0, x, y), kInkRed);
                ink(r.at(1, x, y), kInkBlue);
            }
            for (int dy = 0; dy < scale; ++dy) {
                for (int dx = 0; dx < scale; ++dx) {
                    auto* p = img.px(x * scale + dx, y * scale + dy);
                    for (int i = 0; i < 3; ++i) p[i] = static_cast<std::uint8_t>(std::lround(c[i]));
                }
            }
        }
    }
    return img;
}

struct MontagePanel {
    ImageU8 image;
    std::vector<std::string> caption;
};

namespace detail {
inline constexpr int kPad = 6;
inline constexpr int kLineH = font::kGlyphH + 3;
inline constexpr int kMinPanel = 96;
} // namespace detail

/// Lays panels out in one row, left to right, each with its caption below.
inline ImageU8 compose_montage(const std::vector<MontagePanel>& panels) {
    if (panels.empty()) fail(ErrorCode::InvalidArgument, "montage needs at least one panel");
    int cell_w = detail::kMinPanel, img_h = 0;
    std::size_t lines = 0;
    for (const auto& p : panels) {
        cell_w = std::max(cell_w, p.image.width);
        img_h = std::max(img_h, p.image.height);
        lines = std::max(lines, p.caption.size());
        for (const auto& l : p.caption) cell_w = std::max(cell_w, font::text_width(l));
    }
    const int n = static_cast<int>(panels.size());
    const int W = detail::kPad + n * (cell_w + detail::kPad);
    const int H = detail::kPad + img_h + 4 + static_cast<int>(lines) * detail::kLineH + detail::kPad;
    ImageU8 out(W, H, 3, 255);
    for (int i = 0; i < n; ++i) {
        const auto& p = panels[static_cast<std::size_t>(i)];
        const int x0 = detail::kPad + i * (cell_w + detail::kPad);
        const auto src = p.image;
        for (int y = 0; y < src.height; ++y) {
            for (int x = 0; x < src.width; ++x) {
                auto* d = out.px(x0 + x, detail::kPad + y);
                const auto* s = src.px(x, y);
                for (int c = 0; c < 3; ++c) d[c] = src.channels == 1 ? s[0] : s[c];
            }
        }
        // thin grey frame around the map
        const std::array<std::uint8_t, 3> grey{160, 160, 160};
        for (int x = -1; x <= src.width; ++x) {
            for (int y : {-1, src.height}) {
                const int px = x0 + x, py = detail::kPad + y;
                if (px >= 0 && px < W && py >= 0 && py < H) std::copy(grey.begin(), grey.end(), out.px(px, py));
            }
        }
        for (int y = 0; y < src.height; ++y) {
            for (int x : {-1, src.width}) {
                const int px = x0 + x, py = detail::kPad + y;
                if (px >= 0 && px < W) std::copy(grey.begin(), grey.end(), out.px(px, py));
            }
        }
        int ty = detail::kPad + img_h + 4;
        for (const auto& l : p.caption) {
            font::draw_text(out, x0, ty, l, {0, 0, 0});
            ty += detail::kLineH;
        }
    }
    return out;
}

/// Anchor leftmost, then each hit in rank order captioned with timestamp and
/// two-decimal score. Result images come from `cache`; a missing id throws.
inline ImageU8 montage(const PreprocessedMap& anchor, UtcHour anchor_time, const QueryResult& results, const MapCache& cache) {
    const int scale = std::max(1, 128 / std::max(1, anchor.width()));
    std::vector<MontagePanel> panels;
    panels.push_back({render_raster(anchor.raster, scale), {"ANCHOR", anchor_time.iso()}});
    if (results.hits.empty()) panels.front().caption.push_back("no candidates");
    for (const auto& h : results.hits) {
        if (!cache.contains(h.source_id)) fail(ErrorCode::MissingData, "no image for result " + h.source_id);
        const auto m = cache.get(h.source_id);
        panels.push_back({render_raster(m.raster, scale),
                          {"#" + std::to_string(h.rank) + " " + h.timestamp.iso(), display_name(results.metric) + " " + fmt2(h.score)}});
    }
    return compose_montage(panels);
}

inline void save_montage(const ImageU8& img, const std::filesystem::path& path) { save_png(img, path); }

} // namespace swm
