#pragma once

// Exact top-k retrieval over an immutable embedding store, plus the
// pixel-space scan used for RMSE/SSIM.
//
// Index file: "SWMI", u32 version=1, u32 dim, 32-byte model hash, u64 count,
// then per entry u16 id length + id, i64 epoch hours, dim f32; SHA-256 trailer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/binio.hpp"
#include "swm/cache.hpp"
#include "swm/dataio.hpp"
#include "swm/metrics.hpp"
#include "swm/model_common.hpp"

namespace swm {

inline constexpr std::string_view kIndexMagic = "SWMI";
inline constexpr std::uint32_t kIndexVersion = 1;

/// Candidates with |t - center| <= half_width_hours are dropped. A zero width disables it.
struct ExclusionWindow {
    UtcHour center;
    std::int64_t half_width_hours = 0;

    static ExclusionWindow none() { return {}; }
    static ExclusionWindow days_around(UtcHour t, int days) {
        if (days < 0) fail(ErrorCode::InvalidArgument, "exclusion window days must be >= 0");
        return {t, std::int64_t{days} * 24};
    }

    bool active() const { return half_width_hours > 0; }
    bool contains(UtcHour t) const {
        if (!active()) return false;
        const auto d = t.epoch_hours() - center.epoch_hours();
        return (d < 0 ? -d : d) <= half_width_hours;
    }
};

/// Digest of the (id, timestamp) sequence an index was built from.
inline Digest entries_digest(const std::vector<Embedding>& entries) {
    Sha256 h;
    for (const auto& e : entries) {
        h.update(e.source_id);
        h.update("\t");
        h.update(e.timestamp.iso());
        h.update("\n");
    }
    return h.finish();
}

class EmbeddingIndex {
public:
    /// Sorts by timestamp and enforces shared dim/model hash, finite values and unique timestamps.
    explicit EmbeddingIndex(std::vector<Embedding> entries) : entries_(std::move(entries)) {
        if (entries_.empty()) fail(ErrorCode::EmptyIndex, "index has no entries");
        std::stable_sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
        dim_ = entries_.front().dim();
        hash_ = entries_.front().model_hash;
        if (dim_ == 0) fail(ErrorCode::DimMismatch, "embedding " + entries_.front().source_id + " is empty");
        std::set<std::string> ids;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            if (e.dim() != dim_) {
                fail(ErrorCode::DimMismatch, "embedding " + e.source_id + " has dim " + std::to_string(e.dim()) + ", index dim is " +
                                                 std::to_string(dim_));
            }
            if (e.model_hash != hash_) {
                fail(ErrorCode::ModelMismatch, "embedding " + e.source_id + " was produced by model " + to_hex(e.model_hash).substr(0, 12) +
                                                   ", index holds model " + to_hex(hash_).substr(0, 12));
            }
            for (float v : e.vector) {
                if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "embedding " + e.source_id + " has a non-finite component");
            }
            if (i > 0 && entries_[i - 1].timestamp == e.timestamp) fail(ErrorCode::InvalidArgument, "duplicate timestamp " + e.timestamp.iso());
            if (!ids.insert(e.source_id).second) fail(ErrorCode::InvalidArgument, "duplicate id " + e.source_id);
        }
        manifest_digest_ = entries_digest(entries_);
    }

    const std::vector<Embedding>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t dim() const { return dim_; }
    const Digest& model_hash() const { return hash_; }
    const Digest& manifest_digest() const { return manifest_digest_; }

    const Embedding* find_id(std::string_view id) const {
        for (const auto& e : entries_) {
            if (e.source_id == id) return &e;
        }
        return nullptr;
    }
    const Embedding* find(UtcHour t) const {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), t, [](const Embedding& e, UtcHour v) { return e.timestamp < v; });
        return it != entries_.end() && it->timestamp == t ? &*it : nullptr;
    }

    bool operator==(const EmbeddingIndex& o) const { return entries_ == o.entries_; }

private:
    std::vector<Embedding> entries_;
    std::size_t dim_ = 0;
    Digest hash_{};
    Digest manifest_digest_{};
};

struct BuildFailure {
    std::string id;
    std::string reason;
};

struct IndexBuild {
    EmbeddingIndex index;
    std::vector<BuildFailure> failures;
};

using Embedder = std::function<Embedding(const MapRecord&)>;

/// One entry per record. Per-record errors are collected; strict mode aborts listing all of them.
inline IndexBuild build_index(const Manifest& manifest, const Embedder& embed, bool strict = true) {
    if (manifest.empty()) fail(ErrorCode::EmptyIndex, "manifest has no records");
    std::vector<Embedding> entries;
    std::vector<BuildFailure> failures;
    for (const auto& r : manifest.records()) {
        try {
            Embedding e = embed(r);
            e.source_id = r.id;
            e.timestamp = r.timestamp;
            entries.push_back(std::move(e));
        } catch (const Error& err) {
            failures.push_back({r.id, err.what()});
        }
    }
    if (!failures.empty() && (strict || entries.empty())) {
        std::string msg = std::to_string(failures.size()) + " of " + std::to_string(manifest.size()) + " maps failed to embed:";
        for (const auto& f : failures) msg += "\n  " + f.id + ": " + f.reason;
        fail(entries.empty() ? ErrorCode::EmptyIndex : ErrorCode::MissingData, msg);
    }
    return {EmbeddingIndex(std::move(entries)), std::move(failures)};
}

struct Hit {
    std::string source_id;
    UtcHour timestamp;
    double score = 0;
    std::size_t rank = 0;

    bool operator==(const Hit&) const = default;
};

struct QueryResult {
    MetricKind metric = MetricKind::Cosine;
    std::size_t k = 0;
    std::vector<Hit> hits;
    std::size_t candidates = 0;
    /// k exceeded the candidate count, so every candidate was returned.
    bool truncated = false;

    bool operator==(const QueryResult&) const = default;
};

struct Candidate {
    std::string source_id;
    UtcHour timestamp;
    double score = 0;
};

/// Orders by metric orientation, then earlier timestamp, and keeps the first k.
inline QueryResult rank_candidates(std::vector<Candidate> cands, MetricKind metric, std::size_t k) {
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
    auto order = [metric](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return better(metric, a.score, b.score);
        return a.timestamp < b.timestamp;
    };
    QueryResult out{metric, k, {}, cands.size(), k > cands.size()};
    const std::size_t n = std::min(k, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(n), cands.end(), order);
    out.hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.hits.push_back({std::move(cands[i].source_id), cands[i].timestamp, cands[i].score, i + 1});
    return out;
}

inline QueryResult query_latent(const EmbeddingIndex& idx, const Embedding& q, MetricKind metric, std::size_t k,
                                const ExclusionWindow& exclude = {}) {
    if (is_pixel_metric(metric)) fail(ErrorCode::InvalidArgument, to_string(metric) + " needs rasters; latent queries take cosine or euclidean");
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
    if (q.dim() != idx.dim()) {
        fail(ErrorCode::DimMismatch, "query dim " + std::to_string(q.dim()) + " vs index dim " + std::to_string(idx.dim()));
    }
    if (q.model_hash != idx.model_hash()) {
        fail(ErrorCode::ModelMismatch, "query embedding comes from model " + to_hex(q.model_hash).substr(0, 12) + " but the index holds model " +
                                           to_hex(idx.model_hash()).substr(0, 12));
    }
    std::vector<Candidate> cands;
    cands.reserve(idx.size());
    for (const auto& e : idx.entries()) {
        if (exclude.contains(e.timestamp)) continue;
        cands.push_back({e.source_id, e.timestamp, vector_metric(metric, q.vector, e.vector)});
    }
    return rank_candidates(std::move(cands), metric, k);
}

/// Exhaustive pixel-space scan over every manifest record held in `cache`.
inline QueryResult query_pixel(const Manifest& manifest, const MapCache& cache, const PreprocessedMap& q_map, MetricKind metric,
                               std::size_t k, const ExclusionWindow& exclude = {}, const SsimConfig& ssim_cfg = {}) {
    if (!is_pixel_metric(metric)) fail(ErrorCode::InvalidArgument, to_string(metric) + " compares embeddings; pixel queries take rmse or ssim");
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
    if (auto miss = cache.missing(manifest); !miss.empty()) {
        std::string msg = std::to_string(miss.size()) + " manifest entries missing from the cache:";
        for (const auto& id : miss) msg += " " + id;
        fail(ErrorCode::MissingData, msg);
    }
    std::vector<Candidate> cands;
    cands.reserve(manifest.size());
    for (const auto& r : manifest.records()) {
        if (exclude.contains(r.timestamp)) continue;
        const auto m = cache.get(r.id);
        cands.push_back({r.id, r.timestamp, pixel_metric(metric, q_map.raster, m.raster, ssim_cfg)});
    }
    return rank_candidates(std::move(cands), metric, k);
}

inline nlohmann::json to_json(const QueryResult& r) {
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& h : r.hits) hits.push_back({{"rank", h.rank}, {"id", h.source_id}, {"timestamp", h.timestamp.iso()}, {"score", h.score}});
    return {{"metric", to_string(r.metric)}, {"k", r.k}, {"candidates", r.candidates}, {"truncated", r.truncated}, {"results", hits}};
}

inline std::vector<std::uint8_t> encode_index(const EmbeddingIndex& idx) {
    bin::Writer w;
    w.put_text(kIndexMagic);
    w.put_int<std::uint32_t>(kIndexVersion);
    w.put_int<std::uint32_t>(static_cast<std::uint32_t>(idx.dim()));
    w.put_bytes(idx.model_hash());
    w.put_int<std::uint64_t>(idx.size());
    for (const auto& e : idx.entries()) {
        detail::put_short_text(w, e.source_id, "entry id");
        w.put_int<std::int64_t>(e.timestamp.epoch_hours());
        w.put_f32s(e.vector);
    }
    w.seal();
    return w.bytes();
}

inline EmbeddingIndex decode_index(std::span<const std::uint8_t> bytes, const std::string& what = "index file") {
    if (bytes.size() < 8 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kIndexMagic) {
        fail(ErrorCode::FormatError, what + ": not a SWMI index");
    }
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != kIndexVersion) fail(ErrorCode::FormatError, what + ": unsupported index version " + std::to_string(version));
    auto body = bin::verify_trailer(bytes, what);
    bin::Reader rd(body, what);
    rd.get_text(4);
    rd.get_int<std::uint32_t>();
    const auto dim = rd.get_int<std::uint32_t>();
    const Digest hash = rd.get_digest();
    const auto count = rd.get_int<std::uint64_t>();
    // Each entry needs at least 2 + 8 + 4*dim bytes; reject counts the body cannot hold.
    if (count > rd.remaining() / (10 + 4ull * dim)) fail(ErrorCode::FormatError, what + ": truncated");
    std::vector<Embedding> entries;
    entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Embedding e;
        e.source_id = detail::get_short_text(rd);
        e.timestamp = UtcHour(rd.get_int<std::int64_t>());
        e.vector.resize(dim);
        rd.get_f32s(e.vector);
        e.model_hash = hash;
        entries.push_back(std::move(e));
    }
    if (rd.remaining() != 0) fail(ErrorCode::FormatError, what + ": trailing bytes");
    return EmbeddingIndex(std::move(entries));
}

inline void save_index(const EmbeddingIndex& idx, const std::filesystem::path& path) { bin::write_file(path, encode_index(idx)); }

inline EmbeddingIndex load_index(const std::filesystem::path& path) { return decode_index(bin::read_file(path), path.filename().string()); }

} // namespace swm
