#pragma once

// Preprocessed-map cache. A cache directory holds manifest.jsonl plus one
// `<id>.swmp` file per record:
//   magic "SWMP", u32 version=1, u32 width, u32 height, u32 channels,
//   u16 id length + id, u16 hash length + config hash, w*h*c f32, SHA-256 trailer.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swm/binio.hpp"
#include "swm/dataio.hpp"
#include "swm/imgproc.hpp"

namespace swm {

inline constexpr std::string_view kMapMagic = "SWMP";
inline constexpr std::uint32_t kMapVersion = 1;
inline constexpr const char* kCacheManifest = "manifest.jsonl";

namespace detail {
inline void put_short_text(bin::Writer& w, const std::string& s, const char* what) {
    if (s.size() > 0xFFFF) fail(ErrorCode::InvalidArgument, std::string(what) + " longer than 65535 bytes");
    w.put_int<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    w.put_text(s);
}
inline std::string get_short_text(bin::Reader& r) { return r.get_text(r.get_int<std::uint16_t>()); }
} // namespace detail

inline std::vector<std::uint8_t> encode_map(const PreprocessedMap& m) {
    const auto& r = m.raster;
    if (r.data.size() != static_cast<std::size_t>(r.width) * r.height * r.channels) {
        fail(ErrorCode::ShapeMismatch, "raster data does not match its declared shape");
    }
    bin::Writer w;
    w.put_text(kMapMagic);
    w.put_int<std::uint32_t>(kMapVersion);
    w.put_int<std::uint32_t>(static_cast<std::uint32_t>(r.width));
    w.put_int<std::uint32_t>(static_cast<std::uint32_t>(r.height));
    w.put_int<std::uint32_t>(static_cast<std::uint32_t>(r.channels));
    detail::put_short_text(w, m.source_id, "map id");
    detail::put_short_text(w, m.config_hash, "config hash");
    w.put_f32s(r.data);
    w.seal();
    return w.bytes();
}

inline PreprocessedMap decode_map(std::span<const std::uint8_t> bytes, const std::string& what = "map file") {
    if (bytes.size() < 8 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kMapMagic) {
        fail(ErrorCode::FormatError, what + ": not a SWMP file");
    }
    auto body = bin::verify_trailer(bytes, what);
    bin::Reader rd(body, what);
    rd.get_text(4);
    if (auto v = rd.get_int<std::uint32_t>(); v != kMapVersion) {
        fail(ErrorCode::FormatError, what + ": unsupported version " + std::to_string(v));
    }
    const auto w = rd.get_int<std::uint32_t>(), h = rd.get_int<std::uint32_t>(), c = rd.get_int<std::uint32_t>();
    if (w == 0 || h == 0 || c == 0 || w > 1u << 15 || h > 1u << 15 || c > 16) fail(ErrorCode::FormatError, what + ": bad raster shape");
    PreprocessedMap m;
    m.source_id = detail::get_short_text(rd);
    m.config_hash = detail::get_short_text(rd);
    m.raster = Raster(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    rd.get_f32s(m.raster.data);
    if (rd.remaining() != 0) fail(ErrorCode::FormatError, what + ": trailing bytes");
    return m;
}

/// Filename for a record id; ids are timestamp-derived so they are path-safe,
/// anything else is rejected rather than escaped.
inline std::string cache_filename(const std::string& id) {
    if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
        fail(ErrorCode::InvalidArgument, "id '" + id + "' cannot name a cache file");
    }
    return id + ".swmp";
}

/// Maps keyed by record id, either held in memory or read lazily from a directory.
class MapCache {
public:
    MapCache() = default;

    static MapCache open(const std::filesystem::path& dir) {
        if (!std::filesystem::is_directory(dir)) fail(ErrorCode::Io, "cache directory " + dir.string() + " does not exist");
        const auto mf = dir / kCacheManifest;
        if (!std::filesystem::exists(mf)) fail(ErrorCode::MissingData, "cache " + dir.string() + " has no " + kCacheManifest);
        MapCache c;
        c.dir_ = dir;
        c.manifest_ = load_manifest(mf);
        return c;
    }

    /// Writes every map plus the manifest. Maps must cover the manifest exactly.
    static MapCache write(const std::filesystem::path& dir, const Manifest& manifest, const std::vector<PreprocessedMap>& maps) {
        std::filesystem::create_directories(dir);
        std::map<std::string, const PreprocessedMap*> by_id;
        for (const auto& m : maps) by_id[m.source_id] = &m;
        for (const auto& r : manifest.records()) {
            auto it = by_id.find(r.id);
            if (it == by_id.end()) fail(ErrorCode::MissingData, "no preprocessed map for " + r.id);
            bin::write_file(dir / cache_filename(r.id), encode_map(*it->second));
        }
        save_manifest(manifest, dir / kCacheManifest);
        return open(dir);
    }

    static MapCache in_memory(Manifest manifest, std::vector<PreprocessedMap> maps) {
        MapCache c;
        c.manifest_ = std::move(manifest);
        for (auto& m : maps) {
            auto id = m.source_id;
            c.held_.insert_or_assign(std::move(id), std::move(m));
        }
        return c;
    }

    const Manifest& manifest() const { return manifest_; }
    bool on_disk() const { return !dir_.empty(); }
    const std::filesystem::path& dir() const { return dir_; }

    bool contains(const std::string& id) const {
        if (held_.count(id)) return true;
        return on_disk() && std::filesystem::exists(dir_ / cache_filename(id));
    }

    PreprocessedMap get(const std::string& id) const {
        if (auto it = held_.find(id); it != held_.end()) return it->second;
        if (!on_disk()) fail(ErrorCode::MissingData, "map " + id + " not in cache");
        const auto path = dir_ / cache_filename(id);
        if (!std::filesystem::exists(path)) fail(ErrorCode::MissingData, "map " + id + " not in cache " + dir_.string());
        auto m = decode_map(bin::read_file(path), path.filename().string());
        if (m.source_id != id) fail(ErrorCode::FormatError, path.string() + " holds map " + m.source_id);
        return m;
    }

    /// Ids of `m` with no cached map, in manifest order.
    std::vector<std::string> missing(const Manifest& m) const {
        std::vector<std::string> out;
        for (const auto& r : m.records()) {
            if (!contains(r.id)) out.push_back(r.id);
        }
        return out;
    }

    /// Loads everything into memory; used when the same cache is scanned repeatedly.
    void preload() {
        for (const auto& r : manifest_.records()) {
            if (!held_.count(r.id)) held_.emplace(r.id, get(r.id));
        }
    }

    std::vector<PreprocessedMap> load_all() const {
        std::vector<PreprocessedMap> out;
        out.reserve(manifest_.size());
        for (const auto& r : manifest_.records()) out.push_back(get(r.id));
        return out;
    }

private:
    std::filesystem::path dir_;
    Manifest manifest_;
    std::map<std::string, PreprocessedMap, std::less<>> held_;
};

} // namespace swm
