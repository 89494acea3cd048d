#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/error.hpp"
#include "swm/png.hpp"
#include "swm/time.hpp"

namespace swm {

struct MapRecord {
    std::string id;
    UtcHour timestamp;
    std::filesystem::path path;
    int width = 0;
    int height = 0;

    bool operator==(const MapRecord&) const = default;
};

/// Records sorted ascending by timestamp with unique timestamps and ids.
class Manifest {
public:
    Manifest() = default;
    Manifest(std::vector<MapRecord> records, std::filesystem::path source_dir, UtcHour created_at)
        : records_(std::move(records)), source_dir_(std::move(source_dir)), created_at_(created_at) {
        std::stable_sort(records_.begin(), records_.end(),
                         [](const MapRecord& a, const MapRecord& b) { return a.timestamp < b.timestamp; });
        std::set<std::string> ids;
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto& r = records_[i];
            if (r.width <= 0 || r.height <= 0) fail(ErrorCode::InvalidArgument, "record " + r.id + " has empty size");
            if (i > 0 && records_[i - 1].timestamp == r.timestamp) {
                fail(ErrorCode::InvalidArgument, "duplicate timestamp " + r.timestamp.iso());
            }
            if (!ids.insert(r.id).second) fail(ErrorCode::InvalidArgument, "duplicate id " + r.id);
        }
    }

    const std::vector<MapRecord>& records() const { return records_; }
    const std::filesystem::path& source_dir() const { return source_dir_; }
    UtcHour created_at() const { return created_at_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    const MapRecord* find(UtcHour t) const {
        auto it = std::lower_bound(records_.begin(), records_.end(), t,
                                   [](const MapRecord& r, UtcHour v) { return r.timestamp < v; });
        return (it != records_.end() && it->timestamp == t) ? &*it : nullptr;
    }
    const MapRecord* find_id(std::string_view id) const {
        for (const auto& r : records_) {
            if (r.id == id) return &r;
        }
        return nullptr;
    }

    bool operator==(const Manifest&) const = default;

private:
    std::vector<MapRecord> records_;
    std::filesystem::path source_dir_;
    UtcHour created_at_;
};

/// Filename template: literal text plus fixed-width `{YYYY}{MM}{DD}{HH}` fields.
class FilenamePattern {
public:
    explicit FilenamePattern(std::string_view pattern) : text_(pattern) {
        std::size_t i = 0;
        std::string literal;
        auto flush = [&] {
            if (!literal.empty()) parts_.push_back({Part::Literal, literal, 0});
            literal.clear();
        };
        while (i < pattern.size()) {
            if (pattern[i] == '{') {
                auto close = pattern.find('}', i);
                if (close == std::string_view::npos) fail(ErrorCode::InvalidPattern, "unclosed '{' in " + text_);
                auto name = pattern.substr(i + 1, close - i - 1);
                Part::Kind kind;
                if (name == "YYYY") kind = Part::Year;
                else if (name == "MM") kind = Part::Month;
                else if (name == "DD") kind = Part::Day;
                else if (name == "HH") kind = Part::Hour;
                else fail(ErrorCode::InvalidPattern, "unknown placeholder {" + std::string(name) + "}");
                flush();
                if (seen_ & (1u << kind)) fail(ErrorCode::InvalidPattern, "repeated placeholder in " + text_);
                seen_ |= 1u << kind;
                parts_.push_back({kind, {}, kind == Part::Year ? 4u : 2u});
                i = close + 1;
            } else {
                literal.push_back(pattern[i++]);
            }
        }
        flush();
        if (seen_ != 0b1111u) fail(ErrorCode::InvalidPattern, "pattern needs {YYYY}{MM}{DD}{HH}: " + text_);
    }

    enum class Match { No, Yes, BadDate };

    /// Matches the glob shape, then validates the calendar date.
    Match match(std::string_view name, UtcHour& out, std::string* why = nullptr) const {
        std::size_t pos = 0;
        int field[4] = {0, 0, 0, 0};
        for (const auto& p : parts_) {
            if (p.kind == Part::Literal) {
                if (name.substr(pos, p.literal.size()) != p.literal) return Match::No;
                pos += p.literal.size();
            } else {
                if (pos + p.width > name.size()) return Match::No;
                int v = 0;
                for (std::size_t k = 0; k < p.width; ++k) {
                    char c = name[pos + k];
                    if (c < '0' || c > '9') return Match::No;
                    v = v * 10 + (c - '0');
                }
                field[p.kind] = v;
                pos += p.width;
            }
        }
        if (pos != name.size()) return Match::No;
        try {
            out = UtcHour::from_civil(field[0], static_cast<unsigned>(field[1]), static_cast<unsigned>(field[2]),
                                      static_cast<unsigned>(field[3]));
        } catch (const Error& e) {
            if (why) *why = e.what();
            return Match::BadDate;
        }
        return Match::Yes;
    }

    std::string format(UtcHour t) const {
        std::string out;
        char buf[8];
        for (const auto& p : parts_) {
            switch (p.kind) {
            case Part::Literal: out += p.literal; break;
            case Part::Year: std::snprintf(buf, sizeof buf, "%04d", t.year()); out += buf; break;
            case Part::Month: std::snprintf(buf, sizeof buf, "%02u", t.month()); out += buf; break;
            case Part::Day: std::snprintf(buf, sizeof buf, "%02u", t.day()); out += buf; break;
            case Part::Hour: std::snprintf(buf, sizeof buf, "%02u", t.hour()); out += buf; break;
            }
        }
        return out;
    }

    const std::string& text() const { return text_; }

private:
    struct Part {
        enum Kind { Year = 0, Month = 1, Day = 2, Hour = 3, Literal = 4 } kind;
        std::string literal;
        std::size_t width;
    };
    std::string text_;
    std::vector<Part> parts_;
    unsigned seen_ = 0;
};

struct RejectedFile {
    std::filesystem::path path;
    std::string reason;
};

struct ScanResult {
    Manifest manifest;
    std::vector<RejectedFile> rejects;
};

/// Reads width and height from the PNG IHDR chunk without decoding pixels.
inline std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint8_t head[24] = {};
    if (!in.read(reinterpret_cast<char*>(head), sizeof head)) {
        fail(ErrorCode::DecodeError, path.string() + ": too short for a PNG header");
    }
    static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (!std::equal(kSig, kSig + 8, head) || std::string_view(reinterpret_cast<char*>(head + 12), 4) != "IHDR") {
        fail(ErrorCode::DecodeError, path.string() + ": not a PNG file");
    }
    auto be32 = [&](int at) {
        return static_cast<int>((std::uint32_t{head[at]} << 24) | (std::uint32_t{head[at + 1]} << 16) |
                                (std::uint32_t{head[at + 2]} << 8) | std::uint32_t{head[at + 3]});
    };
    return {be32(16), be32(20)};
}

/// One record per file whose name matches `pattern`; the record id is the filename stem.
/// Files shaped like the pattern but carrying an impossible date land in `rejects`.
inline ScanResult scan_archive(const std::filesystem::path& dir, std::string_view pattern) {
    namespace fs = std::filesystem;
    FilenamePattern pat(pattern);
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) fail(ErrorCode::Io, "not a readable directory: " + dir.string());
    fs::directory_iterator it(dir, ec);
    if (ec) fail(ErrorCode::Io, "cannot read directory " + dir.string() + ": " + ec.message());

    std::vector<fs::path> files;
    for (const auto& entry : it) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    ScanResult result;
    std::vector<MapRecord> records;
    for (const auto& f : files) {
        UtcHour t;
        std::string why;
        switch (pat.match(f.filename().string(), t, &why)) {
        case FilenamePattern::Match::No: break;
        case FilenamePattern::Match::BadDate: result.rejects.push_back({f, why}); break;
        case FilenamePattern::Match::Yes:
            try {
                auto [w, h] = png_dimensions(f);
                records.push_back({f.stem().string(), t, f, w, h});
            } catch (const Error& e) {
                result.rejects.push_back({f, e.what()});
            }
            break;
        }
    }
    if (records.empty() && result.rejects.empty()) {
        fail(ErrorCode::ZeroMatches, "no files in " + dir.string() + " match " + pat.text());
    }
    result.manifest = Manifest(std::move(records), dir, now_utc_hour());
    return result;
}

// Manifest file: JSON Lines. The first line is a header object carrying
// source_dir and created_at; every following line is one record.

inline nlohmann::json record_to_json(const MapRecord& r) {
    return {{"id", r.id}, {"timestamp", r.timestamp.iso()}, {"path", r.path.string()},
            {"width", r.width}, {"height", r.height}};
}

inline MapRecord record_from_json(const nlohmann::json& j) {
    try {
        return {j.at("id").get<std::string>(), UtcHour::parse(j.at("timestamp").get<std::string>()),
                std::filesystem::path(j.at("path").get<std::string>()), j.at("width").get<int>(),
                j.at("height").get<int>()};
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, std::string("bad manifest record: ") + e.what());
    }
}

inline std::string manifest_to_jsonl(const Manifest& m) {
    std::string out = nlohmann::json{{"source_dir", m.source_dir().string()}, {"created_at", m.created_at().iso()}}.dump();
    out += '\n';
    for (const auto& r : m.records()) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

inline Manifest manifest_from_jsonl(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<MapRecord> records;
    std::filesystem::path source_dir;
    UtcHour created_at;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::FormatError, "manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (lineno == 1 && !j.contains("id")) {
            source_dir = j.value("source_dir", std::string{});
            if (j.contains("created_at")) created_at = UtcHour::parse(j["created_at"].get<std::string>());
            continue;
        }
        records.push_back(record_from_json(j));
    }
    return Manifest(std::move(records), source_dir, created_at);
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << manifest_to_jsonl(m);
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_jsonl(ss.str());
}

struct ManifestSplit {
    Manifest train;
    Manifest eval;
};

/// Partitions `m`; records whose timestamp is in `holdout` go to eval.
inline ManifestSplit split_manifest(const Manifest& m, const std::vector<UtcHour>& holdout) {
    std::set<UtcHour> held(holdout.begin(), holdout.end());
    for (auto t : held) {
        if (m.find(t) == nullptr) fail(ErrorCode::NotInManifest, "holdout timestamp " + t.iso() + " not in manifest");
    }
    std::vector<MapRecord> train, eval;
    for (const auto& r : m.records()) (held.count(r.timestamp) ? eval : train).push_back(r);
    return {Manifest(std::move(train), m.source_dir(), m.created_at()),
            Manifest(std::move(eval), m.source_dir(), m.created_at())};
}

} // namespace swm
