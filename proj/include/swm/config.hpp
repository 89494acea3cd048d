#pragma once

// Unified run configuration. Every section is optional and falls back to
// defaults; unknown keys anywhere are rejected.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "swm/cae.hpp"
#include "swm/dataio.hpp"
#include "swm/imgproc.hpp"
#include "swm/metrics.hpp"
#include "swm/vqvae.hpp"

namespace swm {

struct DataConfig {
    std::string dir;
    std::string pattern = "up50_{YYYY}{MM}{DD}{HH}.png";

    bool operator==(const DataConfig&) const = default;
};

struct QueryConfig {
    MetricKind metric = MetricKind::Cosine;
    std::size_t k = 5;
    int exclude_days = 3;

    bool operator==(const QueryConfig&) const = default;
};

struct RunConfig {
    DataConfig data;
    PreprocessConfig preprocess;
    CaeConfig cae;
    VqvaeConfig vqvae;
    HyperParams train;
    QueryConfig query;

    void validate() const {
        preprocess.validate();
        cae.validate();
        vqvae.validate();
        FilenamePattern{data.pattern};
        if (query.k == 0) fail(ErrorCode::ConfigError, "query.k must be >= 1");
        if (query.exclude_days < 0) fail(ErrorCode::ConfigError, "query.exclude_days must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const DataConfig& d) { j = {{"dir", d.dir}, {"pattern", d.pattern}}; }
inline void from_json(const nlohmann::json& j, DataConfig& d) {
    detail::require_keys(j, {"dir", "pattern"}, "data");
    d.dir = j.value("dir", std::string{});
    d.pattern = j.value("pattern", DataConfig{}.pattern);
}

inline void to_json(nlohmann::json& j, const QueryConfig& q) {
    j = {{"metric", to_string(q.metric)}, {"k", q.k}, {"exclude_days", q.exclude_days}};
}
inline void from_json(const nlohmann::json& j, QueryConfig& q) {
    detail::require_keys(j, {"metric", "k", "exclude_days"}, "query");
    QueryConfig d;
    q.metric = j.contains("metric") ? parse_metric(j["metric"].get<std::string>()) : d.metric;
    q.k = j.value("k", d.k);
    q.exclude_days = j.value("exclude_days", d.exclude_days);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"data", c.data}, {"preprocess", c.preprocess}, {"cae", c.cae}, {"vqvae", c.vqvae}, {"train", c.train}, {"query", c.query}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (!j.is_object()) fail(ErrorCode::ConfigError, "config root must be an object");
        detail::require_keys(j, {"data", "preprocess", "cae", "vqvae", "train", "query"}, "config");
        if (j.contains("data")) c.data = j["data"].get<DataConfig>();
        if (j.contains("preprocess")) c.preprocess = j["preprocess"].get<PreprocessConfig>();
        if (j.contains("cae")) c.cae = j["cae"].get<CaeConfig>();
        if (j.contains("vqvae")) c.vqvae = j["vqvae"].get<VqvaeConfig>();
        if (j.contains("train")) c.train = j["train"].get<HyperParams>();
        if (j.contains("query")) c.query = j["query"].get<QueryConfig>();
        c.validate();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("config: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        fail(ErrorCode::ConfigError, std::string("config: ") + e.what());
    }
    return c;
}

/// Parse errors carry nlohmann's line/column position.
inline RunConfig parse_run_config(const std::string& text, const std::string& what = "config") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::ConfigError, what + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::ConfigError, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

inline nlohmann::json resolved(const RunConfig& c) { return c; }

/// Lowercase hex SHA-256 of the canonical (sorted-key, compact) resolved config.
inline std::string run_config_hash(const RunConfig& c) { return to_hex(sha256(resolved(c).dump())); }

} // namespace swm
