// swm: preprocess archives, train models, build indexes, query, evaluate.
//
// Exit codes: 0 ok, 2 usage/config/input, 3 partial data failure (strict),
// 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "swm/cache.hpp"
#include "swm/cae.hpp"
#include "swm/config.hpp"
#include "swm/dataio.hpp"
#include "swm/evalharness.hpp"
#include "swm/imgproc.hpp"
#include "swm/index.hpp"
#include "swm/synthgen.hpp"
#include "swm/vqvae.hpp"

namespace fs = std::filesystem;
using namespace swm;

namespace {

enum Exit { kOk = 0, kUsage = 2, kPartial = 3, kNumeric = 4 };

int exit_code_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::MissingData: return kPartial;
        case ErrorCode::Divergence:
        case ErrorCode::NonFinite: return kNumeric;
        default: return kUsage;
    }
}

void write_text(const fs::path& path, const std::string& text) { bin::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end())); }

struct Common {
    std::string config;
    RunConfig cfg;

    // Flags win over the config file, so overrides apply before logging.
    void load(const char* command, const std::function<void(RunConfig&)>& overrides = {}) {
        if (!config.empty()) cfg = load_run_config(config);
        if (overrides) overrides(cfg);
        log(command);
    }
    // The resolved config and its hash go to stderr for every command.
    void log(const char* command) const {
        nlohmann::json j{{"event", "config"}, {"command", command}, {"config_hash", run_config_hash(cfg)}, {"config", resolved(cfg)}};
        std::cerr << j.dump() << "\n";
    }
};

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
    std::string in_dir, out_dir;
    bool lenient = false;
};

int cmd_preprocess(Common& c, const PreprocessArgs& a) {
    c.load("preprocess", [&](RunConfig& cfg) {
        if (!a.in_dir.empty()) cfg.data.dir = a.in_dir;
    });
    if (c.cfg.data.dir.empty()) fail(ErrorCode::ConfigError, "no input directory: pass --in-dir or set data.dir");
    const auto scan = scan_archive(c.cfg.data.dir, c.cfg.data.pattern);
    std::vector<MapRecord> ok;
    std::vector<PreprocessedMap> maps;
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& r : scan.rejects) failures.push_back({{"path", r.path.string()}, {"reason", r.reason}});
    for (const auto& r : scan.manifest.records()) {
        try {
            maps.push_back(preprocess(load_image(r.path), c.cfg.preprocess, r.id));
            ok.push_back(r);
        } catch (const Error& e) {
            failures.push_back({{"path", r.path.string()}, {"reason", e.what()}});
        }
    }
    const std::string hash = config_hash(c.cfg.preprocess);
    const std::size_t total = scan.manifest.size() + scan.rejects.size();
    if (!maps.empty()) {
        fs::create_directories(a.out_dir);
        MapCache::write(a.out_dir, Manifest(ok, scan.manifest.source_dir(), scan.manifest.created_at()), maps);
        nlohmann::json summary{{"cached", maps.size()}, {"files", total}, {"failures", failures}, {"preprocess_hash", hash},
                               {"config_hash", run_config_hash(c.cfg)}};
        write_text(fs::path(a.out_dir) / "preprocess.json", summary.dump(2) + "\n");
    }
    std::cout << "preprocess: " << maps.size() << " of " << total << " maps cached, " << failures.size() << " failed, config " << hash
              << "\n";
    for (const auto& f : failures) std::cerr << "failed: " << f["path"].get<std::string>() << ": " << f["reason"].get<std::string>() << "\n";
    if (maps.empty()) {
        std::cerr << "error: no map could be preprocessed\n";
        return kPartial;
    }
    if (!failures.empty() && !a.lenient) return kPartial;
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string model, cache, out, log;
    std::optional<std::uint64_t> seed;
};

int cmd_train(Common& c, const TrainArgs& a) {
    c.load("train", [&](RunConfig& cfg) {
        if (a.seed) cfg.cae.seed = cfg.vqvae.seed = *a.seed;
    });
    const auto cache = MapCache::open(a.cache);
    if (cache.manifest().empty()) fail(ErrorCode::EmptyIndex, "cache " + a.cache + " holds no maps");
    const auto maps = cache.load_all();
    const bool vq = a.model == "vqvae";
    const std::uint64_t seed = vq ? c.cfg.vqvae.seed : c.cfg.cae.seed;
    const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) fail(ErrorCode::Io, "cannot write " + log_path.string());
    log << nlohmann::json{{"event", "config"},       {"model", a.model},   {"seed", seed},
                          {"config_hash", run_config_hash(c.cfg)}, {"config", resolved(c.cfg)}, {"maps", maps.size()}}
               .dump()
        << "\n"
        << std::flush;
    auto on_epoch = [&](const EpochLog& e) {
        auto j = epoch_to_json(e, vq);
        j["event"] = "epoch";
        log << j.dump() << "\n" << std::flush;
        std::cerr << "epoch " << e.epoch << " loss " << e.loss << "\n";
    };
    try {
        std::string hash;
        double final_loss = 0;
        if (vq) {
            auto [p, tl] = vqvae_train(c.cfg.vqvae, maps, c.cfg.train, seed, on_epoch);
            save_params(p, a.out);
            hash = to_hex(p.param_hash);
            final_loss = tl.final_loss;
        } else {
            auto [p, tl] = cae_train(c.cfg.cae, maps, c.cfg.train, seed, on_epoch);
            save_params(p, a.out);
            hash = to_hex(p.param_hash);
            final_loss = tl.final_loss;
        }
        log << nlohmann::json{{"event", "done"}, {"param_hash", hash}, {"final_loss", final_loss}}.dump() << "\n";
        std::cout << "train: " << a.model << " on " << maps.size() << " maps, " << c.cfg.train.epochs << " epochs, params " << hash.substr(0, 16)
                  << " -> " << a.out << "\n";
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Divergence) log << nlohmann::json{{"event", "diverged"}, {"message", e.what()}}.dump() << "\n";
        throw;
    }
    return kOk;
}

// ---------------------------------------------------------------- models

/// Either kind of trained model, picked by the params file magic.
struct Model {
    std::optional<CaeParams> cae;
    std::optional<VqvaeParams> vq;

    static Model load(const fs::path& path) {
        const auto bytes = bin::read_file(path);
        const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
        Model m;
        if (magic == kCaeMagic) {
            m.cae = decode_cae_params(bytes, path.string());
        } else if (magic == kVqvMagic) {
            m.vq = decode_vqvae_params(bytes, path.string());
        } else {
            fail(ErrorCode::FormatError, path.string() + ": not a CAE1 or VQV1 params file");
        }
        return m;
    }
    std::size_t channels() const { return cae ? cae->config.in_channels : vq->config.in_channels; }
    std::size_t input_hw() const { return cae ? cae->config.input_hw : vq->config.input_hw; }
    Embedding embed(const PreprocessedMap& map) const { return cae ? cae_embed(*cae, map) : vqvae_embed(*vq, map); }

    void check(const PreprocessedMap& map, const std::string& what) const {
        if (static_cast<std::size_t>(map.channels()) != channels() || static_cast<std::size_t>(map.width()) != input_hw() ||
            static_cast<std::size_t>(map.height()) != input_hw()) {
            fail(ErrorCode::ShapeMismatch, what + " is " + std::to_string(map.width()) + "x" + std::to_string(map.height()) + "x" +
                                               std::to_string(map.channels()) + " but the model takes " + std::to_string(input_hw()) + "x" +
                                               std::to_string(input_hw()) + "x" + std::to_string(channels()));
        }
    }
};

// ---------------------------------------------------------------- index

struct IndexArgs {
    std::string params, cache, out;
    bool lenient = false;
};

int cmd_index(Common& c, const IndexArgs& a) {
    c.load("index");
    const auto model = Model::load(a.params);
    const auto cache = MapCache::open(a.cache);
    if (cache.manifest().empty()) fail(ErrorCode::EmptyIndex, "cache " + a.cache + " holds no maps");
    const auto& first = cache.manifest().records().front();
    if (cache.contains(first.id)) model.check(cache.get(first.id), "cache map " + first.id);
    const auto built = build_index(
        cache.manifest(), [&](const MapRecord& r) { return model.embed(cache.get(r.id)); }, !a.lenient);
    save_index(built.index, a.out);
    for (const auto& f : built.failures) std::cerr << "failed: " << f.id << ": " << f.reason << "\n";
    std::cout << "index: " << built.index.size() << " entries, dim " << built.index.dim() << ", model " << to_hex(built.index.model_hash()).substr(0, 16)
              << " -> " << a.out << "\n";
    return built.failures.empty() ? kOk : kPartial;
}

// ---------------------------------------------------------------- query / eval shared

struct Sources {
    std::string index, external, params, cache;
};

struct Loaded {
    std::optional<EmbeddingIndex> index;
    std::optional<Model> model;
    std::optional<MapCache> cache;
    bool external = false;

    SearchSources sources() const { return {index ? &*index : nullptr, cache ? &*cache : nullptr, nullptr, {}}; }
};

Loaded load_sources(const Sources& s, const std::vector<MetricKind>& metrics) {
    Loaded l;
    bool latent = false, pixel = false;
    for (auto m : metrics) (is_pixel_metric(m) ? pixel : latent) = true;
    if (!s.index.empty() && !s.external.empty()) fail(ErrorCode::InvalidArgument, "pass either --index or --external, not both");
    if (latent) {
        if (s.index.empty() && s.external.empty()) fail(ErrorCode::InvalidArgument, "latent metrics need --index (with --params) or --external");
        if (!s.index.empty()) {
            if (s.params.empty()) fail(ErrorCode::InvalidArgument, "--index needs --params to embed the query");
            l.index = load_index(s.index);
            l.model = Model::load(s.params);
        } else {
            l.index = import_external_embeddings(s.external).index;
            l.external = true;
        }
    }
    if (pixel && s.cache.empty()) fail(ErrorCode::InvalidArgument, "rmse and ssim compare rasters and need --cache");
    if (!s.cache.empty()) l.cache = MapCache::open(s.cache);
    return l;
}

QueryInput make_query(const Loaded& l, const RunConfig& cfg, const fs::path& image, std::optional<UtcHour> known_time) {
    QueryInput q;
    q.id = image.stem().string();
    if (known_time) {
        q.timestamp = *known_time;
    } else {
        std::string why;
        if (FilenamePattern(cfg.data.pattern).match(image.filename().string(), q.timestamp, &why) != FilenamePattern::Match::Yes) {
            fail(ErrorCode::InvalidArgument, "cannot read a timestamp from " + image.filename().string() + " with pattern " + cfg.data.pattern +
                                                 (why.empty() ? "" : ": " + why));
        }
    }
    q.map = preprocess(load_image(image), cfg.preprocess, q.id);
    if (l.cache && !l.cache->manifest().empty()) {
        const auto probe = l.cache->get(l.cache->manifest().records().front().id);
        if (probe.config_hash != q.map.config_hash) {
            fail(ErrorCode::ConfigError, "query preprocessed with config " + q.map.config_hash.substr(0, 12) + " but the cache used " +
                                             probe.config_hash.substr(0, 12));
        }
    }
    if (l.model) {
        l.model->check(q.map, "query " + q.id);
        q.embedding = l.model->embed(q.map);
        q.embedding->source_id = q.id;
        q.embedding->timestamp = q.timestamp;
    } else if (l.external) {
        const Embedding* e = l.index->find_id(q.id);
        if (e == nullptr) e = l.index->find(q.timestamp);
        if (e == nullptr) fail(ErrorCode::MissingData, "external embeddings hold no row for " + q.id);
        q.embedding = *e;
    }
    return q;
}

ExclusionWindow window(UtcHour t, int days) { return days > 0 ? ExclusionWindow::days_around(t, days) : ExclusionWindow::none(); }

// ---------------------------------------------------------------- query

struct QueryArgs {
    Sources src;
    std::string image, metric, montage, report;
    std::optional<std::size_t> k;
    std::optional<int> exclude_days;
};

int cmd_query(Common& c, const QueryArgs& a) {
    c.load("query");
    const MetricKind metric = a.metric.empty() ? c.cfg.query.metric : parse_metric(a.metric);
    const std::size_t k = a.k.value_or(c.cfg.query.k);
    const int days = a.exclude_days.value_or(c.cfg.query.exclude_days);
    if (k == 0) fail(ErrorCode::InvalidArgument, "--k must be >= 1");
    if (days < 0) fail(ErrorCode::InvalidArgument, "--exclude-days must be >= 0");
    if (!a.montage.empty() && a.src.cache.empty()) fail(ErrorCode::InvalidArgument, "--montage draws results from the map cache; pass --cache");
    const auto l = load_sources(a.src, {metric});
    const auto q = make_query(l, c.cfg, a.image, std::nullopt);
    const auto rep = compare_metrics(q, l.sources(), {metric}, k, window(q.timestamp, days));
    auto j = rep.to_json();
    j["exclude_days"] = days;
    j["config_hash"] = run_config_hash(c.cfg);
    if (!a.report.empty()) write_text(a.report, j.dump(2) + "\n");
    if (!a.montage.empty()) save_montage(montage(q.map, q.timestamp, rep.rows.front().result, *l.cache), a.montage);
    std::cout << rep.table();
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    Sources src;
    std::string queries, metrics = "rmse,ssim,cosine", out;
    std::optional<std::size_t> k;
    std::optional<int> exclude_days;
};

int cmd_eval(Common& c, const EvalArgs& a) {
    c.load("eval");
    std::vector<MetricKind> metrics;
    std::stringstream ss(a.metrics);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) metrics.push_back(parse_metric(item));
    }
    if (metrics.empty()) fail(ErrorCode::InvalidArgument, "--metrics is empty");
    const std::size_t k = a.k.value_or(c.cfg.query.k);
    const int days = a.exclude_days.value_or(c.cfg.query.exclude_days);
    if (k == 0) fail(ErrorCode::InvalidArgument, "--k must be >= 1");
    if (days < 0) fail(ErrorCode::InvalidArgument, "--exclude-days must be >= 0");
    const auto qm = load_manifest(a.queries);
    if (qm.empty()) fail(ErrorCode::InvalidArgument, "query manifest " + a.queries + " is empty");
    const auto l = load_sources(a.src, metrics);
    std::vector<QueryInput> qs;
    for (const auto& r : qm.records()) {
        auto q = make_query(l, c.cfg, r.path, r.timestamp);
        q.id = r.id;
        qs.push_back(std::move(q));
    }
    const auto ev = run_eval(qs, l.sources(), metrics, k, days);
    auto j = ev.to_json();
    j["exclude_days"] = days;
    j["config_hash"] = run_config_hash(c.cfg);
    if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
    std::cout << ev.table();
    return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out_dir;
    SynthSpec spec;
};

int cmd_synth(const SynthArgs& a) {
    const auto arch = generate_synth(a.spec, a.out_dir);
    std::cout << "synth: " << arch.truth.size() << " maps (" << a.spec.width << "x" << a.spec.height << ", seed " << a.spec.seed << ") -> " << a.out_dir
              << "\n";
    const auto pc = a.spec.preprocess_config();
    std::cout << "matching preprocess config: " << nlohmann::json(pc).dump() << "\n";
    return kOk;
}

void add_sources(CLI::App* cmd, Sources& s) {
    cmd->add_option("--index", s.index, "SWMI index file");
    cmd->add_option("--external", s.external, "external embeddings (JSON Lines)");
    cmd->add_option("--params", s.params, "CAE1/VQV1 params used to embed queries against --index");
    cmd->add_option("--cache", s.cache, "preprocessed map cache (needed by rmse/ssim and montages)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"swm: weather-map analog retrieval"};
    app.require_subcommand(1);
    Common common;
    auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", common.config, "run config JSON"); };

    PreprocessArgs pa;
    auto* pre = app.add_subcommand("preprocess", "scan an archive and write the preprocessed map cache");
    add_config(pre);
    pre->add_option("--in-dir", pa.in_dir, "archive directory (overrides data.dir)");
    pre->add_option("--out-dir", pa.out_dir, "cache directory")->required();
    pre->add_flag("--lenient", pa.lenient, "exit 0 even when some files fail");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a model on a map cache");
    add_config(train);
    train->add_option("--model", ta.model, "cae or vqvae")->required()->check(CLI::IsMember({"cae", "vqvae"}));
    train->add_option("--cache", ta.cache, "map cache directory")->required();
    train->add_option("--out", ta.out, "params file")->required();
    train->add_option("--log", ta.log, "training log (default: <out>.log.jsonl)");
    train->add_option("--seed", ta.seed, "seed for init and batch order (default: config seed, 42)");

    IndexArgs ia;
    auto* index = app.add_subcommand("index", "embed every cached map and write an index");
    add_config(index);
    index->add_option("--params", ia.params, "CAE1/VQV1 params file")->required();
    index->add_option("--cache", ia.cache, "map cache directory")->required();
    index->add_option("--out", ia.out, "index file")->required();
    index->add_flag("--lenient", ia.lenient, "skip maps that fail to embed");

    QueryArgs qa;
    auto* query = app.add_subcommand("query", "retrieve the k most similar maps for one query image");
    add_config(query);
    add_sources(query, qa.src);
    query->add_option("--query-image", qa.image, "raw map PNG")->required();
    query->add_option("--metric", qa.metric, "rmse, ssim, cosine or euclidean (default: query.metric)");
    query->add_option("--k", qa.k, "results to return (default: query.k)");
    query->add_option("--exclude-days", qa.exclude_days, "skip entries within this many days of the query; 0 disables");
    query->add_option("--montage", qa.montage, "write a contact sheet PNG");
    query->add_option("--report", qa.report, "write the report JSON");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "compare metrics over a list of queries with seasonal scores");
    add_config(eval);
    add_sources(eval, ea.src);
    eval->add_option("--queries", ea.queries, "query manifest (JSON Lines)")->required();
    eval->add_option("--metrics", ea.metrics, "comma-separated metrics");
    eval->add_option("--k", ea.k, "results per metric (default: query.k)");
    eval->add_option("--exclude-days", ea.exclude_days, "exclusion half-width in days; 0 disables");
    eval->add_option("--out", ea.out, "report JSON");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "write a synthetic seasonal archive with its truth file");
    synth->add_option("--out-dir", sa.out_dir, "archive directory")->required();
    synth->add_option("--start-year", sa.spec.start_year, "first year")->capture_default_str();
    synth->add_option("--years", sa.spec.n_years, "number of years")->capture_default_str();
    synth->add_option("--size", sa.spec.width, "image width and height in pixels")->capture_default_str();
    synth->add_option("--seed", sa.spec.seed, "noise seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*pre) return cmd_preprocess(common, pa);
        if (*train) return cmd_train(common, ta);
        if (*index) return cmd_index(common, ia);
        if (*query) return cmd_query(common, qa);
        if (*eval) return cmd_eval(common, ea);
        if (*synth) {
            sa.spec.height = sa.spec.width;
            sa.spec.validate();
            return cmd_synth(sa);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
