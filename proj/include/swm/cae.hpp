#pragma once

// Convolutional autoencoder: strided conv encoder, dense bottleneck, transposed
// conv decoder with a sigmoid head.

#include <filesystem>
#include <utility>

#include "swm/model_common.hpp"
#include "swm/model_file.hpp"

namespace swm {

struct CaeConfig {
    std::size_t in_channels = 2;
    std::size_t input_hw = 256;
    std::vector<std::size_t> enc_channels{32, 64, 128, 256};
    std::size_t latent_dim = 256;
    std::size_t kernel = 4;
    std::vector<std::size_t> strides{2, 2, 2, 2};
    double leaky_slope = 0.1;
    std::uint64_t seed = 42;

    /// Spatial size after the last encoder stage.
    std::size_t grid_hw() const {
        std::size_t g = input_hw;
        for (auto s : strides) g /= s;
        return g;
    }
    std::size_t flat_dim() const { return enc_channels.back() * grid_hw() * grid_hw(); }

    void validate() const {
        if (in_channels != 1 && in_channels != 2) fail(ErrorCode::ConfigError, "cae: in_channels must be 1 or 2");
        if (latent_dim == 0) fail(ErrorCode::ConfigError, "cae: latent_dim must be at least 1");
        if (!(leaky_slope >= 0 && leaky_slope < 1)) fail(ErrorCode::ConfigError, "cae: leaky_slope must lie in [0,1)");
        validate_stages(input_hw, enc_channels, strides, kernel, "cae");
    }

    /// Encoder stages (kernel, bias), encoder dense (w, b), decoder dense (w, b),
    /// decoder stages (kernel, bias) from the deepest stage outwards.
    std::vector<Shape> param_shapes() const {
        validate();
        std::vector<Shape> out;
        const std::size_t k = kernel;
        std::size_t prev = in_channels;
        for (auto c : enc_channels) {
            out.push_back({c, prev, k, k});
            out.push_back({c});
            prev = c;
        }
        out.push_back({latent_dim, flat_dim()});
        out.push_back({latent_dim});
        out.push_back({flat_dim(), latent_dim});
        out.push_back({flat_dim()});
        for (std::size_t i = enc_channels.size(); i-- > 0;) {
            const std::size_t from = enc_channels[i];
            const std::size_t to = i == 0 ? in_channels : enc_channels[i - 1];
            out.push_back({from, to, k, k});
            out.push_back({to});
        }
        return out;
    }

    bool operator==(const CaeConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const CaeConfig& c) {
    j = {{"in_channels", c.in_channels}, {"input_hw", c.input_hw}, {"enc_channels", c.enc_channels},
         {"latent_dim", c.latent_dim},   {"kernel", c.kernel},     {"strides", c.strides},
         {"leaky_slope", c.leaky_slope}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, CaeConfig& c) {
    detail::require_keys(j, {"in_channels", "input_hw", "enc_channels", "latent_dim", "kernel", "strides", "leaky_slope", "seed"},
                         "cae");
    CaeConfig d;
    c.in_channels = j.value("in_channels", d.in_channels);
    c.input_hw = j.value("input_hw", d.input_hw);
    c.enc_channels = j.value("enc_channels", d.enc_channels);
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.kernel = j.value("kernel", d.kernel);
    // A shorter channel list without explicit strides means stride 2 everywhere.
    c.strides = j.value("strides", std::vector<std::size_t>(c.enc_channels.size(), 2));
    c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
    c.seed = j.value("seed", d.seed);
}

struct CaeParams {
    CaeConfig config;
    std::vector<Tensor<float>> tensors;
    Digest param_hash{};

    ModelBlob blob() const { return {std::string(kCaeMagic), nlohmann::json(config), tensors, std::nullopt}; }
    /// Must be called after mutating weights in place.
    void rehash() { param_hash = model_hash(blob()); }
};

template <class T>
struct CaeOutputs {
    ad::Var<T> latent;
    std::optional<ad::Var<T>> recon;
};

/// Records the network on `g`. `p` holds the parameter nodes in param_shapes() order.
template <class T>
CaeOutputs<T> cae_graph(ad::Graph<T>& g, const CaeConfig& cfg, const std::vector<ad::Var<T>>& p, ad::Var<T> x, bool decode = true,
                        bool check_stages = false) {
    (void)g;
    const std::size_t n_stages = cfg.enc_channels.size();
    const std::size_t k = cfg.kernel;
    const T slope = static_cast<T>(cfg.leaky_slope);
    const std::size_t batch = x.shape()[0];
    auto stage_check = [&](ad::Var<T> v, const std::string& name) {
        if (!check_stages) return;
        for (std::size_t i = 0; i < v.value().size(); ++i) {
            if (!std::isfinite(v.value()[i])) fail(ErrorCode::NonFinite, "non-finite activation at stage " + name + " element " + std::to_string(i));
        }
    };

    ad::Var<T> h = x;
    std::size_t pi = 0;
    for (std::size_t s = 0; s < n_stages; ++s) {
        const std::size_t st = cfg.strides[s];
        h = ad::leaky_relu(ad::conv2d(h, p[pi], p[pi + 1], st, same_pad(k, st)), slope);
        pi += 2;
        stage_check(h, "encoder " + std::to_string(s));
    }
    h = ad::reshape(h, {batch, cfg.flat_dim()});
    ad::Var<T> latent = ad::linear(h, p[pi], p[pi + 1]);
    pi += 2;
    stage_check(latent, "latent");
    if (!decode) return {latent, std::nullopt};

    const std::size_t g_hw = cfg.grid_hw();
    h = ad::leaky_relu(ad::linear(latent, p[pi], p[pi + 1]), slope);
    pi += 2;
    h = ad::reshape(h, {batch, cfg.enc_channels.back(), g_hw, g_hw});
    for (std::size_t s = n_stages; s-- > 0;) {
        const std::size_t st = cfg.strides[s];
        h = ad::conv2d_transpose(h, p[pi], p[pi + 1], st, same_pad(k, st));
        pi += 2;
        h = s == 0 ? ad::sigmoid(h) : ad::leaky_relu(h, slope);
        stage_check(h, "decoder " + std::to_string(s));
    }
    return {latent, h};
}

inline CaeParams cae_init(const CaeConfig& cfg) {
    CaeParams p;
    p.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    for (const auto& s : cfg.param_shapes()) {
        Tensor<float> t(s);
        if (s.size() > 1) kaiming_uniform(t, rng);
        p.tensors.push_back(std::move(t));
    }
    p.rehash();
    return p;
}


/// Returns (latent [N, latent_dim], recon [N,C,H,W]).
inline std::pair<Tensor<float>, Tensor<float>> cae_forward(const CaeParams& p, const Tensor<float>& batch) {
    detail::check_batch(batch, p.config.in_channels, p.config.input_hw);
    ad::Graph<float> g;
    auto vars = detail::constant_params(g, p.tensors);
    auto out = cae_graph(g, p.config, vars, g.constant(batch), true, true);
    return {out.latent.value(), out.recon->value()};
}

inline std::pair<CaeParams, TrainLog> cae_train(const CaeConfig& cfg, const std::vector<PreprocessedMap>& train, const HyperParams& hp,
                                                std::uint64_t seed, const EpochCallback& on_epoch = {}) {
    if (train.empty()) fail(ErrorCode::InvalidArgument, "cae_train: empty dataset");
    for (const auto& m : train) check_map_shape(m, cfg.in_channels, cfg.input_hw);
    CaeParams p = cae_init(cfg);
    TrainLog log;
    ad::AdamState<float> adam;
    adam.lr = hp.lr;
    BatchSchedule schedule(train.size(), hp.batch_size, seed);
    std::vector<Tensor<float>*> ptrs;
    for (auto& t : p.tensors) ptrs.push_back(&t);

    for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double total = 0;
        for (const auto& idx : schedule.next_epoch()) {
            std::vector<const PreprocessedMap*> maps;
            for (auto i : idx) maps.push_back(&train[i]);
            ad::Graph<float> g;
            auto vars = detail::register_params(g, p.tensors);
            auto x = g.constant(make_batch(maps));
            auto out = cae_graph(g, cfg, vars, x);
            auto loss = ad::mse_loss(*out.recon, x);
            const double lv = loss.value()[0];
            auto diverged = [&] {
                const std::string last = epoch == 1 ? "none" : std::to_string(epoch - 1) + " (loss " + std::to_string(log.epochs.back().loss) + ")";
                fail(ErrorCode::Divergence, "training diverged in epoch " + std::to_string(epoch) + "; last good epoch " + last);
            };
            if (!std::isfinite(lv)) diverged();
            g.backward(loss);
            try {
                ad::adam_step(ptrs, adam);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NonFinite) throw;
                diverged();
            }
            total += lv * static_cast<double>(idx.size());
        }
        EpochLog e;
        e.epoch = epoch;
        e.loss = total / static_cast<double>(train.size());
        e.wall_ms = elapsed_ms(t0);
        log.epochs.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    log.final_loss = log.epochs.empty() ? 0.0 : log.epochs.back().loss;
    p.rehash();
    return {std::move(p), std::move(log)};
}

/// Encoder-only pass on a singleton batch.
inline Embedding cae_embed(const CaeParams& p, const PreprocessedMap& map) {
    check_map_shape(map, p.config.in_channels, p.config.input_hw);
    ad::Graph<float> g;
    auto vars = detail::constant_params(g, p.tensors);
    auto out = cae_graph(g, p.config, vars, g.constant(make_batch({&map})), false, true);
    Embedding e;
    e.vector = out.latent.value().data;
    e.source_id = map.source_id;
    e.model_hash = p.param_hash;
    return e;
}

inline std::vector<std::uint8_t> encode_params(const CaeParams& p) { return encode_model(p.blob()); }

inline void save_params(const CaeParams& p, const std::filesystem::path& path) { bin::write_file(path, encode_params(p)); }

inline CaeParams decode_cae_params(std::span<const std::uint8_t> bytes, const std::string& what = "params file") {
    auto blob = decode_model(
        bytes, kCaeMagic, [](const nlohmann::json& j) { return j.get<CaeConfig>().param_shapes(); }, false, what);
    CaeParams p;
    p.config = blob.config.get<CaeConfig>();
    p.tensors = std::move(blob.tensors);
    p.rehash();
    return p;
}

inline CaeParams load_cae_params(const std::filesystem::path& path) { return decode_cae_params(bin::read_file(path), path.string()); }

} // namespace swm
