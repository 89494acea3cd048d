#pragma once

// VQ-VAE: conv encoder to a D-channel grid, nearest-code quantization,
// straight-through decoder input, and the recon/codebook/commitment losses.

#include <cmath>
#include <filesystem>
#include <limits>
#include <utility>

#include "swm/model_common.hpp"
#include "swm/model_file.hpp"
#include "swm/png.hpp"

namespace swm {

struct VqvaeConfig {
    std::size_t in_channels = 2;
    std::size_t input_hw = 256;
    std::vector<std::size_t> enc_channels{32, 64, 128, 256};
    std::vector<std::size_t> strides{2, 2, 2, 2};
    std::size_t kernel = 4;
    std::size_t grid_hw = 16;
    std::size_t K = 64;
    std::size_t D = 32;
    double beta = 0.25;
    double leaky_slope = 0.1;
    std::uint64_t seed = 42;

    void validate() const {
        if (in_channels != 1 && in_channels != 2) fail(ErrorCode::ConfigError, "vqvae: in_channels must be 1 or 2");
        validate_stages(input_hw, enc_channels, strides, kernel, "vqvae");
        std::size_t g = input_hw;
        for (auto s : strides) g /= s;
        if (g != grid_hw) {
            fail(ErrorCode::ConfigError, "vqvae: grid_hw " + std::to_string(grid_hw) + " != input_hw / product(strides) = " + std::to_string(g));
        }
        if (K < 2) fail(ErrorCode::ConfigError, "vqvae: K must be at least 2");
        if (D < 1) fail(ErrorCode::ConfigError, "vqvae: D must be at least 1");
        if (!(beta > 0)) fail(ErrorCode::ConfigError, "vqvae: beta must be positive");
        if (!(leaky_slope >= 0 && leaky_slope < 1)) fail(ErrorCode::ConfigError, "vqvae: leaky_slope must lie in [0,1)");
    }

    /// Encoder stages, 1x1 projection to D, 1x1 expansion from D, decoder stages.
    /// The codebook is stored separately.
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
        out.push_back({D, prev, 1, 1});
        out.push_back({D});
        out.push_back({prev, D, 1, 1});
        out.push_back({prev});
        for (std::size_t i = enc_channels.size(); i-- > 0;) {
            const std::size_t from = enc_channels[i];
            const std::size_t to = i == 0 ? in_channels : enc_channels[i - 1];
            out.push_back({from, to, k, k});
            out.push_back({to});
        }
        return out;
    }

    bool operator==(const VqvaeConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const VqvaeConfig& c) {
    j = {{"in_channels", c.in_channels}, {"input_hw", c.input_hw}, {"enc_channels", c.enc_channels}, {"strides", c.strides},
         {"kernel", c.kernel},           {"grid_hw", c.grid_hw},   {"K", c.K},                       {"D", c.D},
         {"beta", c.beta},               {"leaky_slope", c.leaky_slope}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, VqvaeConfig& c) {
    detail::require_keys(j, {"in_channels", "input_hw", "enc_channels", "strides", "kernel", "grid_hw", "K", "D", "beta", "leaky_slope", "seed"},
                         "vqvae");
    VqvaeConfig d;
    c.in_channels = j.value("in_channels", d.in_channels);
    c.input_hw = j.value("input_hw", d.input_hw);
    c.enc_channels = j.value("enc_channels", d.enc_channels);
    c.strides = j.value("strides", std::vector<std::size_t>(c.enc_channels.size(), 2));
    c.kernel = j.value("kernel", d.kernel);
    c.grid_hw = j.value("grid_hw", d.grid_hw);
    c.K = j.value("K", d.K);
    c.D = j.value("D", d.D);
    c.beta = j.value("beta", d.beta);
    c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
    c.seed = j.value("seed", d.seed);
}

/// K x D code vectors, row-major.
struct Codebook {
    Tensor<float> vectors;

    Codebook() = default;
    explicit Codebook(Tensor<float> v) : vectors(std::move(v)) {
        if (vectors.rank() != 2 || vectors.dim(0) < 2 || vectors.dim(1) < 1) fail(ErrorCode::ShapeMismatch, "codebook must be [K>=2, D>=1]");
        if (!vectors.all_finite()) fail(ErrorCode::NonFinite, "codebook holds non-finite values");
    }
    std::size_t K() const { return vectors.dim(0); }
    std::size_t D() const { return vectors.dim(1); }
    std::span<const float> row(std::size_t k) const { return std::span<const float>(vectors.data).subspan(k * D(), D()); }
};

struct CodeGrid {
    std::size_t gh = 0, gw = 0;
    std::vector<std::uint32_t> indices;

    std::uint32_t at(std::size_t x, std::size_t y) const { return indices[y * gw + x]; }
    bool operator==(const CodeGrid&) const = default;
};

struct VqvaeParams {
    VqvaeConfig config;
    std::vector<Tensor<float>> tensors;
    Codebook codebook;
    Digest param_hash{};

    ModelBlob blob() const { return {std::string(kVqvMagic), nlohmann::json(config), tensors, codebook.vectors}; }
    void rehash() { param_hash = model_hash(blob()); }
};

template <class T>
struct Quantized {
    std::vector<std::size_t> indices;  // [N, gh, gw]
    Tensor<T> z_q;                     // [N, D, gh, gw]
};

/// Nearest code per cell by squared Euclidean distance; ties go to the lowest index.
template <class T>
Quantized<T> quantize(const Tensor<T>& z_e, const Tensor<T>& codebook) {
    if (z_e.rank() != 4 || codebook.rank() != 2 || z_e.dim(1) != codebook.dim(1)) {
        fail(ErrorCode::ShapeMismatch, "quantize: z_e " + ad::shape_str(z_e.shape) + " vs codebook " + ad::shape_str(codebook.shape));
    }
    if (!z_e.all_finite()) fail(ErrorCode::NonFinite, "quantize: z_e holds non-finite values");
    const std::size_t n = z_e.dim(0), d = z_e.dim(1), plane = z_e.dim(2) * z_e.dim(3), k = codebook.dim(0);
    Quantized<T> q;
    q.indices.resize(n * plane);
    q.z_q = Tensor<T>(z_e.shape);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t cell = 0; cell < plane; ++cell) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double acc = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = static_cast<double>(z_e.data[(b * d + j) * plane + cell]) - static_cast<double>(codebook.data[c * d + j]);
                    acc += diff * diff;
                }
                if (acc < best_d) {
                    best_d = acc;
                    best = c;
                }
            }
            q.indices[b * plane + cell] = best;
            for (std::size_t j = 0; j < d; ++j) q.z_q.data[(b * d + j) * plane + cell] = codebook.data[best * d + j];
        }
    }
    return q;
}

template <class T>
struct VqLosses {
    ad::Var<T> recon, codebook, commitment, total;
};

namespace detail {
template <class T>
VqLosses<T> vq_losses_with(ad::Var<T> z_e, ad::Var<T> z_q, ad::Var<T> held_z_e, ad::Var<T> held_z_q, ad::Var<T> recon, ad::Var<T> target,
                           double beta) {
    VqLosses<T> l;
    l.recon = ad::mse_loss(recon, target);
    l.codebook = ad::mse_loss(held_z_e, z_q);
    l.commitment = ad::mse_loss(z_e, held_z_q);
    l.total = ad::add(ad::add(l.recon, l.codebook), ad::scale(l.commitment, static_cast<T>(beta)));
    return l;
}
} // namespace detail

/// codebook = mse(sg(z_e), z_q) moves codes; commitment = mse(z_e, sg(z_q)) moves the encoder.
template <class T>
VqLosses<T> vq_losses(ad::Var<T> z_e, ad::Var<T> z_q, ad::Var<T> recon, ad::Var<T> target, double beta) {
    return detail::vq_losses_with(z_e, z_q, ad::stop_gradient(z_e), ad::stop_gradient(z_q), recon, target, beta);
}

/// Pins code assignments and the stopped-gradient values of z_e and z_q at one
/// point. The loss then is an ordinary differentiable function of the weights
/// whose exact gradient equals the straight-through gradient at that point.
template <class T>
struct FrozenAssignment {
    std::vector<std::size_t> indices;
    Tensor<T> z_e;
    Tensor<T> z_q;
};

template <class T>
struct VqOutputs {
    ad::Var<T> z_e, z_q, recon;
    std::vector<std::size_t> indices;
    VqLosses<T> losses;
};

template <class T>
ad::Var<T> vq_encode(const VqvaeConfig& cfg, const std::vector<ad::Var<T>>& p, ad::Var<T> x) {
    const T slope = static_cast<T>(cfg.leaky_slope);
    ad::Var<T> h = x;
    std::size_t pi = 0;
    for (std::size_t s = 0; s < cfg.enc_channels.size(); ++s) {
        const std::size_t st = cfg.strides[s];
        h = ad::leaky_relu(ad::conv2d(h, p[pi], p[pi + 1], st, same_pad(cfg.kernel, st)), slope);
        pi += 2;
    }
    return ad::conv2d(h, p[pi], p[pi + 1], 1, 0);
}

template <class T>
ad::Var<T> vq_decode(const VqvaeConfig& cfg, const std::vector<ad::Var<T>>& p, ad::Var<T> z) {
    const T slope = static_cast<T>(cfg.leaky_slope);
    std::size_t pi = 2 * cfg.enc_channels.size() + 2;
    ad::Var<T> h = ad::leaky_relu(ad::conv2d(z, p[pi], p[pi + 1], 1, 0), slope);
    pi += 2;
    for (std::size_t s = cfg.enc_channels.size(); s-- > 0;) {
        const std::size_t st = cfg.strides[s];
        h = ad::conv2d_transpose(h, p[pi], p[pi + 1], st, same_pad(cfg.kernel, st));
        pi += 2;
        h = s == 0 ? ad::sigmoid(h) : ad::leaky_relu(h, slope);
    }
    return h;
}

template <class T>
VqOutputs<T> vq_graph(const VqvaeConfig& cfg, const std::vector<ad::Var<T>>& p, ad::Var<T> codebook, ad::Var<T> x,
                      const FrozenAssignment<T>* frozen = nullptr) {
    VqOutputs<T> out;
    out.z_e = vq_encode(cfg, p, x);
    const std::size_t n = x.shape()[0];
    if (frozen) {
        out.indices = frozen->indices;
        out.z_q = ad::gather_codes(codebook, std::span<const std::size_t>(out.indices), n, cfg.grid_hw, cfg.grid_hw);
        ad::Graph<T>& g = *x.graph;
        Tensor<T> offset(frozen->z_q.shape);
        for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = frozen->z_q[i] - frozen->z_e[i];
        out.recon = vq_decode(cfg, p, ad::add(out.z_e, g.constant(std::move(offset))));
        out.losses = detail::vq_losses_with(out.z_e, out.z_q, g.constant(frozen->z_e), g.constant(frozen->z_q), out.recon, x, cfg.beta);
    } else {
        out.indices = quantize(out.z_e.value(), codebook.value()).indices;
        out.z_q = ad::gather_codes(codebook, std::span<const std::size_t>(out.indices), n, cfg.grid_hw, cfg.grid_hw);
        out.recon = vq_decode(cfg, p, ad::straight_through(out.z_e, out.z_q));
        out.losses = vq_losses(out.z_e, out.z_q, out.recon, x, cfg.beta);
    }
    return out;
}

inline VqvaeParams vqvae_init(const VqvaeConfig& cfg) {
    VqvaeParams p;
    p.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    for (const auto& s : cfg.param_shapes()) {
        Tensor<float> t(s);
        if (s.size() > 1) kaiming_uniform(t, rng);
        p.tensors.push_back(std::move(t));
    }
    // Codes start clustered near the origin so early assignments follow the
    // direction of encoder outputs rather than one far-off extreme code.
    const float bound = 0.01f;
    p.codebook = Codebook(ad::uniform<float>({cfg.K, cfg.D}, -bound, bound, rng));
    p.rehash();
    return p;
}

struct VqForward {
    Tensor<float> z_e, z_q, recon;
    std::vector<CodeGrid> codes;
};

inline VqForward vqvae_forward(const VqvaeParams& p, const Tensor<float>& batch) {
    const auto& cfg = p.config;
    detail::check_batch(batch, cfg.in_channels, cfg.input_hw);
    ad::Graph<float> g;
    auto vars = detail::constant_params(g, p.tensors);
    auto out = vq_graph(cfg, vars, g.constant(p.codebook.vectors), g.constant(batch));
    VqForward f{out.z_e.value(), out.z_q.value(), out.recon.value(), {}};
    const std::size_t plane = cfg.grid_hw * cfg.grid_hw;
    for (std::size_t b = 0; b < batch.dim(0); ++b) {
        CodeGrid grid{cfg.grid_hw, cfg.grid_hw, {}};
        for (std::size_t c = 0; c < plane; ++c) grid.indices.push_back(static_cast<std::uint32_t>(out.indices[b * plane + c]));
        f.codes.push_back(std::move(grid));
    }
    return f;
}

inline std::pair<VqvaeParams, TrainLog> vqvae_train(const VqvaeConfig& cfg, const std::vector<PreprocessedMap>& train, const HyperParams& hp,
                                                    std::uint64_t seed, const EpochCallback& on_epoch = {}) {
    if (train.empty()) fail(ErrorCode::InvalidArgument, "vqvae_train: empty dataset");
    for (const auto& m : train) check_map_shape(m, cfg.in_channels, cfg.input_hw);
    VqvaeParams p = vqvae_init(cfg);
    TrainLog log;
    ad::AdamState<float> adam;
    adam.lr = hp.lr;
    BatchSchedule schedule(train.size(), hp.batch_size, seed);
    std::vector<Tensor<float>*> ptrs;
    for (auto& t : p.tensors) ptrs.push_back(&t);
    ptrs.push_back(&p.codebook.vectors);

    for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochLog e;
        e.epoch = epoch;
        e.code_usage.assign(cfg.K, 0);
        for (const auto& idx : schedule.next_epoch()) {
            std::vector<const PreprocessedMap*> maps;
            for (auto i : idx) maps.push_back(&train[i]);
            ad::Graph<float> g;
            auto vars = detail::register_params(g, p.tensors);
            auto cb = g.param(p.codebook.vectors);
            auto out = vq_graph(cfg, vars, cb, g.constant(make_batch(maps)));
            const double lv = out.losses.total.value()[0];
            auto diverged = [&] {
                const std::string last = epoch == 1 ? "none" : std::to_string(epoch - 1) + " (loss " + std::to_string(log.epochs.back().loss) + ")";
                fail(ErrorCode::Divergence, "training diverged in epoch " + std::to_string(epoch) + "; last good epoch " + last);
            };
            if (!std::isfinite(lv)) diverged();
            g.backward(out.losses.total);
            try {
                ad::adam_step(ptrs, adam);
            } catch (const Error& err) {
                if (err.code() != ErrorCode::NonFinite) throw;
                diverged();
            }
            const double w = static_cast<double>(idx.size());
            e.loss += lv * w;
            e.recon += out.losses.recon.value()[0] * w;
            e.codebook += out.losses.codebook.value()[0] * w;
            e.commitment += out.losses.commitment.value()[0] * w;
            for (auto i : out.indices) ++e.code_usage[i];
        }
        const double n = static_cast<double>(train.size());
        e.loss /= n;
        e.recon /= n;
        e.codebook /= n;
        e.commitment /= n;
        e.collapsed = std::count_if(e.code_usage.begin(), e.code_usage.end(), [](std::size_t c) { return c > 0; }) == 1;
        e.wall_ms = elapsed_ms(t0);
        log.epochs.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    log.final_loss = log.epochs.empty() ? 0.0 : log.epochs.back().loss;
    p.codebook = Codebook(p.codebook.vectors);
    p.rehash();
    return {std::move(p), std::move(log)};
}

/// Flattened z_q in [D, gh, gw] order.
inline Embedding vqvae_embed(const VqvaeParams& p, const PreprocessedMap& map) {
    check_map_shape(map, p.config.in_channels, p.config.input_hw);
    ad::Graph<float> g;
    auto vars = detail::constant_params(g, p.tensors);
    auto z_e = vq_encode(p.config, vars, g.constant(make_batch({&map})));
    Embedding e;
    e.vector = quantize(z_e.value(), p.codebook.vectors).z_q.data;
    e.source_id = map.source_id;
    e.model_hash = p.param_hash;
    return e;
}

inline CodeGrid vqvae_codes(const VqvaeParams& p, const PreprocessedMap& map) {
    check_map_shape(map, p.config.in_channels, p.config.input_hw);
    ad::Graph<float> g;
    auto vars = detail::constant_params(g, p.tensors);
    auto z_e = vq_encode(p.config, vars, g.constant(make_batch({&map})));
    auto q = quantize(z_e.value(), p.codebook.vectors);
    CodeGrid grid{p.config.grid_hw, p.config.grid_hw, {}};
    for (auto i : q.indices) grid.indices.push_back(static_cast<std::uint32_t>(i));
    return grid;
}

/// Fixed K-entry palette: hues stepped by the golden angle.
inline std::array<std::uint8_t, 3> code_color(std::size_t index) {
    const double hue = std::fmod(static_cast<double>(index) * 137.50776405003785, 360.0);
    const float v = index % 2 == 0 ? 0.95f : 0.75f;
    return hsv_to_rgb({static_cast<float>(hue), 0.7f, v});
}

inline ImageU8 render_code_grid(const CodeGrid& grid, std::size_t K, int cell = 16) {
    if (grid.gh == 0 || grid.gw == 0 || grid.indices.size() != grid.gh * grid.gw) fail(ErrorCode::ShapeMismatch, "code grid size mismatch");
    if (cell <= 0) fail(ErrorCode::InvalidArgument, "cell size must be positive");
    for (auto i : grid.indices) {
        if (i >= K) fail(ErrorCode::OutOfBounds, "code index " + std::to_string(i) + " out of range for K=" + std::to_string(K));
    }
    ImageU8 img(static_cast<int>(grid.gw) * cell, static_cast<int>(grid.gh) * cell, 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const auto c = code_color(grid.at(static_cast<std::size_t>(x / cell), static_cast<std::size_t>(y / cell)));
            std::copy(c.begin(), c.end(), img.px(x, y));
        }
    }
    return img;
}

inline std::vector<std::uint8_t> encode_params(const VqvaeParams& p) { return encode_model(p.blob()); }

inline void save_params(const VqvaeParams& p, const std::filesystem::path& path) { bin::write_file(path, encode_params(p)); }

inline VqvaeParams decode_vqvae_params(std::span<const std::uint8_t> bytes, const std::string& what = "params file") {
    auto blob = decode_model(
        bytes, kVqvMagic, [](const nlohmann::json& j) { return j.get<VqvaeConfig>().param_shapes(); }, true, what);
    VqvaeParams p;
    p.config = blob.config.get<VqvaeConfig>();
    p.tensors = std::move(blob.tensors);
    if (blob.codebook->dim(0) != p.config.K || blob.codebook->dim(1) != p.config.D) {
        fail(ErrorCode::FormatError, what + ": codebook block does not match K/D in config");
    }
    p.codebook = Codebook(std::move(*blob.codebook));
    p.rehash();
    return p;
}

inline VqvaeParams load_vqvae_params(const std::filesystem::path& path) { return decode_vqvae_params(bin::read_file(path), path.string()); }

} // namespace swm
