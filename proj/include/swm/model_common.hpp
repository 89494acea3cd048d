#pragma once

// Pieces shared by the autoencoder and the VQ-VAE: stage geometry, init,
// batching, training hyperparameters and the per-epoch log.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/autodiff.hpp"
#include "swm/digest.hpp"
#include "swm/imgproc.hpp"
#include "swm/time.hpp"

namespace swm {

using ad::Shape;
using ad::Tensor;

/// Latent vector tied to a map and the model that produced it.
struct Embedding {
    std::vector<float> vector;
    std::string source_id;
    UtcHour timestamp;
    Digest model_hash{};

    std::size_t dim() const { return vector.size(); }
    bool operator==(const Embedding&) const = default;
};

/// Padding that makes a stage map H to H/stride (conv) and back (transpose).
inline std::size_t same_pad(std::size_t kernel, std::size_t stride) { return (kernel - stride) / 2; }

inline void validate_stages(std::size_t input_hw, const std::vector<std::size_t>& channels, const std::vector<std::size_t>& strides,
                            std::size_t kernel, const char* what) {
    auto bad = [&](const std::string& msg) { fail(ErrorCode::ConfigError, std::string(what) + ": " + msg); };
    if (channels.empty()) bad("enc_channels must list at least one stage");
    if (strides.size() != channels.size()) bad("strides needs one entry per stage");
    std::size_t prod = 1;
    for (auto s : strides) {
        if (s == 0) bad("stride must be positive");
        if (kernel < s || (kernel - s) % 2 != 0) {
            bad("kernel " + std::to_string(kernel) + " with stride " + std::to_string(s) +
                " gives non-integral shape arithmetic; kernel - stride must be even and non-negative");
        }
        prod *= s;
    }
    for (auto c : channels) {
        if (c == 0) bad("stage channel count must be positive");
    }
    if (input_hw == 0 || input_hw % prod != 0) {
        bad("input_hw " + std::to_string(input_hw) + " not divisible by product of strides " + std::to_string(prod));
    }
}

/// Uniform in +-sqrt(6 / fan_in), fan_in = numel / shape[0].
inline void kaiming_uniform(Tensor<float>& t, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(t.size()) / static_cast<double>(t.dim(0));
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = static_cast<float>(dist(rng));
}

template <class T>
std::vector<Tensor<T>> cast_all(const std::vector<Tensor<float>>& in) {
    std::vector<Tensor<T>> out;
    out.reserve(in.size());
    for (const auto& t : in) out.push_back(t.template cast<T>());
    return out;
}

struct HyperParams {
    double lr = 1e-3;
    std::size_t batch_size = 8;
    std::size_t epochs = 10;
};

inline void to_json(nlohmann::json& j, const HyperParams& h) {
    j = {{"lr", h.lr}, {"batch_size", h.batch_size}, {"epochs", h.epochs}};
}
inline void from_json(const nlohmann::json& j, HyperParams& h) {
    detail::require_keys(j, {"lr", "batch_size", "epochs"}, "train");
    HyperParams d;
    h.lr = j.value("lr", d.lr);
    h.batch_size = j.value("batch_size", d.batch_size);
    h.epochs = j.value("epochs", d.epochs);
    if (!(h.lr > 0)) fail(ErrorCode::ConfigError, "train.lr must be positive");
    if (h.batch_size == 0) fail(ErrorCode::ConfigError, "train.batch_size must be positive");
}

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0;
    double wall_ms = 0;
    // VQ-VAE breakdown; zero for the autoencoder.
    double recon = 0;
    double codebook = 0;
    double commitment = 0;
    std::vector<std::size_t> code_usage;
    bool collapsed = false;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    double final_loss = 0;
};

/// Wall-time lives only in "wall_ms"; every other key is deterministic.
inline nlohmann::json epoch_to_json(const EpochLog& e, bool vq) {
    nlohmann::json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"wall_ms", e.wall_ms}};
    if (vq) {
        j["recon"] = e.recon;
        j["codebook"] = e.codebook;
        j["commitment"] = e.commitment;
        j["code_usage"] = e.code_usage;
        if (e.collapsed) j["warning"] = "codebook collapse: every cell used one code this epoch";
    }
    return j;
}

/// Equality ignoring wall-time.
inline bool same_losses(const TrainLog& a, const TrainLog& b) {
    if (a.epochs.size() != b.epochs.size() || a.final_loss != b.final_loss) return false;
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        const auto& x = a.epochs[i];
        const auto& y = b.epochs[i];
        if (x.epoch != y.epoch || x.loss != y.loss || x.recon != y.recon || x.codebook != y.codebook ||
            x.commitment != y.commitment || x.code_usage != y.code_usage || x.collapsed != y.collapsed) {
            return false;
        }
    }
    return true;
}

using EpochCallback = std::function<void(const EpochLog&)>;

inline void check_map_shape(const PreprocessedMap& m, std::size_t channels, std::size_t hw) {
    if (static_cast<std::size_t>(m.channels()) != channels || static_cast<std::size_t>(m.width()) != hw ||
        static_cast<std::size_t>(m.height()) != hw) {
        fail(ErrorCode::ShapeMismatch, "map '" + m.source_id + "' is " + std::to_string(m.channels()) + "x" +
                                           std::to_string(m.height()) + "x" + std::to_string(m.width()) + ", model expects " +
                                           std::to_string(channels) + "x" + std::to_string(hw) + "x" + std::to_string(hw));
    }
}

template <class T = float>
Tensor<T> make_batch(const std::vector<const PreprocessedMap*>& maps) {
    if (maps.empty()) fail(ErrorCode::InvalidArgument, "empty batch");
    const auto& r0 = maps.front()->raster;
    Tensor<T> out({maps.size(), static_cast<std::size_t>(r0.channels), static_cast<std::size_t>(r0.height),
                   static_cast<std::size_t>(r0.width)});
    std::size_t off = 0;
    for (const auto* m : maps) {
        if (m->raster.data.size() != r0.data.size()) fail(ErrorCode::ShapeMismatch, "batch maps differ in shape");
        for (float v : m->raster.data) out.data[off++] = static_cast<T>(v);
    }
    return out;
}

/// Seeded minibatch order; the shuffle is part of the determinism contract.
class BatchSchedule {
public:
    BatchSchedule(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(batch), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }
    std::vector<std::vector<std::size_t>> next_epoch() {
        std::shuffle(order_.begin(), order_.end(), rng_);
        std::vector<std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < order_.size(); i += batch_) {
            out.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(i),
                             order_.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_, order_.size())));
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::mt19937_64 rng_;
};

namespace detail {
inline std::vector<ad::Var<float>> register_params(ad::Graph<float>& g, std::vector<Tensor<float>>& ts) {
    std::vector<ad::Var<float>> v;
    v.reserve(ts.size());
    for (auto& t : ts) v.push_back(g.param(t));
    return v;
}
inline std::vector<ad::Var<float>> constant_params(ad::Graph<float>& g, const std::vector<Tensor<float>>& ts) {
    std::vector<ad::Var<float>> v;
    v.reserve(ts.size());
    for (const auto& t : ts) v.push_back(g.constant(t));
    return v;
}
inline void check_batch(const Tensor<float>& batch, std::size_t c, std::size_t hw) {
    if (batch.rank() != 4 || batch.dim(1) != c || batch.dim(2) != hw || batch.dim(3) != hw) {
        fail(ErrorCode::ShapeMismatch, "batch shape " + ad::shape_str(batch.shape) + " does not match model input [N," + std::to_string(c) +
                                           "," + std::to_string(hw) + "," + std::to_string(hw) + "]");
    }
}
} // namespace detail

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline void check_finite_stage(const std::vector<float>& v, const char* stage) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) fail(ErrorCode::NonFinite, std::string("non-finite activation at stage ") + stage + " element " + std::to_string(i));
    }
}

} // namespace swm
