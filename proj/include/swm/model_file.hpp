#pragma once

// Params file: 4-byte magic, u32 config length, canonical config JSON,
// f32 weights in stage order, optional codebook block (u32 K, u32 D, K*D f32),
// then a SHA-256 of all preceding bytes.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swm/autodiff/tensor.hpp"
#include "swm/binio.hpp"

namespace swm {

inline constexpr std::string_view kCaeMagic = "CAE1";
inline constexpr std::string_view kVqvMagic = "VQV1";

struct ModelBlob {
    std::string magic;
    nlohmann::json config;
    std::vector<ad::Tensor<float>> tensors;
    std::optional<ad::Tensor<float>> codebook;
};

/// Serialized bytes plus trailer. The trailer doubles as the param hash.
inline std::vector<std::uint8_t> encode_model(const ModelBlob& m, Digest* hash_out = nullptr) {
    bin::Writer w;
    w.put_text(m.magic);
    const std::string cfg = m.config.dump();
    w.put_int<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
    w.put_text(cfg);
    for (const auto& t : m.tensors) w.put_f32s(t.data);
    if (m.codebook) {
        w.put_int<std::uint32_t>(static_cast<std::uint32_t>(m.codebook->dim(0)));
        w.put_int<std::uint32_t>(static_cast<std::uint32_t>(m.codebook->dim(1)));
        w.put_f32s(m.codebook->data);
    }
    const Digest d = w.seal();
    if (hash_out) *hash_out = d;
    return w.bytes();
}

inline Digest model_hash(const ModelBlob& m) {
    Digest d{};
    encode_model(m, &d);
    return d;
}

/// `shapes_for` maps the parsed config to the tensor shapes in stage order.
template <class ShapesFor>
ModelBlob decode_model(std::span<const std::uint8_t> bytes, std::string_view expect_magic, ShapesFor&& shapes_for,
                       bool has_codebook, const std::string& what) {
    if (bytes.size() < 4) fail(ErrorCode::FormatError, what + ": truncated");
    const std::string magic(bytes.begin(), bytes.begin() + 4);
    if (magic != expect_magic) {
        if (magic == kCaeMagic || magic == kVqvMagic) {
            fail(ErrorCode::WrongModelKind, what + ": holds a " + magic + " model, expected " + std::string(expect_magic));
        }
        fail(ErrorCode::FormatError, what + ": bad magic");
    }
    bin::Reader r(bytes, what);
    r.get_text(4);
    const auto len = r.get_int<std::uint32_t>();
    ModelBlob m;
    m.magic = magic;
    try {
        m.config = nlohmann::json::parse(r.get_text(len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, what + ": config block is not valid JSON: " + e.what());
    }
    std::vector<Shape> shapes = shapes_for(m.config);
    for (auto& s : shapes) {
        ad::Tensor<float> t(s);
        r.get_f32s(t.data);
        m.tensors.push_back(std::move(t));
    }
    if (has_codebook) {
        const auto k = r.get_int<std::uint32_t>();
        const auto d = r.get_int<std::uint32_t>();
        ad::Tensor<float> cb({k, d});
        r.get_f32s(cb.data);
        m.codebook = std::move(cb);
    }
    if (r.remaining() < 32) fail(ErrorCode::FormatError, what + ": truncated");
    if (r.remaining() > 32) fail(ErrorCode::FormatError, what + ": trailing bytes after weights");
    bin::verify_trailer(bytes, what);
    return m;
}

} // namespace swm
