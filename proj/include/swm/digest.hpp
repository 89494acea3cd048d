#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "swm/error.hpp"

namespace swm {

using Digest = std::array<std::uint8_t, 32>;

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            fail(ErrorCode::Io, "cannot initialise SHA-256 context");
        }
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::span<const std::uint8_t> bytes) {
        EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
        return *this;
    }
    Sha256& update(std::string_view text) {
        EVP_DigestUpdate(ctx_, text.data(), text.size());
        return *this;
    }

    Digest finish() {
        Digest out{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, out.data(), &len);
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline Digest sha256(std::span<const std::uint8_t> bytes) { return Sha256().update(bytes).finish(); }
inline Digest sha256(std::string_view text) { return Sha256().update(text).finish(); }

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xF]);
    }
    return out;
}

inline Digest digest_from_hex(std::string_view hex) {
    if (hex.size() != 64) fail(ErrorCode::FormatError, "digest hex must be 64 characters");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        fail(ErrorCode::FormatError, std::string("bad hex digit '") + c + "'");
    };
    Digest d{};
    for (std::size_t i = 0; i < 32; ++i) {
        d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
    }
    return d;
}

} // namespace swm
