#pragma once

// Little-endian byte buffers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swm/digest.hpp"
#include "swm/error.hpp"

namespace swm::bin {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
public:
    template <class Int>
    void put_int(Int v) {
        static_assert(std::is_integral_v<Int>);
        append(&v, sizeof v);
    }
    void put_f32(float v) { append(&v, sizeof v); }
    void put_f32s(std::span<const float> v) { append(v.data(), v.size_bytes()); }
    void put_bytes(std::span<const std::uint8_t> b) { append(b.data(), b.size()); }
    void put_text(std::string_view s) { append(s.data(), s.size()); }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

    /// Appends the SHA-256 of everything written so far and returns it.
    Digest seal() {
        Digest d = sha256(buf_);
        put_bytes(d);
        return d;
    }

private:
    void append(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes, std::string what = "file")
        : data_(bytes), what_(std::move(what)) {}

    template <class Int>
    Int get_int() {
        Int v{};
        take(&v, sizeof v);
        return v;
    }
    float get_f32() {
        float v{};
        take(&v, sizeof v);
        return v;
    }
    void get_f32s(std::span<float> out) { take(out.data(), out.size_bytes()); }
    std::string get_text(std::size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }
    Digest get_digest() {
        Digest d{};
        take(d.data(), d.size());
        return d;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void take(void* out, std::size_t n) {
        if (n > remaining()) fail(ErrorCode::FormatError, what_ + " is truncated");
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

/// Verifies and strips a trailing SHA-256 over the preceding bytes.
inline std::span<const std::uint8_t> verify_trailer(std::span<const std::uint8_t> bytes, const std::string& what) {
    if (bytes.size() < 32) fail(ErrorCode::FormatError, what + " is truncated");
    auto body = bytes.first(bytes.size() - 32);
    Digest expect = sha256(body);
    if (std::memcmp(expect.data(), bytes.data() + body.size(), 32) != 0) {
        fail(ErrorCode::ChecksumError, what + " checksum mismatch");
    }
    return body;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

} // namespace swm::bin
