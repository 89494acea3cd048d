#pragma once

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "swm/binio.hpp"
#include "swm/error.hpp"

namespace swm {

/// 8-bit raster, row-major, top-left origin, interleaved channels.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> data;

    ImageU8() = default;
    ImageU8(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
        if (w <= 0 || h <= 0 || (c != 1 && c != 3)) {
            fail(ErrorCode::InvalidArgument, "image needs positive size and 1 or 3 channels");
        }
    }

    std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * channels; }
    std::uint8_t* px(int x, int y) { return data.data() + offset(x, y); }
    const std::uint8_t* px(int x, int y) const { return data.data() + offset(x, y); }

    bool operator==(const ImageU8&) const = default;
};

namespace detail {

struct PngReadSource {
    const std::vector<std::uint8_t>* bytes;
    std::size_t pos;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
    auto* slot = static_cast<std::string*>(png_get_error_ptr(png));
    if (slot != nullptr) *slot = msg;
    png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

inline void png_read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
    if (src->pos + n > src->bytes->size()) png_error(png, "unexpected end of PNG data");
    std::copy_n(src->bytes->data() + src->pos, n, out);
    src->pos += n;
}

inline void png_write_fn(png_structp png, png_bytep in, png_size_t n) {
    auto* sink = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    sink->insert(sink->end(), in, in + n);
}
inline void png_flush_fn(png_structp) {}

} // namespace detail

/// Decodes 8-bit gray or RGB PNG bytes. Palette images are expanded to RGB; alpha is dropped.
inline ImageU8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name = "PNG") {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        fail(ErrorCode::DecodeError, name + ": not a PNG file");
    }
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    png_infop info = png_create_info_struct(png);
    detail::PngReadSource src{&bytes, 0};
    ImageU8 img;
    std::vector<png_bytep> rows;
    int depth = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        if (err.rfind("depth:", 0) == 0) {
            fail(ErrorCode::UnsupportedDepth, name + ": unsupported bit depth " + err.substr(6));
        }
        fail(ErrorCode::DecodeError, name + ": " + err);
    }
    png_set_read_fn(png, &src, detail::png_read_fn);
    png_read_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    } else if (depth != 8) {
        err = "depth:" + std::to_string(depth);
        png_longjmp(png, 1);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = png_get_channels(png, info);
    img = ImageU8(w, h, ch == 1 ? 1 : 3);
    rows.resize(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = img.px(0, y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// Encodes with fixed compression settings and no time chunk, so equal pixels give equal bytes.
inline std::vector<std::uint8_t> encode_png(const ImageU8& img) {
    std::vector<std::uint8_t> out;
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    png_infop info = png_create_info_struct(png);
    std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::Io, "PNG encode failed: " + err);
    }
    png_set_write_fn(png, &out, detail::png_write_fn, detail::png_flush_fn);
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.px(0, y);
    png_set_rows(png, info, const_cast<png_bytepp>(rows.data()));
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline ImageU8 load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::Io, "missing file " + path.string());
    return decode_png(bin::read_file(path), path.string());
}

inline void save_png(const ImageU8& img, const std::filesystem::path& path) {
    bin::write_file(path, encode_png(img));
}

} // namespace swm
