#ifndef TCM_IMAGE_IO_HPP
#define TCM_IMAGE_IO_HPP

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace tcm {

namespace detail {

inline double luma(double r, double g, double b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Interleaved samples (1 or 3 channels, 8 or 16 bits big-endian) to a
// normalized grayscale image.
inline Image samples_to_image(const std::vector<std::uint8_t>& bytes, int width, int height,
                              int channels, int bytes_per_sample, double maxval) {
    std::vector<double> data(static_cast<std::size_t>(width) * height);
    auto sample = [&](std::size_t k) -> double {
        if (bytes_per_sample == 1) {
            return bytes[k] / maxval;
        }
        return ((bytes[2 * k] << 8) | bytes[2 * k + 1]) / maxval;
    };
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (channels == 1) {
            data[i] = sample(i);
        } else {
            data[i] = luma(sample(3 * i), sample(3 * i + 1), sample(3 * i + 2));
        }
        data[i] = std::clamp(data[i], 0.0, 1.0);
    }
    return Image(width, height, std::move(data));
}

struct PngReadState {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* file = nullptr;
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;

    ~PngReadState() {
        if (png) {
            png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        }
        if (file) {
            std::fclose(file);
        }
    }
};

// Returns false on a libpng error; all state lives behind `s` so nothing
// modified after setjmp is read from a stale register.
inline bool decode_png(PngReadState* s) {
    s->png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!s->png) {
        return false;
    }
    s->info = png_create_info_struct(s->png);
    if (!s->info) {
        return false;
    }
    if (setjmp(png_jmpbuf(s->png))) {
        return false;
    }
    png_init_io(s->png, s->file);
    png_read_info(s->png, s->info);

    const int color = png_get_color_type(s->png, s->info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(s->png);
    }
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(s->png, s->info) < 8) {
        png_set_expand_gray_1_2_4_to_8(s->png);
    }
    png_set_strip_alpha(s->png);
    png_read_update_info(s->png, s->info);

    s->width = static_cast<int>(png_get_image_width(s->png, s->info));
    s->height = static_cast<int>(png_get_image_height(s->png, s->info));
    s->channels = png_get_channels(s->png, s->info);
    s->bit_depth = png_get_bit_depth(s->png, s->info);
    const std::size_t stride = png_get_rowbytes(s->png, s->info);
    s->pixels.resize(stride * s->height);
    s->rows.resize(s->height);
    for (int y = 0; y < s->height; ++y) {
        s->rows[y] = s->pixels.data() + stride * y;
    }
    png_read_image(s->png, s->rows.data());
    png_read_end(s->png, nullptr);
    return true;
}

inline Image read_png(const std::filesystem::path& path) {
    auto s = std::make_unique<PngReadState>();
    s->file = std::fopen(path.string().c_str(), "rb");
    if (!s->file) {
        throw ValidationError("cannot open " + path.string());
    }
    if (!decode_png(s.get())) {
        throw ValidationError("malformed PNG: " + path.string());
    }
    if (s->channels != 1 && s->channels != 3) {
        throw ValidationError("unsupported PNG channel layout in " + path.string());
    }
    const int bytes_per_sample = s->bit_depth == 16 ? 2 : 1;
    const double maxval = s->bit_depth == 16 ? 65535.0 : 255.0;
    return samples_to_image(s->pixels, s->width, s->height, s->channels, bytes_per_sample, maxval);
}

// Netpbm header token reader; skips whitespace and '#' comments.
inline long read_pnm_token(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') {
                ++pos;
            }
        } else if (std::isspace(buf[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    long value = 0;
    std::size_t digits = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
        value = value * 10 + (buf[pos] - '0');
        ++pos;
        if (++digits > 9) {
            return -1;
        }
    }
    return digits == 0 ? -1 : value;
}

inline Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), {});
    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
        throw ValidationError("not a binary PGM/PPM file: " + path.string());
    }
    const int channels = buf[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const long width = read_pnm_token(buf, pos);
    const long height = read_pnm_token(buf, pos);
    const long maxval = read_pnm_token(buf, pos);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535 || pos >= buf.size()) {
        throw ValidationError("malformed PNM header: " + path.string());
    }
    ++pos;  // single whitespace byte before the raster
    const int bytes_per_sample = maxval < 256 ? 1 : 2;
    const std::size_t need =
        static_cast<std::size_t>(width) * height * channels * bytes_per_sample;
    if (buf.size() - pos < need) {
        throw ValidationError("truncated PNM raster: " + path.string());
    }
    std::vector<std::uint8_t> raster(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                     buf.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return samples_to_image(raster, static_cast<int>(width), static_cast<int>(height), channels,
                            bytes_per_sample, static_cast<double>(maxval));
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}

/// Loads an 8/16-bit PNG or binary PGM/PPM, detected by magic bytes.
/// Color is reduced to luma; the result is normalized to [0,1].
inline Image read_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) {
        throw ValidationError("cannot open " + path.string());
    }
    char magic[8] = {};
    probe.read(magic, sizeof magic);
    if (probe.gcount() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(magic), 0, 8) == 0) {
        return detail::read_png(path);
    }
    if (probe.gcount() >= 2 && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        return detail::read_pnm(path);
    }
    throw ValidationError("unrecognized image format: " + path.string());
}

/// Writes an 8-bit grayscale PNG; values are clamped to [0,1] and scaled.
inline void write_png(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        bytes[i] = detail::to_byte(img[i]);
    }
    png_image desc{};
    desc.version = PNG_IMAGE_VERSION;
    desc.width = static_cast<png_uint_32>(img.width());
    desc.height = static_cast<png_uint_32>(img.height());
    desc.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&desc, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        const std::string msg = desc.message;
        png_image_free(&desc);
        throw RuntimeFailure("cannot write " + path.string() + ": " + msg);
    }
}

/// Writes an 8-bit binary PGM (P5).
inline void write_pgm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw RuntimeFailure("cannot write " + path.string());
    }
    out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (std::size_t i = 0; i < img.size(); ++i) {
        out.put(static_cast<char>(detail::to_byte(img[i])));
    }
    if (!out) {
        throw RuntimeFailure("short write to " + path.string());
    }
}

inline void write_image(const Image& img, const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pgm") {
        write_pgm(img, path);
    } else {
        write_png(img, path);
    }
}

}

#endif
