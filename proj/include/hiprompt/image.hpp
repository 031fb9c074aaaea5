// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "latent_grid.hpp"

namespace hiprompt {

enum class ImageFormat { png, ppm, raw };

inline std::string to_string(ImageFormat f) {
    switch (f) {
    case ImageFormat::png: return "png";
    case ImageFormat::ppm: return "ppm";
    case ImageFormat::raw: return "raw";
    }
    return "png";
}

inline ImageFormat parse_image_format(std::string_view s) {
    if (s == "png") return ImageFormat::png;
    if (s == "ppm") return ImageFormat::ppm;
    if (s == "raw") return ImageFormat::raw;
    throw InvalidParameter("unknown image format '" + std::string(s) + "'");
}

/// Value range mapped onto [0, 255] when turning a latent into pixels.
struct DisplayRange {
    double lo = -1.0;
    double hi = 1.0;
};

/// Channel-mean grayscale, affinely mapped from `range` to [0, 255], rounded
/// and clamped, replicated to 3 channels.
inline LatentGrid latent_to_image(const LatentGrid& latent, DisplayRange range) {
    if (!(range.hi > range.lo)) throw InvalidParameter("display range must have hi > lo");
    LatentGrid img(latent.height(), latent.width(), 3);
    const double scale = 255.0 / (range.hi - range.lo);
    for (std::size_t h = 0; h < latent.height(); ++h) {
        for (std::size_t w = 0; w < latent.width(); ++w) {
            double sum = 0.0;
            for (std::size_t c = 0; c < latent.channels(); ++c) sum += latent.at(h, w, c);
            const double gray = sum / static_cast<double>(latent.channels());
            const double v = std::clamp(std::nearbyint((gray - range.lo) * scale), 0.0, 255.0);
            for (std::size_t c = 0; c < 3; ++c) img.at(h, w, c) = v;
        }
    }
    return img;
}

namespace detail {

inline std::vector<std::uint8_t> rgb_bytes(const LatentGrid& grid) {
    std::vector<std::uint8_t> out(grid.size());
    const auto v = grid.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v[i]), 0.0, 255.0));
    }
    return out;
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

inline std::vector<std::uint8_t> encode_png(const LatentGrid& grid) {
    const auto rgb = rgb_bytes(grid);
    const std::size_t W = grid.width(), H = grid.height();
    std::vector<std::uint8_t> scanlines;
    scanlines.reserve(H * (1 + 3 * W));
    for (std::size_t h = 0; h < H; ++h) {
        scanlines.push_back(0); // filter: none
        scanlines.insert(scanlines.end(), rgb.begin() + static_cast<std::ptrdiff_t>(h * 3 * W),
                         rgb.begin() + static_cast<std::ptrdiff_t>((h + 1) * 3 * W));
    }
    uLongf zlen = compressBound(static_cast<uLong>(scanlines.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, scanlines.data(), static_cast<uLong>(scanlines.size()), 9) != Z_OK) {
        throw IoError("png: deflate failed");
    }
    z.resize(zlen);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(W));
    put_be32(ihdr, static_cast<std::uint32_t>(H));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0}); // 8-bit, RGB, deflate, adaptive filtering, no interlace
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", z);
    png_chunk(out, "IEND", {});
    return out;
}

inline std::vector<std::uint8_t> encode_ppm(const LatentGrid& grid) {
    const std::string header = "P6\n" + std::to_string(grid.width()) + " " + std::to_string(grid.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const auto rgb = rgb_bytes(grid);
    out.insert(out.end(), rgb.begin(), rgb.end());
    return out;
}

} // namespace detail

/// Encodes a normalized grid (values in [0, 255]). PNG and PPM need exactly
/// 3 channels; raw writes the grid file format for any channel count.
inline std::vector<std::uint8_t> encode_image(const LatentGrid& grid, ImageFormat format) {
    if (format == ImageFormat::raw) return encode_raw_grid(grid);
    if (grid.channels() != 3) {
        throw InvalidParameter("encode_image: " + to_string(format) + " needs 3 channels, got " +
                               std::to_string(grid.channels()));
    }
    if (grid.empty()) throw InvalidParameter("encode_image: empty grid");
    return format == ImageFormat::png ? detail::encode_png(grid) : detail::encode_ppm(grid);
}

} // namespace hiprompt
