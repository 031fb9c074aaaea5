// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace hiprompt {

/// Dense H x W x C field of doubles stored row-major in (h, w, c) order.
/// Every constructor and every library operation guarantees finite values.
class LatentGrid {
public:
    LatentGrid() = default;

    LatentGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0)
        : m_height(height), m_width(width), m_channels(channels),
          m_data(height * width * channels, fill) {
        if (!std::isfinite(fill)) {
            throw InvalidParameter("LatentGrid: fill value must be finite");
        }
    }

    LatentGrid(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data)
        : m_height(height), m_width(width), m_channels(channels), m_data(std::move(data)) {
        if (m_data.size() != height * width * channels) {
            throw ShapeMismatch("LatentGrid: data length " + std::to_string(m_data.size()) +
                                " != " + std::to_string(height) + "x" + std::to_string(width) + "x" +
                                std::to_string(channels));
        }
        ensure_finite("LatentGrid");
    }

    std::size_t height() const noexcept { return m_height; }
    std::size_t width() const noexcept { return m_width; }
    std::size_t channels() const noexcept { return m_channels; }
    std::size_t size() const noexcept { return m_data.size(); }
    bool empty() const noexcept { return m_data.empty(); }

    double& at(std::size_t h, std::size_t w, std::size_t c) noexcept {
        return m_data[(h * m_width + w) * m_channels + c];
    }
    double at(std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return m_data[(h * m_width + w) * m_channels + c];
    }

    std::span<double> values() noexcept { return m_data; }
    std::span<const double> values() const noexcept { return m_data; }

    bool same_shape(const LatentGrid& other) const noexcept {
        return m_height == other.m_height && m_width == other.m_width && m_channels == other.m_channels;
    }

    std::string shape_string() const {
        return std::to_string(m_height) + "x" + std::to_string(m_width) + "x" + std::to_string(m_channels);
    }

    void ensure_finite(const char* where) const {
        for (double v : m_data) {
            if (!std::isfinite(v)) {
                throw InvariantFailure(std::string(where) + ": non-finite value in grid");
            }
        }
    }

    friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

private:
    std::size_t m_height = 0;
    std::size_t m_width = 0;
    std::size_t m_channels = 0;
    std::vector<double> m_data;
};

inline void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* where) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(where) + ": shape " + a.shape_string() + " vs " + b.shape_string());
    }
}

/// out = a * x + b * y, elementwise.
inline LatentGrid axpby(double a, const LatentGrid& x, double b, const LatentGrid& y) {
    require_same_shape(x, y, "axpby");
    LatentGrid out(x.height(), x.width(), x.channels());
    auto xs = x.values();
    auto ys = y.values();
    auto os = out.values();
    for (std::size_t i = 0; i < os.size(); ++i) {
        os[i] = a * xs[i] + b * ys[i];
    }
    out.ensure_finite("axpby");
    return out;
}

inline LatentGrid operator+(const LatentGrid& x, const LatentGrid& y) {
    require_same_shape(x, y, "add");
    LatentGrid out = x;
    auto os = out.values();
    auto ys = y.values();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] += ys[i];
    out.ensure_finite("add");
    return out;
}

inline LatentGrid operator-(const LatentGrid& x, const LatentGrid& y) {
    require_same_shape(x, y, "subtract");
    LatentGrid out = x;
    auto os = out.values();
    auto ys = y.values();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] -= ys[i];
    out.ensure_finite("subtract");
    return out;
}

inline LatentGrid operator*(double s, const LatentGrid& x) {
    LatentGrid out = x;
    for (double& v : out.values()) v *= s;
    out.ensure_finite("scale");
    return out;
}

inline double max_abs_diff(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    auto as = a.values();
    auto bs = b.values();
    for (std::size_t i = 0; i < as.size(); ++i) m = std::max(m, std::abs(as[i] - bs[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Gaussian filtering

/// Symmetric, non-negative, unit-sum 1-D filter of 2 * radius + 1 taps.
struct Kernel1D {
    std::size_t radius = 0;
    std::vector<double> weights{1.0};

    double tap(std::ptrdiff_t offset) const { return weights[static_cast<std::size_t>(offset + static_cast<std::ptrdiff_t>(radius))]; }
};

namespace detail {

// Test hook: scales kernel weights after normalization. Only selftest's fault
// injection sets this to anything other than 1.
inline double& kernel_gain_fault() {
    static double gain = 1.0;
    return gain;
}

} // namespace detail

/// Sampled Gaussian truncated at ceil(3 sigma) and renormalized to unit sum.
inline Kernel1D gaussian_kernel(double sigma) {
    if (!std::isfinite(sigma) || sigma < 0.0) {
        throw InvalidParameter("gaussian_kernel: sigma must be finite and >= 0, got " + std::to_string(sigma));
    }
    Kernel1D k;
    if (sigma == 0.0) {
        k.weights = {detail::kernel_gain_fault()};
        return k;
    }
    k.radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
    const auto r = static_cast<std::ptrdiff_t>(k.radius);
    k.weights.assign(2 * k.radius + 1, 0.0);
    const double denom = 2.0 * sigma * sigma;
    for (std::ptrdiff_t i = -r; i <= r; ++i) {
        k.weights[static_cast<std::size_t>(i + r)] = std::exp(-static_cast<double>(i * i) / denom);
    }
    // Pairwise from the tails inward so the sum is symmetric in rounding.
    double sum = k.weights[k.radius];
    for (std::size_t i = 1; i <= k.radius; ++i) {
        sum += k.weights[k.radius - i] + k.weights[k.radius + i];
    }
    for (double& w : k.weights) w = w / sum * detail::kernel_gain_fault();
    return k;
}

/// Mirror an index into [0, n) without repeating the edge sample
/// (..., 2, 1, | 0, 1, 2, ..., n-1, | n-2, ...).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i = std::abs(i) % period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

namespace detail {

inline std::vector<std::size_t> reflect_table(std::size_t n, std::size_t radius) {
    std::vector<std::size_t> table(n + 2 * radius);
    for (std::size_t j = 0; j < table.size(); ++j) {
        table[j] = reflect_index(static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(radius), n);
    }
    return table;
}

} // namespace detail

/// Separable Gaussian blur (horizontal then vertical) with reflect padding.
inline LatentGrid gaussian_blur(const LatentGrid& grid, double sigma) {
    const Kernel1D kernel = gaussian_kernel(sigma);
    if (grid.empty()) return grid;
    const std::size_t H = grid.height(), W = grid.width(), C = grid.channels();
    const std::size_t r = kernel.radius;

    const auto cols = detail::reflect_table(W, r);
    const auto rows = detail::reflect_table(H, r);

    LatentGrid tmp(H, W, C);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < kernel.weights.size(); ++k) {
                    acc += kernel.weights[k] * grid.at(h, cols[w + k], c);
                }
                tmp.at(h, w, c) = acc;
            }
        }
    }

    LatentGrid out(H, W, C);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < kernel.weights.size(); ++k) {
                    acc += kernel.weights[k] * tmp.at(rows[h + k], w, c);
                }
                out.at(h, w, c) = acc;
            }
        }
    }

    // Rounding can push a convex combination one ulp outside the input range.
    if (detail::kernel_gain_fault() == 1.0) {
        std::vector<double> lo(C, std::numeric_limits<double>::infinity());
        std::vector<double> hi(C, -std::numeric_limits<double>::infinity());
        const auto in = grid.values();
        for (std::size_t i = 0; i < in.size(); ++i) {
            lo[i % C] = std::min(lo[i % C], in[i]);
            hi[i % C] = std::max(hi[i % C], in[i]);
        }
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(o[i], lo[i % C], hi[i % C]);
    }
    out.ensure_finite("gaussian_blur");
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

enum class ResampleMethod { nearest, bilinear, bicubic };

namespace detail {

struct Taps {
    std::vector<std::size_t> index;
    std::vector<double> weight;
};

inline double catmull_rom(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

// Per output index, the source samples and weights along one axis using
// half-pixel-centred coordinates; out-of-range taps are clamped to the edge.
inline std::vector<Taps> axis_taps(std::size_t in, std::size_t out, ResampleMethod method) {
    std::vector<Taps> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const auto clamp_idx = [in](std::ptrdiff_t i) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1));
    };
    for (std::size_t o = 0; o < out; ++o) {
        Taps& t = taps[o];
        if (in == out) {
            t.index = {o};
            t.weight = {1.0};
            continue;
        }
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        switch (method) {
        case ResampleMethod::nearest: {
            const auto i = static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(o) + 0.5) * scale));
            t.index = {clamp_idx(i)};
            t.weight = {1.0};
            break;
        }
        case ResampleMethod::bilinear: {
            const double f = std::floor(src);
            const double frac = src - f;
            const auto i0 = static_cast<std::ptrdiff_t>(f);
            t.index = {clamp_idx(i0), clamp_idx(i0 + 1)};
            t.weight = {1.0 - frac, frac};
            break;
        }
        case ResampleMethod::bicubic: {
            const double f = std::floor(src);
            const double frac = src - f;
            const auto i0 = static_cast<std::ptrdiff_t>(f);
            for (std::ptrdiff_t k = -1; k <= 2; ++k) {
                t.index.push_back(clamp_idx(i0 + k));
                t.weight.push_back(catmull_rom(static_cast<double>(k) - frac));
            }
            break;
        }
        }
    }
    return taps;
}

} // namespace detail

/// Separable per-channel resampling to new_h x new_w. Bicubic is Catmull-Rom.
inline LatentGrid resample(const LatentGrid& grid, std::size_t new_h, std::size_t new_w,
                           ResampleMethod method = ResampleMethod::bicubic) {
    if (new_h == 0 || new_w == 0) {
        throw InvalidParameter("resample: target size must be >= 1 in both axes");
    }
    if (grid.empty()) {
        throw InvalidParameter("resample: source grid is empty");
    }
    const std::size_t C = grid.channels();
    const auto row_taps = detail::axis_taps(grid.height(), new_h, method);
    const auto col_taps = detail::axis_taps(grid.width(), new_w, method);

    LatentGrid tmp(new_h, grid.width(), C);
    for (std::size_t h = 0; h < new_h; ++h) {
        const auto& t = row_taps[h];
        for (std::size_t w = 0; w < grid.width(); ++w) {
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * grid.at(t.index[k], w, c);
                tmp.at(h, w, c) = acc;
            }
        }
    }
    LatentGrid out(new_h, new_w, C);
    for (std::size_t h = 0; h < new_h; ++h) {
        for (std::size_t w = 0; w < new_w; ++w) {
            const auto& t = col_taps[w];
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * tmp.at(h, t.index[k], c);
                out.at(h, w, c) = acc;
            }
        }
    }
    out.ensure_finite("resample");
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Population mean and variance over every entry (Welford).
inline Moments moments(const LatentGrid& grid) {
    if (grid.empty()) throw InvalidParameter("moments: empty grid");
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (double v : grid.values()) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    return {mean, m2 / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Raw fixture format: LE u32 h, w, c then h*w*c LE float32, row-major.

inline std::vector<std::uint8_t> encode_raw_grid(const LatentGrid& grid) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(12 + grid.size() * 4);
    const auto put32 = [&bytes](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put32(static_cast<std::uint32_t>(grid.height()));
    put32(static_cast<std::uint32_t>(grid.width()));
    put32(static_cast<std::uint32_t>(grid.channels()));
    for (double v : grid.values()) put32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return bytes;
}

inline LatentGrid decode_raw_grid(std::span<const std::uint8_t> bytes) {
    const auto get32 = [&bytes](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
        return v;
    };
    if (bytes.size() < 12) throw IoError("raw grid: truncated header");
    const std::size_t h = get32(0), w = get32(4), c = get32(8);
    const std::size_t n = h * w * c;
    if (bytes.size() != 12 + 4 * n) {
        throw IoError("raw grid: expected " + std::to_string(12 + 4 * n) + " bytes for " + std::to_string(h) + "x" +
                      std::to_string(w) + "x" + std::to_string(c) + ", got " + std::to_string(bytes.size()));
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(get32(12 + 4 * i));
    return LatentGrid(h, w, c, std::move(data));
}

inline void write_raw_grid(const std::string& path, const LatentGrid& grid) {
    const auto bytes = encode_raw_grid(grid);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path);
}

inline LatentGrid read_raw_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_raw_grid(bytes);
}

} // namespace hiprompt
