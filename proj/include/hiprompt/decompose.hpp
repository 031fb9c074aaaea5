// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cfloat>
#include <cmath>
#include <string>
#include <string_view>

#include "backends.hpp"
#include "latent_grid.hpp"

namespace hiprompt {

/// Low/high spatial-frequency split: low = G_sigma(z), high = z - low.
struct FreqSplit {
    LatentGrid low;
    LatentGrid high;
    double sigma = 0.0;
};

namespace detail {

// Largest power of two dividing v (v finite, nonzero).
inline double dyadic_quantum(double v) {
    int e = 0;
    double m = std::frexp(std::abs(v), &e);             // v = m * 2^e, m in [0.5, 1)
    auto bits = static_cast<std::uint64_t>(std::ldexp(m, 53)); // exact: 53-bit significand
    int tz = 0;
    while ((bits & 1U) == 0U) {
        bits >>= 1U;
        ++tz;
    }
    return std::ldexp(1.0, e - 53 + tz);
}

// Rounds `low` onto a power-of-two lattice q that divides z and is fine
// enough that z, low and z - low all fit in 53 bits of q. Then z - low is
// exact and low + (z - low) == z bit-for-bit; the nudge is at most q / 2,
// about 2^-52 (|z| + |low|).
inline double snap_low(double z, double low) {
    if (z == 0.0) return low;
    int e = 0;
    (void)std::frexp(std::abs(z) + std::abs(low), &e);
    const double q = std::min(dyadic_quantum(z), std::ldexp(1.0, e - 52));
    return std::nearbyint(low / q) * q;
}

} // namespace detail

/// low + high == z bit-for-bit; low differs from the plain blur by at most
/// one unit in the last place of |z| + |G_sigma(z)|.
inline FreqSplit split(const LatentGrid& z, double sigma) {
    FreqSplit out{gaussian_blur(z, sigma), LatentGrid(z.height(), z.width(), z.channels()), sigma};
    auto zs = z.values();
    auto lo = out.low.values();
    auto hi = out.high.values();
    for (std::size_t i = 0; i < zs.size(); ++i) {
        lo[i] = detail::snap_low(zs[i], lo[i]);
        hi[i] = zs[i] - lo[i];
    }
    return out;
}

/// High-band share of the total band energy, sum(high^2) / (sum(high^2) + sum(low^2)).
inline double high_energy_fraction(const FreqSplit& s) {
    double hi = 0.0, lo = 0.0;
    for (double v : s.high.values()) hi += v * v;
    for (double v : s.low.values()) lo += v * v;
    return hi + lo == 0.0 ? 0.0 : hi / (hi + lo);
}

enum class CombineMode { filtered_sum, plain_sum };

inline std::string to_string(CombineMode m) { return m == CombineMode::filtered_sum ? "filtered_sum" : "plain_sum"; }

inline CombineMode parse_combine_mode(std::string_view s) {
    if (s == "filtered_sum") return CombineMode::filtered_sum;
    if (s == "plain_sum") return CombineMode::plain_sum;
    throw InvalidParameter("unknown combine_mode '" + std::string(s) + "'");
}

struct GuidanceConfig {
    double scale = 7.5;
    std::string negative_text;
    double sigma = 2.0;
    CombineMode combine_mode = CombineMode::filtered_sum;
};

/// Classifier-free guidance: eps_u + g (eps_c - eps_u). g = 1 skips the
/// unconditional call.
inline LatentGrid guided_eps(const DenoiserBackend& backend, const LatentGrid& z, std::size_t t, const std::string& text,
                             const GuidanceConfig& cfg) {
    LatentGrid cond = backend.predict_eps(z, t, text);
    if (!cond.same_shape(z)) {
        throw ShapeMismatch("denoiser returned " + cond.shape_string() + " for input " + z.shape_string());
    }
    if (cfg.scale == 1.0) return cond;
    const LatentGrid uncond = backend.predict_eps(z, t, cfg.negative_text);
    if (!uncond.same_shape(z)) {
        throw ShapeMismatch("denoiser returned " + uncond.shape_string() + " for input " + z.shape_string());
    }
    LatentGrid out = uncond;
    auto o = out.values();
    auto c = cond.values();
    auto u = uncond.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + cfg.scale * (c[i] - u[i]);
    out.ensure_finite("guided_eps");
    return out;
}

/// filtered_sum: low band of the global estimate plus high band of the local
/// one. plain_sum: the two estimates added as-is.
inline LatentGrid combine_eps(const LatentGrid& eps_global, const LatentGrid& eps_local, const GuidanceConfig& cfg) {
    require_same_shape(eps_global, eps_local, "combine_eps");
    if (cfg.combine_mode == CombineMode::plain_sum) return eps_global + eps_local;
    const FreqSplit g = split(eps_global, cfg.sigma);
    const FreqSplit l = split(eps_local, cfg.sigma);
    return g.low + l.high;
}

} // namespace hiprompt
