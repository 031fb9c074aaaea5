// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "latent_grid.hpp"

namespace hiprompt {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a over the bytes of `text`; stable across platforms and runs.
inline std::uint64_t stable_hash(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Derives an independent stream key from a run seed and a (stage, step, tag)
/// coordinate so that draws never depend on evaluation order.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stage, std::uint64_t step, std::string_view tag) {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ stage);
    k = splitmix64(k ^ (step * 0xD1B54A32D192ED03ULL));
    return splitmix64(k ^ stable_hash(tag));
}

/// Standard normal draws from mt19937_64 bits via Box-Muller. Both pieces are
/// fully specified, so sequences are identical across standard libraries.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t key) : m_engine(key) {}

    double next() {
        if (m_has_spare) {
            m_has_spare = false;
            return m_spare;
        }
        // u1 in (0, 1], u2 in [0, 1)
        const double u1 = (static_cast<double>(m_engine() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(m_engine() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        m_spare = r * std::sin(theta);
        m_has_spare = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 m_engine;
    double m_spare = 0.0;
    bool m_has_spare = false;
};

inline LatentGrid normal_grid(std::uint64_t key, std::size_t h, std::size_t w, std::size_t c) {
    NormalStream stream(key);
    LatentGrid g(h, w, c);
    for (double& v : g.values()) v = stream.next();
    return g;
}

} // namespace hiprompt
