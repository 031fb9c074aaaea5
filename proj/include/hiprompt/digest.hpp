// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "latent_grid.hpp"

namespace hiprompt {

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// SHA-256 of the shape (3 x LE u64) followed by the values as LE float64.
inline std::string grid_digest(const LatentGrid& grid) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(24 + 8 * grid.size());
    const auto put64 = [&bytes](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put64(grid.height());
    put64(grid.width());
    put64(grid.channels());
    for (double v : grid.values()) put64(std::bit_cast<std::uint64_t>(v));
    return sha256_hex(bytes);
}

} // namespace hiprompt
