// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latent_grid.hpp"

namespace hiprompt {

struct PatchOrigin {
    std::size_t row = 0;
    std::size_t col = 0;

    friend auto operator<=>(const PatchOrigin&, const PatchOrigin&) = default;
};

/// Overlapping window placements over a grid plus per-pixel overlap counts.
struct PatchLayout {
    std::size_t grid_h = 0, grid_w = 0;
    std::size_t patch_h = 0, patch_w = 0;
    std::size_t stride_h = 0, stride_w = 0;
    std::vector<PatchOrigin> origins;        // row-major, unique
    std::vector<std::uint32_t> coverage;     // grid_h * grid_w

    std::size_t count() const noexcept { return origins.size(); }
    std::uint32_t coverage_at(std::size_t h, std::size_t w) const { return coverage[h * grid_w + w]; }
};

namespace detail {

// 0, stride, 2*stride, ... while the window fits; a final window clamped to
// extent - patch is appended once if the sweep stops short of the edge.
inline std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
    std::vector<std::size_t> out;
    std::size_t o = 0;
    for (; o + patch <= extent; o += stride) out.push_back(o);
    const std::size_t last = extent - patch;
    if (out.back() != last) out.push_back(last);
    return out;
}

} // namespace detail

inline PatchLayout plan_patches(std::size_t grid_h, std::size_t grid_w, std::size_t patch_h, std::size_t patch_w,
                                std::size_t stride_h, std::size_t stride_w) {
    if (patch_h == 0 || patch_w == 0) throw InvalidParameter("plan_patches: patch size must be >= 1");
    if (patch_h > grid_h || patch_w > grid_w) {
        throw InvalidParameter("plan_patches: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                               " larger than grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
    }
    if (stride_h == 0 || stride_w == 0) throw InvalidParameter("plan_patches: stride must be >= 1");

    PatchLayout L{grid_h, grid_w, patch_h, patch_w, stride_h, stride_w, {}, {}};
    const auto rows = detail::axis_origins(grid_h, patch_h, stride_h);
    const auto cols = detail::axis_origins(grid_w, patch_w, stride_w);
    for (std::size_t r : rows) {
        for (std::size_t c : cols) L.origins.push_back({r, c});
    }
    L.coverage.assign(grid_h * grid_w, 0);
    for (const auto& o : L.origins) {
        for (std::size_t h = o.row; h < o.row + patch_h; ++h) {
            for (std::size_t w = o.col; w < o.col + patch_w; ++w) ++L.coverage[h * grid_w + w];
        }
    }
    return L;
}

/// Copy of the window at origins[i].
inline LatentGrid extract(const LatentGrid& z, const PatchLayout& layout, std::size_t i) {
    if (i >= layout.count()) {
        throw InvalidParameter("extract: patch index " + std::to_string(i) + " out of range (Q = " +
                               std::to_string(layout.count()) + ")");
    }
    if (z.height() != layout.grid_h || z.width() != layout.grid_w) {
        throw ShapeMismatch("extract: grid " + z.shape_string() + " does not match layout " +
                            std::to_string(layout.grid_h) + "x" + std::to_string(layout.grid_w));
    }
    const auto& o = layout.origins[i];
    const std::size_t C = z.channels();
    LatentGrid out(layout.patch_h, layout.patch_w, C);
    for (std::size_t h = 0; h < layout.patch_h; ++h) {
        const double* src = &z.values()[((o.row + h) * z.width() + o.col) * C];
        std::copy(src, src + layout.patch_w * C, &out.values()[h * layout.patch_w * C]);
    }
    return out;
}

/// Overlap-averaging of per-patch results. Contributions are accumulated in
/// patch-index order, then each pixel is divided by its coverage count.
inline LatentGrid fuse(const std::vector<LatentGrid>& patches, const PatchLayout& layout) {
    if (patches.size() != layout.count()) {
        throw ShapeMismatch("fuse: got " + std::to_string(patches.size()) + " patches, layout has " +
                            std::to_string(layout.count()));
    }
    if (patches.empty()) throw InvalidParameter("fuse: empty layout");
    const std::size_t C = patches.front().channels();
    for (const auto& p : patches) {
        if (p.height() != layout.patch_h || p.width() != layout.patch_w || p.channels() != C) {
            throw ShapeMismatch("fuse: patch " + p.shape_string() + " does not match layout patch " +
                                std::to_string(layout.patch_h) + "x" + std::to_string(layout.patch_w) + "x" +
                                std::to_string(C));
        }
    }
    LatentGrid acc(layout.grid_h, layout.grid_w, C);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto& o = layout.origins[i];
        for (std::size_t h = 0; h < layout.patch_h; ++h) {
            for (std::size_t w = 0; w < layout.patch_w; ++w) {
                for (std::size_t c = 0; c < C; ++c) acc.at(o.row + h, o.col + w, c) += patches[i].at(h, w, c);
            }
        }
    }
    for (std::size_t h = 0; h < layout.grid_h; ++h) {
        for (std::size_t w = 0; w < layout.grid_w; ++w) {
            const double k = layout.coverage_at(h, w);
            for (std::size_t c = 0; c < C; ++c) acc.at(h, w, c) /= k;
        }
    }
    acc.ensure_finite("fuse");
    return acc;
}

/// "i row col" lines followed by "coverage k: n" histogram lines.
inline std::string dump_layout(const PatchLayout& layout) {
    std::string out;
    for (std::size_t i = 0; i < layout.count(); ++i) {
        out += std::to_string(i) + " " + std::to_string(layout.origins[i].row) + " " +
               std::to_string(layout.origins[i].col) + "\n";
    }
    std::map<std::uint32_t, std::size_t> hist;
    for (auto k : layout.coverage) ++hist[k];
    for (const auto& [k, n] : hist) out += "coverage " + std::to_string(k) + ": " + std::to_string(n) + "\n";
    return out;
}

} // namespace hiprompt
