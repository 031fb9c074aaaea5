// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "backends.hpp"
#include "decompose.hpp"
#include "prompts.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tiling.hpp"

namespace hiprompt {

struct SelftestOptions {
    // Fault injection: scales kernel weights after normalization.
    double kernel_gain = 1.0;
};

struct SelftestCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelftestReport {
    std::vector<SelftestCheck> checks;

    bool passed() const {
        for (const auto& c : checks) {
            if (!c.passed) return false;
        }
        return true;
    }

    std::string text() const {
        std::string out;
        for (const auto& c : checks) out += (c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
        out += passed() ? "selftest: all checks passed\n" : "selftest: FAILED\n";
        return out;
    }
};

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Float32-valued grid, the precision fixtures are stored at.
inline LatentGrid float_grid(std::uint64_t key, std::size_t h, std::size_t w, std::size_t c) {
    LatentGrid g = normal_grid(key, h, w, c);
    for (double& v : g.values()) v = static_cast<float>(v);
    return g;
}

inline SelftestCheck check_reconstruction() {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 8; ++k) {
        const LatentGrid z = float_grid(stream_key(k, 1, 0, "selftest"), 16, 16, 2);
        for (double sigma : {0.0, 0.5, 2.0, 5.0}) {
            const FreqSplit s = split(z, sigma);
            worst = std::max(worst, max_abs_diff(z, s.low + s.high));
        }
    }
    double dc = 0.0;
    const LatentGrid c(12, 9, 3, 0.37);
    for (double sigma : {0.5, 2.0, 5.0}) {
        const FreqSplit s = split(c, sigma);
        dc = std::max(dc, std::max(max_abs_diff(s.low, c), max_abs_diff(s.high, LatentGrid(12, 9, 3))));
    }
    const bool ok = worst == 0.0 && dc <= 1e-12;
    return {"reconstruction identity", ok,
            "max|z-(low+high)| = " + fmt("%.3g", worst) + ", DC-gain error = " + fmt("%.3g", dc)};
}

inline SelftestCheck check_partition_of_unity() {
    double worst_weight = 0.0, worst_roundtrip = 0.0;
    const std::size_t dims[][6] = {{64, 64, 32, 32, 16, 16}, {40, 100, 24, 64, 12, 32}, {17, 23, 17, 5, 1, 3}};
    std::uint64_t k = 0;
    for (const auto& d : dims) {
        const PatchLayout L = plan_patches(d[0], d[1], d[2], d[3], d[4], d[5]);
        std::vector<LatentGrid> ones(L.count(), LatentGrid(L.patch_h, L.patch_w, 1, 1.0));
        const LatentGrid sum = fuse(ones, L);
        for (double v : sum.values()) worst_weight = std::max(worst_weight, std::abs(v - 1.0));
        const LatentGrid z = normal_grid(stream_key(++k, 2, 0, "selftest"), d[0], d[1], 2);
        std::vector<LatentGrid> parts;
        for (std::size_t i = 0; i < L.count(); ++i) parts.push_back(extract(z, L, i));
        worst_roundtrip = std::max(worst_roundtrip, max_abs_diff(fuse(parts, L), z));
    }
    const bool ok = worst_weight == 0.0 && worst_roundtrip <= 1e-9;
    return {"fusion partition of unity", ok,
            "weight error = " + fmt("%.3g", worst_weight) + ", extract/fuse error = " + fmt("%.3g", worst_roundtrip)};
}

inline SelftestCheck check_sampler_moments() {
    // Near-zero terminal SNR so the N(0, I) start adds no visible mean bias.
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02, ScheduleKind::linear);
    AnalyticWorldSpec world;
    world.data_std = 0.5;
    world.channels = 1;
    world.mu_overrides["selftest"] = 0.3;
    const auto ladder = uniform_ladder(s.steps(), s.steps());
    const std::size_t samples = 200;
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < samples; ++k) {
        LatentGrid z = normal_grid(stream_key(k, 3, 0, "selftest"), 4, 4, 1);
        for (std::size_t i = 0; i < ladder.size(); ++i) {
            const LatentGrid eps = analytic_predict_eps(world, z, ladder[i], "selftest", s);
            z = ddim_step(z, eps, ladder[i], ladder_prev(ladder, i), s);
        }
        for (double v : z.values()) {
            sum += v;
            sum2 += v * v;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    const double se = std::sqrt(var / static_cast<double>(n));
    const bool ok = std::abs(mean - 0.3) <= 3.0 * se && std::abs(var - 0.25) <= 0.025;
    return {"analytic sampler moments", ok, "mean = " + fmt("%.4f", mean) + ", variance = " + fmt("%.4f", var)};
}

inline SelftestCheck check_refinement() {
    const TokenScores scores{{"palm", 0.9}, {"tree", 0.8}, {"corgi", 0.1}, {"dog", 0.2}};
    const auto r1 = refine_caption("a palm tree corgi dog", scores, "global");
    const auto r2 = refine_caption("an image of background", {}, "global");
    const auto r3 = refine_caption("red fox snow", {{"red", 0.4}, {"fox", 0.4}, {"snow", 0.4}}, "global");
    const auto again = refine_caption(r1.text, scores, "global");
    const bool ok = r1.text == "palm tree" && r1.provenance == Provenance::mllm_refined &&
                    r2.text == "global" && r2.provenance == Provenance::fallback_global && r3.text == "red fox snow" &&
                    again.text == r1.text;
    return {"n-gram refinement fixtures", ok, "corgi/palm -> \"" + r1.text + "\""};
}

} // namespace detail

/// Embedded invariant suite. Output text is deterministic.
inline SelftestReport selftest(const SelftestOptions& opts = {}) {
    struct GainGuard {
        double saved;
        explicit GainGuard(double g) : saved(detail::kernel_gain_fault()) { detail::kernel_gain_fault() = g; }
        ~GainGuard() { detail::kernel_gain_fault() = saved; }
    } guard(opts.kernel_gain);

    SelftestReport r;
    r.checks.push_back(detail::check_reconstruction());
    r.checks.push_back(detail::check_partition_of_unity());
    r.checks.push_back(detail::check_sampler_moments());
    r.checks.push_back(detail::check_refinement());
    return r;
}

} // namespace hiprompt
