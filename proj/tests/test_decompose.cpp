// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "hiprompt/decompose.hpp"
#include "hiprompt/rng.hpp"

using namespace hiprompt;

namespace {

LatentGrid float_grid(std::uint64_t key, std::size_t h, std::size_t w, std::size_t c, double scale = 1.0) {
    LatentGrid g = normal_grid(key, h, w, c);
    for (double& v : g.values()) v = static_cast<float>(v * scale);
    return g;
}

// Same brute-force 2-D convolution as the filter tests, kept local.
LatentGrid oracle_blur(const LatentGrid& z, double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k;
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += k.emplace_back(std::exp(-0.5 * i * i / (sigma * sigma)));
    for (double& v : k) v /= sum;
    const auto mirror = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    };
    const int H = static_cast<int>(z.height()), W = static_cast<int>(z.width());
    LatentGrid out(z.height(), z.width(), z.channels());
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            for (std::size_t c = 0; c < z.channels(); ++c) {
                double acc = 0.0;
                for (int dy = -r; dy <= r; ++dy) {
                    for (int dx = -r; dx <= r; ++dx) acc += k[dy + r] * k[dx + r] * z.at(mirror(h + dy, H), mirror(w + dx, W), c);
                }
                out.at(h, w, c) = acc;
            }
        }
    }
    return out;
}

// Returns fixed grids per text so guidance arithmetic is checkable.
class TableDenoiser final : public DenoiserBackend {
public:
    std::map<std::string, LatentGrid> table;
    mutable int calls = 0;
    Capability capability() const override { return {4, 4, 1}; }
    LatentGrid predict_eps(const LatentGrid&, std::size_t, const std::string& text) const override {
        ++calls;
        return table.at(text);
    }
};

} // namespace

TEST(Split, SigmaZeroAndConstant) {
    const LatentGrid z = float_grid(1, 9, 9, 2);
    const FreqSplit s0 = split(z, 0.0);
    EXPECT_EQ(s0.low, z);
    EXPECT_EQ(s0.high, LatentGrid(9, 9, 2));
    const LatentGrid c(7, 5, 3, 0.625);
    const FreqSplit sc = split(c, 2.0);
    EXPECT_EQ(sc.low, c);
    EXPECT_EQ(sc.high, LatentGrid(7, 5, 3));
}

TEST(Split, BitExactReconstruction) {
    for (std::uint64_t k = 0; k < 40; ++k) {
        const LatentGrid z = float_grid(k, 1 + k % 17, 1 + (k * 5) % 19, 1 + k % 4, k % 3 ? 1.0 : 100.0);
        for (double sigma : {0.0, 0.5, 2.0, 5.0}) {
            const FreqSplit s = split(z, sigma);
            ASSERT_EQ(s.low + s.high, z) << k << " " << sigma;
        }
    }
}

TEST(Split, HighMatchesBruteForce) {
    const LatentGrid z = float_grid(3, 16, 16, 4);
    const FreqSplit s = split(z, 2.0);
    EXPECT_LE(max_abs_diff(s.high, z - oracle_blur(z, 2.0)), 1e-6);
    EXPECT_LE(max_abs_diff(s.low, oracle_blur(z, 2.0)), 1e-6);
    EXPECT_THROW(split(z, -0.5), InvalidParameter);
}

TEST(Split, HighEnergyGrowsWithSigma) {
    const LatentGrid z = float_grid(4, 32, 32, 2);
    double prev = -1.0;
    for (double sigma : {0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0}) {
        const double f = high_energy_fraction(split(z, sigma));
        EXPECT_GE(f, prev) << sigma;
        prev = f;
    }
    EXPECT_EQ(high_energy_fraction(split(z, 0.0)), 0.0);
}

TEST(CombineEps, FilteredSumIdentityAndHighPass) {
    GuidanceConfig cfg;
    const LatentGrid e = float_grid(5, 12, 12, 4);
    EXPECT_EQ(combine_eps(e, e, cfg), e);
    const LatentGrid zero(12, 12, 4);
    EXPECT_EQ(combine_eps(zero, e, cfg), split(e, 2.0).high);
    cfg.combine_mode = CombineMode::plain_sum;
    EXPECT_EQ(combine_eps(e, e, cfg), e + e);
    EXPECT_THROW(combine_eps(e, LatentGrid(12, 12, 3), cfg), ShapeMismatch);
}

TEST(CombineEps, MatchesBruteForce) {
    const LatentGrid g = float_grid(6, 14, 10, 2), l = float_grid(7, 14, 10, 2);
    const LatentGrid expect = oracle_blur(g, 2.0) + (l - oracle_blur(l, 2.0));
    EXPECT_LE(max_abs_diff(combine_eps(g, l, GuidanceConfig{}), expect), 1e-6);
}

TEST(CombineEps, LinearInBothArguments) {
    const LatentGrid a = normal_grid(1, 10, 10, 1), b = normal_grid(2, 10, 10, 1);
    const LatentGrid c = normal_grid(3, 10, 10, 1), d = normal_grid(4, 10, 10, 1);
    const GuidanceConfig cfg;
    const LatentGrid lhs = combine_eps(axpby(0.5, a, 2.0, b), axpby(0.5, c, 2.0, d), cfg);
    const LatentGrid rhs = axpby(0.5, combine_eps(a, c, cfg), 2.0, combine_eps(b, d, cfg));
    EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(CombineEps, VarianceContrast) {
    GuidanceConfig filtered, plain;
    plain.combine_mode = CombineMode::plain_sum;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const LatentGrid g = normal_grid(stream_key(k, 0, 0, "g"), 32, 32, 4);
        const LatentGrid l = normal_grid(stream_key(k, 0, 0, "l"), 32, 32, 4);
        const double vf = moments(combine_eps(g, l, filtered)).variance;
        const double vp = moments(combine_eps(g, l, plain)).variance;
        EXPECT_GE(vf, 0.5);
        EXPECT_LE(vf, 1.5);
        EXPECT_GE(vp, 1.8);
        EXPECT_LE(vp, 2.2);
    }
}

TEST(GuidedEps, Cases) {
    TableDenoiser d;
    const LatentGrid e = float_grid(8, 4, 4, 1), u = float_grid(9, 4, 4, 1), z(4, 4, 1);
    d.table = {{"cond", e}, {"", u}, {"zero", LatentGrid(4, 4, 1)}};
    GuidanceConfig cfg;
    cfg.scale = 1.0;
    EXPECT_EQ(guided_eps(d, z, 10, "cond", cfg), e);
    EXPECT_EQ(d.calls, 1);
    cfg.scale = 0.0;
    EXPECT_EQ(guided_eps(d, z, 10, "cond", cfg), u);
    cfg.scale = 2.0;
    cfg.negative_text = "zero";
    EXPECT_EQ(guided_eps(d, z, 10, "cond", cfg), 2.0 * e);
    cfg.scale = 7.5;
    cfg.negative_text = "";
    const LatentGrid g = guided_eps(d, z, 10, "cond", cfg);
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_DOUBLE_EQ(g.values()[i], u.values()[i] + 7.5 * (e.values()[i] - u.values()[i]));
    }
}

TEST(GuidedEps, ShapeChecked) {
    TableDenoiser d;
    d.table = {{"cond", LatentGrid(4, 4, 2)}};
    GuidanceConfig cfg;
    cfg.scale = 1.0;
    EXPECT_THROW(guided_eps(d, LatentGrid(4, 4, 1), 10, "cond", cfg), ShapeMismatch);
}

TEST(CombineMode, Parse) {
    EXPECT_EQ(parse_combine_mode("plain_sum"), CombineMode::plain_sum);
    EXPECT_EQ(to_string(parse_combine_mode("filtered_sum")), "filtered_sum");
    EXPECT_THROW(parse_combine_mode("sum"), InvalidParameter);
}
