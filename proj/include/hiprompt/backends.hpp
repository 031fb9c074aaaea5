// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prompts.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace hiprompt {

struct Capability {
    std::size_t native_patch_h = 0;
    std::size_t native_patch_w = 0;
    std::size_t channels = 0;
};

/// Noise predictor eps(z, t, text). Implementations must be safe to call
/// concurrently and must return a grid shaped like `z`.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;
    virtual Capability capability() const = 0;
    virtual LatentGrid predict_eps(const LatentGrid& z, std::size_t t, const std::string& text) const = 0;
};

/// Text-to-patch similarity in [-1, 1].
class EmbedderBackend {
public:
    virtual ~EmbedderBackend() = default;
    virtual double score(const std::string& token, const LatentGrid& patch) const = 0;

    virtual std::vector<double> scores(const std::vector<std::string>& tokens, const LatentGrid& patch) const {
        std::vector<double> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(score(t, patch));
        return out;
    }
};

/// Patch captioner. Throws EmptyCaption when it has nothing to say.
class CaptionerBackend {
public:
    virtual ~CaptionerBackend() = default;
    virtual std::string caption(const std::vector<std::uint8_t>& png, const CaptionQuery& query) const = 0;
};

// ---------------------------------------------------------------------------
// Closed-form Gaussian world

/// Maps text to a mean in [-1, 1] through its stable hash.
inline double hashed_mean(const std::string& text) {
    const double u = static_cast<double>(splitmix64(stable_hash(text)) >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
}

/// Data model x0 ~ N(m(text), s^2 I) with m = mu(text) plus an optional
/// per-text checkerboard of amplitude `texture` (0 keeps m spatially flat).
struct AnalyticWorldSpec {
    double data_std = 0.5;
    std::size_t channels = 4;
    double texture = 0.0;
    std::map<std::string, double> mu_overrides;

    double mu(const std::string& text) const {
        const auto it = mu_overrides.find(text);
        return it != mu_overrides.end() ? it->second : hashed_mean(text);
    }

    /// +1 or -1: phase of the text's checkerboard.
    static double texture_phase(const std::string& text) {
        return (splitmix64(stable_hash(text) ^ 0x7E57ULL) & 1U) ? 1.0 : -1.0;
    }

    double mean_at(const std::string& text, std::size_t h, std::size_t w) const {
        if (texture == 0.0) return mu(text);
        const double board = ((h + w) % 2 == 0) ? 1.0 : -1.0;
        return mu(text) + texture * texture_phase(text) * board;
    }
};

/// Bayes-optimal eps for the Gaussian world:
///   E[x0|z] = m + sqrt(ab) s^2 / (ab s^2 + 1 - ab) * (z - sqrt(ab) m)
///   eps     = (z - sqrt(ab) E[x0|z]) / sqrt(1 - ab)
inline LatentGrid analytic_predict_eps(const AnalyticWorldSpec& world, const LatentGrid& z, std::size_t t,
                                       const std::string& text, const NoiseSchedule& s) {
    require_step(t, s, "analytic_predict_eps");
    const double ab = s.alpha_bar(t);
    if (1.0 - ab <= 0.0) throw DegenerateTimestep("analytic_predict_eps: alpha_bar = 1 at t = " + std::to_string(t));
    const double sab = std::sqrt(ab);
    const double s2 = world.data_std * world.data_std;
    const double gain = sab * s2 / (ab * s2 + 1.0 - ab);
    const double inv_noise = 1.0 / std::sqrt(1.0 - ab);

    LatentGrid eps(z.height(), z.width(), z.channels());
    for (std::size_t h = 0; h < z.height(); ++h) {
        for (std::size_t w = 0; w < z.width(); ++w) {
            const double m = world.mean_at(text, h, w);
            for (std::size_t c = 0; c < z.channels(); ++c) {
                const double zv = z.at(h, w, c);
                const double x0 = m + gain * (zv - sab * m);
                eps.at(h, w, c) = (zv - sab * x0) * inv_noise;
            }
        }
    }
    eps.ensure_finite("analytic_predict_eps");
    return eps;
}

class AnalyticDenoiser final : public DenoiserBackend {
public:
    AnalyticDenoiser(AnalyticWorldSpec world, NoiseSchedule schedule, std::size_t native_h, std::size_t native_w)
        : m_world(std::move(world)), m_schedule(std::move(schedule)), m_native_h(native_h), m_native_w(native_w) {}

    Capability capability() const override { return {m_native_h, m_native_w, m_world.channels}; }

    LatentGrid predict_eps(const LatentGrid& z, std::size_t t, const std::string& text) const override {
        return analytic_predict_eps(m_world, z, t, text, m_schedule);
    }

    const AnalyticWorldSpec& world() const noexcept { return m_world; }
    const NoiseSchedule& schedule() const noexcept { return m_schedule; }

private:
    AnalyticWorldSpec m_world;
    NoiseSchedule m_schedule;
    std::size_t m_native_h;
    std::size_t m_native_w;
};

// ---------------------------------------------------------------------------
// Toy embedder and captioner

/// Unit direction in R^n seeded by the token's stable hash and n.
inline std::vector<double> token_direction(const std::string& token, std::size_t n) {
    NormalStream stream(splitmix64(stable_hash(token)) ^ splitmix64(n));
    std::vector<double> d(n);
    double norm2 = 0.0;
    for (double& v : d) {
        v = stream.next();
        norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : d) v *= inv;
    return d;
}

/// tanh of the projection of the flattened patch onto token_direction.
inline double toy_embed_score(const std::string& token, const LatentGrid& patch) {
    if (patch.empty()) return 0.0;
    const auto dir = token_direction(token, patch.size());
    double dot = 0.0;
    const auto v = patch.values();
    for (std::size_t i = 0; i < v.size(); ++i) dot += dir[i] * v[i];
    return std::tanh(dot);
}

class ToyEmbedder final : public EmbedderBackend {
public:
    double score(const std::string& token, const LatentGrid& patch) const override {
        return toy_embed_score(token, patch);
    }
};

/// Deterministic offline captioner: picks formula slots from a hash of the
/// encoded patch. Roughly one patch in eight gets an uninformative caption.
class ToyCaptioner final : public CaptionerBackend {
public:
    std::string caption(const std::vector<std::uint8_t>& png, const CaptionQuery& query) const override {
        std::uint64_t h = stable_hash(to_string(query.template_id));
        for (auto b : png) h = splitmix64(h ^ b);
        static constexpr std::array adjectives{"weathered", "bright", "misty", "ornate", "quiet", "rugged"};
        static constexpr std::array subjects{"cliff", "harbor", "forest", "cathedral", "meadow", "river"};
        static constexpr std::array materials{"stone", "wood", "glass", "moss", "sand", "brick"};
        static constexpr std::array colors{"warm golden tones", "cool blue palette", "muted greens", "soft pastels"};
        static constexpr std::array places{"on a hillside", "at the coast", "in the mountains", "under an open sky"};
        if (h % 8 == 0) return "an image of background";
        const auto pick = [&h](const auto& arr) {
            h = splitmix64(h);
            return std::string(arr[h % arr.size()]);
        };
        const std::string adj = pick(adjectives), subj = pick(subjects), mat = pick(materials);
        const std::string col = pick(colors), loc = pick(places);
        return "an image of " + adj + " " + subj + " " + mat + ", " + col + ", " + loc + ", detailed";
    }
};

} // namespace hiprompt
