// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "latent_grid.hpp"

namespace hiprompt {

enum class ScheduleKind { linear, scaled_linear };

/// Variance schedule indexed by step t in [1, T]. Step 0 is the clean sample
/// with alpha_bar(0) = 1.
class NoiseSchedule {
public:
    static NoiseSchedule from_betas(std::vector<double> betas) {
        if (betas.empty()) throw InvalidParameter("NoiseSchedule: T must be >= 1");
        NoiseSchedule s;
        double prod = 1.0;
        for (double b : betas) {
            if (!(b > 0.0 && b < 1.0)) throw InvalidParameter("NoiseSchedule: every beta must lie in (0, 1)");
            prod *= 1.0 - b;
            s.m_alphas_cumprod.push_back(prod);
        }
        s.m_betas = std::move(betas);
        return s;
    }

    std::size_t steps() const noexcept { return m_betas.size(); }
    const std::vector<double>& betas() const noexcept { return m_betas; }
    const std::vector<double>& alphas_cumprod() const noexcept { return m_alphas_cumprod; }

    double alpha_bar(std::size_t t) const {
        if (t == 0) return 1.0;
        if (t > steps()) {
            throw InvalidParameter("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
        }
        return m_alphas_cumprod[t - 1];
    }

private:
    std::vector<double> m_betas;
    std::vector<double> m_alphas_cumprod;
};

struct ScheduleParams {
    std::size_t steps = 1000;
    double beta_start = 0.00085;
    double beta_end = 0.012;
    ScheduleKind kind = ScheduleKind::scaled_linear;
};

inline NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end, ScheduleKind kind) {
    if (T == 0) throw InvalidParameter("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw InvalidParameter("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(T);
    for (std::size_t i = 0; i < T; ++i) {
        const double f = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        if (kind == ScheduleKind::linear) {
            betas[i] = beta_start + f * (beta_end - beta_start);
        } else {
            const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
            const double r = a + f * (b - a);
            betas[i] = r * r;
        }
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

inline NoiseSchedule make_schedule(const ScheduleParams& p = {}) {
    return make_schedule(p.steps, p.beta_start, p.beta_end, p.kind);
}

/// "t beta alpha_cumprod" per line, 9 significant digits.
inline std::string dump_schedule(const NoiseSchedule& s) {
    std::string out;
    char line[96];
    for (std::size_t t = 1; t <= s.steps(); ++t) {
        std::snprintf(line, sizeof line, "%zu %.9g %.9g\n", t, s.betas()[t - 1], s.alphas_cumprod()[t - 1]);
        out += line;
    }
    return out;
}

inline void require_step(std::size_t t, const NoiseSchedule& s, const char* where) {
    if (t < 1 || t > s.steps()) {
        throw InvalidParameter(std::string(where) + ": timestep " + std::to_string(t) + " outside [1, " +
                               std::to_string(s.steps()) + "]");
    }
}

/// Closed-form forward process: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline LatentGrid q_sample(const LatentGrid& x0, std::size_t t, const LatentGrid& eps, const NoiseSchedule& s) {
    require_same_shape(x0, eps, "q_sample");
    require_step(t, s, "q_sample");
    const double ab = s.alpha_bar(t);
    return axpby(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

inline LatentGrid predict_x0(const LatentGrid& z_t, const LatentGrid& eps_hat, std::size_t t, const NoiseSchedule& s) {
    require_same_shape(z_t, eps_hat, "predict_x0");
    require_step(t, s, "predict_x0");
    const double ab = s.alpha_bar(t);
    if (ab <= 0.0) throw DegenerateTimestep("predict_x0: alpha_bar is 0 at t = " + std::to_string(t));
    const double inv = 1.0 / std::sqrt(ab);
    return axpby(inv, z_t, -std::sqrt(1.0 - ab) * inv, eps_hat);
}

/// One DDIM move from t to t_prev (t_prev = 0 lands on the clean estimate).
/// `noise` is required exactly when eta > 0.
inline LatentGrid ddim_step(const LatentGrid& z_t, const LatentGrid& eps_hat, std::size_t t, std::size_t t_prev,
                            double eta, const LatentGrid* noise, const NoiseSchedule& s) {
    if (t_prev >= t) {
        throw InvalidParameter("ddim_step: non-monotonic steps " + std::to_string(t) + " -> " + std::to_string(t_prev));
    }
    if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidParameter("ddim_step: eta must lie in [0, 1]");
    if (eta > 0.0 && noise == nullptr) throw InvalidParameter("ddim_step: eta > 0 requires a noise grid");

    const LatentGrid x0 = predict_x0(z_t, eps_hat, t, s);
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t_prev);
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));

    LatentGrid out = axpby(std::sqrt(ab_prev), x0, dir, eps_hat);
    if (sigma > 0.0) {
        require_same_shape(z_t, *noise, "ddim_step noise");
        out = axpby(1.0, out, sigma, *noise);
    }
    return out;
}

inline LatentGrid ddim_step(const LatentGrid& z_t, const LatentGrid& eps_hat, std::size_t t, std::size_t t_prev,
                            const NoiseSchedule& s) {
    return ddim_step(z_t, eps_hat, t, t_prev, 0.0, nullptr, s);
}

/// Strictly decreasing ladder of `n` uniformly spaced steps from t_start
/// down to (but excluding) 0: t_k = round(k * t_start / n), k = n..1.
inline std::vector<std::size_t> uniform_ladder(std::size_t t_start, std::size_t n) {
    if (t_start == 0 || n == 0) throw InvalidParameter("uniform_ladder: t_start and n must be >= 1");
    if (n > t_start) throw InvalidParameter("uniform_ladder: more steps than timesteps");
    std::vector<std::size_t> ladder;
    ladder.reserve(n);
    for (std::size_t k = n; k >= 1; --k) {
        ladder.push_back(static_cast<std::size_t>(
            std::llround(static_cast<double>(k) * static_cast<double>(t_start) / static_cast<double>(n))));
    }
    return ladder;
}

/// The step after ladder[i]: the next rung, or 0 after the last.
inline std::size_t ladder_prev(const std::vector<std::size_t>& ladder, std::size_t i) {
    return i + 1 < ladder.size() ? ladder[i + 1] : 0;
}

inline void validate_ladder(const std::vector<std::size_t>& ladder, const NoiseSchedule& s) {
    if (ladder.empty()) throw InvalidParameter("ladder is empty");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        require_step(ladder[i], s, "ladder");
        if (i > 0 && ladder[i] >= ladder[i - 1]) throw InvalidParameter("ladder must be strictly decreasing");
    }
}

} // namespace hiprompt
