// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

// Staged higher-resolution generation: base sampling, then per stage
// upsample -> hierarchical prompts -> re-noise -> patch-wise frequency
// decomposed denoising with overlap fusion.

#pragma once

#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "backends.hpp"
#include "decompose.hpp"
#include "digest.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "prompts.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tiling.hpp"

namespace hiprompt {

struct StagePlan {
    std::size_t factor = 2;   // per axis, relative to the previous stage
    double tau = 0.75;        // re-noise level as a fraction of T
    double alpha = 3.0;       // skip-residual power; 0 disables
    std::size_t steps = 50;   // ladder length for a full (tau = 1) run
    std::size_t patch_h = 0;  // 0: backend native size
    std::size_t patch_w = 0;
    std::size_t stride_h = 0; // 0: patch / 2
    std::size_t stride_w = 0;
};

struct Ablation {
    bool hp = true; // hierarchical prompts
    bool nd = true; // noise decomposition
    bool nr = true; // n-gram refinement
};

struct SamplerOptions {
    std::size_t steps = 50;
    double eta = 0.0;
    GuidanceConfig guidance;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string global_text;
    std::size_t base_h = 32;
    std::size_t base_w = 32;
    std::size_t channels = 4;
    SamplerOptions sampler;
    std::vector<StagePlan> stages;
    Ablation ablation;
    TemplateId caption_template = TemplateId::llava_formula;
    DisplayRange display;
    std::size_t workers = 1;
    ScheduleParams schedule;
    std::optional<PromptManifest> prompts_from;
};

/// Non-owning view of the backends a run talks to. Captioner and embedder may
/// be null; prompts then fall back to the global text.
struct BackendSet {
    const DenoiserBackend* denoiser = nullptr;
    const CaptionerBackend* captioner = nullptr;
    const EmbedderBackend* embedder = nullptr;
};

struct StageResult {
    LatentGrid latent;
    PatchLayout layout;
    std::vector<PatchPromptRecord> records;
    HierarchicalPrompt prompt;
    double seconds = 0.0;
};

struct StageReport {
    std::size_t index = 0;
    std::size_t factor = 1;
    std::size_t height = 0, width = 0, channels = 0;
    std::size_t patches = 0;
    std::size_t refined = 0;
    std::size_t fallback = 0;
    std::string digest;
    std::string image_digest;
};

struct RunReport {
    std::uint64_t seed = 0;
    std::string global_text;
    std::vector<StageReport> stages; // index 0 is the base image
    std::vector<double> seconds;     // per stage, kept out of to_json()

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : stages) {
            arr.push_back({{"index", s.index},
                           {"factor", s.factor},
                           {"shape", {s.height, s.width, s.channels}},
                           {"patches", s.patches},
                           {"provenance", {{"mllm_refined", s.refined}, {"fallback_global", s.fallback}}},
                           {"digest", s.digest},
                           {"image_digest", s.image_digest}});
        }
        return {{"seed", seed}, {"global_prompt", global_text}, {"stages", arr}};
    }

    std::string digest() const { return sha256_hex(to_json().dump()); }
};

struct RunResult {
    std::vector<LatentGrid> latents; // base first, then one per stage
    std::vector<StageResult> stages;
    RunReport report;
};

namespace detail {

inline std::uint64_t key_init(std::uint64_t seed) { return stream_key(seed, 0, 0, "init"); }
inline std::uint64_t key_step(std::uint64_t seed, std::size_t stage, std::size_t step) {
    return stream_key(seed, stage, step, "ddim");
}
inline std::uint64_t key_renoise(std::uint64_t seed, std::size_t stage) { return stream_key(seed, stage, 0, "renoise"); }

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

[[noreturn]] inline void rethrow_with_context(const BackendError& e, const std::string& where) {
    throw BackendError(where + ": " + e.what(), e.request_id());
}

} // namespace detail

/// Full-ladder sampling of the base latent under the global prompt only.
inline LatentGrid generate_base(const DenoiserBackend& backend, const std::string& global_text, std::uint64_t seed,
                                std::size_t base_h, std::size_t base_w, const NoiseSchedule& s,
                                const SamplerOptions& opts) {
    const Capability cap = backend.capability();
    if (cap.native_patch_h != 0 && (cap.native_patch_h != base_h || cap.native_patch_w != base_w)) {
        throw InvalidParameter("generate_base: base " + std::to_string(base_h) + "x" + std::to_string(base_w) +
                               " does not match backend native size " + std::to_string(cap.native_patch_h) + "x" +
                               std::to_string(cap.native_patch_w));
    }
    const auto ladder = uniform_ladder(s.steps(), opts.steps);
    LatentGrid z = normal_grid(detail::key_init(seed), base_h, base_w, cap.channels);
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        const std::size_t t = ladder[k], t_prev = ladder_prev(ladder, k);
        LatentGrid eps;
        try {
            eps = guided_eps(backend, z, t, global_text, opts.guidance);
        } catch (const BackendError& e) {
            detail::rethrow_with_context(e, "base step t=" + std::to_string(t));
        }
        if (opts.eta > 0.0) {
            const LatentGrid noise = normal_grid(detail::key_step(seed, 0, k), base_h, base_w, cap.channels);
            z = ddim_step(z, eps, t, t_prev, opts.eta, &noise, s);
        } else {
            z = ddim_step(z, eps, t, t_prev, s);
        }
    }
    return z;
}

/// Ladder for a stage that re-enters the chain at round(tau * T).
inline std::vector<std::size_t> stage_ladder(const StagePlan& plan, std::size_t T) {
    if (!(plan.tau > 0.0 && plan.tau <= 1.0)) throw InvalidParameter("stage tau must lie in (0, 1]");
    const auto t_start = static_cast<std::size_t>(std::llround(plan.tau * static_cast<double>(T)));
    if (t_start < 1) throw InvalidParameter("stage tau * T must be >= 1");
    const auto n = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(plan.tau * static_cast<double>(plan.steps))), 1, t_start);
    return uniform_ladder(t_start, n);
}

/// Skip-residual blend weight at level t: 1 near t = T, 0 at t = 0.
inline double skip_residual_weight(std::size_t t, std::size_t T, double alpha) {
    if (alpha == 0.0) return 0.0;
    const double x = std::numbers::pi * static_cast<double>(T - t) / static_cast<double>(T);
    return std::pow((1.0 + std::cos(x)) / 2.0, alpha);
}

inline PatchLayout stage_layout(const StagePlan& plan, const Capability& cap, std::size_t H, std::size_t W) {
    const std::size_t ph = std::min(plan.patch_h ? plan.patch_h : (cap.native_patch_h ? cap.native_patch_h : H), H);
    const std::size_t pw = std::min(plan.patch_w ? plan.patch_w : (cap.native_patch_w ? cap.native_patch_w : W), W);
    const std::size_t sh = plan.stride_h ? plan.stride_h : std::max<std::size_t>(1, ph / 2);
    const std::size_t sw = plan.stride_w ? plan.stride_w : std::max<std::size_t>(1, pw / 2);
    return plan_patches(H, W, ph, pw, sh, sw);
}

/// Captions (and, with NR, refines) every patch of the upsampled base.
/// Captioner or embedder failures degrade that patch to the global text.
inline std::vector<PatchPromptRecord> build_stage_prompts(const BackendSet& backends, const LatentGrid& z0_up,
                                                          const PatchLayout& layout, const PipelineConfig& cfg) {
    const std::size_t Q = layout.count();
    std::vector<PatchPromptRecord> records(Q);
    const CaptionQuery query = build_caption_query(cfg.caption_template);
    parallel_for(Q, cfg.workers, [&](std::size_t i) {
        PatchPromptRecord& rec = records[i];
        rec.index = i;
        rec.origin = layout.origins[i];
        rec.refined_caption = cfg.global_text;
        rec.provenance = Provenance::fallback_global;
        if (backends.captioner == nullptr) return;
        const LatentGrid patch = extract(z0_up, layout, i);
        try {
            const auto png = encode_image(latent_to_image(patch, cfg.display), ImageFormat::png);
            rec.raw_caption = backends.captioner->caption(png, query);
        } catch (const std::exception&) {
            return;
        }
        if (!cfg.ablation.nr) {
            const auto first = rec.raw_caption.find_first_not_of(" \t\r\n");
            if (first == std::string::npos) return;
            const auto last = rec.raw_caption.find_last_not_of(" \t\r\n");
            rec.refined_caption = rec.raw_caption.substr(first, last - first + 1);
            rec.provenance = Provenance::mllm_refined;
            return;
        }
        const auto filtered = filter_uninformative(tokenize_unigrams(rec.raw_caption));
        std::vector<std::string> unique;
        for (const auto& t : filtered.tokens) {
            if (std::find(unique.begin(), unique.end(), t) == unique.end()) unique.push_back(t);
        }
        if (!unique.empty() && backends.embedder != nullptr) {
            try {
                const auto scores = backends.embedder->scores(unique, patch);
                for (std::size_t k = 0; k < unique.size(); ++k) rec.token_scores[unique[k]] = scores[k];
            } catch (const std::exception&) {
                return;
            }
        }
        const auto refined = refine_caption(rec.raw_caption, rec.token_scores, cfg.global_text);
        rec.refined_caption = refined.text;
        rec.provenance = refined.provenance;
    });
    return records;
}

/// One super-resolution stage starting from the previous stage's latent.
inline StageResult upscale_stage(const BackendSet& backends, const LatentGrid& z0, const StagePlan& plan,
                                 std::size_t stage_index, const PipelineConfig& cfg, const NoiseSchedule& s) {
    const auto t0 = std::chrono::steady_clock::now();
    if (backends.denoiser == nullptr) throw InvalidParameter("upscale_stage: no denoiser");
    if (plan.factor < 1) throw InvalidParameter("stage factor must be >= 1");
    const DenoiserBackend& denoiser = *backends.denoiser;
    const std::size_t T = s.steps();
    const std::size_t H = z0.height() * plan.factor, W = z0.width() * plan.factor, C = z0.channels();

    StageResult out;
    const LatentGrid z0_up = resample(z0, H, W, ResampleMethod::bicubic);
    out.layout = stage_layout(plan, denoiser.capability(), H, W);
    const PatchLayout& layout = out.layout;
    const std::size_t Q = layout.count();

    if (cfg.prompts_from && cfg.prompts_from->stage == stage_index) {
        const auto& m = *cfg.prompts_from;
        if (m.records.size() != Q) {
            throw ConfigError("prompt manifest has " + std::to_string(m.records.size()) + " records, stage " +
                              std::to_string(stage_index) + " has " + std::to_string(Q) + " patches");
        }
        for (std::size_t i = 0; i < Q; ++i) {
            if (m.records[i].origin != layout.origins[i]) {
                throw ConfigError("prompt manifest record " + std::to_string(i) + " origin does not match layout");
            }
        }
        out.records = m.records;
        out.prompt = cfg.ablation.hp ? to_hierarchy(cfg.global_text, out.records)
                                     : global_only_hierarchy(cfg.global_text, Q);
    } else if (cfg.ablation.hp) {
        out.records = build_stage_prompts(backends, z0_up, layout, cfg);
        out.prompt = to_hierarchy(cfg.global_text, out.records);
    } else {
        out.prompt = global_only_hierarchy(cfg.global_text, Q);
        for (std::size_t i = 0; i < Q; ++i) {
            out.records.push_back({i, layout.origins[i], "", cfg.global_text, Provenance::fallback_global, {}});
        }
    }

    const auto ladder = stage_ladder(plan, T);
    const LatentGrid stage_noise = normal_grid(detail::key_renoise(cfg.seed, stage_index), H, W, C);
    LatentGrid z = q_sample(z0_up, ladder.front(), stage_noise, s);

    const GuidanceConfig& guidance = cfg.sampler.guidance;
    std::vector<LatentGrid> moved(Q);
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        const std::size_t t = ladder[k], t_prev = ladder_prev(ladder, k);
        std::optional<LatentGrid> step_noise;
        if (cfg.sampler.eta > 0.0) step_noise = normal_grid(detail::key_step(cfg.seed, stage_index, k), H, W, C);

        parallel_for(Q, cfg.workers, [&](std::size_t i) {
            const LatentGrid zi = extract(z, layout, i);
            const std::string& local = out.prompt.patch_texts[i];
            LatentGrid eps;
            try {
                if (cfg.ablation.nd) {
                    const LatentGrid eps_g = guided_eps(denoiser, zi, t, cfg.global_text, guidance);
                    const LatentGrid eps_l =
                        local == cfg.global_text ? eps_g : guided_eps(denoiser, zi, t, local, guidance);
                    eps = combine_eps(eps_g, eps_l, guidance);
                } else {
                    eps = guided_eps(denoiser, zi, t, local, guidance);
                }
            } catch (const BackendError& e) {
                detail::rethrow_with_context(e, "stage " + std::to_string(stage_index) + " patch " +
                                                    std::to_string(i) + " t=" + std::to_string(t));
            }
            if (step_noise) {
                const LatentGrid ni = extract(*step_noise, layout, i);
                moved[i] = ddim_step(zi, eps, t, t_prev, cfg.sampler.eta, &ni, s);
            } else {
                moved[i] = ddim_step(zi, eps, t, t_prev, s);
            }
        });
        z = fuse(moved, layout);

        if (t_prev > 0) {
            const double w = skip_residual_weight(t_prev, T, plan.alpha);
            if (w > 0.0) z = axpby(1.0 - w, z, w, q_sample(z0_up, t_prev, stage_noise, s));
        }
    }
    out.latent = std::move(z);
    out.seconds = detail::seconds_since(t0);
    return out;
}

inline StageReport make_stage_report(std::size_t index, std::size_t factor, const LatentGrid& latent,
                                     const StageResult* stage) {
    StageReport r;
    r.index = index;
    r.factor = factor;
    r.height = latent.height();
    r.width = latent.width();
    r.channels = latent.channels();
    r.digest = grid_digest(latent);
    if (stage != nullptr) {
        r.patches = stage->layout.count();
        r.refined = stage->prompt.count(Provenance::mllm_refined);
        r.fallback = stage->prompt.count(Provenance::fallback_global);
    }
    return r;
}

inline void validate(const PipelineConfig& cfg) {
    if (cfg.global_text.empty()) throw ConfigError("prompt must not be empty");
    if (cfg.base_h == 0 || cfg.base_w == 0 || cfg.channels == 0) throw ConfigError("base dims must be >= 1");
    if (cfg.workers == 0) throw ConfigError("workers must be >= 1");
    if (!(cfg.sampler.guidance.sigma >= 0.0) || !std::isfinite(cfg.sampler.guidance.sigma)) {
        throw ConfigError("sigma must be finite and >= 0");
    }
    if (!(cfg.sampler.eta >= 0.0 && cfg.sampler.eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
    for (const auto& st : cfg.stages) {
        if (st.factor < 1) throw ConfigError("stage factor must be >= 1");
        if (!(st.alpha >= 0.0)) throw ConfigError("stage alpha must be >= 0");
        if (!(st.tau > 0.0 && st.tau <= 1.0)) throw ConfigError("stage tau must lie in (0, 1]");
    }
}

/// Base generation followed by every configured stage in order.
inline RunResult run(const PipelineConfig& cfg, const BackendSet& backends) {
    validate(cfg);
    if (backends.denoiser == nullptr) throw InvalidParameter("run: no denoiser");
    const NoiseSchedule s = make_schedule(cfg.schedule);

    RunResult result;
    result.report.seed = cfg.seed;
    result.report.global_text = cfg.global_text;

    const auto t0 = std::chrono::steady_clock::now();
    LatentGrid z = generate_base(*backends.denoiser, cfg.global_text, cfg.seed, cfg.base_h, cfg.base_w, s, cfg.sampler);
    result.report.seconds.push_back(detail::seconds_since(t0));
    result.report.stages.push_back(make_stage_report(0, 1, z, nullptr));
    result.latents.push_back(z);

    for (std::size_t k = 0; k < cfg.stages.size(); ++k) {
        StageResult st = upscale_stage(backends, result.latents.back(), cfg.stages[k], k + 1, cfg, s);
        result.report.seconds.push_back(st.seconds);
        result.report.stages.push_back(make_stage_report(k + 1, cfg.stages[k].factor, st.latent, &st));
        result.latents.push_back(st.latent);
        result.stages.push_back(std::move(st));
    }
    return result;
}

/// Encodes every latent of a run and records the image digests in the report.
inline std::vector<std::vector<std::uint8_t>> render_images(RunResult& result, const DisplayRange& display,
                                                           ImageFormat format) {
    std::vector<std::vector<std::uint8_t>> images;
    for (std::size_t i = 0; i < result.latents.size(); ++i) {
        auto bytes = format == ImageFormat::raw ? encode_raw_grid(result.latents[i])
                                                : encode_image(latent_to_image(result.latents[i], display), format);
        result.report.stages[i].image_digest = sha256_hex(bytes);
        images.push_back(std::move(bytes));
    }
    return images;
}

} // namespace hiprompt
