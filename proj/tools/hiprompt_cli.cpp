// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hiprompt/hiprompt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitInvariant = 4;

// Flags shared by `generate` and `refine-prompts`; each set flag overrides the
// matching config-file key.
struct RunFlags {
    std::string config_path;
    std::optional<std::string> prompt, negative_prompt, combine_mode, stages, captioner, tmpl, embedder, backend,
        endpoint, out, format, prompts_from, hp, nd, nr;
    std::optional<std::uint64_t> seed, steps, workers;
    std::optional<double> eta, sigma, guidance, tau, alpha, data_std;
    std::optional<std::vector<std::size_t>> patch, stride;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config_path, "JSON run configuration");
        app->add_option("--prompt", prompt, "Global prompt");
        app->add_option("--negative-prompt", negative_prompt);
        app->add_option("--seed", seed);
        app->add_option("--steps", steps, "DDIM steps for a full ladder");
        app->add_option("--eta", eta);
        app->add_option("--sigma", sigma, "Gaussian low-pass standard deviation");
        app->add_option("--guidance", guidance, "Classifier-free guidance scale");
        app->add_option("--combine-mode", combine_mode, "filtered_sum | plain_sum");
        app->add_option("--tau", tau, "Stage re-noise fraction of T");
        app->add_option("--alpha", alpha, "Skip-residual power (0 disables)");
        app->add_option("--stages", stages, "Comma-separated area labels, e.g. 4x,16x");
        app->add_option("--patch", patch, "Patch size: h or h,w")->delimiter(',')->expected(1, 2);
        app->add_option("--stride", stride, "Stride: h or h,w")->delimiter(',')->expected(1, 2);
        app->add_option("--hp", hp, "Hierarchical prompts on|off");
        app->add_option("--nd", nd, "Noise decomposition on|off");
        app->add_option("--nr", nr, "N-gram refinement on|off");
        app->add_option("--backend", backend, "analytic | remote");
        app->add_option("--endpoint", endpoint, "Remote endpoint for backend/captioner/embedder set to remote");
        app->add_option("--data-std", data_std, "Analytic world data standard deviation");
        app->add_option("--captioner", captioner, "none | toy | remote");
        app->add_option("--template", tmpl, "llava_formula | sharecaptioner_detail");
        app->add_option("--embedder", embedder, "toy | remote");
        app->add_option("--workers", workers);
        app->add_option("-o,--out", out, "Output directory");
        app->add_option("--format", format, "png | ppm | raw");
        app->add_option("--prompts-from", prompts_from, "Prompt manifest to use instead of live captioning");
    }

    json overlay() const {
        json j = json::object();
        if (prompt) j["prompt"] = *prompt;
        if (negative_prompt) j["negative_prompt"] = *negative_prompt;
        if (seed) j["seed"] = *seed;
        if (steps) j["steps"] = *steps;
        if (eta) j["eta"] = *eta;
        if (sigma) j["sigma"] = *sigma;
        if (guidance) j["guidance_scale"] = *guidance;
        if (combine_mode) j["combine_mode"] = *combine_mode;
        if (tau) j["tau"] = *tau;
        if (alpha) j["alpha"] = *alpha;
        if (stages) {
            json arr = json::array();
            std::stringstream ss(*stages);
            for (std::string item; std::getline(ss, item, ',');) {
                if (!item.empty()) arr.push_back(item);
            }
            j["stages"] = arr;
        }
        const auto pair = [](const std::vector<std::size_t>& v) {
            return v.size() == 1 ? json(v[0]) : json::array({v[0], v[1]});
        };
        if (patch) j["patch"] = pair(*patch);
        if (stride) j["stride"] = pair(*stride);
        if (hp) j["ablation"]["hp"] = *hp;
        if (nd) j["ablation"]["nd"] = *nd;
        if (nr) j["ablation"]["nr"] = *nr;
        if (backend) j["backend"]["kind"] = *backend;
        if (data_std) j["backend"]["data_std"] = *data_std;
        if (captioner) j["captioner"]["kind"] = *captioner;
        if (tmpl) j["captioner"]["template"] = *tmpl;
        if (embedder) j["embedder"]["kind"] = *embedder;
        if (workers) j["workers"] = *workers;
        if (out) j["output_dir"] = *out;
        if (format) j["image_format"] = *format;
        if (prompts_from) j["prompts_from"] = *prompts_from;
        return j;
    }

    hiprompt::RunConfig load() const {
        json base = config_path.empty() ? json::object() : hiprompt::read_json_file(config_path);
        base.merge_patch(overlay());
        if (endpoint) {
            for (const char* key : {"backend", "captioner", "embedder"}) {
                if (base.contains(key) && base[key].is_object() && base[key].value("kind", "") == "remote") {
                    base[key]["endpoint"] = *endpoint;
                }
            }
        }
        hiprompt::RunConfig rc = hiprompt::parse_config(base, config_path.empty() ? "flags" : config_path);
        if (rc.prompts_from) {
            rc.pipeline.prompts_from = hiprompt::manifest_from_json(hiprompt::read_json_file(*rc.prompts_from));
        }
        return rc;
    }
};

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw hiprompt::IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw hiprompt::IoError("failed writing " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string extension(hiprompt::ImageFormat f) { return "." + hiprompt::to_string(f); }

int cmd_generate(const RunFlags& flags) {
    const hiprompt::RunConfig rc = flags.load();
    const auto backends = hiprompt::make_backends(rc);
    hiprompt::RunResult result = hiprompt::run(rc.pipeline, backends.view());
    const auto images = hiprompt::render_images(result, rc.pipeline.display, rc.image_format);

    const fs::path dir(rc.output_dir);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string stem = i == 0 ? "base" : "stage" + std::to_string(i);
        write_bytes(dir / (stem + extension(rc.image_format)), images[i]);
    }
    for (std::size_t k = 0; k < result.stages.size(); ++k) {
        hiprompt::PromptManifest m{rc.pipeline.global_text, k + 1, result.stages[k].records};
        write_text(dir / ("prompts_stage" + std::to_string(k + 1) + ".json"), hiprompt::to_json(m).dump(2) + "\n");
    }
    const json report = result.report.to_json();
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_text(dir / "timings.json", json{{"seconds", result.report.seconds}}.dump(2) + "\n");

    for (const auto& s : result.report.stages) {
        std::printf("stage %zu: %zux%zux%zu patches=%zu refined=%zu fallback=%zu digest=%s\n", s.index, s.height,
                    s.width, s.channels, s.patches, s.refined, s.fallback, s.digest.substr(0, 16).c_str());
    }
    std::printf("report digest %s\n", result.report.digest().c_str());
    return kExitOk;
}

int cmd_refine_prompts(const RunFlags& flags, std::size_t stage, const std::string& manifest_path) {
    hiprompt::RunConfig rc = flags.load();
    if (stage < 1 || stage > rc.pipeline.stages.size()) {
        throw hiprompt::ConfigError("--stage must lie in [1, " + std::to_string(rc.pipeline.stages.size()) + "]");
    }
    const auto backends = hiprompt::make_backends(rc);
    hiprompt::PipelineConfig upto = rc.pipeline;
    const hiprompt::StagePlan plan = upto.stages[stage - 1];
    upto.stages.resize(stage - 1);
    upto.prompts_from.reset();
    const hiprompt::RunResult prefix = hiprompt::run(upto, backends.view());

    const hiprompt::LatentGrid& z0 = prefix.latents.back();
    const auto up = hiprompt::resample(z0, z0.height() * plan.factor, z0.width() * plan.factor);
    const auto layout = hiprompt::stage_layout(plan, backends.denoiser->capability(), up.height(), up.width());
    hiprompt::PromptManifest m{rc.pipeline.global_text, stage, {}};
    if (upto.ablation.hp) {
        m.records = hiprompt::build_stage_prompts(backends.view(), up, layout, upto);
    } else {
        for (std::size_t i = 0; i < layout.count(); ++i) {
            m.records.push_back({i, layout.origins[i], "", upto.global_text, hiprompt::Provenance::fallback_global, {}});
        }
    }
    const fs::path path = manifest_path.empty()
                              ? fs::path(rc.output_dir) / ("prompts_stage" + std::to_string(stage) + ".json")
                              : fs::path(manifest_path);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, hiprompt::to_json(m).dump(2) + "\n");
    std::size_t refined = 0;
    for (const auto& r : m.records) refined += r.provenance == hiprompt::Provenance::mllm_refined;
    std::printf("wrote %s: %zu patches, %zu refined, %zu fallback\n", path.string().c_str(), m.records.size(), refined,
                m.records.size() - refined);
    return kExitOk;
}

int cmd_decompose(const std::string& input, double sigma, const std::string& low_path, const std::string& high_path) {
    const hiprompt::LatentGrid z = hiprompt::read_raw_grid(input);
    const hiprompt::FreqSplit s = hiprompt::split(z, sigma);
    const fs::path in(input);
    const std::string lo = low_path.empty() ? (in.parent_path() / (in.stem().string() + "_low.raw")).string() : low_path;
    const std::string hi = high_path.empty() ? (in.parent_path() / (in.stem().string() + "_high.raw")).string() : high_path;
    hiprompt::write_raw_grid(lo, s.low);
    hiprompt::write_raw_grid(hi, s.high);
    const double high_frac = hiprompt::high_energy_fraction(s);
    std::printf("shape %s\nsigma %.9g\nlow %s\nhigh %s\nlow_energy_fraction %.9g\nhigh_energy_fraction %.9g\n",
                z.shape_string().c_str(), sigma, lo.c_str(), hi.c_str(), 1.0 - high_frac, high_frac);
    return kExitOk;
}

std::pair<std::size_t, std::size_t> as_pair(const std::vector<std::size_t>& v, const char* name) {
    if (v.size() == 1) return {v[0], v[0]};
    if (v.size() == 2) return {v[0], v[1]};
    throw hiprompt::ConfigError(std::string("--") + name + " expects h or h,w");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tuning-free higher-resolution diffusion with hierarchical prompts"};
    app.require_subcommand(1);

    RunFlags gen_flags;
    auto* gen = app.add_subcommand("generate", "Run base generation and every configured stage");
    gen_flags.attach(gen);

    RunFlags refine_flags;
    std::size_t refine_stage = 1;
    std::string manifest_out;
    auto* refine = app.add_subcommand("refine-prompts", "Write the hierarchical prompt manifest for one stage");
    refine_flags.attach(refine);
    refine->add_option("--stage", refine_stage, "Stage index (1-based)");
    refine->add_option("--manifest", manifest_out, "Manifest output path");

    std::string dec_in, dec_low, dec_high;
    double dec_sigma = 2.0;
    auto* dec = app.add_subcommand("decompose", "Split a raw grid into low/high frequency grids");
    dec->add_option("input", dec_in, "Raw grid file")->required();
    dec->add_option("--sigma", dec_sigma);
    dec->add_option("--low", dec_low, "Low-band output path");
    dec->add_option("--high", dec_high, "High-band output path");

    std::size_t plan_h = 0, plan_w = 0;
    std::vector<std::size_t> plan_patch, plan_stride;
    bool plan_dump = false;
    auto* plan = app.add_subcommand("plan", "Plan overlapping patches over a grid");
    plan->add_option("--height", plan_h)->required();
    plan->add_option("--width", plan_w)->required();
    plan->add_option("--patch", plan_patch, "h or h,w")->delimiter(',')->required();
    plan->add_option("--stride", plan_stride, "h or h,w")->delimiter(',');
    plan->add_flag("--dump", plan_dump, "Print every origin and the coverage histogram");

    hiprompt::ScheduleParams sched;
    std::string sched_kind = "scaled_linear";
    auto* sdump = app.add_subcommand("schedule-dump", "Print t, beta, alpha_cumprod per step");
    sdump->add_option("--T", sched.steps);
    sdump->add_option("--beta-start", sched.beta_start);
    sdump->add_option("--beta-end", sched.beta_end);
    sdump->add_option("--kind", sched_kind, "linear | scaled_linear");

    bool corrupt_kernel = false;
    auto* self = app.add_subcommand("selftest", "Run the embedded invariant suite");
    self->add_flag("--corrupt-kernel", corrupt_kernel, "Fault injection: break kernel normalization")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) return cmd_generate(gen_flags);
        if (*refine) return cmd_refine_prompts(refine_flags, refine_stage, manifest_out);
        if (*dec) return cmd_decompose(dec_in, dec_sigma, dec_low, dec_high);
        if (*plan) {
            const auto [ph, pw] = as_pair(plan_patch, "patch");
            auto [sh, sw] = plan_stride.empty() ? std::pair{std::max<std::size_t>(1, ph / 2), std::max<std::size_t>(1, pw / 2)}
                                                : as_pair(plan_stride, "stride");
            const auto layout = hiprompt::plan_patches(plan_h, plan_w, ph, pw, sh, sw);
            std::printf("grid %zux%zu patch %zux%zu stride %zux%zu patches %zu\n", plan_h, plan_w, ph, pw, sh, sw,
                        layout.count());
            if (plan_dump) std::fputs(hiprompt::dump_layout(layout).c_str(), stdout);
            return kExitOk;
        }
        if (*sdump) {
            if (sched_kind == "linear") sched.kind = hiprompt::ScheduleKind::linear;
            else if (sched_kind == "scaled_linear") sched.kind = hiprompt::ScheduleKind::scaled_linear;
            else throw hiprompt::ConfigError("--kind must be linear or scaled_linear");
            std::fputs(hiprompt::dump_schedule(hiprompt::make_schedule(sched)).c_str(), stdout);
            return kExitOk;
        }
        if (*self) {
            hiprompt::SelftestOptions opts;
            if (corrupt_kernel) opts.kernel_gain = 1.05;
            const auto report = hiprompt::selftest(opts);
            std::fputs(report.text().c_str(), stdout);
            return report.passed() ? kExitOk : kExitInvariant;
        }
    } catch (const hiprompt::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const hiprompt::InvalidParameter& e) {
        std::fprintf(stderr, "invalid parameter: %s\n", e.what());
        return kExitConfig;
    } catch (const hiprompt::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitConfig;
    } catch (const hiprompt::BackendError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return kExitBackend;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInvariant;
    }
    return kExitInvariant;
}
