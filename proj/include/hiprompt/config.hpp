// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipeline.hpp"
#include "remote.hpp"

namespace hiprompt {

enum class BackendKind { analytic, remote };
enum class CaptionerKind { none, toy, remote };
enum class EmbedderKind { toy, remote };

struct BackendSpec {
    BackendKind kind = BackendKind::analytic;
    AnalyticWorldSpec world;
    RemoteOptions remote;
};

struct RunConfig {
    PipelineConfig pipeline;
    BackendSpec backend;
    CaptionerKind captioner = CaptionerKind::toy;
    RemoteOptions captioner_remote;
    EmbedderKind embedder = EmbedderKind::toy;
    RemoteOptions embedder_remote;
    std::string output_dir = "out";
    ImageFormat image_format = ImageFormat::png;
    std::optional<std::string> prompts_from;
};

namespace detail {

using json = nlohmann::json;

class ConfigReader {
public:
    explicit ConfigReader(std::string source) : m_source(std::move(source)) {}

    [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
        throw ConfigError(m_source + ": " + (pointer.empty() ? "/" : pointer) + ": " + msg);
    }

    void only_keys(const json& j, const std::string& ptr, std::initializer_list<const char*> allowed) const {
        if (!j.is_object()) fail(ptr, "expected an object");
        for (const auto& [k, v] : j.items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || k == a;
            if (!ok) fail(ptr + "/" + k, "unknown key");
        }
    }

    std::string str(const json& j, const std::string& ptr) const {
        if (!j.is_string()) fail(ptr, "expected a string");
        return j.get<std::string>();
    }

    double num(const json& j, const std::string& ptr) const {
        if (!j.is_number()) fail(ptr, "expected a number");
        const double v = j.get<double>();
        if (!std::isfinite(v)) fail(ptr, "must be finite");
        return v;
    }

    std::uint64_t uint(const json& j, const std::string& ptr) const {
        if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
            fail(ptr, "expected a non-negative integer");
        }
        return j.get<std::uint64_t>();
    }

    bool boolean(const json& j, const std::string& ptr) const {
        if (j.is_boolean()) return j.get<bool>();
        if (j.is_string()) {
            const auto s = j.get<std::string>();
            if (s == "on" || s == "true") return true;
            if (s == "off" || s == "false") return false;
        }
        fail(ptr, "expected true/false or on/off");
    }

    std::pair<std::size_t, std::size_t> pair(const json& j, const std::string& ptr) const {
        if (j.is_number_integer()) {
            const auto v = uint(j, ptr);
            return {v, v};
        }
        if (!j.is_array() || j.size() != 2) fail(ptr, "expected an integer or [h, w]");
        return {uint(j[0], ptr + "/0"), uint(j[1], ptr + "/1")};
    }

    RemoteOptions remote(const json& j, const std::string& ptr) const {
        RemoteOptions r;
        if (j.contains("endpoint")) r.endpoint = str(j["endpoint"], ptr + "/endpoint");
        if (r.endpoint.empty()) {
            if (const char* env = std::getenv("HIPROMPT_ENDPOINT")) r.endpoint = env;
        }
        if (r.endpoint.empty()) fail(ptr + "/endpoint", "remote backend needs an endpoint (or HIPROMPT_ENDPOINT)");
        if (j.contains("timeout_ms")) r.timeout = std::chrono::milliseconds(uint(j["timeout_ms"], ptr + "/timeout_ms"));
        if (j.contains("attempts")) r.attempts = static_cast<int>(uint(j["attempts"], ptr + "/attempts"));
        if (j.contains("backoff_ms")) r.backoff = std::chrono::milliseconds(uint(j["backoff_ms"], ptr + "/backoff_ms"));
        if (j.contains("pool")) r.pool_size = uint(j["pool"], ptr + "/pool");
        if (r.attempts < 1) fail(ptr + "/attempts", "must be >= 1");
        if (r.pool_size < 1) fail(ptr + "/pool", "must be >= 1");
        return r;
    }

private:
    std::string m_source;
};

/// "4x" -> 2, "16x" -> 4: area label to per-axis factor.
inline std::optional<std::size_t> axis_factor_from_label(const std::string& label) {
    if (label.size() < 2 || (label.back() != 'x' && label.back() != 'X')) return std::nullopt;
    std::size_t area = 0;
    try {
        std::size_t used = 0;
        area = std::stoul(label.substr(0, label.size() - 1), &used);
        if (used != label.size() - 1) return std::nullopt;
    } catch (const std::exception&) {
        return std::nullopt;
    }
    const auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(area))));
    if (area == 0 || root * root != area) return std::nullopt;
    return root;
}

} // namespace detail

/// Parses a JSON run configuration. `source` names the input in errors.
/// Unknown keys are rejected at every level; errors carry a JSON pointer.
inline RunConfig parse_config(const nlohmann::json& j, const std::string& source = "config") {
    detail::ConfigReader rd(source);
    rd.only_keys(j, "",
                 {"prompt", "negative_prompt", "seed", "base", "steps", "eta", "sigma", "guidance_scale",
                  "combine_mode", "tau", "alpha", "stages", "patch", "stride", "schedule", "backend", "captioner",
                  "embedder", "ablation", "output_dir", "image_format", "workers", "prompts_from"});

    RunConfig rc;
    PipelineConfig& p = rc.pipeline;
    if (!j.contains("prompt")) rd.fail("/prompt", "required");
    if (!j.contains("seed")) rd.fail("/seed", "required");
    p.global_text = rd.str(j["prompt"], "/prompt");
    if (p.global_text.empty()) rd.fail("/prompt", "must not be empty");
    p.seed = rd.uint(j["seed"], "/seed");
    if (j.contains("negative_prompt")) p.sampler.guidance.negative_text = rd.str(j["negative_prompt"], "/negative_prompt");

    if (j.contains("base")) {
        const auto& b = j["base"];
        rd.only_keys(b, "/base", {"height", "width", "channels"});
        if (b.contains("height")) p.base_h = rd.uint(b["height"], "/base/height");
        if (b.contains("width")) p.base_w = rd.uint(b["width"], "/base/width");
        if (b.contains("channels")) p.channels = rd.uint(b["channels"], "/base/channels");
        if (p.base_h == 0 || p.base_w == 0 || p.channels == 0) rd.fail("/base", "dims must be >= 1");
    }

    if (j.contains("steps")) {
        p.sampler.steps = rd.uint(j["steps"], "/steps");
        if (p.sampler.steps == 0) rd.fail("/steps", "must be >= 1");
    }
    if (j.contains("eta")) {
        p.sampler.eta = rd.num(j["eta"], "/eta");
        if (p.sampler.eta < 0.0 || p.sampler.eta > 1.0) rd.fail("/eta", "must lie in [0, 1]");
    }
    if (j.contains("sigma")) {
        p.sampler.guidance.sigma = rd.num(j["sigma"], "/sigma");
        if (p.sampler.guidance.sigma < 0.0) rd.fail("/sigma", "invalid parameter: must be >= 0");
    }
    if (j.contains("guidance_scale")) {
        p.sampler.guidance.scale = rd.num(j["guidance_scale"], "/guidance_scale");
        if (p.sampler.guidance.scale < 0.0) rd.fail("/guidance_scale", "must be >= 0");
    }
    if (j.contains("combine_mode")) {
        try {
            p.sampler.guidance.combine_mode = parse_combine_mode(rd.str(j["combine_mode"], "/combine_mode"));
        } catch (const InvalidParameter& e) {
            rd.fail("/combine_mode", e.what());
        }
    }

    StagePlan defaults;
    defaults.steps = p.sampler.steps;
    if (j.contains("tau")) defaults.tau = rd.num(j["tau"], "/tau");
    if (j.contains("alpha")) defaults.alpha = rd.num(j["alpha"], "/alpha");
    if (j.contains("patch")) std::tie(defaults.patch_h, defaults.patch_w) = rd.pair(j["patch"], "/patch");
    if (j.contains("stride")) std::tie(defaults.stride_h, defaults.stride_w) = rd.pair(j["stride"], "/stride");
    if (!(defaults.tau > 0.0 && defaults.tau <= 1.0)) rd.fail("/tau", "must lie in (0, 1]");
    if (defaults.alpha < 0.0) rd.fail("/alpha", "must be >= 0");

    if (j.contains("stages")) {
        const auto& st = j["stages"];
        if (!st.is_array()) rd.fail("/stages", "expected an array");
        std::size_t cumulative = 1;
        for (std::size_t i = 0; i < st.size(); ++i) {
            const std::string ptr = "/stages/" + std::to_string(i);
            StagePlan plan = defaults;
            if (st[i].is_string()) {
                const auto axis = detail::axis_factor_from_label(st[i].get<std::string>());
                if (!axis) rd.fail(ptr, "expected an area label like \"4x\" or \"16x\"");
                if (*axis % cumulative != 0 || *axis <= cumulative) {
                    rd.fail(ptr, "area label must grow by an integer per-axis factor over the previous stage");
                }
                plan.factor = *axis / cumulative;
            } else {
                rd.only_keys(st[i], ptr, {"factor", "tau", "alpha", "steps", "patch", "stride"});
                if (st[i].contains("factor")) plan.factor = rd.uint(st[i]["factor"], ptr + "/factor");
                if (st[i].contains("tau")) plan.tau = rd.num(st[i]["tau"], ptr + "/tau");
                if (st[i].contains("alpha")) plan.alpha = rd.num(st[i]["alpha"], ptr + "/alpha");
                if (st[i].contains("steps")) plan.steps = rd.uint(st[i]["steps"], ptr + "/steps");
                if (st[i].contains("patch")) std::tie(plan.patch_h, plan.patch_w) = rd.pair(st[i]["patch"], ptr + "/patch");
                if (st[i].contains("stride")) {
                    std::tie(plan.stride_h, plan.stride_w) = rd.pair(st[i]["stride"], ptr + "/stride");
                }
                if (plan.factor < 1) rd.fail(ptr + "/factor", "must be >= 1");
                if (!(plan.tau > 0.0 && plan.tau <= 1.0)) rd.fail(ptr + "/tau", "must lie in (0, 1]");
                if (plan.alpha < 0.0) rd.fail(ptr + "/alpha", "must be >= 0");
                if (plan.steps == 0) rd.fail(ptr + "/steps", "must be >= 1");
            }
            cumulative *= plan.factor;
            p.stages.push_back(plan);
        }
    }

    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        rd.only_keys(s, "/schedule", {"T", "beta_start", "beta_end", "kind"});
        if (s.contains("T")) p.schedule.steps = rd.uint(s["T"], "/schedule/T");
        if (s.contains("beta_start")) p.schedule.beta_start = rd.num(s["beta_start"], "/schedule/beta_start");
        if (s.contains("beta_end")) p.schedule.beta_end = rd.num(s["beta_end"], "/schedule/beta_end");
        if (s.contains("kind")) {
            const auto k = rd.str(s["kind"], "/schedule/kind");
            if (k == "linear") p.schedule.kind = ScheduleKind::linear;
            else if (k == "scaled_linear") p.schedule.kind = ScheduleKind::scaled_linear;
            else rd.fail("/schedule/kind", "expected linear or scaled_linear");
        }
        try {
            (void)make_schedule(p.schedule);
        } catch (const InvalidParameter& e) {
            rd.fail("/schedule", e.what());
        }
    }
    if (p.sampler.steps > p.schedule.steps) rd.fail("/steps", "more sampler steps than schedule timesteps");

    rc.backend.world.channels = p.channels;
    if (j.contains("backend")) {
        const auto& b = j["backend"];
        rd.only_keys(b, "/backend",
                     {"kind", "data_std", "texture", "mu", "endpoint", "timeout_ms", "attempts", "backoff_ms", "pool"});
        const std::string kind = b.contains("kind") ? rd.str(b["kind"], "/backend/kind") : "analytic";
        if (kind == "analytic") {
            rc.backend.kind = BackendKind::analytic;
            if (b.contains("data_std")) rc.backend.world.data_std = rd.num(b["data_std"], "/backend/data_std");
            if (rc.backend.world.data_std < 0.0) rd.fail("/backend/data_std", "must be >= 0");
            if (b.contains("texture")) rc.backend.world.texture = rd.num(b["texture"], "/backend/texture");
            if (b.contains("mu")) {
                if (!b["mu"].is_object()) rd.fail("/backend/mu", "expected an object of text -> mean");
                for (const auto& [text, v] : b["mu"].items()) {
                    rc.backend.world.mu_overrides[text] = rd.num(v, "/backend/mu/" + text);
                }
            }
        } else if (kind == "remote") {
            rc.backend.kind = BackendKind::remote;
            rc.backend.remote = rd.remote(b, "/backend");
        } else {
            rd.fail("/backend/kind", "expected analytic or remote");
        }
    }

    if (j.contains("captioner")) {
        const auto& c = j["captioner"];
        rd.only_keys(c, "/captioner", {"kind", "template", "endpoint", "timeout_ms", "attempts", "backoff_ms", "pool"});
        const std::string kind = c.contains("kind") ? rd.str(c["kind"], "/captioner/kind") : "toy";
        if (kind == "none") rc.captioner = CaptionerKind::none;
        else if (kind == "toy") rc.captioner = CaptionerKind::toy;
        else if (kind == "remote") {
            rc.captioner = CaptionerKind::remote;
            rc.captioner_remote = rd.remote(c, "/captioner");
        } else rd.fail("/captioner/kind", "expected none, toy or remote");
        if (c.contains("template")) {
            try {
                p.caption_template = parse_template_id(rd.str(c["template"], "/captioner/template"));
            } catch (const InvalidParameter& e) {
                rd.fail("/captioner/template", e.what());
            }
        }
    }

    if (j.contains("embedder")) {
        const auto& e = j["embedder"];
        rd.only_keys(e, "/embedder", {"kind", "endpoint", "timeout_ms", "attempts", "backoff_ms", "pool"});
        const std::string kind = e.contains("kind") ? rd.str(e["kind"], "/embedder/kind") : "toy";
        if (kind == "toy") rc.embedder = EmbedderKind::toy;
        else if (kind == "remote") {
            rc.embedder = EmbedderKind::remote;
            rc.embedder_remote = rd.remote(e, "/embedder");
        } else rd.fail("/embedder/kind", "expected toy or remote");
    }

    if (j.contains("ablation")) {
        const auto& a = j["ablation"];
        rd.only_keys(a, "/ablation", {"hp", "nd", "nr"});
        if (a.contains("hp")) p.ablation.hp = rd.boolean(a["hp"], "/ablation/hp");
        if (a.contains("nd")) p.ablation.nd = rd.boolean(a["nd"], "/ablation/nd");
        if (a.contains("nr")) p.ablation.nr = rd.boolean(a["nr"], "/ablation/nr");
    }

    if (j.contains("output_dir")) rc.output_dir = rd.str(j["output_dir"], "/output_dir");
    if (j.contains("image_format")) {
        try {
            rc.image_format = parse_image_format(rd.str(j["image_format"], "/image_format"));
        } catch (const InvalidParameter& e) {
            rd.fail("/image_format", e.what());
        }
    }
    p.workers = default_worker_count();
    if (j.contains("workers")) {
        p.workers = rd.uint(j["workers"], "/workers");
        if (p.workers == 0) rd.fail("/workers", "must be >= 1");
    }
    if (j.contains("prompts_from")) rc.prompts_from = rd.str(j["prompts_from"], "/prompts_from");

    // Captioning display range: the global prompt's prior mean +- 3 s for the
    // analytic world, a fixed symmetric window otherwise.
    if (rc.backend.kind == BackendKind::analytic) {
        const double mu = rc.backend.world.mu(p.global_text);
        const double half = rc.backend.world.data_std > 0.0 ? 3.0 * rc.backend.world.data_std : 1.0;
        p.display = {mu - half, mu + half};
    } else {
        p.display = {-4.0, 4.0};
    }
    return rc;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path + ": cannot open");
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

/// Owns the backends a RunConfig describes.
struct BackendBundle {
    std::unique_ptr<DenoiserBackend> denoiser;
    std::unique_ptr<CaptionerBackend> captioner;
    std::unique_ptr<EmbedderBackend> embedder;

    BackendSet view() const { return {denoiser.get(), captioner.get(), embedder.get()}; }
};

inline BackendBundle make_backends(const RunConfig& rc) {
    BackendBundle b;
    const auto& p = rc.pipeline;
    if (rc.backend.kind == BackendKind::analytic) {
        b.denoiser = std::make_unique<AnalyticDenoiser>(rc.backend.world, make_schedule(p.schedule), p.base_h, p.base_w);
    } else {
        b.denoiser = std::make_unique<RemoteDenoiser>(rc.backend.remote, Capability{p.base_h, p.base_w, p.channels});
    }
    switch (rc.captioner) {
    case CaptionerKind::none: break;
    case CaptionerKind::toy: b.captioner = std::make_unique<ToyCaptioner>(); break;
    case CaptionerKind::remote: b.captioner = std::make_unique<RemoteCaptioner>(rc.captioner_remote); break;
    }
    if (rc.embedder == EmbedderKind::toy) b.embedder = std::make_unique<ToyEmbedder>();
    else b.embedder = std::make_unique<RemoteEmbedder>(rc.embedder_remote);
    return b;
}

} // namespace hiprompt
