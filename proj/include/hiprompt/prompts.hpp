// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tiling.hpp"

namespace hiprompt {

enum class TemplateId { llava_formula, sharecaptioner_detail };

struct CaptionQuery {
    TemplateId template_id;
    std::string text;
};

inline std::string to_string(TemplateId id) {
    return id == TemplateId::llava_formula ? "llava_formula" : "sharecaptioner_detail";
}

inline TemplateId parse_template_id(std::string_view name) {
    if (name == "llava_formula") return TemplateId::llava_formula;
    if (name == "sharecaptioner_detail") return TemplateId::sharecaptioner_detail;
    throw InvalidParameter("unknown caption template id '" + std::string(name) + "'");
}

/// Returns the verbatim captioner instruction for a template.
inline CaptionQuery build_caption_query(TemplateId id) {
    switch (id) {
    case TemplateId::llava_formula:
        return {id, "Here's a formula for a Stable Diffusion image prompt: an image of [adjective] [subject] "
                    "[material], [color scheme], [photo location], detailed. Answer in one sentence."};
    case TemplateId::sharecaptioner_detail:
        return {id, "Analyze the image in a comprehensive and detailed manner."};
    }
    throw InvalidParameter("unknown caption template id " + std::to_string(static_cast<int>(id)));
}

inline CaptionQuery build_caption_query(std::string_view name) { return build_caption_query(parse_template_id(name)); }

/// Lowercased unigrams. Any character that is not alphanumeric (ASCII) or
/// a non-ASCII byte separates tokens.
inline std::vector<std::string> tokenize_unigrams(std::string_view caption) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char ch : caption) {
        if (std::isalnum(ch) || ch >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

inline const std::unordered_set<std::string>& uninformative_words() {
    static const std::unordered_set<std::string> words{"image",      "jpg",       "jpeg",  "png", "picture",
                                                       "photo",      "background", "foreground"};
    return words;
}

inline const std::unordered_set<std::string>& article_and_preposition_words() {
    static const std::unordered_set<std::string> words{"a",    "an",   "the",  "to",   "of",    "on",  "in",
                                                       "at",   "by",   "with", "for",  "from",  "under", "over"};
    return words;
}

struct FilteredTokens {
    std::vector<std::string> tokens;
    bool all_uninformative = false;
};

/// Stage 1: a caption made only of uninformative words (or nothing) is
/// discarded wholesale; articles and prepositions do not rescue it, so
/// "an image of background" is dropped. Stage 2: drop articles and
/// prepositions.
inline FilteredTokens filter_uninformative(const std::vector<std::string>& tokens) {
    const auto& junk = uninformative_words();
    const auto& stop = article_and_preposition_words();
    const bool all_junk = std::all_of(tokens.begin(), tokens.end(),
                                      [&](const auto& t) { return junk.contains(t) || stop.contains(t); });
    if (all_junk) return {{}, true};
    FilteredTokens out;
    for (const auto& t : tokens) {
        if (!stop.contains(t)) out.tokens.push_back(t);
    }
    return out;
}

enum class Provenance { mllm_refined, fallback_global };

inline std::string to_string(Provenance p) {
    return p == Provenance::mllm_refined ? "mllm_refined" : "fallback_global";
}

inline Provenance parse_provenance(std::string_view s) {
    if (s == "mllm_refined") return Provenance::mllm_refined;
    if (s == "fallback_global") return Provenance::fallback_global;
    throw InvalidParameter("unknown provenance '" + std::string(s) + "'");
}

struct RefinedCaption {
    std::string text;
    Provenance provenance = Provenance::fallback_global;
};

using TokenScores = std::map<std::string, double>;

/// N-gram (n = 1) refinement. The threshold is the mean of `token_scores`,
/// the patch's scored token set (built from the surviving tokens of the raw
/// caption, so re-refining with the same scores is a no-op). Tokens scoring
/// at or above it are kept in caption order, except uninformative words;
/// unscored tokens score 0.
inline RefinedCaption refine_caption(std::string_view caption, const TokenScores& token_scores,
                                     const std::string& global_text) {
    const auto filtered = filter_uninformative(tokenize_unigrams(caption));
    if (filtered.all_uninformative || filtered.tokens.empty()) return {global_text, Provenance::fallback_global};

    const auto score_of = [&](const std::string& t) {
        const auto it = token_scores.find(t);
        return it == token_scores.end() ? 0.0 : it->second;
    };
    double threshold = 0.0;
    if (!token_scores.empty()) {
        double sum = 0.0;
        for (const auto& [tok, s] : token_scores) sum += s;
        threshold = sum / static_cast<double>(token_scores.size());
    }
    // Rounding in the mean must not drop a token tied with every other one.
    const double slack = 1e-12 * std::max(1.0, std::abs(threshold));

    // Uninformative words never reach a refined caption: a stage-1 pass over
    // the result must not discard it, which keeps refinement idempotent.
    std::string joined;
    for (const auto& t : filtered.tokens) {
        if (score_of(t) >= threshold - slack && !uninformative_words().contains(t)) {
            if (!joined.empty()) joined.push_back(' ');
            joined += t;
        }
    }
    if (joined.empty()) return {global_text, Provenance::fallback_global};
    return {joined, Provenance::mllm_refined};
}

/// Global text plus one refined text per patch, in layout order.
struct HierarchicalPrompt {
    std::string global_text;
    std::vector<std::string> patch_texts;
    std::vector<Provenance> provenance;

    std::size_t count(Provenance p) const {
        return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), p));
    }
};

/// Similarity of `token` to patch `patch_index`.
using ScoreFn = std::function<double(std::size_t patch_index, const std::string& token)>;

/// Per-patch record kept for the prompt manifest.
struct PatchPromptRecord {
    std::size_t index = 0;
    PatchOrigin origin;
    std::string raw_caption;
    std::string refined_caption;
    Provenance provenance = Provenance::fallback_global;
    TokenScores token_scores;
};

inline std::vector<PatchPromptRecord> refine_all(const std::string& global_text,
                                                 const std::vector<std::string>& raw_captions,
                                                 const ScoreFn& score_fn, const PatchLayout& layout) {
    if (raw_captions.size() != layout.count()) {
        throw ShapeMismatch("assemble_hierarchy: " + std::to_string(raw_captions.size()) + " captions for " +
                            std::to_string(layout.count()) + " patches");
    }
    if (layout.count() == 0) throw InvalidParameter("assemble_hierarchy: layout has no patches");
    std::vector<PatchPromptRecord> records(layout.count());
    for (std::size_t i = 0; i < layout.count(); ++i) {
        auto& rec = records[i];
        rec.index = i;
        rec.origin = layout.origins[i];
        rec.raw_caption = raw_captions[i];
        const auto filtered = filter_uninformative(tokenize_unigrams(raw_captions[i]));
        for (const auto& t : filtered.tokens) {
            if (!rec.token_scores.contains(t)) rec.token_scores[t] = score_fn(i, t);
        }
        const auto refined = refine_caption(raw_captions[i], rec.token_scores, global_text);
        rec.refined_caption = refined.text;
        rec.provenance = refined.provenance;
    }
    return records;
}

inline HierarchicalPrompt to_hierarchy(const std::string& global_text, const std::vector<PatchPromptRecord>& records) {
    HierarchicalPrompt hp{global_text, {}, {}};
    for (const auto& r : records) {
        hp.patch_texts.push_back(r.refined_caption.empty() ? global_text : r.refined_caption);
        hp.provenance.push_back(r.refined_caption.empty() ? Provenance::fallback_global : r.provenance);
    }
    return hp;
}

inline HierarchicalPrompt assemble_hierarchy(const std::string& global_text, const std::vector<std::string>& raw_captions,
                                             const ScoreFn& score_fn, const PatchLayout& layout) {
    return to_hierarchy(global_text, refine_all(global_text, raw_captions, score_fn, layout));
}

/// Every patch conditioned on the global text.
inline HierarchicalPrompt global_only_hierarchy(const std::string& global_text, std::size_t q) {
    return {global_text, std::vector<std::string>(q, global_text), std::vector<Provenance>(q, Provenance::fallback_global)};
}

// ---------------------------------------------------------------------------
// Prompt manifest (JSON): {"global_text", "stage", "records": [...]}

struct PromptManifest {
    std::string global_text;
    std::size_t stage = 1;
    std::vector<PatchPromptRecord> records;
};

inline nlohmann::json to_json(const PromptManifest& m) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : m.records) {
        nlohmann::json scores = nlohmann::json::object();
        for (const auto& [tok, s] : r.token_scores) scores[tok] = s;
        records.push_back({{"index", r.index},
                           {"origin", {r.origin.row, r.origin.col}},
                           {"raw_caption", r.raw_caption},
                           {"refined_caption", r.refined_caption},
                           {"provenance", to_string(r.provenance)},
                           {"token_scores", scores}});
    }
    return {{"global_text", m.global_text}, {"stage", m.stage}, {"records", records}};
}

inline PromptManifest manifest_from_json(const nlohmann::json& j) {
    try {
        PromptManifest m;
        m.global_text = j.at("global_text").get<std::string>();
        m.stage = j.at("stage").get<std::size_t>();
        for (const auto& r : j.at("records")) {
            PatchPromptRecord rec;
            rec.index = r.at("index").get<std::size_t>();
            rec.origin = {r.at("origin").at(0).get<std::size_t>(), r.at("origin").at(1).get<std::size_t>()};
            rec.raw_caption = r.at("raw_caption").get<std::string>();
            rec.refined_caption = r.at("refined_caption").get<std::string>();
            rec.provenance = parse_provenance(r.at("provenance").get<std::string>());
            for (const auto& [tok, s] : r.at("token_scores").items()) rec.token_scores[tok] = s.get<double>();
            if (rec.index != m.records.size()) throw ConfigError("prompt manifest: records out of index order");
            m.records.push_back(std::move(rec));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("prompt manifest: ") + e.what());
    }
}

} // namespace hiprompt
