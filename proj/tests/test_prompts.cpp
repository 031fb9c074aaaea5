// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "hiprompt/backends.hpp"
#include "hiprompt/prompts.hpp"

using namespace hiprompt;

namespace {

using Tokens = std::vector<std::string>;

// Minimum-norm patch p with <d_k, p> = atanh(score_k) for each token k, so the
// toy embedder reproduces the requested scores exactly (up to rounding).
LatentGrid patch_with_scores(const std::vector<std::pair<std::string, double>>& want, std::size_t h, std::size_t w) {
    const std::size_t n = h * w, m = want.size();
    std::vector<std::vector<double>> d;
    for (const auto& [tok, s] : want) d.push_back(token_direction(tok, n));
    // Gram system G a = b, G = D D^T.
    std::vector<std::vector<double>> g(m, std::vector<double>(m + 1));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < n; ++k) dot += d[i][k] * d[j][k];
            g[i][j] = dot;
        }
        g[i][m] = std::atanh(want[i].second);
    }
    for (std::size_t c = 0; c < m; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < m; ++r) {
            if (std::abs(g[r][c]) > std::abs(g[piv][c])) piv = r;
        }
        std::swap(g[c], g[piv]);
        for (std::size_t r = 0; r < m; ++r) {
            if (r == c) continue;
            const double f = g[r][c] / g[c][c];
            for (std::size_t k = c; k <= m; ++k) g[r][k] -= f * g[c][k];
        }
    }
    LatentGrid p(h, w, 1);
    for (std::size_t i = 0; i < m; ++i) {
        const double a = g[i][m] / g[i][i];
        for (std::size_t k = 0; k < n; ++k) p.values()[k] += a * d[i][k];
    }
    return p;
}

} // namespace

TEST(CaptionQuery, VerbatimTemplates) {
    EXPECT_EQ(build_caption_query(TemplateId::llava_formula).text,
              "Here's a formula for a Stable Diffusion image prompt: an image of [adjective] [subject] [material], "
              "[color scheme], [photo location], detailed. Answer in one sentence.");
    EXPECT_EQ(build_caption_query("sharecaptioner_detail").text,
              "Analyze the image in a comprehensive and detailed manner.");
    EXPECT_THROW(build_caption_query("gpt_vision"), InvalidParameter);
}

TEST(Tokenize, Cases) {
    EXPECT_EQ(tokenize_unigrams("A corgi dog, on the beach."), (Tokens{"a", "corgi", "dog", "on", "the", "beach"}));
    EXPECT_EQ(tokenize_unigrams(""), Tokens{});
    EXPECT_EQ(tokenize_unigrams("palm-tree under blue sky"), (Tokens{"palm", "tree", "under", "blue", "sky"}));
    EXPECT_EQ(tokenize_unigrams("  dog  dog\t4K "), (Tokens{"dog", "dog", "4k"}));
}

TEST(FilterUninformative, Cases) {
    auto f = filter_uninformative({"image", "background"});
    EXPECT_TRUE(f.all_uninformative);
    EXPECT_TRUE(f.tokens.empty());
    f = filter_uninformative({"a", "corgi", "on", "the", "beach"});
    EXPECT_FALSE(f.all_uninformative);
    EXPECT_EQ(f.tokens, (Tokens{"corgi", "beach"}));
    EXPECT_TRUE(filter_uninformative({}).all_uninformative);
    EXPECT_TRUE(filter_uninformative(tokenize_unigrams("an image of background")).all_uninformative);
    // A real word rescues the caption; uninformative words themselves are kept.
    f = filter_uninformative(tokenize_unigrams("a photo of a dog"));
    EXPECT_FALSE(f.all_uninformative);
    EXPECT_EQ(f.tokens, (Tokens{"photo", "dog"}));
}

TEST(RefineCaption, CorgiPalmFixture) {
    const TokenScores s{{"palm", 0.9}, {"tree", 0.8}, {"corgi", 0.1}, {"dog", 0.2}};
    const auto r = refine_caption("a palm tree corgi dog", s, "g");
    EXPECT_EQ(r.text, "palm tree");
    EXPECT_EQ(r.provenance, Provenance::mllm_refined);
}

TEST(RefineCaption, CorgiPalmViaToyEmbedder) {
    const LatentGrid patch = patch_with_scores({{"palm", 0.9}, {"tree", 0.8}, {"corgi", 0.1}, {"dog", 0.2}}, 8, 8);
    ToyEmbedder emb;
    EXPECT_NEAR(emb.score("palm", patch), 0.9, 1e-9);
    EXPECT_NEAR(emb.score("tree", patch), 0.8, 1e-9);
    EXPECT_NEAR(emb.score("corgi", patch), 0.1, 1e-9);
    EXPECT_NEAR(emb.score("dog", patch), 0.2, 1e-9);
    const PatchLayout L = plan_patches(8, 8, 8, 8, 1, 1);
    const auto hp = assemble_hierarchy(
        "a tropical beach", {"a palm tree corgi dog"},
        [&](std::size_t, const std::string& t) { return emb.score(t, patch); }, L);
    EXPECT_EQ(hp.patch_texts, Tokens{"palm tree"});
}

TEST(RefineCaption, EqualScoresKeepAllAndFallbacks) {
    EXPECT_EQ(refine_caption("red fox snow", {{"red", 0.4}, {"fox", 0.4}, {"snow", 0.4}}, "g").text, "red fox snow");
    EXPECT_EQ(refine_caption("red fox snow", {{"red", 0.1}, {"fox", 0.1}, {"snow", 0.1}}, "g").text, "red fox snow");
    const auto r = refine_caption("an image of background", {}, "global prompt");
    EXPECT_EQ(r.text, "global prompt");
    EXPECT_EQ(r.provenance, Provenance::fallback_global);
    EXPECT_EQ(refine_caption("", {}, "g").provenance, Provenance::fallback_global);
    EXPECT_EQ(refine_caption("of the", {}, "g").text, "g");
    // Uninformative words are never emitted.
    EXPECT_EQ(refine_caption("dog photo", {{"dog", 0.1}, {"photo", 0.9}}, "g").provenance,
              Provenance::fallback_global);
    EXPECT_EQ(refine_caption("photo dog", {{"dog", 0.5}, {"photo", 0.5}}, "g").text, "dog");
}

TEST(RefineCaption, Properties) {
    static const Tokens vocab{"a",     "the",  "of",     "on",    "image",  "background", "dog",   "cat",
                              "river", "tree", "stone",  "misty", "bright", "harbor",     "glass", "red",
                              "photo", "sky",  "castle", "blue",  "with",   "green"};
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        std::string caption;
        const std::size_t len = gen() % 9;
        for (std::size_t i = 0; i < len; ++i) caption += (i ? " " : "") + vocab[gen() % vocab.size()];
        TokenScores scores;
        for (const auto& t : filter_uninformative(tokenize_unigrams(caption)).tokens) scores[t] = u(gen);

        const auto r = refine_caption(caption, scores, "G");
        EXPECT_FALSE(r.text.empty());
        if (r.provenance == Provenance::fallback_global) {
            EXPECT_EQ(r.text, "G");
            continue;
        }
        // Idempotence of refined captions.
        EXPECT_EQ(refine_caption(r.text, scores, "G").text, r.text) << caption;
        // No invention.
        const auto raw = tokenize_unigrams(caption);
        for (const auto& t : tokenize_unigrams(r.text)) EXPECT_NE(std::find(raw.begin(), raw.end(), t), raw.end());
        // Monotonicity: raising a kept token's score keeps it.
        const auto kept = tokenize_unigrams(r.text);
        if (kept.empty()) continue;
        TokenScores raised = scores;
        raised[kept.front()] += 0.5;
        const auto again = tokenize_unigrams(refine_caption(caption, raised, "G").text);
        EXPECT_NE(std::find(again.begin(), again.end(), kept.front()), again.end()) << caption;
    }
}

TEST(AssembleHierarchy, ProvenanceComposition) {
    const PatchLayout L = plan_patches(8, 16, 8, 8, 8, 8);
    const auto hp = assemble_hierarchy("global", {"a misty harbor", "an image of background"},
                                       [](std::size_t, const std::string&) { return 0.5; }, L);
    EXPECT_EQ(hp.patch_texts, (Tokens{"misty harbor", "global"}));
    EXPECT_EQ(hp.provenance, (std::vector<Provenance>{Provenance::mllm_refined, Provenance::fallback_global}));
    EXPECT_EQ(hp.count(Provenance::mllm_refined), 1u);
    EXPECT_THROW(assemble_hierarchy("g", {"x"}, [](std::size_t, const std::string&) { return 0.0; }, L),
                 ShapeMismatch);
}

TEST(Manifest, RoundTripAndErrors) {
    const PatchLayout L = plan_patches(8, 16, 8, 8, 8, 8);
    PromptManifest m{"global", 2,
                     refine_all("global", {"a red castle", "photo"},
                                [](std::size_t i, const std::string& t) { return t == "red" ? 0.1 : 0.3 * i + 0.2; },
                                L)};
    const auto j = to_json(m);
    const PromptManifest back = manifest_from_json(j);
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(back.records[0].refined_caption, "castle");
    EXPECT_EQ(back.records[1].provenance, Provenance::fallback_global);
    auto bad = j;
    bad["records"][0]["provenance"] = "guessed";
    EXPECT_THROW(manifest_from_json(bad), InvalidParameter);
    bad = j;
    bad.erase("stage");
    EXPECT_THROW(manifest_from_json(bad), ConfigError);
}
