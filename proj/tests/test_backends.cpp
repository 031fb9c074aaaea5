// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cmath>
#include <mutex>

#include <gtest/gtest.h>

#include "hiprompt/backends.hpp"
#include "hiprompt/remote.hpp"
#include "hiprompt/server.hpp"
#include "stub_server.hpp"

using namespace hiprompt;
using hiprompt::testing::StubServer;
using json = nlohmann::json;

namespace {

// One step with beta = 0.5, so alpha_bar(1) = 0.5.
NoiseSchedule half_schedule() { return make_schedule(1, 0.5, 0.5, ScheduleKind::linear); }

RemoteOptions fast_options(const std::string& endpoint) {
    RemoteOptions o;
    o.endpoint = endpoint;
    o.backoff = std::chrono::milliseconds(1);
    o.timeout = std::chrono::milliseconds(2000);
    return o;
}

LatentGrid float_grid(std::uint64_t key, std::size_t h, std::size_t w, std::size_t c) {
    LatentGrid g = normal_grid(key, h, w, c);
    for (double& v : g.values()) v = static_cast<float>(v);
    return g;
}

} // namespace

TEST(Analytic, HalfAlphaBarOracle) {
    AnalyticWorldSpec w;
    w.data_std = 1.0;
    w.mu_overrides["x"] = 0.0;
    const LatentGrid z = float_grid(1, 3, 3, 2);
    const LatentGrid eps = analytic_predict_eps(w, z, 1, "x", half_schedule());
    EXPECT_LE(max_abs_diff(eps, (1.0 / std::sqrt(2.0)) * z), 1e-15);
}

TEST(Analytic, PointMassLimit) {
    AnalyticWorldSpec w;
    w.data_std = 0.0;
    w.mu_overrides["p"] = 0.4;
    const NoiseSchedule s = make_schedule();
    const LatentGrid z = float_grid(2, 4, 4, 1);
    const double ab = s.alpha_bar(300);
    const LatentGrid eps = analytic_predict_eps(w, z, 300, "p", s);
    for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_NEAR(eps.values()[i], (z.values()[i] - std::sqrt(ab) * 0.4) / std::sqrt(1.0 - ab), 1e-12);
    }
}

TEST(Analytic, LinearSlopeMatchesPosteriorMean) {
    AnalyticWorldSpec w;
    w.data_std = 1.0;
    w.mu_overrides["m"] = 0.0;
    const NoiseSchedule s = make_schedule();
    for (std::size_t t : {10u, 400u, 999u}) {
        const double ab = s.alpha_bar(t);
        // mu = 0, s = 1: E[x0|z] = sqrt(ab) z, eps = z (1 - ab) / sqrt(1 - ab) = sqrt(1 - ab) z.
        const LatentGrid one(1, 1, 1, 1.0);
        EXPECT_NEAR(analytic_predict_eps(w, one, t, "m", s).at(0, 0, 0), std::sqrt(1.0 - ab), 1e-12);
        const LatentGrid two(1, 1, 1, 2.0);
        EXPECT_NEAR(analytic_predict_eps(w, two, t, "m", s).at(0, 0, 0), 2.0 * std::sqrt(1.0 - ab), 1e-12);
    }
}

TEST(Analytic, PromptSensitivityAndDeterminism) {
    const AnalyticWorldSpec w;
    EXPECT_EQ(w.mu("a red fox"), w.mu("a red fox"));
    EXPECT_NE(w.mu("a red fox"), w.mu("a blue fox"));
    EXPECT_GE(hashed_mean("anything"), -1.0);
    EXPECT_LE(hashed_mean("anything"), 1.0);
    const AnalyticDenoiser d(w, make_schedule(), 16, 16);
    const LatentGrid z = float_grid(3, 4, 4, 4);
    EXPECT_NE(d.predict_eps(z, 500, "a red fox"), d.predict_eps(z, 500, "a blue fox"));
    EXPECT_EQ(d.predict_eps(z, 500, "a red fox"), d.predict_eps(z, 500, "a red fox"));
    EXPECT_EQ(d.capability().channels, 4u);
}

TEST(Analytic, TextureMakesMeanSpatial) {
    AnalyticWorldSpec w;
    w.texture = 0.5;
    w.mu_overrides["t"] = 0.1;
    const double a = w.mean_at("t", 0, 0), b = w.mean_at("t", 0, 1);
    EXPECT_NEAR(std::abs(a - b), 1.0, 1e-15);
    EXPECT_NEAR(a + b, 0.2, 1e-15);
}

TEST(Analytic, DegenerateTimestep) {
    const AnalyticWorldSpec w;
    EXPECT_THROW(analytic_predict_eps(w, LatentGrid(1, 1, 1), 0, "x", make_schedule()), InvalidParameter);
    EXPECT_THROW(analytic_predict_eps(w, LatentGrid(1, 1, 1), 1001, "x", make_schedule()), InvalidParameter);
}

TEST(ToyEmbedder, Basics) {
    const LatentGrid zero(4, 4, 2);
    EXPECT_EQ(toy_embed_score("dog", zero), 0.0);
    const LatentGrid p = float_grid(4, 4, 4, 2);
    EXPECT_EQ(toy_embed_score("dog", p), toy_embed_score("dog", p));
    EXPECT_NE(toy_embed_score("dog", p), toy_embed_score("cat", p));
    EXPECT_LE(std::abs(toy_embed_score("dog", 100.0 * p)), 1.0);
    EXPECT_EQ(toy_embed_score("dog", -1.0 * p), -toy_embed_score("dog", p));
    double norm = 0.0;
    for (double v : token_direction("dog", 32)) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-14);
}

TEST(ToyCaptioner, DeterministicFormula) {
    const ToyCaptioner c;
    const auto q = build_caption_query(TemplateId::llava_formula);
    const std::vector<std::uint8_t> png{1, 2, 3};
    EXPECT_EQ(c.caption(png, q), c.caption(png, q));
    int fallback = 0;
    for (std::uint8_t b = 0; b < 200; ++b) {
        const auto cap = c.caption({b, 7}, q);
        if (cap == "an image of background") ++fallback;
        else EXPECT_EQ(cap.rfind("an image of ", 0), 0u);
    }
    EXPECT_GT(fallback, 5);
    EXPECT_LT(fallback, 60);
}

// ---------------------------------------------------------------------------
// Remote client

TEST(Remote, EchoZeroServer) {
    StubServer srv;
    srv.on("/v1/denoise", [](const httplib::Request& req, httplib::Response& res) {
        const auto r = wire::parse_denoise_request(json::parse(req.body));
        res.set_content(wire::to_json(wire::DenoiseResponse{r.id, LatentGrid(r.latent.height(), r.latent.width(),
                                                                             r.latent.channels())})
                            .dump(),
                        "application/json");
    });
    const RemoteDenoiser d(fast_options(srv.start()), {8, 8, 4});
    const LatentGrid z = float_grid(5, 8, 8, 4);
    EXPECT_EQ(d.predict_eps(z, 10, "p"), LatentGrid(8, 8, 4));
}

TEST(Remote, WrongShapeIsDistinctError) {
    StubServer srv;
    srv.on("/v1/denoise", [](const httplib::Request& req, httplib::Response& res) {
        const auto r = wire::parse_denoise_request(json::parse(req.body));
        res.set_content(wire::to_json(wire::DenoiseResponse{r.id, LatentGrid(2, 2, 1)}).dump(), "application/json");
    });
    const RemoteDenoiser d(fast_options(srv.start()), {8, 8, 4});
    try {
        d.predict_eps(LatentGrid(8, 8, 4), 10, "p");
        FAIL() << "expected RemoteShapeMismatch";
    } catch (const RemoteShapeMismatch& e) {
        EXPECT_NE(std::string(e.what()).find("8x8x4"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("2x2x1"), std::string::npos);
        EXPECT_FALSE(e.request_id().empty());
    }
}

TEST(Remote, MalformedAndMismatchedReplies) {
    StubServer srv;
    srv.on("/v1/denoise", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json", "text/plain");
    });
    srv.on("/v1/caption", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"id", "someone-else"}, {"caption", "x"}}.dump(), "application/json");
    });
    srv.on("/v1/embed", [](const httplib::Request& req, httplib::Response& res) {
        const auto j = json::parse(req.body);
        res.set_content(json{{"id", j["id"]}, {"scores", {0.5}}, {"extra", 1}}.dump(), "application/json");
    });
    const auto opts = fast_options(srv.start());
    EXPECT_THROW(RemoteDenoiser(opts, {}).predict_eps(LatentGrid(1, 1, 1), 1, ""), ProtocolError);
    EXPECT_THROW(RemoteCaptioner(opts).caption({1}, build_caption_query(TemplateId::llava_formula)), ProtocolError);
    EXPECT_THROW(RemoteEmbedder(opts).score("dog", LatentGrid(1, 1, 1)), ProtocolError);
}

TEST(Remote, CaptionTemplateCaptureAndStrip) {
    StubServer srv;
    std::mutex mu;
    json captured;
    srv.on("/v1/caption", [&](const httplib::Request& req, httplib::Response& res) {
        const auto j = json::parse(req.body);
        {
            std::lock_guard lock(mu);
            captured = j;
        }
        res.set_content(json{{"id", j["id"]}, {"caption", "  a misty harbor \n"}}.dump(), "application/json");
    });
    const RemoteCaptioner c(fast_options(srv.start()));
    const auto q = build_caption_query(TemplateId::sharecaptioner_detail);
    EXPECT_EQ(c.caption({0x89, 'P', 'N', 'G'}, q), "a misty harbor");
    EXPECT_EQ(captured["template_text"], q.text);
    EXPECT_EQ(captured["template_id"], "sharecaptioner_detail");
    EXPECT_EQ(captured["image_png_b64"], "iVBORw==");
    EXPECT_NO_THROW(wire::parse_caption_request(captured));
}

TEST(Remote, EmptyCaption) {
    StubServer srv;
    srv.on("/v1/caption", [](const httplib::Request& req, httplib::Response& res) {
        const auto j = json::parse(req.body);
        res.set_content(json{{"id", j["id"]}, {"caption", "  "}}.dump(), "application/json");
    });
    const RemoteCaptioner c(fast_options(srv.start()));
    EXPECT_THROW(c.caption({1}, build_caption_query(TemplateId::llava_formula)), EmptyCaption);
}

TEST(Remote, RetriesTransientFailures) {
    StubServer srv;
    std::atomic<int> calls{0};
    srv.on("/v1/embed", [&](const httplib::Request& req, httplib::Response& res) {
        const auto j = json::parse(req.body);
        const int n = ++calls;
        if (n == 1) {
            res.status = 503;
            res.set_content(wire::error_envelope(j["id"], wire::ErrorCode::backend_unavailable, "warming up").dump(),
                            "application/json");
        } else if (n == 2) {
            res.status = 500;
            res.set_content("oops", "text/plain");
        } else {
            res.set_content(json{{"id", j["id"]}, {"scores", {0.25}}}.dump(), "application/json");
        }
    });
    auto opts = fast_options(srv.start());
    EXPECT_EQ(RemoteEmbedder(opts).score("dog", LatentGrid(2, 2, 1)), 0.25);
    EXPECT_EQ(calls.load(), 3);

    calls = 0;
    opts.attempts = 2;
    EXPECT_THROW(RemoteEmbedder(opts).score("dog", LatentGrid(2, 2, 1)), BackendError);
    EXPECT_EQ(calls.load(), 2);
}

TEST(Remote, ErrorEnvelopeIsNotRetried) {
    StubServer srv;
    std::atomic<int> calls{0};
    srv.on("/v1/denoise", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        const auto j = json::parse(req.body);
        res.status = 400;
        res.set_content(wire::error_envelope(j["id"], wire::ErrorCode::shape_mismatch, "expected 4 channels").dump(),
                        "application/json");
    });
    const RemoteDenoiser d(fast_options(srv.start()), {});
    try {
        d.predict_eps(LatentGrid(2, 2, 3), 5, "p");
        FAIL() << "expected RemoteError";
    } catch (const RemoteError& e) {
        EXPECT_EQ(e.code(), "shape_mismatch");
        EXPECT_EQ(e.request_id().rfind("denoise-", 0), 0u);
    }
    EXPECT_EQ(calls.load(), 1);
}

TEST(Remote, Timeout) {
    StubServer srv;
    srv.on("/v1/denoise", [](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(400));
        res.set_content("{}", "application/json");
    });
    auto opts = fast_options(srv.start());
    opts.timeout = std::chrono::milliseconds(100);
    opts.attempts = 2;
    EXPECT_THROW(RemoteDenoiser(opts, {}).predict_eps(LatentGrid(1, 1, 1), 1, ""), TimeoutError);
}

TEST(Remote, UnreachableEndpoint) {
    StubServer srv;
    const std::string endpoint = srv.start();
    auto opts = fast_options(endpoint);
    {
        StubServer gone; // bind then drop a port so nothing listens there
        opts.endpoint = gone.start();
    }
    opts.attempts = 2;
    EXPECT_THROW(RemoteDenoiser(opts, {}).predict_eps(LatentGrid(1, 1, 1), 1, ""), BackendError);
    opts.endpoint = "";
    EXPECT_THROW(RemoteDenoiser(opts, {}), InvalidParameter);
}

TEST(Remote, ReferenceServerSubstitutability) {
    AnalyticWorldSpec world;
    world.texture = 0.2;
    const AnalyticDenoiser local(world, make_schedule(), 8, 8);
    const ToyEmbedder emb;
    const ToyCaptioner cap;
    ReferenceServer server(local, &emb, &cap);
    server.start();
    const auto opts = fast_options(server.endpoint());
    const RemoteDenoiser remote(opts, local.capability());
    const LatentGrid z = float_grid(9, 8, 8, 4);
    for (std::size_t t : {1u, 250u, 999u}) {
        const LatentGrid a = local.predict_eps(z, t, "a quiet river");
        const LatentGrid b = remote.predict_eps(z, t, "a quiet river");
        EXPECT_LE(max_abs_diff(a, b), 1e-6 * std::max(1.0, moments(a).variance));
    }
    const GuidanceConfig g;
    EXPECT_LE(max_abs_diff(guided_eps(local, z, 500, "x", g), guided_eps(remote, z, 500, "x", g)), 1e-5);

    const RemoteEmbedder remb(opts);
    EXPECT_NEAR(remb.score("dog", z), emb.score("dog", z), 1e-12);
    const RemoteCaptioner rcap(opts);
    const auto q = build_caption_query(TemplateId::llava_formula);
    const std::vector<std::uint8_t> png{9, 8, 7, 6};
    EXPECT_EQ(rcap.caption(png, q), cap.caption(png, q));

    // Wrong channel count is a shape_mismatch envelope.
    const RemoteDenoiser wrong(opts, {8, 8, 3});
    try {
        wrong.predict_eps(LatentGrid(8, 8, 3), 5, "x");
        FAIL();
    } catch (const RemoteError& e) {
        EXPECT_EQ(e.code(), "shape_mismatch");
    }
}

TEST(Remote, ReferenceServerWithoutCaptioner) {
    const AnalyticDenoiser local(AnalyticWorldSpec{}, make_schedule(), 8, 8);
    ReferenceServer server(local, nullptr, nullptr);
    server.start();
    auto opts = fast_options(server.endpoint());
    opts.attempts = 1;
    EXPECT_THROW(RemoteCaptioner(opts).caption({1}, build_caption_query(TemplateId::llava_formula)), BackendError);
    const auto reply = server.handle_caption(json{{"id", "c1"}, {"image_png_b64", "AQ=="}, {"template_id", "llava_formula"},
                                                  {"template_text", "nope"}}
                                                 .dump());
    EXPECT_EQ(reply.status, 503);
    EXPECT_EQ(reply.body["error_code"], "backend_unavailable");
}
