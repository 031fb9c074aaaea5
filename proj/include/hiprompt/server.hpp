// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "decompose.hpp"
#include "wire.hpp"

namespace hiprompt {

/// Serves in-process backends over the wire protocol. Used as the protocol
/// reference for conformance fixtures and for substitutability tests.
class ReferenceServer {
public:
    ReferenceServer(const DenoiserBackend& denoiser, const EmbedderBackend* embedder,
                    const CaptionerBackend* captioner)
        : m_denoiser(denoiser), m_embedder(embedder), m_captioner(captioner) {
        m_server.Post("/v1/denoise", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, handle_denoise(req.body));
        });
        m_server.Post("/v1/caption", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, handle_caption(req.body));
        });
        m_server.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, handle_embed(req.body));
        });
    }

    ReferenceServer(const ReferenceServer&) = delete;
    ReferenceServer& operator=(const ReferenceServer&) = delete;

    ~ReferenceServer() { stop(); }

    /// Binds an ephemeral port on 127.0.0.1 and serves on a background thread.
    int start() {
        m_port = m_server.bind_to_any_port("127.0.0.1");
        if (m_port <= 0) throw BackendError("reference server: cannot bind");
        m_thread = std::thread([this] { m_server.listen_after_bind(); });
        m_server.wait_until_ready();
        return m_port;
    }

    void stop() {
        if (m_thread.joinable()) {
            m_server.stop();
            m_thread.join();
        }
    }

    int port() const noexcept { return m_port; }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(m_port); }

    struct Reply {
        int status = 200;
        wire::json body;
    };

    Reply handle_denoise(const std::string& body) const {
        wire::json j;
        std::string id;
        try {
            j = wire::json::parse(body);
            id = wire::detail::id_of(j);
            const auto req = wire::parse_denoise_request(j);
            const Capability cap = m_denoiser.capability();
            if (cap.channels != 0 && req.latent.channels() != cap.channels) {
                return {400, wire::error_envelope(id, wire::ErrorCode::shape_mismatch,
                                                  "expected " + std::to_string(cap.channels) + " channels, got " +
                                                      std::to_string(req.latent.channels()))};
            }
            GuidanceConfig g;
            g.scale = req.guidance_scale;
            g.negative_text = req.negative_prompt;
            const LatentGrid eps = guided_eps(m_denoiser, req.latent, req.t, req.prompt, g);
            return {200, wire::to_json(wire::DenoiseResponse{req.id, eps})};
        } catch (const wire::json::exception& e) {
            return {400, wire::error_envelope(id, wire::ErrorCode::bad_request, e.what())};
        } catch (const Error& e) {
            return {400, wire::error_envelope(id, wire::ErrorCode::bad_request, e.what())};
        }
    }

    Reply handle_caption(const std::string& body) const {
        std::string id;
        try {
            const auto j = wire::json::parse(body);
            id = wire::detail::id_of(j);
            const auto req = wire::parse_caption_request(j);
            if (m_captioner == nullptr) {
                return {503, wire::error_envelope(id, wire::ErrorCode::backend_unavailable, "no captioner loaded")};
            }
            CaptionQuery q = build_caption_query(req.template_id);
            if (q.text != req.template_text) {
                return {400, wire::error_envelope(id, wire::ErrorCode::bad_request,
                                                  "template_text does not match template_id")};
            }
            std::string caption;
            try {
                caption = m_captioner->caption(req.image_png, q);
            } catch (const EmptyCaption&) {
            }
            return {200, wire::to_json(wire::CaptionResponse{req.id, caption})};
        } catch (const wire::json::exception& e) {
            return {400, wire::error_envelope(id, wire::ErrorCode::bad_request, e.what())};
        } catch (const Error& e) {
            return {400, wire::error_envelope(id, wire::ErrorCode::bad_request, e.what())};
        }
    }

    Reply handle_embed(const std::string& body) const {
        std::string id;
        try {
            const auto j = wire::json::parse(body);
            id = wire::detail::id_of(j);
            const auto req = wire::parse_embed_request(j);
            if (m_embedder == nullptr) {
                return {503, wire::error_envelope(id, wire::ErrorCode::backend_unavailable, "no embedder loaded")};
            }
            if (!req.latent) {
                return {400, wire::error_envelope(id, wire::ErrorCode::bad_request,
                                                  "this server scores latents only (send latent_b64 + shape)")};
            }
            return {200, wire::to_json(wire::EmbedResponse{req.id, m_embedder->scores(req.tokens, *req.latent)})};
        } catch (const wire::json::exception& e) {
            return {400, wire::error_envelope(id, wire::ErrorCode::bad_request, e.what())};
        } catch (const Error& e) {
            return {400, wire::error_envelope(id, wire::ErrorCode::bad_request, e.what())};
        }
    }

private:
    static void respond(httplib::Response& res, const Reply& reply) {
        res.status = reply.status;
        res.set_content(reply.body.dump(), "application/json");
    }

    const DenoiserBackend& m_denoiser;
    const EmbedderBackend* m_embedder;
    const CaptionerBackend* m_captioner;
    httplib::Server m_server;
    std::thread m_thread;
    int m_port = 0;
};

} // namespace hiprompt
