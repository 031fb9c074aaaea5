// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "backends.hpp"
#include "wire.hpp"

namespace hiprompt {

struct RemoteOptions {
    std::string endpoint;                         // e.g. "http://127.0.0.1:8080"
    int attempts = 3;
    std::chrono::milliseconds backoff{250};       // doubled after each failed attempt
    std::chrono::milliseconds timeout{60000};
    std::size_t pool_size = 4;
};

/// Bounded set of HTTP clients; at most pool_size requests are in flight.
class ClientPool {
public:
    explicit ClientPool(const RemoteOptions& opts) : m_opts(opts) {
        if (opts.endpoint.empty()) throw InvalidParameter("remote backend: endpoint is empty");
        if (opts.pool_size == 0) throw InvalidParameter("remote backend: pool size must be >= 1");
        if (opts.attempts < 1) throw InvalidParameter("remote backend: attempts must be >= 1");
        for (std::size_t i = 0; i < opts.pool_size; ++i) {
            auto c = std::make_unique<httplib::Client>(opts.endpoint);
            if (!c->is_valid()) throw InvalidParameter("remote backend: invalid endpoint '" + opts.endpoint + "'");
            const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts.timeout);
            const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opts.timeout - secs);
            c->set_connection_timeout(secs.count(), usecs.count());
            c->set_read_timeout(secs.count(), usecs.count());
            c->set_write_timeout(secs.count(), usecs.count());
            m_free.push_back(c.get());
            m_clients.push_back(std::move(c));
        }
    }

    /// POSTs `body` to `path`, retrying transport failures, 5xx responses and
    /// backend_unavailable envelopes. Returns the parsed success body.
    wire::json post(const std::string& path, const wire::json& body, const std::string& id) {
        const std::string payload = body.dump();
        auto delay = m_opts.backoff;
        std::string last_failure;
        bool last_was_timeout = false;
        for (int attempt = 1; attempt <= m_opts.attempts; ++attempt) {
            if (attempt > 1) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
            httplib::Result res = send(path, payload);
            if (!res) {
                const auto err = res.error();
                last_was_timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                                   err == httplib::Error::ConnectionTimeout;
                last_failure = "transport error: " + httplib::to_string(err);
                continue;
            }
            last_was_timeout = false;
            wire::json reply;
            try {
                reply = wire::json::parse(res->body);
            } catch (const wire::json::exception&) {
                if (res->status >= 500) {
                    last_failure = "HTTP " + std::to_string(res->status);
                    continue;
                }
                throw ProtocolError(path + ": response is not JSON (HTTP " + std::to_string(res->status) + ")", id);
            }
            if (wire::is_error_envelope(reply)) {
                const auto env = wire::parse_error_envelope(reply);
                if (env.error_code == "backend_unavailable") {
                    last_failure = "backend_unavailable: " + env.message;
                    continue;
                }
                throw RemoteError(env.error_code, env.message, id);
            }
            if (res->status >= 500) {
                last_failure = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw ProtocolError(path + ": unexpected HTTP " + std::to_string(res->status), id);
            }
            if (wire::detail::id_of(reply) != id) throw ProtocolError(path + ": response id does not echo request", id);
            return reply;
        }
        const std::string msg =
            path + ": giving up after " + std::to_string(m_opts.attempts) + " attempts (" + last_failure + ")";
        if (last_was_timeout) throw TimeoutError(msg, id);
        throw BackendError(msg, id);
    }

    std::string next_id(const char* kind) { return std::string(kind) + "-" + std::to_string(++m_counter); }

private:
    httplib::Result send(const std::string& path, const std::string& payload) {
        httplib::Client* c = nullptr;
        {
            std::unique_lock lock(m_mutex);
            m_cv.wait(lock, [this] { return !m_free.empty(); });
            c = m_free.back();
            m_free.pop_back();
        }
        struct Release {
            ClientPool* pool;
            httplib::Client* client;
            ~Release() {
                {
                    std::lock_guard lock(pool->m_mutex);
                    pool->m_free.push_back(client);
                }
                pool->m_cv.notify_one();
            }
        } release{this, c};
        return c->Post(path, payload, "application/json");
    }

    RemoteOptions m_opts;
    std::vector<std::unique_ptr<httplib::Client>> m_clients;
    std::vector<httplib::Client*> m_free;
    std::mutex m_mutex;
    std::condition_variable m_cv;
    std::atomic<std::uint64_t> m_counter{0};
};

/// Denoiser behind POST /v1/denoise. Guidance is applied engine-side, so each
/// request asks for a single conditional estimate (guidance_scale = 1).
class RemoteDenoiser final : public DenoiserBackend {
public:
    RemoteDenoiser(const RemoteOptions& opts, Capability cap)
        : m_pool(std::make_shared<ClientPool>(opts)), m_cap(cap) {}

    Capability capability() const override { return m_cap; }

    LatentGrid predict_eps(const LatentGrid& z, std::size_t t, const std::string& text) const override {
        return remote_predict_eps(z, t, text, "", 1.0);
    }

    LatentGrid remote_predict_eps(const LatentGrid& z, std::size_t t, const std::string& text,
                                  const std::string& negative, double guidance_scale) const {
        wire::DenoiseRequest req{m_pool->next_id("denoise"), t, z, text, negative, guidance_scale};
        const auto reply = m_pool->post("/v1/denoise", wire::to_json(req), req.id);
        wire::DenoiseResponse resp = wire::parse_denoise_response(reply);
        if (!resp.eps.same_shape(z)) {
            throw RemoteShapeMismatch("/v1/denoise: expected shape " + z.shape_string() + ", got " +
                                          resp.eps.shape_string(),
                                      req.id);
        }
        return std::move(resp.eps);
    }

private:
    std::shared_ptr<ClientPool> m_pool;
    Capability m_cap;
};

class RemoteCaptioner final : public CaptionerBackend {
public:
    explicit RemoteCaptioner(const RemoteOptions& opts) : m_pool(std::make_shared<ClientPool>(opts)) {}

    std::string caption(const std::vector<std::uint8_t>& png, const CaptionQuery& query) const override {
        wire::CaptionRequest req{m_pool->next_id("caption"), png, to_string(query.template_id), query.text};
        const auto reply = m_pool->post("/v1/caption", wire::to_json(req), req.id);
        std::string text = wire::parse_caption_response(reply).caption;
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) throw EmptyCaption("/v1/caption: empty caption", req.id);
        const auto last = text.find_last_not_of(" \t\r\n");
        return text.substr(first, last - first + 1);
    }

private:
    std::shared_ptr<ClientPool> m_pool;
};

/// Embedder behind POST /v1/embed, sending the latent patch.
class RemoteEmbedder final : public EmbedderBackend {
public:
    explicit RemoteEmbedder(const RemoteOptions& opts) : m_pool(std::make_shared<ClientPool>(opts)) {}

    double score(const std::string& token, const LatentGrid& patch) const override {
        return scores({token}, patch).front();
    }

    std::vector<double> scores(const std::vector<std::string>& tokens, const LatentGrid& patch) const override {
        wire::EmbedRequest req{m_pool->next_id("embed"), tokens, patch, std::nullopt};
        const auto reply = m_pool->post("/v1/embed", wire::to_json(req), req.id);
        auto resp = wire::parse_embed_response(reply);
        if (resp.scores.size() != tokens.size()) {
            throw ProtocolError("/v1/embed: " + std::to_string(resp.scores.size()) + " scores for " +
                                    std::to_string(tokens.size()) + " tokens",
                                req.id);
        }
        return resp.scores;
    }

private:
    std::shared_ptr<ClientPool> m_pool;
};

} // namespace hiprompt
