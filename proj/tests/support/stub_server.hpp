// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <thread>

#include <httplib.h>

namespace hiprompt::testing {

/// Minimal HTTP server on an ephemeral loopback port for protocol tests.
class StubServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    void on(const std::string& path, Handler h) { m_server.Post(path, std::move(h)); }

    std::string start() {
        m_port = m_server.bind_to_any_port("127.0.0.1");
        m_thread = std::thread([this] { m_server.listen_after_bind(); });
        m_server.wait_until_ready();
        return "http://127.0.0.1:" + std::to_string(m_port);
    }

    ~StubServer() {
        if (m_thread.joinable()) {
            m_server.stop();
            m_thread.join();
        }
    }

private:
    httplib::Server m_server;
    std::thread m_thread;
    int m_port = 0;
};

} // namespace hiprompt::testing
