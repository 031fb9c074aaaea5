// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace hiprompt {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class DegenerateTimestep : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class InvariantFailure : public Error {
public:
    using Error::Error;
};

// Failures talking to (or inside) a model backend. `request_id` is empty for
// in-process backends.
class BackendError : public Error {
public:
    BackendError(const std::string& what, std::string request_id = {})
        : Error(request_id.empty() ? what : what + " [request " + request_id + "]"),
          m_request_id(std::move(request_id)) {}

    const std::string& request_id() const noexcept { return m_request_id; }

private:
    std::string m_request_id;
};

class ProtocolError : public BackendError {
public:
    using BackendError::BackendError;
};

class RemoteShapeMismatch : public BackendError {
public:
    using BackendError::BackendError;
};

class TimeoutError : public BackendError {
public:
    using BackendError::BackendError;
};

// Server answered with an error envelope.
class RemoteError : public BackendError {
public:
    RemoteError(const std::string& code, const std::string& message, std::string request_id)
        : BackendError(code + ": " + message, std::move(request_id)), m_code(code) {}

    const std::string& code() const noexcept { return m_code; }

private:
    std::string m_code;
};

class EmptyCaption : public BackendError {
public:
    using BackendError::BackendError;
};

} // namespace hiprompt
