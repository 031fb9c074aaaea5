// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

// JSON bodies for the /v1/denoise, /v1/caption and /v1/embed endpoints.
// Tensors travel as base64 of little-endian float32, row-major (h, w, c).

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "latent_grid.hpp"

namespace hiprompt::wire {

using json = nlohmann::json;

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t v = bytes[i] << 16;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

/// Strict decoder: padded input only, no whitespace.
inline std::optional<std::vector<std::uint8_t>> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) return std::nullopt;
    const auto value = [](char ch) -> int {
        if (ch >= 'A' && ch <= 'Z') return ch - 'A';
        if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
        if (ch >= '0' && ch <= '9') return ch - '0' + 52;
        if (ch == '+') return 62;
        if (ch == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        std::array<int, 4> v{};
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char ch = text[i + k];
            if (ch == '=' && last && k >= 2) {
                ++pad;
                v[k] = 0;
                continue;
            }
            if (pad > 0) return std::nullopt;
            v[k] = value(ch);
            if (v[k] < 0) return std::nullopt;
        }
        const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<std::uint8_t>(n >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
    }
    return out;
}

inline std::string encode_tensor(const LatentGrid& grid) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(grid.size() * 4);
    for (double v : grid.values()) {
        const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    return base64_encode(bytes);
}

using Shape = std::array<std::size_t, 3>;

inline Shape shape_of(const LatentGrid& g) { return {g.height(), g.width(), g.channels()}; }

inline std::string shape_string(const Shape& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

/// Throws ProtocolError on malformed base64 or a byte count that does not
/// match `shape`.
inline LatentGrid decode_tensor(std::string_view b64, const Shape& shape, const std::string& id) {
    const auto bytes = base64_decode(b64);
    if (!bytes) throw ProtocolError("malformed base64 tensor", id);
    const std::size_t n = shape[0] * shape[1] * shape[2];
    if (bytes->size() != 4 * n) {
        throw ProtocolError("tensor has " + std::to_string(bytes->size()) + " bytes, shape " + shape_string(shape) +
                                " needs " + std::to_string(4 * n),
                            id);
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>((*bytes)[4 * i + k]) << (8 * k);
        const float f = std::bit_cast<float>(u);
        if (!std::isfinite(f)) throw ProtocolError("non-finite value in tensor", id);
        data[i] = f;
    }
    return LatentGrid(shape[0], shape[1], shape[2], std::move(data));
}

// ---------------------------------------------------------------------------
// Messages

enum class ErrorCode { bad_request, shape_mismatch, backend_unavailable };

inline std::string to_string(ErrorCode c) {
    switch (c) {
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::backend_unavailable: return "backend_unavailable";
    }
    return "bad_request";
}

inline json error_envelope(const std::string& id, ErrorCode code, const std::string& message) {
    return {{"id", id}, {"error_code", to_string(code)}, {"message", message}};
}

struct DenoiseRequest {
    std::string id;
    std::size_t t = 0;
    LatentGrid latent;
    std::string prompt;
    std::string negative_prompt;
    double guidance_scale = 1.0;
};

struct DenoiseResponse {
    std::string id;
    LatentGrid eps;
};

struct CaptionRequest {
    std::string id;
    std::vector<std::uint8_t> image_png;
    std::string template_id;
    std::string template_text;
};

struct CaptionResponse {
    std::string id;
    std::string caption;
};

struct EmbedRequest {
    std::string id;
    std::vector<std::string> tokens;
    std::optional<LatentGrid> latent;
    std::optional<std::vector<std::uint8_t>> image_png;
};

struct EmbedResponse {
    std::string id;
    std::vector<double> scores;
};

inline json to_json(const DenoiseRequest& r) {
    return {{"id", r.id},
            {"t", r.t},
            {"shape", shape_of(r.latent)},
            {"latent_b64", encode_tensor(r.latent)},
            {"prompt", r.prompt},
            {"negative_prompt", r.negative_prompt},
            {"guidance_scale", r.guidance_scale}};
}

inline json to_json(const DenoiseResponse& r) {
    return {{"id", r.id}, {"eps_b64", encode_tensor(r.eps)}, {"shape", shape_of(r.eps)}};
}

inline json to_json(const CaptionRequest& r) {
    return {{"id", r.id},
            {"image_png_b64", base64_encode(r.image_png)},
            {"template_id", r.template_id},
            {"template_text", r.template_text}};
}

inline json to_json(const CaptionResponse& r) { return {{"id", r.id}, {"caption", r.caption}}; }

inline json to_json(const EmbedRequest& r) {
    json j{{"id", r.id}, {"tokens", r.tokens}};
    if (r.latent) {
        j["latent_b64"] = encode_tensor(*r.latent);
        j["shape"] = shape_of(*r.latent);
    }
    if (r.image_png) j["image_png_b64"] = base64_encode(*r.image_png);
    return j;
}

inline json to_json(const EmbedResponse& r) { return {{"id", r.id}, {"scores", r.scores}}; }

namespace detail {

inline std::string id_of(const json& j) {
    if (j.is_object() && j.contains("id") && j["id"].is_string()) return j["id"].get<std::string>();
    return {};
}

inline const json& field(const json& j, const char* key, json::value_t type, const std::string& id) {
    if (!j.is_object() || !j.contains(key)) throw ProtocolError(std::string("missing field '") + key + "'", id);
    const json& v = j.at(key);
    const bool ok = type == json::value_t::number_float ? v.is_number()
                    : type == json::value_t::number_unsigned ? v.is_number_unsigned()
                                                              : v.type() == type;
    if (!ok) throw ProtocolError(std::string("field '") + key + "' has the wrong type", id);
    return v;
}

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& id) {
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || k == a;
        if (!known) throw ProtocolError("unexpected field '" + k + "'", id);
    }
}

inline Shape parse_shape(const json& j, const std::string& id) {
    const json& s = field(j, "shape", json::value_t::array, id);
    if (s.size() != 3) throw ProtocolError("shape must have 3 entries", id);
    Shape out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!s[i].is_number_unsigned() || s[i].get<std::size_t>() == 0) {
            throw ProtocolError("shape entries must be positive integers", id);
        }
        out[i] = s[i].get<std::size_t>();
    }
    return out;
}

inline std::string string_field(const json& j, const char* key, const std::string& id) {
    return field(j, key, json::value_t::string, id).get<std::string>();
}

} // namespace detail

/// Each parser enforces the schema exactly: required fields, types and no
/// unknown keys. Violations raise ProtocolError carrying the message id.
inline DenoiseRequest parse_denoise_request(const json& j) {
    const std::string id = detail::id_of(j);
    detail::string_field(j, "id", id);
    detail::only_keys(j, {"id", "t", "shape", "latent_b64", "prompt", "negative_prompt", "guidance_scale"}, id);
    DenoiseRequest r;
    r.id = id;
    r.t = detail::field(j, "t", json::value_t::number_unsigned, id).get<std::size_t>();
    const Shape shape = detail::parse_shape(j, id);
    r.latent = decode_tensor(detail::string_field(j, "latent_b64", id), shape, id);
    r.prompt = detail::string_field(j, "prompt", id);
    r.negative_prompt = detail::string_field(j, "negative_prompt", id);
    r.guidance_scale = detail::field(j, "guidance_scale", json::value_t::number_float, id).get<double>();
    return r;
}

inline DenoiseResponse parse_denoise_response(const json& j) {
    const std::string id = detail::id_of(j);
    detail::string_field(j, "id", id);
    detail::only_keys(j, {"id", "eps_b64", "shape"}, id);
    const Shape shape = detail::parse_shape(j, id);
    return {id, decode_tensor(detail::string_field(j, "eps_b64", id), shape, id)};
}

inline CaptionRequest parse_caption_request(const json& j) {
    const std::string id = detail::id_of(j);
    detail::string_field(j, "id", id);
    detail::only_keys(j, {"id", "image_png_b64", "template_id", "template_text"}, id);
    CaptionRequest r;
    r.id = id;
    auto png = base64_decode(detail::string_field(j, "image_png_b64", id));
    if (!png) throw ProtocolError("malformed base64 image", id);
    r.image_png = std::move(*png);
    r.template_id = detail::string_field(j, "template_id", id);
    r.template_text = detail::string_field(j, "template_text", id);
    return r;
}

inline CaptionResponse parse_caption_response(const json& j) {
    const std::string id = detail::id_of(j);
    detail::string_field(j, "id", id);
    detail::only_keys(j, {"id", "caption"}, id);
    return {id, detail::string_field(j, "caption", id)};
}

inline EmbedRequest parse_embed_request(const json& j) {
    const std::string id = detail::id_of(j);
    detail::string_field(j, "id", id);
    detail::only_keys(j, {"id", "tokens", "image_png_b64", "latent_b64", "shape"}, id);
    EmbedRequest r;
    r.id = id;
    for (const auto& t : detail::field(j, "tokens", json::value_t::array, id)) {
        if (!t.is_string()) throw ProtocolError("tokens must be strings", id);
        r.tokens.push_back(t.get<std::string>());
    }
    const bool has_latent = j.contains("latent_b64");
    const bool has_image = j.contains("image_png_b64");
    if (has_latent == has_image) throw ProtocolError("exactly one of image_png_b64 or latent_b64+shape required", id);
    if (has_latent) {
        r.latent = decode_tensor(detail::string_field(j, "latent_b64", id), detail::parse_shape(j, id), id);
    } else {
        if (j.contains("shape")) throw ProtocolError("shape only accompanies latent_b64", id);
        auto png = base64_decode(detail::string_field(j, "image_png_b64", id));
        if (!png) throw ProtocolError("malformed base64 image", id);
        r.image_png = std::move(*png);
    }
    return r;
}

inline EmbedResponse parse_embed_response(const json& j) {
    const std::string id = detail::id_of(j);
    detail::string_field(j, "id", id);
    detail::only_keys(j, {"id", "scores"}, id);
    EmbedResponse r{id, {}};
    for (const auto& s : detail::field(j, "scores", json::value_t::array, id)) {
        if (!s.is_number()) throw ProtocolError("scores must be numbers", id);
        const double v = s.get<double>();
        if (!(v >= -1.0 && v <= 1.0)) throw ProtocolError("score outside [-1, 1]", id);
        r.scores.push_back(v);
    }
    return r;
}

struct ErrorEnvelope {
    std::string id;
    std::string error_code;
    std::string message;
};

inline bool is_error_envelope(const json& j) { return j.is_object() && j.contains("error_code"); }

inline ErrorEnvelope parse_error_envelope(const json& j) {
    const std::string id = detail::id_of(j);
    detail::only_keys(j, {"id", "error_code", "message"}, id);
    ErrorEnvelope e{detail::string_field(j, "id", id), detail::string_field(j, "error_code", id),
                    detail::string_field(j, "message", id)};
    if (e.error_code != "bad_request" && e.error_code != "shape_mismatch" && e.error_code != "backend_unavailable") {
        throw ProtocolError("unknown error_code '" + e.error_code + "'", id);
    }
    return e;
}

} // namespace hiprompt::wire
