#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <cstdlib>

#include "irera/error.hpp"
#include "irera/lm.hpp"

namespace irera {

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;    // without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(ErrorCode::config, "endpoint must be an absolute http(s) URL: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    ep.path = path_start == std::string::npos ? std::string() : url.substr(path_start);
    while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
    return ep;
}

nlohmann::json post_json(const BackendSpec& spec, const std::string& route, const nlohmann::json& body) {
    Endpoint ep = split_endpoint(spec.endpoint);
    httplib::Client client(ep.origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(300));

    httplib::Headers headers;
    if (!spec.api_key_env.empty()) {
        if (const char* key = std::getenv(spec.api_key_env.c_str()); key != nullptr && *key != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    auto res = client.Post(ep.path + route, headers, body.dump(), "application/json");
    if (!res) {
        throw Error(ErrorCode::transport, spec.id + ": " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
        throw Error(ErrorCode::transport, spec.id + ": HTTP " + std::to_string(res->status));
    }
    if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::request_rejected,
                    spec.id + ": HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 512));
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::malformed_response, spec.id + ": " + e.what());
    }
}

} // namespace

std::vector<std::string> HttpChatBackend::generate(const std::string& prompt, const SamplingParams& params) {
    nlohmann::json body = {
        {"model", spec().model_name},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", params.temperature},
        {"max_tokens", params.max_tokens},
        {"n", params.n},
    };
    if (params.seed) body["seed"] = *params.seed;

    nlohmann::json reply = post_json(spec(), "/chat/completions", body);
    try {
        std::vector<std::string> out;
        for (const auto& choice : reply.at("choices")) {
            const auto& content = choice.at("message").at("content");
            out.push_back(content.is_null() ? std::string() : content.get<std::string>());
        }
        if (out.size() != static_cast<std::size_t>(params.n)) {
            throw Error(ErrorCode::malformed_response, spec().id + ": expected " + std::to_string(params.n) +
                                                           " choices, got " + std::to_string(out.size()));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::malformed_response, spec().id + ": " + e.what());
    }
}

std::vector<std::vector<float>> HttpEmbedBackend::embed_batch(std::span<const std::string> texts) {
    nlohmann::json body = {{"model", spec().model_name},
                           {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    nlohmann::json reply = post_json(spec(), "/embeddings", body);
    try {
        std::vector<std::pair<std::size_t, std::vector<float>>> rows;
        std::size_t position = 0;
        for (const auto& item : reply.at("data")) {
            std::size_t index = item.value("index", position);
            rows.emplace_back(index, item.at("embedding").get<std::vector<float>>());
            ++position;
        }
        if (rows.size() != texts.size()) {
            throw Error(ErrorCode::malformed_response, spec().id + ": expected " + std::to_string(texts.size()) +
                                                           " embeddings, got " + std::to_string(rows.size()));
        }
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::vector<float>> out;
        out.reserve(rows.size());
        for (auto& [index, vec] : rows) out.push_back(std::move(vec));
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::malformed_response, spec().id + ": " + e.what());
    }
}

} // namespace irera
