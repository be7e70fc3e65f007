#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>

// httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers included later.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include "semortho/core/error.hpp"

namespace semortho {

/// Connection settings shared by the embedding and labeling clients.
struct ServiceConfig {
    std::string endpoint;           // full URL, e.g. http://localhost:8080/v1/embeddings
    std::string model_id;
    std::string token_env;          // bearer token read from this variable when set
    std::chrono::milliseconds timeout{30000};
    int retries = 3;                // extra attempts after the first
    std::chrono::milliseconds backoff{250};  // doubled after each failed attempt
};

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("endpoint must be an absolute URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

/// POSTs a JSON body, retrying network errors, 429 and 5xx with exponential
/// backoff. Other 4xx responses fail immediately.
inline nlohmann::json post_json(const ServiceConfig& cfg, const nlohmann::json& body) {
    const auto url = parse_url(cfg.endpoint);
    httplib::Client client(url.origin);
    if (!client.is_valid()) throw ServiceError("unsupported endpoint: " + cfg.endpoint);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!cfg.token_env.empty()) {
        if (const char* token = std::getenv(cfg.token_env.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const std::string payload = body.dump();

    std::string last_error;
    auto delay = cfg.backoff;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw ServiceError(cfg.endpoint + ": malformed response body: " + e.what());
            }
        }
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status != 429 && res->status < 500)
            throw ServiceError(cfg.endpoint + ": " + last_error + " " + res->body);
    }
    throw ServiceError(cfg.endpoint + ": giving up after " + std::to_string(cfg.retries + 1) +
                       " attempts (" + last_error + ")");
}

}  // namespace semortho
