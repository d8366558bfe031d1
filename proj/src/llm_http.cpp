#include "lmabo/llm_bridge.hpp"

#include <cstdlib>
#include <regex>

#include <json.hpp>

#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's headers.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace lmabo::llm {

namespace {

std::string getenv_or_empty(const std::string& name) {
    if (name.empty()) return {};
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string();
}

}  // namespace

HttpBackend::HttpBackend(TransportConfig config) : config_(std::move(config)) {
    config_.validate();
    endpoint_ = config_.endpoint.empty() ? getenv_or_empty(config_.endpoint_env) : config_.endpoint;
    if (endpoint_.empty())
        throw ConfigError("no chat endpoint configured (set " + config_.endpoint_env + " or transport.endpoint)");
    api_key_ = getenv_or_empty(config_.api_key_env);
    if (api_key_.empty()) throw ConfigError("API key missing: environment variable " + config_.api_key_env + " is unset");
}

std::string HttpBackend::request_body(const TransportConfig& config, const std::vector<ChatMessage>& messages) {
    nlohmann::json body;
    body["model"] = config.model;
    body["temperature"] = config.temperature;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    return body.dump();
}

std::string HttpBackend::parse_response(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_null()) return {};
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed chat response: ") + e.what(), false);
    }
}

std::string HttpBackend::complete(const std::vector<ChatMessage>& messages) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(endpoint_, m, url_re)) throw ConfigError("malformed endpoint URL: " + endpoint_);
    const std::string origin = m[1].str();
    const std::string path = m[2].matched ? m[2].str() : "/";

    httplib::Client client(origin);
    const auto timeout = std::chrono::milliseconds(static_cast<long>(config_.timeout_s * 1000.0));
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
    const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

    auto res = client.Post(path, headers, request_body(config_, messages), "application/json");
    if (!res) throw BackendError("request failed: " + httplib::to_string(res.error()), true);
    if (res->status == 429 || res->status >= 500)
        throw BackendError("server returned HTTP " + std::to_string(res->status), true);
    if (res->status != 200)
        throw BackendError("server returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300),
                           false);
    return parse_response(res->body);
}

}  // namespace lmabo::llm
