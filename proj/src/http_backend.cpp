#include "lmtree/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

namespace lmtree {

nlohmann::json HttpBackendConfig::to_json() const {
    return {{"base_url", base_url},
            {"path", path},
            {"model", model},
            {"api_key_env", api_key_env},
            {"timeout_s", timeout.count()}};
}

HttpBackendConfig HttpBackendConfig::from_json(const nlohmann::json& j) {
    HttpBackendConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.path = j.value("path", c.path);
    c.model = j.value("model", c.model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<long long>(c.timeout.count())));
    return c;
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) throw FatalError("credential variable " + config_.api_key_env + " is not set");
    api_key_ = key;
}

nlohmann::json HttpBackend::request_body(const LlmRequest& request) const {
    auto messages = nlohmann::json::array();
    if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
    messages.push_back({{"role", "user"}, {"content", request.prompt}});
    return {{"model", config_.model},
            {"messages", messages},
            {"temperature", request.decoding.temperature},
            {"max_tokens", request.decoding.max_tokens}};
}

Completion HttpBackend::parse_response(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw TransientError("provider returned malformed JSON");
    try {
        Completion c;
        c.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (j.contains("usage")) {
            c.prompt_tokens = j["usage"].value("prompt_tokens", 0ULL);
            c.completion_tokens = j["usage"].value("completion_tokens", 0ULL);
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("unexpected provider response: ") + e.what());
    }
}

Completion HttpBackend::complete(const LlmRequest& request) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    auto res = client.Post(config_.path, headers, request_body(request).dump(), "application/json");
    if (!res) throw TransientError("transport error: " + httplib::to_string(res.error()));
    const int status = res->status;
    if (status == 401 || status == 403) throw FatalError("provider rejected credentials (HTTP " + std::to_string(status) + ")");
    if (status == 408 || status == 429 || status >= 500)
        throw TransientError("provider HTTP " + std::to_string(status));
    if (status != 200) throw std::runtime_error("provider HTTP " + std::to_string(status) + ": " + res->body);
    return parse_response(res->body);
}

}  // namespace lmtree
