#pragma once

#include <chrono>
#include <string>

#include "lmtree/llm_gateway.hpp"

namespace lmtree {

struct HttpBackendConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::seconds timeout{60};

    nlohmann::json to_json() const;
    static HttpBackendConfig from_json(const nlohmann::json& j);
};

// Chat-completion style provider over HTTP(S) with JSON bodies.
class HttpBackend : public Backend {
public:
    // Throws FatalError if the credential variable is unset.
    explicit HttpBackend(HttpBackendConfig config);

    std::string id() const override { return "live-http:" + config_.model; }
    Completion complete(const LlmRequest& request) override;

    nlohmann::json request_body(const LlmRequest& request) const;
    static Completion parse_response(const std::string& body);

private:
    HttpBackendConfig config_;
    std::string api_key_;
};

}  // namespace lmtree
