#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/prompts.hpp"

namespace lmtree {

// Retryable: rate limits, timeouts, 5xx.
class TransientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Not retryable and aborts the whole batch: bad credentials, bad configuration.
class FatalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 512;
};

struct LlmRequest {
    std::uint64_t correlation_id = 0;
    TemplateId template_id = TemplateId::InferenceAnswer;
    std::string system;   // rendered TaskContext
    std::string prompt;   // rendered template body
    Bindings bindings;    // the values the prompt was rendered from
    DecodingParams decoding;
};

struct Completion {
    std::string text;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
};

struct LlmResponse {
    std::uint64_t correlation_id = 0;
    bool ok = false;
    std::string text;
    std::string error;
    int attempts = 0;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    std::string backend_id;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    // Throws TransientError, FatalError, or any other exception for a non-retryable per-request failure.
    virtual Completion complete(const LlmRequest& request) = 0;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds base_delay{250};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{8000};

    std::chrono::milliseconds delay_before(int attempt) const;  // attempt >= 2
};

struct BatchLimits {
    std::size_t max_in_flight = 8;
    RetryPolicy retry;
};

// Responses are positionally aligned with requests. A request that exhausts its retries
// yields ok=false; a FatalError from any request is rethrown after in-flight calls finish.
std::vector<LlmResponse> complete_batch(Backend& backend, std::span<const LlmRequest> requests,
                                        const BatchLimits& limits);

enum class AnswerKind { Yes, No, Unknown };

std::string to_string(AnswerKind a);

struct Answer {
    AnswerKind value = AnswerKind::Unknown;
    std::string raw;
    std::string error;  // set when the backend failed

    bool operator==(const Answer&) const = default;
};

// First token, case-insensitive, trailing punctuation ignored: yes / no, anything else Unknown.
AnswerKind parse_answer(std::string_view text);

// Case-fold and collapse whitespace.
std::string canonical_text(std::string_view text);

class AnswerCache {
public:
    std::optional<Answer> get(TemplateId tpl, const std::string& question, const std::string& sample_id) const;
    void put(TemplateId tpl, const std::string& question, const std::string& sample_id, const Answer& answer);
    std::size_t size() const;

    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    static std::string key(TemplateId tpl, const std::string& question, const std::string& sample_id);

    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, Answer> entries_;
};

struct Usage {
    std::uint64_t requests = 0;
    std::uint64_t failures = 0;
    std::uint64_t attempts = 0;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    std::uint64_t cache_hits = 0;

    std::uint64_t total_tokens() const { return prompt_tokens + completion_tokens; }
    nlohmann::json to_json() const;
};

// The single choke-point for model calls.
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, BatchLimits limits = {});

    Backend& backend() { return *backend_; }
    const BatchLimits& limits() const { return limits_; }
    AnswerCache& cache() { return cache_; }

    void set_template(PromptTemplate tpl);
    const PromptTemplate& get_template(TemplateId id) const;

    // Renders the template and the task context. InferenceAnswer and CategoryGroup always use temperature 0.
    LlmRequest make_request(TemplateId id, Bindings bindings, const std::string& task,
                            DecodingParams decoding = {});

    std::vector<LlmResponse> complete(std::span<const LlmRequest> requests);
    LlmResponse complete_one(const LlmRequest& request);

    Answer answer_yes_no(const std::string& question, const Sample& sample, const std::string& task);
    // Cache misses go out as one batch.
    std::vector<Answer> answer_many(const std::string& question, const SampleRefs& samples, const std::string& task);

    Usage usage() const;

private:
    void account(const LlmResponse& r);

    std::shared_ptr<Backend> backend_;
    BatchLimits limits_;
    AnswerCache cache_;
    std::map<TemplateId, PromptTemplate> overrides_;
    std::atomic<std::uint64_t> next_id_{1};

    mutable std::mutex usage_mu_;
    Usage usage_;
};

}  // namespace lmtree
