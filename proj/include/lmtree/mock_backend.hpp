#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "lmtree/dataset.hpp"
#include "lmtree/llm_gateway.hpp"
#include "lmtree/predicate_dsl.hpp"

namespace lmtree {

// Deterministic offline backend. Responses come from per-template handlers;
// calls are counted and in-flight concurrency is tracked.
class MockBackend : public Backend {
public:
    using Handler = std::function<std::string(const LlmRequest&)>;

    explicit MockBackend(std::string id = "mock");

    std::string id() const override { return id_; }
    Completion complete(const LlmRequest& request) override;

    void on(TemplateId id, Handler handler);
    bool has_handler(TemplateId id) const;

    // The next n calls throw TransientError.
    void fail_next(int n);
    // Every call throws FatalError while set.
    void set_fatal(bool fatal) { fatal_ = fatal; }
    void set_latency(std::chrono::microseconds latency) { latency_ = latency; }

    std::size_t calls() const { return calls_; }
    std::size_t calls(TemplateId id) const;
    std::size_t peak_in_flight() const { return peak_; }
    void reset_counters();

private:
    std::string id_;
    mutable std::mutex mu_;
    std::map<TemplateId, Handler> handlers_;
    std::map<TemplateId, std::size_t> per_template_;
    std::atomic<int> pending_failures_{0};
    std::atomic<bool> fatal_{false};
    std::chrono::microseconds latency_{0};
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> peak_{0};
};

// Question phrasings the scripted oracle emits and can answer.
namespace mock_questions {
std::string category_is(const std::string& feature, const std::string& category);
std::string at_least(const std::string& feature, double threshold);
std::string mentions(const std::string& feature, const std::string& word);
// The predicate a scripted question stands for, if it is one of the phrasings above.
std::optional<dsl::Expr> interpret(const std::string& question);
}  // namespace mock_questions

struct OracleMockOptions {
    // Answers VanillaBaseline / FewShotBaseline; without it those answer "No".
    std::optional<dsl::Expr> baseline_rule;
};

// Reconstructs a Sample from the sample_json binding of a request.
Sample sample_from_bindings(const LlmRequest& request, const Schema& schema, const std::string& key = "sample_json");

// Installs handlers for every template:
//  QuestionGen      per-feature questions derived from the feature profile
//  InferenceAnswer  answers scripted questions from the record's own features
//  InsightBatch     majority value per categorical feature
//  InsightSynthesis de-duplicated union of summary lines
//  CategoryGroup    sorted values chunked into max_groups groups
//  *Baseline        baseline_rule, or "No"
void install_oracle_handlers(MockBackend& mock, const Schema& schema, OracleMockOptions options = {});
std::shared_ptr<MockBackend> make_oracle_mock(const Schema& schema, OracleMockOptions options = {});

}  // namespace lmtree
