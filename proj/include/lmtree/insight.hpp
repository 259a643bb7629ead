#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/llm_gateway.hpp"

namespace lmtree {

class EmptyInsightError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct InsightList {
    std::vector<std::string> items;
    std::size_t provenance = 0;  // contributing batch summaries

    std::string as_text() const;
    nlohmann::json to_json() const;
    static InsightList from_json(const nlohmann::json& j);
    bool operator==(const InsightList&) const = default;
};

// Caller passes positive-class samples only. Empty batch: "" and no model call.
// Backend failure: nullopt, and the caller skips the batch.
std::optional<std::string> summarize_batch(Gateway& gateway, const SampleRefs& batch, const std::string& task);

// One completion; the reply is split into items on line boundaries.
InsightList synthesize(Gateway& gateway, const std::vector<std::string>& summaries, const std::string& task);

struct InsightReport {
    InsightList insights;
    std::size_t batches = 0;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

// Positives of `samples` are summarized in batches of `batch_size` (concurrently, order kept),
// then synthesized once.
InsightReport generate_insights(Gateway& gateway, const SampleRefs& samples, const std::string& task,
                                std::size_t batch_size = 250);

}  // namespace lmtree
