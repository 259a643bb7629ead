#pragma once

#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/insight.hpp"
#include "lmtree/llm_gateway.hpp"
#include "lmtree/question.hpp"

namespace lmtree {

struct GenerationOptions {
    std::size_t per_feature_max = 3;
    std::size_t max_branching = 4;
    bool inference_only = true;
    std::string advice;  // expert guidance, rendered through RebuildAdvice
};

struct CandidateSet {
    std::vector<Question> questions;
    std::vector<std::string> warnings;
    std::size_t failed_features = 0;  // backend failures
};

// Per-feature statistics shown to the model: label counts per category, quartiles
// of numeric values, most frequent words of text values.
nlohmann::json feature_profile(const FeatureSpec& spec, const SampleRefs& samples);

// Extracts the JSON array from a reply (tolerating prose or code fences around it).
std::vector<RawCandidate> parse_candidates(const std::string& reply, const std::string& feature,
                                           std::vector<std::string>& warnings);

// One QuestionGen call per feature, issued as a single concurrent batch. Malformed or
// invalid candidates are dropped with a warning; a failed feature contributes nothing.
// Results are de-duplicated on canonical text, first occurrence kept.
CandidateSet generate_candidates(Gateway& gateway, const SampleRefs& node_samples, const Schema& schema,
                                 const InsightList& insights, const std::string& task,
                                 const GenerationOptions& options = {});

// The predicate grammar as embedded in QuestionGen prompts.
const std::string& dsl_grammar_summary();

}  // namespace lmtree
