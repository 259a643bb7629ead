#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/llm_gateway.hpp"
#include "lmtree/question.hpp"

namespace lmtree {

struct ClassCounts {
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;

    std::uint64_t total() const { return pos + neg; }
    double ratio() const { return total() ? static_cast<double>(pos) / static_cast<double>(total()) : 0.0; }
    ClassCounts& operator+=(const ClassCounts& o) {
        pos += o.pos;
        neg += o.neg;
        return *this;
    }
    bool operator==(const ClassCounts&) const = default;
};

ClassCounts count_classes(const SampleRefs& samples);

// 1 - sum_j p_j^2. Throws std::domain_error on an empty node.
double gini(const ClassCounts& counts);

// sum_i (n_i / N) * gini(child_i). Throws std::invalid_argument on an empty child.
double weighted_gini(std::span<const ClassCounts> children);

enum class UnknownPolicy { RouteNo, AbstainDrop };

std::string to_string(UnknownPolicy p);
UnknownPolicy unknown_policy_from_string(const std::string& s);

struct Branch {
    std::string label;
    SampleRefs samples;
};

struct Partition {
    std::vector<Branch> children;
    SampleRefs abstained;  // Unknown answers under AbstainDrop

    std::vector<ClassCounts> child_counts() const;
};

double weighted_gini(const Partition& partition);

// Answers a yes/no question for every sample, positionally aligned.
using AnswerFn = std::function<std::vector<Answer>(const std::string& question, const SampleRefs& samples)>;

AnswerFn gateway_answers(Gateway& gateway, std::string task);

// Children follow question.branch_labels(schema); empty children are kept.
// Clustering samples whose category is missing or ungrouped go to the largest group.
Partition apply_question(const Question& q, const SampleRefs& samples, const AnswerFn& answers, const Schema& schema,
                         UnknownPolicy policy = UnknownPolicy::RouteNo);

struct SplitCandidate {
    Question question;
    Partition partition;
    std::vector<ClassCounts> counts;
    double weighted_gini = 0.0;
};

struct SplitSearch {
    std::optional<SplitCandidate> best;
    std::size_t best_index = 0;
    // Per candidate: weighted Gini if valid, nullopt if unusable or below min_leaf.
    std::vector<std::optional<double>> scores;
    std::vector<std::string> warnings;
};

// Minimum weighted Gini over candidates whose every child holds >= min_leaf samples.
// Ties go to the earliest candidate. Comparisons are exact (rational) whenever the
// counts fit in 128-bit arithmetic.
SplitSearch best_split(const std::vector<Question>& candidates, const SampleRefs& samples, std::size_t min_leaf,
                       const AnswerFn& answers, const Schema& schema, UnknownPolicy policy = UnknownPolicy::RouteNo);

// Identity grouping when categories fit; otherwise one CategoryGroup completion, validated,
// retried once, then balanced chunking of frequency-ordered categories.
Grouping group_categories(Gateway& gateway, const std::string& feature, const std::vector<std::string>& categories,
                          std::size_t max_branching, const std::string& task,
                          const std::map<std::string, std::size_t>* frequencies = nullptr,
                          std::vector<std::string>* warnings = nullptr);

Grouping fallback_grouping(const std::vector<std::string>& categories, std::size_t max_branching,
                           const std::map<std::string, std::size_t>* frequencies = nullptr);

}  // namespace lmtree
