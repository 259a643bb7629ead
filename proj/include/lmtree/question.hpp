#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/predicate_dsl.hpp"

namespace lmtree {

enum class QuestionKind { Inference, Code, Clustering };

std::string to_string(QuestionKind kind);
std::optional<QuestionKind> question_kind_from_string(std::string_view s);

// category -> group label
using Grouping = std::map<std::string, std::string>;

struct Question {
    QuestionKind kind = QuestionKind::Inference;
    std::string text;
    std::optional<std::string> target_feature;
    std::optional<dsl::Expr> code_expr;  // Code only
    std::optional<Grouping> grouping;    // Clustering only

    // "yes","no" for binary kinds; distinct group labels in category-declaration order for Clustering.
    std::vector<std::string> branch_labels(const Schema& schema) const;

    nlohmann::json to_json() const;
    // Code expressions are re-parsed, and type-checked when a schema is given.
    static Question from_json(const nlohmann::json& j, const Schema* schema = nullptr);

    bool operator==(const Question&) const = default;
};

// A candidate as proposed by the model, before validation.
struct RawCandidate {
    std::string kind;
    std::string text;
    std::optional<std::string> feature;
    std::optional<std::string> expr;
    std::optional<Grouping> grouping;
};

struct Rejection {
    enum class Reason {
        UnknownKind,
        EmptyText,
        ParseFailure,
        TypeFailure,
        UnknownFeature,
        NotCategorical,
        MissingPayload,
        IncompleteGrouping,
        BranchingOverflow,
        DegenerateGrouping,
    };
    Reason reason;
    std::string detail;
};

std::string to_string(Rejection::Reason r);

using Validated = std::variant<Question, Rejection>;

// Code: expression parsed and type-checked. Clustering: categorical target, grouping covering
// exactly its categories with 2..max_branching groups. Inference: payloads are dropped.
Validated validate_candidate(const RawCandidate& raw, const Schema& schema, std::size_t max_branching);

bool satisfies_payload_invariant(const Question& q, const Schema& schema, std::size_t max_branching);

}  // namespace lmtree
