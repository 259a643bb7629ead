#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/tree.hpp"

namespace lmtree {

class RefineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NodeNotFound : public RefineError {
public:
    using RefineError::RefineError;
};

// The action does not apply to its target, e.g. collapsing a leaf.
class InvalidAction : public RefineError {
public:
    using RefineError::RefineError;
};

// The tree was built without retained sample ids.
class UnsupportedAction : public RefineError {
public:
    using RefineError::RefineError;
};

class BackendFailure : public RefineError {
public:
    using RefineError::RefineError;
};

struct RefinementAction {
    enum class Kind { Collapse, Rebuild, RemoveTrivial, Qa };

    Kind kind = Kind::Collapse;
    std::string node_id;
    std::string advice;      // Rebuild
    double epsilon = 0.005;  // RemoveTrivial
    std::string question;    // Qa

    static RefinementAction collapse(std::string node);
    static RefinementAction rebuild(std::string node, std::string advice);
    static RefinementAction remove_trivial(double epsilon = 0.005);
    static RefinementAction qa(std::string node, std::string question);

    bool mutates() const { return kind != Kind::Qa; }

    nlohmann::json to_json() const;
    static RefinementAction from_json(const nlohmann::json& j);  // throws InvalidAction
    bool operator==(const RefinementAction&) const = default;
};

std::string to_string(RefinementAction::Kind k);

struct StructuralDiff {
    std::vector<std::string> removed;
    std::vector<std::string> added;
    std::vector<std::string> changed;  // same id, different question, counts or shape

    bool empty() const { return removed.empty() && added.empty() && changed.empty(); }
    std::string summary() const;
    nlohmann::json to_json() const;
};

StructuralDiff diff_trees(const Tree& before, const Tree& after);

struct AuditRecord {
    RefinementAction action;
    std::uint64_t prior_version = 0;
    std::uint64_t new_version = 0;
    std::string timestamp;  // UTC, ISO 8601
    std::string summary;

    nlohmann::json to_json() const;
    static AuditRecord from_json(const nlohmann::json& j);
};

// Node samples come from `data` via retained ids; rebuilds grow with a context made for the advice.
struct RefineContext {
    const Dataset* data = nullptr;
    std::function<BuildContext(const std::string& advice)> make_build_context;
    AnswerFn answers;
};

RefineContext gateway_refine_context(Gateway& gateway, const Dataset& data, const Tree& tree);

// Each returns a new tree with version + 1 and leaves the input untouched.
Tree collapse(const Tree& tree, const std::string& node_id);
Tree rebuild_subtree(const Tree& tree, const std::string& node_id, const std::string& advice,
                     const RefineContext& ctx);
// Bottom-up. A node whose children are all leaves is trivial when its Gini gain is below
// epsilon or all children have the same success ratio. Version unchanged when nothing collapses.
Tree remove_trivial(const Tree& tree, double epsilon, std::size_t* collapsed = nullptr);

struct QaExample {
    std::string sample_id;
    std::string answer;
    std::string raw;
};

struct QaReport {
    std::string node_id;
    std::string question;
    std::size_t yes = 0, no = 0, unknown = 0;
    std::size_t failures = 0;  // counted within unknown
    std::vector<QaExample> examples;

    std::size_t total() const { return yes + no + unknown; }
    nlohmann::json to_json() const;
};

QaReport qa_samples(const Tree& tree, const std::string& node_id, const std::string& question,
                    const RefineContext& ctx, std::size_t examples_per_answer = 3);

struct ApplyResult {
    Tree tree;
    bool changed = false;
    std::optional<AuditRecord> record;  // set when the version advanced
    std::optional<QaReport> qa;
    StructuralDiff diff;
};

using Clock = std::function<std::chrono::system_clock::time_point()>;

// All-or-nothing: on any exception the caller's tree is untouched.
ApplyResult apply_action(const Tree& tree, const RefinementAction& action, const RefineContext& ctx,
                         const Clock& clock = {});

// Re-applies each record's action in order and checks the version sequence.
Tree replay(const Tree& original, const std::vector<AuditRecord>& log, const RefineContext& ctx);

}  // namespace lmtree
