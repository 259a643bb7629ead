#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/insight.hpp"
#include "lmtree/question.hpp"
#include "lmtree/question_gen.hpp"
#include "lmtree/splitter.hpp"

namespace lmtree {

class BuildError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unknown format version, schema mismatch, or a malformed document.
class TreeFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BuildParams {
    std::size_t max_depth = 18;
    std::size_t min_leaf = 31;
    std::size_t per_feature_max = 3;
    std::size_t max_branching = 4;
    std::size_t batch_size = 250;
    bool inference_only = true;
    UnknownPolicy unknown_policy = UnknownPolicy::RouteNo;
    std::uint64_t seed = 0;
    // Keep per-node sample ids so the tree can be refined later.
    bool retain_samples = false;

    void validate() const;  // throws std::invalid_argument
    nlohmann::json to_json() const;
    static BuildParams from_json(const nlohmann::json& j);
    bool operator==(const BuildParams&) const = default;
};

struct TreeNode {
    std::string id;      // "r", "r.yes", "r.yes.group_1", ...
    std::string branch;  // label of the edge from the parent; empty at the root
    std::size_t depth = 0;
    ClassCounts counts;
    std::optional<Question> question;  // set on internal nodes
    std::optional<double> chosen_weighted_gini;
    std::vector<TreeNode> children;
    std::vector<std::string> sample_ids;  // only with retain_samples

    bool is_leaf() const { return children.empty(); }
    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    TreeNode root;
    BuildParams params;
    std::string task;
    InsightList insights;
    std::uint64_t version = 1;
    std::string schema_fingerprint;

    const TreeNode* find(const std::string& id) const;
    TreeNode* find(const std::string& id);
    std::size_t node_count() const;
    std::size_t leaf_count() const;
    std::size_t depth() const;  // deepest node depth

    bool operator==(const Tree&) const = default;
};

// Node id for the child reached by `label`; labels are sanitized to [A-Za-z0-9_-].
std::string child_id(const std::string& parent, const std::string& label);

using CandidateSource = std::function<CandidateSet(const SampleRefs& node_samples)>;

struct BuildContext {
    const Schema* schema = nullptr;
    CandidateSource candidates;
    AnswerFn answers;
};

// Candidates from the gateway (one QuestionGen call per feature per node), answers through its cache.
BuildContext gateway_context(Gateway& gateway, const Schema& schema, const InsightList& insights,
                             const std::string& task, const BuildParams& params, std::string advice = {});

struct BuildReport {
    std::size_t nodes_expanded = 0;
    std::size_t candidates_scored = 0;
    std::vector<std::string> warnings;
};

// Grows a subtree rooted at `id` with depth `depth`. Used by build and by subtree rebuilds.
TreeNode grow(const BuildContext& ctx, const SampleRefs& samples, const BuildParams& params, std::string id,
              std::string branch, std::size_t depth, BuildReport* report = nullptr);

// Throws BuildError on an empty sample set.
Tree build(const BuildContext& ctx, const SampleRefs& samples, const BuildParams& params, const std::string& task,
           const InsightList& insights, BuildReport* report = nullptr);

struct TrainResult {
    Tree tree;
    InsightReport insight_report;
    BuildReport build_report;
};

// Insight generation over the training positives, then build.
TrainResult train(Gateway& gateway, const Dataset& data, const BuildParams& params, const std::string& task);

struct PathStep {
    std::string node_id;
    std::string question;
    std::string branch;
    bool fallback = false;  // unseen category or abstained answer routed to the largest child

    bool operator==(const PathStep&) const = default;
};

struct PredictionPath {
    std::string sample_id;
    std::vector<PathStep> steps;
    std::string leaf_id;
    double leaf_ratio = 0.0;
    bool predicted = false;

    bool flagged() const;
    nlohmann::json to_json() const;
};

// Positive iff the leaf success ratio >= sensitivity.
PredictionPath predict(const Tree& tree, const Sample& sample, const AnswerFn& answers, const Schema& schema,
                       double sensitivity);

// Same routing as predict, with one answer batch per internal node. Output aligned with input.
std::vector<PredictionPath> predict_many(const Tree& tree, const SampleRefs& samples, const AnswerFn& answers,
                                         const Schema& schema, double sensitivity);

nlohmann::json serialize(const Tree& tree);
// Rejects unknown format versions, and a fingerprint mismatch when a schema is given.
Tree deserialize(const nlohmann::json& doc, const Schema* schema = nullptr);

// Deterministic text form (sorted keys, two-space indent, trailing newline).
std::string dump_tree(const Tree& tree);

inline constexpr int kTreeFormatVersion = 1;

}  // namespace lmtree
