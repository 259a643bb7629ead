#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/eval.hpp"
#include "lmtree/llm_gateway.hpp"
#include "lmtree/refine.hpp"
#include "lmtree/tree.hpp"

namespace lmtree {

class StoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RunNotFound : public StoreError {
public:
    using StoreError::StoreError;
};

class VersionNotFound : public StoreError {
public:
    using StoreError::StoreError;
};

// Layout of one run directory:
//   meta.json  schema.json  train.jsonl  [validation.jsonl]
//   tree.v<N>.json (immutable)  latest  audit.jsonl  answers.jsonl
struct RunFiles {
    std::filesystem::path dir;

    std::filesystem::path meta() const { return dir / "meta.json"; }
    std::filesystem::path schema() const { return dir / "schema.json"; }
    std::filesystem::path train() const { return dir / "train.jsonl"; }
    std::filesystem::path validation() const { return dir / "validation.jsonl"; }
    std::filesystem::path tree(std::uint64_t version) const;
    std::filesystem::path latest() const { return dir / "latest"; }
    std::filesystem::path audit() const { return dir / "audit.jsonl"; }
    std::filesystem::path answers() const { return dir / "answers.jsonl"; }
};

// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Creates (or overwrites) a run directory holding version tree.version.
void write_run(const std::filesystem::path& dir, const Tree& tree, const Dataset& train, const Dataset* validation,
               const nlohmann::json& meta, const AnswerCache* answers = nullptr);

using BackendFactory = std::function<std::shared_ptr<Backend>(const Schema& schema, const nlohmann::json& meta)>;

struct ActionOutcome {
    enum class Status { Applied, Unchanged, Conflict };
    Status status = Status::Unchanged;
    std::uint64_t version = 0;  // current version after the call
    std::optional<AuditRecord> record;
    std::optional<QaReport> qa;
    StructuralDiff diff;
    std::optional<Evaluation> validation;  // at the run's sensitivity, when a validation set exists
};

std::string to_string(ActionOutcome::Status s);

// An opened run. Reads see the last committed version; mutations are check-and-set on the version.
class Run {
public:
    Run(std::filesystem::path dir, const BackendFactory& backends, BatchLimits limits = {});

    const std::string& id() const { return id_; }
    const Schema& schema() const { return train_.schema(); }
    const Dataset& train_data() const { return train_; }
    const Dataset* validation_data() const { return validation_ ? &*validation_ : nullptr; }
    nlohmann::json meta() const;
    double sensitivity() const;
    double beta() const;

    std::uint64_t latest_version() const;
    std::shared_ptr<const Tree> tree() const;
    // Throws VersionNotFound.
    Tree tree_at(std::uint64_t version) const;
    std::vector<AuditRecord> audit() const;

    // Samples of a node: ids retained at build time, resolved against the training set.
    SampleRefs node_samples(const std::string& node_id) const;

    ActionOutcome apply(const RefinementAction& action, std::uint64_t expected_version);
    QaReport qa(const std::string& node_id, const std::string& question);
    Evaluation evaluate_validation(double sensitivity);
    void set_sensitivity(double s);

    Gateway& gateway() { return *gateway_; }
    void flush();  // persists the answer cache

private:
    RefineContext refine_context(const Tree& tree);

    RunFiles files_;
    std::string id_;
    Dataset train_;
    std::optional<Dataset> validation_;
    std::unique_ptr<Gateway> gateway_;

    mutable std::shared_mutex mu_;  // guards current_ and meta_
    std::mutex writer_;             // serializes mutations
    std::shared_ptr<const Tree> current_;
    nlohmann::json meta_;
};

class RunStore {
public:
    // The root must exist.
    RunStore(std::filesystem::path root, BackendFactory backends, BatchLimits limits = {});

    const std::filesystem::path& root() const { return root_; }
    std::vector<std::string> list() const;
    // Throws RunNotFound.
    Run& open(const std::string& id);
    void flush_all();

private:
    std::filesystem::path root_;
    BackendFactory backends_;
    BatchLimits limits_;
    std::mutex mu_;
    std::map<std::string, std::unique_ptr<Run>> open_;
};

}  // namespace lmtree
