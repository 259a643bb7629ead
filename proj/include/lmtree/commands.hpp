#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "lmtree/http_backend.hpp"
#include "lmtree/store.hpp"
#include "lmtree/tree.hpp"

namespace lmtree {

struct BackendOptions {
    std::string kind = "mock";  // mock | live
    std::string mock_rule;      // ground truth answered by the mock's baseline templates
    HttpBackendConfig http;
    std::size_t max_in_flight = 8;

    nlohmann::json to_json() const;
    static BackendOptions from_json(const nlohmann::json& j);
};

std::shared_ptr<Backend> make_backend(const BackendOptions& options, const Schema& schema);

// Run directories record their backend options in meta.json; this rebuilds a backend from them,
// with `overrides` (when set) taking precedence.
BackendFactory backend_factory(std::optional<BackendOptions> overrides = std::nullopt);

struct RunConfig {
    std::filesystem::path dataset;
    std::filesystem::path schema;
    std::filesystem::path validation;  // optional
    std::string task;
    BuildParams params;
    BackendOptions backend;
    std::filesystem::path out;
    std::optional<double> sensitivity;  // chosen on the validation (or training) set when unset
    double beta = 0.5;
};

// Each command returns a process exit status and writes diagnostics to `err`.
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_cv(const RunConfig& config, std::ostream& out, std::ostream& err);

struct PredictConfig {
    std::filesystem::path run;
    std::filesystem::path dataset;
    std::filesystem::path schema;  // optional; must match the run's schema
    std::optional<double> sensitivity;
    std::optional<BackendOptions> backend;
    bool jsonl = false;
};

int cmd_predict(const PredictConfig& config, std::ostream& out, std::ostream& err);

struct BaselineConfig {
    std::string kind = "vanilla";  // vanilla | fewshot
    RunConfig run;
    std::vector<std::string> exemplar_ids;  // fewshot; picked from the dataset when empty
};

int cmd_baseline(const BaselineConfig& config, std::ostream& out, std::ostream& err);

struct SynthConfig {
    std::filesystem::path spec;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::filesystem::path out;          // dataset (.jsonl)
    std::filesystem::path schema_out;   // schema (.json)
    std::string id_prefix = "s";
};

int cmd_synth(const SynthConfig& config, std::ostream& out, std::ostream& err);

struct RefineConfig {
    std::filesystem::path run;
    std::string action;  // JSON
    std::optional<std::uint64_t> base_version;  // latest when unset
    std::optional<BackendOptions> backend;
};

int cmd_refine(const RefineConfig& config, std::ostream& out, std::ostream& err);

struct ServeConfig {
    std::filesystem::path store;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<BackendOptions> backend;
};

int cmd_serve(const ServeConfig& config, std::ostream& out, std::ostream& err);

}  // namespace lmtree
