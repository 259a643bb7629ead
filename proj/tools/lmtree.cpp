#include <iostream>

#include <CLI11.hpp>

#include "lmtree/commands.hpp"

using namespace lmtree;

namespace {

void add_backend_flags(CLI::App* app, BackendOptions& b) {
    app->add_option("--backend", b.kind, "Model backend")->check(CLI::IsMember({"mock", "live"}));
    app->add_option("--mock-rule", b.mock_rule, "Predicate the mock answers baseline prompts with");
    app->add_option("--llm-url", b.http.base_url, "Live backend base URL");
    app->add_option("--llm-path", b.http.path, "Live backend request path");
    app->add_option("--llm-model", b.http.model, "Live backend model name");
    app->add_option("--llm-key-env", b.http.api_key_env, "Environment variable holding the API key");
    app->add_option("--max-in-flight", b.max_in_flight, "Concurrent model calls")->check(CLI::PositiveNumber);
}

void add_run_flags(CLI::App* app, RunConfig& c, bool build_params) {
    app->add_option("--dataset", c.dataset, "Labelled samples (.jsonl, .csv, .tsv)")->required();
    app->add_option("--schema", c.schema, "Feature schema (.json)")->required();
    app->add_option("--task", c.task, "Task description given to the model")->required();
    app->add_option("--out", c.out, "Output directory");
    app->add_option("--beta", c.beta, "F-beta weight")->check(CLI::PositiveNumber);
    app->add_option("--seed", c.params.seed, "Seed for folds and exemplar picks");
    add_backend_flags(app, c.backend);
    if (!build_params) return;
    app->add_option("--validation", c.validation, "Validation samples used to pick the sensitivity");
    app->add_option("--max-depth", c.params.max_depth, "Maximum tree depth")->check(CLI::PositiveNumber);
    app->add_option("--min-leaf", c.params.min_leaf, "Minimum samples per child")->check(CLI::PositiveNumber);
    app->add_option("--per-feature-max", c.params.per_feature_max, "Question candidates per feature");
    app->add_option("--batch-size", c.params.batch_size, "Positives per insight batch")->check(CLI::PositiveNumber);
    app->add_option("--max-branching", c.params.max_branching, "Maximum children of a grouping split")
        ->check(CLI::Range(2, 250));
    app->add_flag("--inference-only,!--all-kinds", c.params.inference_only,
                  "Only natural-language questions (default), or also predicates and groupings");
    app->add_flag("--retain-samples", c.params.retain_samples, "Keep per-node sample ids (needed for refinement)");
    app->add_option_function<std::string>(
           "--unknown-policy", [&c](const std::string& s) { c.params.unknown_policy = unknown_policy_from_string(s); },
           "Where Unknown answers go: no | abstain-drop")
        ->check(CLI::IsMember({"no", "abstain-drop"}));
    app->add_option_function<double>("--sensitivity", [&c](double s) { c.sensitivity = s; },
                                     "Fixed leaf threshold instead of tuning")
        ->check(CLI::Range(0.0, 1.0));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decision trees whose splits are questions answered by a language model"};
    app.require_subcommand(1);

    RunConfig train_cfg;
    auto* train = app.add_subcommand("train", "Generate insights, build a tree, and write a run directory");
    add_run_flags(train, train_cfg, true);

    RunConfig cv_cfg;
    auto* cv = app.add_subcommand("cv", "Five-fold, twenty-partition cross-validation");
    add_run_flags(cv, cv_cfg, true);

    PredictConfig predict_cfg;
    auto* predict = app.add_subcommand("predict", "Route samples through a trained tree");
    predict->add_option("--run", predict_cfg.run, "Run directory")->required();
    predict->add_option("--dataset", predict_cfg.dataset, "Samples to predict")->required();
    predict->add_option("--schema", predict_cfg.schema, "Schema to check against the run's");
    predict->add_option_function<double>("--sensitivity", [&](double s) { predict_cfg.sensitivity = s; },
                                         "Leaf threshold (default: the run's)")
        ->check(CLI::Range(0.0, 1.0));
    predict->add_flag("--jsonl", predict_cfg.jsonl, "One JSON record per sample");
    BackendOptions predict_backend;
    add_backend_flags(predict, predict_backend);

    BaselineConfig baseline_cfg;
    auto* baseline = app.add_subcommand("baseline", "Prompting baselines without a tree");
    baseline->add_option("--kind", baseline_cfg.kind, "vanilla | fewshot")->check(CLI::IsMember({"vanilla", "fewshot"}));
    add_run_flags(baseline, baseline_cfg.run, false);
    baseline->add_option("--exemplars", baseline_cfg.exemplar_ids, "Few-shot exemplar ids (2 positive, 2 negative)")
        ->delimiter(',');

    SynthConfig synth_cfg;
    auto* synth = app.add_subcommand("synth", "Generate a planted-rule dataset");
    synth->add_option("--spec", synth_cfg.spec, "Generator spec (.json)")->required();
    synth->add_option("--n", synth_cfg.n, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_cfg.seed, "Generator seed");
    synth->add_option("--out", synth_cfg.out, "Dataset output (.jsonl)")->required();
    synth->add_option("--schema-out", synth_cfg.schema_out, "Schema output (.json)")->required();
    synth->add_option("--id-prefix", synth_cfg.id_prefix, "Sample id prefix");

    RefineConfig refine_cfg;
    auto* refine = app.add_subcommand("refine", "Apply one refinement action to a run");
    refine->add_option("--run", refine_cfg.run, "Run directory")->required();
    refine->add_option("--action", refine_cfg.action, R"(Action JSON, e.g. {"type":"collapse","node":"r.yes"})")
        ->required();
    refine->add_option_function<std::uint64_t>("--base-version", [&](std::uint64_t v) { refine_cfg.base_version = v; },
                                               "Expected current version");
    BackendOptions refine_backend;
    add_backend_flags(refine, refine_backend);

    ServeConfig serve_cfg;
    auto* serve = app.add_subcommand("serve", "Serve a store of runs over HTTP");
    serve->add_option("--store", serve_cfg.store, "Directory of run directories")->required();
    serve->add_option("--host", serve_cfg.host, "Bind address");
    serve->add_option("--port", serve_cfg.port, "Port (0 picks one)")->check(CLI::Range(0, 65535));
    BackendOptions serve_backend;
    add_backend_flags(serve, serve_backend);

    CLI11_PARSE(app, argc, argv);

    // Backend flags on run-directory commands override what the run recorded.
    auto override_of = [](CLI::App* sub, const BackendOptions& b) -> std::optional<BackendOptions> {
        if (sub->count("--backend") || sub->count("--mock-rule") || sub->count("--llm-url") ||
            sub->count("--llm-model"))
            return b;
        return std::nullopt;
    };

    if (*train) return cmd_train(train_cfg, std::cout, std::cerr);
    if (*cv) return cmd_cv(cv_cfg, std::cout, std::cerr);
    if (*predict) {
        predict_cfg.backend = override_of(predict, predict_backend);
        return cmd_predict(predict_cfg, std::cout, std::cerr);
    }
    if (*baseline) return cmd_baseline(baseline_cfg, std::cout, std::cerr);
    if (*synth) return cmd_synth(synth_cfg, std::cout, std::cerr);
    if (*refine) {
        refine_cfg.backend = override_of(refine, refine_backend);
        return cmd_refine(refine_cfg, std::cout, std::cerr);
    }
    if (*serve) {
        serve_cfg.backend = override_of(serve, serve_backend);
        return cmd_serve(serve_cfg, std::cout, std::cerr);
    }
    return 1;
}
