#include "lmtree/commands.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "lmtree/eval.hpp"
#include "lmtree/mock_backend.hpp"
#include "lmtree/service.hpp"
#include "lmtree/synth.hpp"

namespace lmtree {

namespace fs = std::filesystem;

nlohmann::json BackendOptions::to_json() const {
    return {{"kind", kind}, {"mock_rule", mock_rule}, {"http", http.to_json()}, {"max_in_flight", max_in_flight}};
}

BackendOptions BackendOptions::from_json(const nlohmann::json& j) {
    BackendOptions o;
    o.kind = j.value("kind", o.kind);
    o.mock_rule = j.value("mock_rule", o.mock_rule);
    if (j.contains("http")) o.http = HttpBackendConfig::from_json(j["http"]);
    o.max_in_flight = j.value("max_in_flight", o.max_in_flight);
    return o;
}

std::shared_ptr<Backend> make_backend(const BackendOptions& options, const Schema& schema) {
    if (options.kind == "mock") {
        OracleMockOptions mock;
        if (!options.mock_rule.empty()) mock.baseline_rule = dsl::parse(options.mock_rule, schema);
        return make_oracle_mock(schema, mock);
    }
    if (options.kind == "live") return std::make_shared<HttpBackend>(options.http);
    throw std::invalid_argument("backend must be 'mock' or 'live', got '" + options.kind + "'");
}

BackendFactory backend_factory(std::optional<BackendOptions> overrides) {
    return [overrides](const Schema& schema, const nlohmann::json& meta) {
        BackendOptions o = overrides ? *overrides
                                     : BackendOptions::from_json(meta.value("backend", nlohmann::json::object()));
        return make_backend(o, schema);
    };
}

namespace {

BatchLimits limits_for(const BackendOptions& o) {
    BatchLimits l;
    l.max_in_flight = o.max_in_flight;
    return l;
}

struct Loaded {
    Dataset train;
    std::optional<Dataset> validation;
};

Loaded load_inputs(const RunConfig& c) {
    if (c.schema.empty()) throw std::invalid_argument("--schema is required");
    if (c.dataset.empty()) throw std::invalid_argument("--dataset is required");
    Schema schema = Schema::load(c.schema);
    Loaded l;
    LoadReport report;
    l.train = load_dataset(c.dataset, schema, &report);
    if (report.unparseable_numeric)
        std::cerr << "warning: " << report.unparseable_numeric << " numeric cells in " << c.dataset.string()
                  << " could not be parsed and were read as missing\n";
    if (!c.validation.empty()) l.validation = load_dataset(c.validation, schema);
    return l;
}

nlohmann::json node_report(const TreeNode& n) {
    auto rows = nlohmann::json::array();
    std::function<void(const TreeNode&)> walk = [&](const TreeNode& x) {
        nlohmann::json r{{"id", x.id},
                         {"depth", x.depth},
                         {"pos", x.counts.pos},
                         {"neg", x.counts.neg},
                         {"gini", x.counts.total() ? gini(x.counts) : 0.0}};
        if (x.question) {
            r["question"] = x.question->text;
            r["kind"] = to_string(x.question->kind);
        }
        if (x.chosen_weighted_gini) r["weighted_gini"] = *x.chosen_weighted_gini;
        rows.push_back(std::move(r));
        for (const auto& c : x.children) walk(c);
    };
    walk(n);
    return rows;
}

std::string fmt_pct(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
    return buf;
}

std::string metrics_row(const Metrics& m) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%8s %9s %6s %6s", fmt_pct(m.accuracy).c_str(), fmt_pct(m.precision).c_str(),
                  fmt_pct(m.recall).c_str(), fmt_pct(m.f_beta).c_str());
    return buf;
}

template <typename F>
int guarded(std::ostream& err, F f) {
    try {
        return f();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (c.out.empty()) throw std::invalid_argument("--out is required");
        c.params.validate();
        Loaded in = load_inputs(c);
        Gateway gw(make_backend(c.backend, in.train.schema()), limits_for(c.backend));
        TrainResult r = train(gw, in.train, c.params, c.task);

        const Dataset& tune = in.validation ? *in.validation : in.train;
        auto answers = gateway_answers(gw, c.task);
        double sensitivity = 0.0;
        nlohmann::json tuning;
        if (c.sensitivity) {
            sensitivity = *c.sensitivity;
        } else {
            auto choice = select_sensitivity(r.tree, tune.refs(), answers, tune.schema(), c.beta);
            sensitivity = choice.sensitivity;
        }
        auto eval = evaluate(r.tree, tune.refs(), answers, tune.schema(), sensitivity, c.beta);

        nlohmann::json meta{{"task", c.task},
                            {"sensitivity", sensitivity},
                            {"beta", c.beta},
                            {"backend", c.backend.to_json()},
                            {"dataset", c.dataset.string()}};
        write_run(c.out, r.tree, in.train, in.validation ? &*in.validation : nullptr, meta, &gw.cache());

        nlohmann::json report{{"nodes", r.tree.node_count()},
                              {"leaves", r.tree.leaf_count()},
                              {"depth", r.tree.depth()},
                              {"per_node", node_report(r.tree.root)},
                              {"insights", r.tree.insights.items.size()},
                              {"insight_batches", r.insight_report.batches},
                              {"warnings", r.build_report.warnings},
                              {"usage", gw.usage().to_json()},
                              {"sensitivity", sensitivity},
                              {"tuning_set", in.validation ? "validation" : "train"},
                              {"tuning_metrics", eval.metrics.to_json()}};
        for (const auto& w : r.insight_report.warnings) report["warnings"].push_back("insights: " + w);
        write_file_atomic(c.out / "build_report.json", report.dump(2) + "\n");

        auto u = gw.usage();
        out << "run:         " << c.out.string() << "\n"
            << "nodes:       " << r.tree.node_count() << " (" << r.tree.leaf_count() << " leaves, depth "
            << r.tree.depth() << ")\n"
            << "sensitivity: " << sensitivity << " (chosen on " << (in.validation ? "validation" : "train") << ")\n"
            << "                 Accuracy Precision Recall  F" << c.beta << "\n"
            << "tuning set:      " << metrics_row(eval.metrics) << "\n"
            << "model calls: " << u.requests << " (" << u.failures << " failed, " << u.cache_hits
            << " cache hits, " << u.total_tokens() << " tokens)\n";
        if (!r.build_report.warnings.empty()) out << "warnings:    " << r.build_report.warnings.size() << "\n";
        return 0;
    });
}

int cmd_cv(const RunConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        c.params.validate();
        Loaded in = load_inputs(c);
        Gateway gw(make_backend(c.backend, in.train.schema()), limits_for(c.backend));
        CvReport report = run_cv(gw, in.train, c.params, c.task, c.beta);
        const std::string table = report.table();
        if (!c.out.empty()) {
            fs::create_directories(c.out);
            write_file_atomic(c.out / "cv.json", report.to_json().dump(2) + "\n");
            write_file_atomic(c.out / "cv.txt", table);
        }
        out << table;
        out << "trees built: " << report.trees_built << "\n";
        for (const auto& w : report.warnings) err << "warning: " << w << "\n";
        return report.trees_built == 10 ? 0 : 2;
    });
}

int cmd_predict(const PredictConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        Run run(c.run, backend_factory(c.backend));
        if (!c.schema.empty() && Schema::load(c.schema).fingerprint() != run.schema().fingerprint())
            throw TreeFormatError("schema " + c.schema.string() + " does not match the run's schema");
        Dataset data = load_dataset(c.dataset, run.schema());
        const double s = c.sensitivity.value_or(run.sensitivity());
        auto t = run.tree();
        auto paths = predict_many(*t, data.refs(), gateway_answers(run.gateway(), t->task), run.schema(), s);
        for (const auto& p : paths) {
            if (c.jsonl) {
                out << p.to_json().dump() << "\n";
                continue;
            }
            out << p.sample_id << '\t' << (p.predicted ? 1 : 0) << '\t' << p.leaf_ratio << '\t';
            for (const auto& step : p.steps)
                out << step.node_id << " [" << step.question << "] -> " << step.branch << (step.fallback ? "*" : "")
                    << " | ";
            out << p.leaf_id << "\n";
        }
        run.flush();
        return 0;
    });
}

int cmd_baseline(const BaselineConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        Loaded in = load_inputs(c.run);
        Gateway gw(make_backend(c.run.backend, in.train.schema()), limits_for(c.run.backend));
        BaselineResult r;
        std::string label;
        if (c.kind == "vanilla") {
            r = baseline_vanilla(gw, in.train.refs(), c.run.task, c.run.beta);
            label = "vanilla";
        } else if (c.kind == "fewshot") {
            SampleRefs exemplars;
            SampleRefs eval_set = in.train.refs();
            if (!c.exemplar_ids.empty()) {
                exemplars = in.train.select(c.exemplar_ids);
                // Explicit exemplars are checked against the full evaluation set.
            } else {
                exemplars = pick_exemplars(in.train.refs(), {}, c.run.params.seed);
                std::set<std::string> ids;
                for (const Sample* e : exemplars) ids.insert(e->id);
                std::erase_if(eval_set, [&](const Sample* s) { return ids.contains(s->id); });
            }
            r = baseline_fewshot(gw, eval_set, exemplars, c.run.task, c.run.beta);
            label = "few-shot";
        } else {
            throw std::invalid_argument("baseline kind must be 'vanilla' or 'fewshot'");
        }
        out << "baseline       Accuracy Precision Recall  F" << c.run.beta << "\n";
        char name[16];
        std::snprintf(name, sizeof name, "%-14s", label.c_str());
        out << name << metrics_row(r.metrics) << "\n";
        out << "calls: " << r.calls << ", failures excluded: " << r.failures << "\n";
        if (!c.run.out.empty()) {
            fs::create_directories(c.run.out);
            write_file_atomic(c.run.out / ("baseline_" + c.kind + ".json"), r.to_json().dump(2) + "\n");
        }
        return 0;
    });
}

int cmd_synth(const SynthConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        std::ifstream in(c.spec);
        if (!in) throw std::runtime_error("cannot open synth spec " + c.spec.string());
        auto spec = PlantedRuleSpec::from_json(nlohmann::json::parse(in));
        auto ds = synth_generate(spec, c.n, c.seed, c.id_prefix);
        if (c.out.empty() || c.schema_out.empty()) throw std::invalid_argument("--out and --schema-out are required");
        ds.data.save_jsonl(c.out);
        write_file_atomic(c.schema_out, spec.schema().to_json().dump(2) + "\n");
        out << "wrote " << ds.data.size() << " samples (" << ds.data.positives() << " positive) to " << c.out.string()
            << "\n";
        return 0;
    });
}

int cmd_refine(const RefineConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        Run run(c.run, backend_factory(c.backend));
        auto action = RefinementAction::from_json(nlohmann::json::parse(c.action));
        auto outcome = run.apply(action, c.base_version.value_or(run.latest_version()));
        nlohmann::json j{{"status", to_string(outcome.status)}, {"version", outcome.version},
                         {"diff", outcome.diff.to_json()}};
        if (outcome.qa) j["qa"] = outcome.qa->to_json();
        if (outcome.validation) j["validation"] = outcome.validation->metrics.to_json();
        out << j.dump(2) << "\n";
        return outcome.status == ActionOutcome::Status::Conflict ? 3 : 0;
    });
}

int cmd_serve(const ServeConfig& c, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        RunStore store(c.store, backend_factory(c.backend));
        // Signals are taken by a dedicated thread so the server stops outside signal context.
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);

        Service service(store);
        const int port = service.bind(c.host, c.port);
        out << "serving " << c.store.string() << " on http://" << c.host << ":" << port << std::endl;
        std::jthread waiter([&] {
            int sig = 0;
            sigwait(&set, &sig);
            service.stop();
        });
        service.serve();
        service.stop();
        // Unblock the waiter if serve() ended for another reason.
        pthread_kill(waiter.native_handle(), SIGTERM);
        return 0;
    });
}

}  // namespace lmtree
