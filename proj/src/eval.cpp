#include "lmtree/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "lmtree/kernels.hpp"

namespace lmtree {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
}

nlohmann::json ConfusionCounts::to_json() const { return {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}}; }

nlohmann::json Metrics::to_json() const {
    return {{"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f_beta", f_beta}, {"beta", beta}};
}

double f_beta(double precision, double recall, double beta) {
    const double b2 = beta * beta;
    const double den = b2 * precision + recall;
    return den == 0.0 ? 0.0 : (1.0 + b2) * precision * recall / den;
}

Metrics metrics(const ConfusionCounts& c, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
    auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    Metrics m;
    m.beta = beta;
    m.accuracy = ratio(c.tp + c.tn, c.total());
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.f_beta = f_beta(m.precision, m.recall, beta);
    return m;
}

ConfusionCounts confusion_at(std::span<const double> ratios, std::span<const std::uint8_t> labels, double threshold) {
    auto k = kernels::count_at_threshold(ratios, labels, threshold);
    std::uint64_t positives = 0;
    for (auto l : labels) positives += l != 0;
    ConfusionCounts c;
    c.tp = k.true_positive;
    c.fp = k.predicted_positive - k.true_positive;
    c.fn = positives - k.true_positive;
    c.tn = labels.size() - c.tp - c.fp - c.fn;
    return c;
}

SensitivityChoice select_sensitivity(std::span<const double> ratios, std::span<const std::uint8_t> labels,
                                     double beta) {
    if (ratios.size() != labels.size()) throw std::invalid_argument("ratios and labels differ in length");
    if (ratios.empty()) throw EvaluationError("no validation samples reached a leaf");
    std::set<double> grid(ratios.begin(), ratios.end());
    grid.insert(0.0);
    grid.insert(1.0);
    SensitivityChoice best;
    best.grid.assign(grid.begin(), grid.end());
    bool first = true;
    for (double t : best.grid) {
        auto c = confusion_at(ratios, labels, t);
        auto m = metrics(c, beta);
        // Ascending grid, so >= moves ties to the larger threshold.
        if (first || m.f_beta >= best.metrics.f_beta) {
            best.sensitivity = t;
            best.counts = c;
            best.metrics = m;
            first = false;
        }
    }
    return best;
}

namespace {

struct Routed {
    std::vector<double> ratios;
    std::vector<std::uint8_t> labels;
};

Routed route_all(const Tree& tree, const SampleRefs& samples, const AnswerFn& answers, const Schema& schema) {
    auto paths = predict_many(tree, samples, answers, schema, 0.0);
    Routed r;
    r.ratios.reserve(samples.size());
    r.labels.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        r.ratios.push_back(paths[i].leaf_ratio);
        r.labels.push_back(samples[i]->label ? 1 : 0);
    }
    return r;
}

}  // namespace

SensitivityChoice select_sensitivity(const Tree& tree, const SampleRefs& validation, const AnswerFn& answers,
                                     const Schema& schema, double beta) {
    if (validation.empty()) throw EvaluationError("empty validation set");
    auto r = route_all(tree, validation, answers, schema);
    return select_sensitivity(r.ratios, r.labels, beta);
}

Evaluation evaluate(const Tree& tree, const SampleRefs& samples, const AnswerFn& answers, const Schema& schema,
                    double sensitivity, double beta) {
    if (!(sensitivity >= 0.0 && sensitivity <= 1.0)) throw std::invalid_argument("sensitivity must lie in [0, 1]");
    Evaluation e;
    e.sensitivity = sensitivity;
    if (!samples.empty()) {
        auto r = route_all(tree, samples, answers, schema);
        e.counts = confusion_at(r.ratios, r.labels, sensitivity);
    }
    e.metrics = metrics(e.counts, beta);
    return e;
}

// ---- cross-validation ----

namespace {

Metrics mean(const std::vector<const Metrics*>& ms, double beta) {
    Metrics out;
    out.beta = beta;
    if (ms.empty()) return out;
    for (const Metrics* m : ms) {
        out.accuracy += m->accuracy;
        out.precision += m->precision;
        out.recall += m->recall;
        out.f_beta += m->f_beta;
    }
    const double n = static_cast<double>(ms.size());
    out.accuracy /= n;
    out.precision /= n;
    out.recall /= n;
    out.f_beta /= n;
    return out;
}

std::string pct(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
    return buf;
}

}  // namespace

CvReport run_cv(const Dataset& data, const TreeBuilder& builder, const AnswerFn& answers, const CvOptions& options) {
    const FoldPlan plan = stratified_folds(data, 5, options.seed);
    const auto partitions = enumerate_partitions(plan);
    CvReport report;

    std::optional<Tree> tree;
    std::string build_error;
    for (std::size_t p = 0; p < partitions.size(); ++p) {
        const CvPartition& part = partitions[p];
        CvRow row;
        row.tree_index = p / 2;
        row.partition = part;
        // Consecutive partitions share their training folds.
        if (p % 2 == 0) {
            tree.reset();
            build_error.clear();
            auto train_rows = plan.rows_in(data, part.train_folds);
            SampleRefs train;
            for (auto r : train_rows) train.push_back(&data.samples()[r]);
            try {
                tree = builder(train, row.tree_index);
                ++report.trees_built;
            } catch (const FatalError&) {
                throw;
            } catch (const std::exception& e) {
                build_error = e.what();
            }
        }
        if (!tree) {
            row.failed = true;
            row.error = "tree build failed: " + build_error;
            report.warnings.push_back("partition " + std::to_string(p + 1) + ": " + row.error);
            report.rows.push_back(std::move(row));
            continue;
        }
        auto refs_of = [&](std::size_t fold) {
            const std::size_t f[1] = {fold};
            SampleRefs out;
            for (auto r : plan.rows_in(data, f)) out.push_back(&data.samples()[r]);
            return out;
        };
        try {
            auto choice = select_sensitivity(*tree, refs_of(part.val_fold), answers, data.schema(), options.beta);
            auto test = evaluate(*tree, refs_of(part.test_fold), answers, data.schema(), choice.sensitivity,
                                 options.beta);
            row.sensitivity = choice.sensitivity;
            row.validation = choice.metrics;
            row.validation_counts = choice.counts;
            row.test = test.metrics;
            row.test_counts = test.counts;
        } catch (const FatalError&) {
            throw;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            report.warnings.push_back("partition " + std::to_string(p + 1) + ": " + row.error);
        }
        report.rows.push_back(std::move(row));
    }

    std::vector<const Metrics*> val, test;
    double sens = 0.0;
    for (const auto& r : report.rows) {
        if (r.failed) continue;
        val.push_back(&r.validation);
        test.push_back(&r.test);
        sens += r.sensitivity;
    }
    if (val.size() < report.rows.size())
        report.warnings.push_back("averages cover " + std::to_string(val.size()) + " of " +
                                  std::to_string(report.rows.size()) + " partitions");
    report.avg_validation = mean(val, options.beta);
    report.avg_test = mean(test, options.beta);
    report.avg_sensitivity = val.empty() ? 0.0 : sens / static_cast<double>(val.size());
    return report;
}

CvReport run_cv(Gateway& gateway, const Dataset& data, const BuildParams& params, const std::string& task,
                double beta) {
    params.validate();
    TreeBuilder builder = [&](const SampleRefs& train, std::size_t) {
        auto insights = generate_insights(gateway, train, task, params.batch_size);
        auto ctx = gateway_context(gateway, data.schema(), insights.insights, task, params);
        return build(ctx, train, params, task, insights.insights);
    };
    return run_cv(data, builder, gateway_answers(gateway, task), CvOptions{params.seed, beta});
}

nlohmann::json CvReport::to_json() const {
    auto rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j{{"tree", r.tree_index + 1},
                         {"train_folds", r.partition.train_folds},
                         {"validation_fold", r.partition.val_fold},
                         {"test_fold", r.partition.test_fold},
                         {"failed", r.failed}};
        if (r.failed) {
            j["error"] = r.error;
        } else {
            j["sensitivity"] = r.sensitivity;
            j["validation"] = r.validation.to_json();
            j["validation_counts"] = r.validation_counts.to_json();
            j["test"] = r.test.to_json();
            j["test_counts"] = r.test_counts.to_json();
        }
        rows_j.push_back(std::move(j));
    }
    return {{"rows", rows_j},
            {"trees_built", trees_built},
            {"average", {{"sensitivity", avg_sensitivity},
                         {"validation", avg_validation.to_json()},
                         {"test", avg_test.to_json()}}},
            {"warnings", warnings}};
}

std::string CvReport::table() const {
    std::ostringstream out;
    char line[160];
    auto emit = [&](const char* tree, const std::string& sens, const Metrics* v, const Metrics* t) {
        auto f = [](const Metrics* m, double Metrics::*field) { return m ? pct(m->*field) : std::string("-"); };
        std::snprintf(line, sizeof line, "%-6s %11s | %9s %7s %7s | %8s %9s %7s %7s\n", tree, sens.c_str(),
                      f(v, &Metrics::precision).c_str(), f(v, &Metrics::recall).c_str(), f(v, &Metrics::f_beta).c_str(),
                      f(t, &Metrics::accuracy).c_str(), f(t, &Metrics::precision).c_str(),
                      f(t, &Metrics::recall).c_str(), f(t, &Metrics::f_beta).c_str());
        out << line;
    };
    std::snprintf(line, sizeof line, "%-6s %11s | %9s %7s %7s | %8s %9s %7s %7s\n", "Tree", "Sensitivity",
                  "Val P", "Val R", "Val F", "Test Acc", "Test P", "Test R", "Test F");
    out << line;
    for (const auto& r : rows) {
        std::string tree = std::to_string(r.tree_index + 1);
        if (r.failed) {
            emit(tree.c_str(), "failed", nullptr, nullptr);
            continue;
        }
        char sens[16];
        std::snprintf(sens, sizeof sens, "%.2f", r.sensitivity);
        emit(tree.c_str(), sens, &r.validation, &r.test);
    }
    emit("Avg.", "-", &avg_validation, &avg_test);
    return out.str();
}

// ---- baselines ----

nlohmann::json BaselineResult::to_json() const {
    return {{"counts", counts.to_json()}, {"metrics", metrics.to_json()}, {"calls", calls}, {"failures", failures}};
}

namespace {

BaselineResult run_baseline(Gateway& gateway, const SampleRefs& samples, TemplateId tpl, const Bindings& extra,
                            const std::string& task, double beta) {
    std::vector<LlmRequest> requests;
    requests.reserve(samples.size());
    for (const Sample* s : samples) {
        Bindings b = extra;
        b["task"] = task;
        b["sample_json"] = s->features_json().dump();
        requests.push_back(gateway.make_request(tpl, std::move(b), task));
    }
    auto responses = gateway.complete(requests);
    BaselineResult r;
    r.calls = responses.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!responses[i].ok) {
            ++r.failures;
            continue;
        }
        const bool predicted = parse_answer(responses[i].text) == AnswerKind::Yes;
        const bool actual = samples[i]->label;
        if (predicted && actual) ++r.counts.tp;
        else if (predicted) ++r.counts.fp;
        else if (actual) ++r.counts.fn;
        else ++r.counts.tn;
    }
    r.metrics = metrics(r.counts, beta);
    return r;
}

}  // namespace

BaselineResult baseline_vanilla(Gateway& gateway, const SampleRefs& samples, const std::string& task, double beta) {
    return run_baseline(gateway, samples, TemplateId::VanillaBaseline, {}, task, beta);
}

BaselineResult baseline_fewshot(Gateway& gateway, const SampleRefs& samples, const SampleRefs& exemplars,
                                const std::string& task, double beta) {
    std::size_t pos = 0;
    for (const Sample* e : exemplars) pos += e->label;
    if (exemplars.size() != 4 || pos != 2)
        throw std::invalid_argument("few-shot baseline needs exactly two positive and two negative exemplars");
    std::set<std::string> ids;
    for (const Sample* e : exemplars) ids.insert(e->id);
    for (const Sample* s : samples)
        if (ids.contains(s->id))
            throw std::invalid_argument("exemplar '" + s->id + "' is also in the evaluation set");
    std::string examples;
    for (const Sample* e : exemplars)
        examples += e->features_json().dump() + " -> " + (e->label ? "Yes" : "No") + "\n";
    return run_baseline(gateway, samples, TemplateId::FewShotBaseline, {{"examples", examples}}, task, beta);
}

SampleRefs pick_exemplars(const SampleRefs& pool, const SampleRefs& exclude, std::uint64_t seed) {
    std::set<std::string> skip;
    for (const Sample* s : exclude) skip.insert(s->id);
    SampleRefs pos, neg;
    for (const Sample* s : pool)
        if (!skip.contains(s->id)) (s->label ? pos : neg).push_back(s);
    if (pos.size() < 2 || neg.size() < 2)
        throw std::invalid_argument("need two positive and two negative samples outside the evaluation set");
    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    return {pos[0], pos[1], neg[0], neg[1]};
}

double rescale_precision(double precision, double target_base_rate, double source_base_rate) {
    if (!(source_base_rate > 0.0)) throw std::invalid_argument("source base rate must be > 0");
    return precision * target_base_rate / source_base_rate;
}

}  // namespace lmtree
