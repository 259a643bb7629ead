// One line per acceptance criterion; exit status is nonzero if any fails.

#include <boost/rational.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "dsl_oracle.hpp"
#include "lmtree/kernels.hpp"
#include "lmtree/commands.hpp"
#include "lmtree/eval.hpp"
#include "lmtree/refine.hpp"
#include "lmtree/store.hpp"
#include "support.hpp"

using namespace lmtree;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kFbetaTolA = 0.0005;
constexpr double kFbetaTolB = 0.001;
constexpr int kGiniInstances = 250;
constexpr double kGiniSeconds = 10.0;
constexpr double kPlantedMinPrecision = 0.99;
constexpr double kPlantedMinRecall = 0.99;
constexpr double kPlantedSeconds = 60.0;
constexpr int kSensitivityTrees = 100;
constexpr double kScanStep = 0.001;
constexpr double kSensitivityFTol = 1e-9;
constexpr double kSensitivitySeconds = 5.0;
constexpr int kDslRoundTrips = 1000;
constexpr int kDslEvaluations = 10000;
constexpr double kDslSeconds = 5.0;
constexpr double kRefineSeconds = 10.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s  %-26s %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- F-beta ----

Outcome fbeta_reproduction() {
    // Closed form and via confusion counts with the same P and R.
    const double a1 = f_beta(0.500, 0.284, 0.5);
    const double a2 = metrics(ConfusionCounts{284, 284, 0, 716}, 0.5).f_beta;
    const double b1 = f_beta(0.162, 0.069, 0.5);
    const double b2 = metrics(ConfusionCounts{11178, 57822, 0, 150822}, 0.5).f_beta;
    bool ok = std::abs(a1 - 0.434) <= kFbetaTolA && std::abs(a2 - 0.434) <= kFbetaTolA &&
              std::abs(b1 - 0.127) <= kFbetaTolB && std::abs(b2 - 0.127) <= kFbetaTolB;
    return {ok, fmt("F(0.500,0.284)=%.4f/%.4f F(0.162,0.069)=%.4f/%.4f", a1, a2, b1, b2)};
}

// ---- Gini oracle ----

using Q = boost::rational<long long>;

Q rational_weighted_gini(const std::vector<std::pair<long long, long long>>& kids) {
    long long total = 0;
    for (auto [p, n] : kids) total += p + n;
    Q g = 0;
    for (auto [p, n] : kids) {
        long long m = p + n;
        Q pp(p, m), pn(n, m);
        g += Q(m, total) * (Q(1) - pp * pp - pn * pn);
    }
    return g;
}

Outcome gini_oracle() {
    auto t0 = std::chrono::steady_clock::now();
    const Schema schema = dsl_oracle::schema();
    int agree = 0, with_split = 0, ties = 0;
    for (int inst = 0; inst < kGiniInstances; ++inst) {
        dsl_oracle::Generator gen(1000 + inst);
        std::mt19937_64 rng(inst);
        const std::size_t n = 2 + rng() % 199;
        std::vector<Sample> samples;
        for (std::size_t i = 0; i < n; ++i) {
            Sample s = gen.sample();
            s.id = "s" + std::to_string(i);
            s.label = rng() % 3 == 0;
            samples.push_back(std::move(s));
        }
        SampleRefs refs;
        for (const auto& s : samples) refs.push_back(&s);
        const std::size_t n_cands = 1 + rng() % 50;
        const auto policy = rng() % 2 ? UnknownPolicy::RouteNo : UnknownPolicy::AbstainDrop;
        const std::size_t min_leaf = 1 + rng() % 12;

        std::vector<Question> cands;
        // Per candidate and sample: 0 yes, 1 no, 2 abstain.
        std::vector<std::vector<int>> route(n_cands, std::vector<int>(n));
        std::map<std::string, std::vector<AnswerKind>> scripted;
        for (std::size_t c = 0; c < n_cands; ++c) {
            Question q;
            if (rng() % 4 == 0) {
                // Inference with a scripted answer table, duplicated occasionally to force ties.
                q.kind = QuestionKind::Inference;
                q.text = "question " + std::to_string(c);
                std::vector<AnswerKind> table(n);
                for (auto& a : table) {
                    auto r = rng() % 10;
                    a = r < 4 ? AnswerKind::Yes : r < 9 ? AnswerKind::No : AnswerKind::Unknown;
                }
                if (c > 0 && rng() % 3 == 0 && cands[c - 1].kind == QuestionKind::Inference)
                    table = scripted[cands[c - 1].text];
                scripted[q.text] = table;
                for (std::size_t i = 0; i < n; ++i)
                    route[c][i] = table[i] == AnswerKind::Yes  ? 0
                                  : table[i] == AnswerKind::No ? 1
                                  : policy == UnknownPolicy::RouteNo ? 1 : 2;
            } else {
                auto g = gen.expr(2);
                q.kind = QuestionKind::Code;
                q.text = dsl::format(g.expr);
                q.code_expr = g.expr;
                for (std::size_t i = 0; i < n; ++i) route[c][i] = g.truth(samples[i]) ? 0 : 1;
            }
            cands.push_back(std::move(q));
        }
        AnswerFn answers = [&](const std::string& question, const SampleRefs& s) {
            const auto& table = scripted.at(question);
            std::vector<Answer> out;
            for (const Sample* x : s) out.push_back({table[std::stoul(x->id.substr(1))], "", ""});
            return out;
        };

        // Brute force: exact rational argmin, first index on ties.
        std::optional<std::size_t> best;
        Q best_g;
        int tied = 0;
        for (std::size_t c = 0; c < n_cands; ++c) {
            long long yp = 0, yn = 0, np = 0, nn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (route[c][i] == 0) (samples[i].label ? yp : yn)++;
                else if (route[c][i] == 1) (samples[i].label ? np : nn)++;
            }
            if (static_cast<std::size_t>(yp + yn) < min_leaf || static_cast<std::size_t>(np + nn) < min_leaf)
                continue;
            Q g = rational_weighted_gini({{yp, yn}, {np, nn}});
            if (!best || g < best_g) {
                best = c;
                best_g = g;
            } else if (g == best_g) {
                ++tied;
            }
        }
        auto got = best_split(cands, refs, min_leaf, answers, schema, policy);
        bool same = best.has_value() == got.best.has_value();
        if (same && best) {
            same = got.best_index == *best &&
                   std::abs(got.best->weighted_gini - boost::rational_cast<double>(best_g)) < 1e-12;
            ++with_split;
        }
        agree += same;
        ties += tied > 0;
    }
    double secs = elapsed(t0);
    bool ok = agree == kGiniInstances && secs < kGiniSeconds && with_split > kGiniInstances / 2 && ties > 0;
    return {ok, fmt("%d/%d instances agree (%d with a split, %d with ties)", agree, kGiniInstances, with_split, ties)};
}

// ---- CV scheme ----

Outcome cv_scheme() {
    Schema schema({{"x", FeatureKind::Numeric, {}}});
    std::vector<Sample> rows;
    for (int i = 0; i < 103; ++i) rows.push_back({"s" + std::to_string(i), {{"x", double(i)}}, i % 9 == 0});
    Dataset data(schema, rows);
    auto parts = enumerate_partitions(stratified_folds(data, 5, 42));
    std::set<std::set<std::size_t>> train_sets;
    std::map<std::size_t, int> as_test, held_out;
    bool disjoint = true;
    for (const auto& part : parts) {
        std::set<std::size_t> tr(part.train_folds.begin(), part.train_folds.end());
        train_sets.insert(tr);
        ++as_test[part.test_fold];
        ++held_out[part.test_fold];
        ++held_out[part.val_fold];
        tr.insert(part.val_fold);
        tr.insert(part.test_fold);
        disjoint = disjoint && tr.size() == 5;
    }
    auto all_equal = [](const std::map<std::size_t, int>& m, int want) {
        if (m.size() != 5) return false;
        for (auto [f, c] : m)
            if (c != want) return false;
        return true;
    };
    // The criterion asks for 8 test appearances per fold. With one test fold per partition the
    // counts sum to 20, so the reachable value is 4; 8 is each fold's count in the held-out pair.
    bool ok = parts.size() == 20 && train_sets.size() == 10 && disjoint && all_equal(as_test, 8);
    std::string counts;
    for (auto [f, c] : as_test) counts += std::to_string(c) + (f + 1 < 5 ? "," : "");
    return {ok, fmt("%zu partitions, %zu training sets, test counts per fold {%s} (want 8 each), held-out 8 each: %s",
                    parts.size(), train_sets.size(), counts.c_str(), all_equal(held_out, 8) ? "yes" : "no")};
}

// ---- planted rule ----

Outcome planted_rule() {
    auto t0 = std::chrono::steady_clock::now();
    auto spec = fixtures::planted_spec(0.0);
    auto train_set = synth_generate(spec, 1000, 101, "t");
    auto val_set = synth_generate(spec, 500, 102, "v");
    auto test_set = synth_generate(spec, 1000, 103, "h");
    auto mock = make_oracle_mock(train_set.data.schema());
    Gateway gw(mock, fixtures::fast_limits(8));
    auto r = train(gw, train_set.data, BuildParams{}, "Predict whether the founder succeeds.");
    auto answers = gateway_answers(gw, r.tree.task);
    auto choice = select_sensitivity(r.tree, val_set.data.refs(), answers, val_set.data.schema());
    auto ev = evaluate(r.tree, test_set.data.refs(), answers, test_set.data.schema(), choice.sensitivity);
    double secs = elapsed(t0);
    // The mock is the only backend in play; no request leaves the process.
    bool offline = gw.backend().id() == "mock-oracle" && mock->calls() == gw.usage().attempts;
    bool ok = ev.metrics.precision >= kPlantedMinPrecision && ev.metrics.recall >= kPlantedMinRecall &&
              secs < kPlantedSeconds && offline;
    return {ok, fmt("P=%.4f R=%.4f at s=%.3f, %zu nodes depth %zu, %zu mock calls", ev.metrics.precision,
                    ev.metrics.recall, choice.sensitivity, r.tree.node_count(), r.tree.depth(), mock->calls())};
}

// ---- sensitivity ----

Outcome sensitivity_scan() {
    auto t0 = std::chrono::steady_clock::now();
    const AnswerFn none = [](const std::string&, const SampleRefs&) -> std::vector<Answer> {
        throw std::logic_error("unexpected model call");
    };
    Schema schema({{"x", FeatureKind::Numeric, {}}});
    int agree = 0;
    double worst_f = 0.0, worst_t = 0.0;
    for (int k = 0; k < kSensitivityTrees; ++k) {
        std::mt19937_64 rng(500 + k);
        // Leaves over x in [0, 100): thresholds cut the line into 2..6 intervals.
        std::size_t n_leaves = 2 + rng() % 5;
        std::set<int> cuts_set;
        while (cuts_set.size() < n_leaves - 1) cuts_set.insert(1 + rng() % 99);
        std::vector<int> cuts(cuts_set.begin(), cuts_set.end());
        // Leaf counts with totals <= 20 keep distinct ratios more than one scan step apart.
        std::function<TreeNode(std::size_t, std::size_t, std::string, std::string, std::size_t)> make =
            [&](std::size_t lo, std::size_t hi, std::string id, std::string branch, std::size_t depth) {
                if (hi - lo == 1) return fixtures::leaf(id, branch, depth, rng() % 21, 0);
                std::size_t mid = (lo + hi) / 2;
                auto yes = make(mid, hi, child_id(id, "yes"), "yes", depth + 1);
                auto no = make(lo, mid, child_id(id, "no"), "no", depth + 1);
                return fixtures::code_node(id, branch, depth, "x >= " + std::to_string(cuts[mid - 1]), yes, no);
            };
        Tree t;
        t.schema_fingerprint = schema.fingerprint();
        t.root = make(0, n_leaves, "r", "", 0);
        // Leaf totals stay in [1, 20]; internal counts are the children's sum.
        std::function<void(TreeNode&)> settle = [&](TreeNode& n) {
            if (n.is_leaf()) {
                n.counts.neg = std::max<std::uint64_t>(n.counts.pos, 1 + rng() % 20) - n.counts.pos;
                return;
            }
            n.counts = {};
            for (auto& c : n.children) {
                settle(c);
                n.counts += c.counts;
            }
        };
        settle(t.root);

        std::vector<Sample> val;
        std::size_t n_val = 5 + rng() % 60;
        for (std::size_t i = 0; i < n_val; ++i)
            val.push_back({"v" + std::to_string(i), {{"x", double(rng() % 100)}}, rng() % 2 == 0});
        SampleRefs refs;
        for (const auto& s : val) refs.push_back(&s);
        auto got = select_sensitivity(t, refs, none, schema, 0.5);

        // Independent scan: route by hand, count, score at every 0.001 step.
        std::vector<double> ratio(n_val);
        for (std::size_t i = 0; i < n_val; ++i) {
            const TreeNode* n = &t.root;
            const double x = std::get<double>(val[i].get("x"));
            while (!n->is_leaf()) {
                double cut = std::get<double>(n->question->code_expr->literals[0]);
                n = x >= cut ? &n->children[0] : &n->children[1];
            }
            ratio[i] = static_cast<double>(n->counts.pos) / static_cast<double>(n->counts.total());
        }
        double best_f = -1.0, best_t = 0.0;
        const int steps = static_cast<int>(std::lround(1.0 / kScanStep));
        for (int s = 0; s <= steps; ++s) {
            const double th = s * kScanStep;
            long tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < n_val; ++i) {
                bool pred = ratio[i] >= th;
                if (pred && val[i].label) ++tp;
                else if (pred) ++fp;
                else if (val[i].label) ++fn;
            }
            double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
            double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
            double f = (0.25 * p + r) > 0 ? 1.25 * p * r / (0.25 * p + r) : 0.0;
            if (f >= best_f) {
                best_f = f;
                best_t = th;
            }
        }
        double df = std::abs(got.metrics.f_beta - best_f), dt = std::abs(got.sensitivity - best_t);
        worst_f = std::max(worst_f, df);
        worst_t = std::max(worst_t, dt);
        agree += df <= kSensitivityFTol && dt <= kScanStep + 1e-12;
    }
    double secs = elapsed(t0);
    bool ok = agree == kSensitivityTrees && secs < kSensitivitySeconds;
    return {ok, fmt("%d/%d trees agree (max |dF|=%.2g, max |dt|=%.4f)", agree, kSensitivityTrees, worst_f, worst_t)};
}

// ---- DSL ----

Outcome dsl_properties() {
    auto t0 = std::chrono::steady_clock::now();
    dsl_oracle::Generator gen(2024);
    int round_trips = 0, evals = 0;
    std::vector<dsl_oracle::Generated> exprs;
    for (int i = 0; i < kDslRoundTrips; ++i) {
        auto g = gen.expr(4);
        round_trips += dsl::parse(dsl::format(g.expr)) == g.expr;
        exprs.push_back(std::move(g));
    }
    for (int i = 0; i < kDslEvaluations; ++i) {
        const auto& g = exprs[i % exprs.size()];
        Sample s = gen.sample();
        evals += dsl::evaluate(g.expr, s) == g.truth(s);
    }
    double secs = elapsed(t0);
    bool ok = round_trips == kDslRoundTrips && evals == kDslEvaluations && secs < kDslSeconds;
    return {ok, fmt("%d/%d round trips, %d/%d evaluations", round_trips, kDslRoundTrips, evals, kDslEvaluations)};
}

// ---- refinement ----

void advice_generator(MockBackend& mock, std::atomic<bool>& broken) {
    mock.on(TemplateId::QuestionGen, [&broken](const LlmRequest& r) -> std::string {
        if (broken) throw std::runtime_error("scripted outage");
        const std::string f = r.bindings.at("feature");
        const bool advised = r.bindings.at("advice").find("big tech") != std::string::npos;
        nlohmann::json out = nlohmann::json::array();
        if (advised && (f == "worked_big_tech" || f == "top20_university"))
            out.push_back({{"kind", "INFERENCE"}, {"question", mock_questions::category_is(f, "true")}});
        if (f == "region")
            for (const char* c : {"asia", "europe", "africa"})
                out.push_back({{"kind", "INFERENCE"}, {"question", mock_questions::category_is(f, c)}});
        if (f == "years_experience")
            out.push_back({{"kind", "INFERENCE"}, {"question", mock_questions::at_least(f, 15)}});
        return out.dump();
    });
}

std::vector<std::string> all_ids(const TreeNode& n) {
    std::vector<std::string> out{n.id};
    for (const auto& c : n.children)
        for (auto& id : all_ids(c)) out.push_back(std::move(id));
    return out;
}

RefinementAction random_action(std::mt19937_64& rng, const Tree& t) {
    auto ids = all_ids(t.root);
    ids.push_back("r.missing");
    const std::string node = ids[rng() % ids.size()];
    switch (rng() % 4) {
        case 0: return RefinementAction::collapse(node);
        case 1: return RefinementAction::rebuild(node, rng() % 2 ? "weigh big tech experience" : "");
        case 2: return RefinementAction::remove_trivial(static_cast<double>(rng() % 5) * 0.01);
        default: return RefinementAction::qa(node, mock_questions::category_is("region", "asia"));
    }
}

Outcome refinement() {
    auto t0 = std::chrono::steady_clock::now();
    auto synth = synth_generate(fixtures::planted_spec(0.05), 400, 77, "p");
    std::atomic<bool> broken{false};
    auto mock = make_oracle_mock(synth.data.schema());
    advice_generator(*mock, broken);
    Gateway gw(mock, fixtures::fast_limits(8));
    BuildParams params;
    params.min_leaf = 8;
    params.max_depth = 4;
    params.retain_samples = true;
    const Tree original = train(gw, synth.data, params, "task").tree;

    int applied = 0, failed = 0, untouched_on_failure = 0, sequences_ok = 0;
    const int sequences = 6, length = 25;
    for (int seq = 0; seq < sequences; ++seq) {
        std::mt19937_64 rng(900 + seq);
        Tree t = original;
        std::vector<AuditRecord> log;
        for (int step = 0; step < length; ++step) {
            broken = rng() % 6 == 0;
            const Tree before = t;
            auto action = random_action(rng, t);
            auto ctx = gateway_refine_context(gw, synth.data, t);
            try {
                auto r = apply_action(t, action, ctx);
                if (r.record) {
                    log.push_back(AuditRecord::from_json(nlohmann::json::parse(r.record->to_json().dump())));
                    ++applied;
                }
                t = std::move(r.tree);
            } catch (const RefineError&) {
                ++failed;
                untouched_on_failure += t == before;
            }
        }
        broken = false;
        auto ctx = gateway_refine_context(gw, synth.data, original);
        sequences_ok += replay(original, log, ctx) == t && t.version == original.version + log.size();
    }

    // The same guarantees through the persisted store.
    fixtures::TempDir dir("accept-refine");
    write_run(dir.path / "run", original, synth.data, nullptr, {{"sensitivity", 0.5}}, &gw.cache());
    BackendFactory factory = [&](const Schema& schema, const nlohmann::json&) {
        auto m = make_oracle_mock(schema);
        advice_generator(*m, broken);
        return std::shared_ptr<Backend>(m);
    };
    bool store_ok = true;
    {
        RunStore store(dir.path, factory, fixtures::fast_limits());
        Run& run = store.open("run");
        std::mt19937_64 rng(4242);
        for (int step = 0; step < length; ++step) {
            broken = rng() % 6 == 0;
            auto before = run.latest_version();
            auto action = random_action(rng, *run.tree());
            std::uint64_t base = rng() % 5 == 0 ? before + 1 : before;  // some stale bases
            try {
                auto out = run.apply(action, base);
                if (out.status != ActionOutcome::Status::Applied) store_ok = store_ok && run.latest_version() == before;
            } catch (const RefineError&) {
                store_ok = store_ok && run.latest_version() == before;
            }
        }
        broken = false;
        RunStore reopened(dir.path, factory, fixtures::fast_limits());
        Run& again = reopened.open("run");
        Tree replayed = replay(again.tree_at(1), again.audit(), gateway_refine_context(again.gateway(), again.train_data(), again.tree_at(1)));
        store_ok = store_ok && replayed == *again.tree() && again.latest_version() == run.latest_version();
    }

    double secs = elapsed(t0);
    bool ok = sequences_ok == sequences && untouched_on_failure == failed && applied > 0 && failed > 0 && store_ok &&
              secs < kRefineSeconds;
    return {ok, fmt("%d/%d replays match, %d applied, %d failed (%d untouched), store %s", sequences_ok, sequences,
                    applied, failed, untouched_on_failure, store_ok ? "ok" : "MISMATCH")};
}

// ---- determinism ----

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    fixtures::TempDir dir("accept-det");
    auto synth = synth_generate(fixtures::planted_spec(0.05), 600, 8, "d");
    synth.data.save_jsonl(dir.path / "data.jsonl");
    std::ofstream(dir.path / "schema.json") << synth.data.schema().to_json().dump(2);
    std::string docs[2];
    for (int i = 0; i < 2; ++i) {
        RunConfig c;
        c.dataset = dir.path / "data.jsonl";
        c.schema = dir.path / "schema.json";
        c.task = "Predict success.";
        c.params.min_leaf = 20;
        c.params.seed = 3;
        c.params.retain_samples = true;
        c.params.inference_only = false;
        c.out = dir.path / ("run" + std::to_string(i));
        std::ostringstream out, err;
        if (cmd_train(c, out, err) != 0) return {false, "cmd_train failed: " + err.str()};
        docs[i] = slurp(c.out / "tree.v1.json");
    }
    bool ok = !docs[0].empty() && docs[0] == docs[1];
    return {ok, fmt("tree documents %s (%zu bytes)", ok ? "byte-identical" : "DIFFER", docs[0].size())};
}

}  // namespace

int main() {
    std::printf("lmtree acceptance (kernels: %s)\n", kernels::isa_name(kernels::active_isa()));
    report("f-beta reproduction", fbeta_reproduction);
    report("gini oracle equivalence", gini_oracle);
    report("cv scheme", cv_scheme);
    report("planted-rule recovery", planted_rule);
    report("sensitivity selection", sensitivity_scan);
    report("dsl round trip", dsl_properties);
    report("refinement atomicity", refinement);
    report("determinism", determinism);
    std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
