#include <doctest.h>

#include <fstream>
#include <sstream>

#include "lmtree/commands.hpp"
#include "support.hpp"

using namespace lmtree;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fixtures::TempDir dir{"cmd"};
    fs::path data = dir.path / "data.jsonl";
    fs::path holdout = dir.path / "holdout.jsonl";
    fs::path schema = dir.path / "schema.json";
    fs::path spec = dir.path / "spec.json";

    Workspace() {
        std::ofstream(spec) << fixtures::planted_spec().to_json().dump();
        std::ostringstream out, err;
        SynthConfig s;
        s.spec = spec;
        s.n = 300;
        s.seed = 3;
        s.out = data;
        s.schema_out = schema;
        REQUIRE(cmd_synth(s, out, err) == 0);
        s.n = 120;
        s.seed = 4;
        s.out = holdout;
        s.id_prefix = "h";
        REQUIRE(cmd_synth(s, out, err) == 0);
    }

    RunConfig run(const fs::path& out) const {
        RunConfig c;
        c.dataset = data;
        c.schema = schema;
        c.task = "find the planted rule";
        c.params.min_leaf = 10;
        c.params.retain_samples = true;
        c.out = out;
        return c;
    }
};

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("train writes a run and recovers the rule") {
    Workspace w;
    std::ostringstream out, err;
    auto cfg = w.run(w.dir.path / "run");
    REQUIRE(cmd_train(cfg, out, err) == 0);
    CHECK(fs::exists(cfg.out / "tree.v1.json"));
    CHECK(fs::exists(cfg.out / "build_report.json"));
    auto report = nlohmann::json::parse(std::ifstream(cfg.out / "build_report.json"));
    CHECK(report["depth"] == 2);
    CHECK(report["tuning_metrics"]["f_beta"] == 1.0);
    CHECK(report["per_node"].size() == report["nodes"]);
    CHECK(out.str().find("nodes:") != std::string::npos);
}

TEST_CASE("missing dataset names the path") {
    Workspace w;
    std::ostringstream out, err;
    auto cfg = w.run(w.dir.path / "run");
    cfg.dataset = w.dir.path / "does-not-exist.jsonl";
    CHECK(cmd_train(cfg, out, err) != 0);
    CHECK(err.str().find("does-not-exist.jsonl") != std::string::npos);
}

TEST_CASE("invalid parameters fail cleanly") {
    Workspace w;
    std::ostringstream out, err;
    auto cfg = w.run(w.dir.path / "run");
    cfg.params.min_leaf = 0;
    CHECK(cmd_train(cfg, out, err) != 0);
    CHECK_FALSE(err.str().empty());
}

TEST_CASE("predict emits one line per sample") {
    Workspace w;
    std::ostringstream out, err;
    auto cfg = w.run(w.dir.path / "run");
    REQUIRE(cmd_train(cfg, out, err) == 0);

    PredictConfig p;
    p.run = cfg.out;
    p.dataset = w.holdout;
    std::ostringstream pred;
    REQUIRE(cmd_predict(p, pred, err) == 0);
    auto rows = lines(pred.str());
    CHECK(rows.size() == 120);
    CHECK(rows[0].starts_with("h"));

    p.sensitivity = 0.0;
    p.jsonl = true;
    std::ostringstream all;
    REQUIRE(cmd_predict(p, all, err) == 0);
    auto json_rows = lines(all.str());
    REQUIRE(json_rows.size() == 120);
    for (const auto& l : json_rows) {
        auto j = nlohmann::json::parse(l);
        CHECK(j["predicted"] == true);
        CHECK(j["leaf"].get<std::string>().starts_with("r"));
    }

    // A schema other than the run's is rejected.
    fs::path other = w.dir.path / "other_schema.json";
    std::ofstream(other) << Schema({{"z", FeatureKind::Numeric, {}}}).to_json().dump();
    p.schema = other;
    std::ostringstream ignored, perr;
    CHECK(cmd_predict(p, ignored, perr) != 0);
}

TEST_CASE("cross-validation command") {
    Workspace w;
    std::ostringstream out, err;
    auto cfg = w.run(w.dir.path / "cv");
    cfg.params.retain_samples = false;
    REQUIRE(cmd_cv(cfg, out, err) == 0);
    auto report = nlohmann::json::parse(std::ifstream(cfg.out / "cv.json"));
    CHECK(report["rows"].size() == 20);
    CHECK(report["trees_built"] == 10);
    CHECK(lines(out.str()).size() == 23);
}

TEST_CASE("baselines") {
    Workspace w;
    std::ostringstream out, err;
    BaselineConfig b;
    b.run = w.run(w.dir.path / "base");
    b.run.backend.mock_rule = fixtures::planted_spec().rule;
    REQUIRE(cmd_baseline(b, out, err) == 0);
    auto r = nlohmann::json::parse(std::ifstream(b.run.out / "baseline_vanilla.json"));
    CHECK(r["metrics"]["accuracy"] == 1.0);
    CHECK(r["calls"] == 300);

    b.kind = "fewshot";
    REQUIRE(cmd_baseline(b, out, err) == 0);
    auto f = nlohmann::json::parse(std::ifstream(b.run.out / "baseline_fewshot.json"));
    CHECK(f["calls"] == 296);

    // Exemplars drawn from the evaluation set overlap it.
    Dataset ds = load_dataset(w.data, Schema::load(w.schema));
    SampleRefs ex = pick_exemplars(ds.refs(), {}, 1);
    for (const Sample* s : ex) b.exemplar_ids.push_back(s->id);
    std::ostringstream o2, e2;
    CHECK(cmd_baseline(b, o2, e2) != 0);
    CHECK(e2.str().find("also in the evaluation set") != std::string::npos);

    b.kind = "zeroshot";
    b.exemplar_ids.clear();
    CHECK(cmd_baseline(b, o2, e2) != 0);
}

TEST_CASE("refine command reports conflicts") {
    Workspace w;
    std::ostringstream out, err;
    auto cfg = w.run(w.dir.path / "run");
    REQUIRE(cmd_train(cfg, out, err) == 0);
    RefineConfig r;
    r.run = cfg.out;
    r.action = R"({"type": "collapse", "node": "r"})";
    std::ostringstream o1;
    REQUIRE(cmd_refine(r, o1, err) == 0);
    CHECK(nlohmann::json::parse(o1.str())["version"] == 2);
    r.base_version = 1;
    std::ostringstream o2;
    CHECK(cmd_refine(r, o2, err) == 3);
    r.action = "{\"type\": \"explode\"}";
    r.base_version.reset();
    std::ostringstream o3, e3;
    CHECK(cmd_refine(r, o3, e3) != 0);
}

TEST_CASE("backend options") {
    BackendOptions o;
    o.kind = "live";
    o.mock_rule = "x == 1";
    o.http.model = "some-model";
    auto back = BackendOptions::from_json(o.to_json());
    CHECK(back.kind == "live");
    CHECK(back.http.model == "some-model");
    CHECK(back.mock_rule == "x == 1");
    BackendOptions bad;
    bad.kind = "psychic";
    CHECK_THROWS(make_backend(bad, Schema({{"x", FeatureKind::Numeric, {}}})));
}
