#include <doctest.h>

#include "lmtree/question_gen.hpp"
#include "support.hpp"

using namespace lmtree;

namespace {

Schema schema() {
    return Schema({{"region", FeatureKind::Categorical, {"eu", "us", "asia", "latam", "africa"}},
                   {"age", FeatureKind::Numeric, {}},
                   {"bio", FeatureKind::Text, {}}});
}

std::vector<Sample> rows() {
    std::vector<Sample> out;
    const char* regions[] = {"eu", "us", "asia", "latam", "africa"};
    for (int i = 0; i < 40; ++i) {
        Sample s{"r" + std::to_string(i), {}, i % 4 == 0};
        s.features["region"] = Category{regions[i % 5]};
        s.features["age"] = static_cast<double>(20 + i);
        s.features["bio"] = Text{i % 4 == 0 ? "serial founder, PhD" : "sales lead"};
        if (i == 39) s.features.erase("age");
        out.push_back(s);
    }
    return out;
}

SampleRefs refs(const std::vector<Sample>& v) {
    SampleRefs r;
    for (const auto& s : v) r.push_back(&s);
    return r;
}

}  // namespace

TEST_CASE("feature profiles") {
    auto data = rows();
    auto sch = schema();
    auto cat = feature_profile(*sch.find("region"), refs(data));
    CHECK(cat["counts"]["eu"]["pos"] == 2);
    CHECK(cat["counts"]["eu"]["neg"] == 6);
    CHECK(cat["counts"]["us"]["pos"] == 2);
    auto num = feature_profile(*sch.find("age"), refs(data));
    CHECK(num["missing"]["neg"] == 1);
    CHECK(num["quantiles"].size() == 3);
    CHECK(num["quantiles"][0] == 39.0);
    auto text = feature_profile(*sch.find("bio"), refs(data));
    CHECK(text["top_words"][0]["pos"] == 10);
    CHECK(text["top_words"][0]["neg"] == 0);
}

TEST_CASE("candidate parsing tolerates prose and fences") {
    std::vector<std::string> w;
    auto c = parse_candidates("Here you go:\n```json\n[{\"kind\":\"INFERENCE\",\"question\":\"Q?\"},{\"x\":1}]\n```",
                              "f", w);
    REQUIRE(c.size() == 1);
    CHECK(c[0].text == "Q?");
    CHECK(c[0].feature == "f");
    CHECK(w.size() == 1);
    CHECK(parse_candidates("no array here", "f", w).empty());
    CHECK(parse_candidates("[not json]", "f", w).empty());
}

TEST_CASE("validation of raw candidates") {
    auto sch = schema();
    CHECK(std::holds_alternative<Question>(validate_candidate({"INFERENCE", "Is it?", "bio", {}, {}}, sch, 4)));
    auto code = validate_candidate({"CODE", "old", "age", "age >= 30", {}}, sch, 4);
    REQUIRE(std::holds_alternative<Question>(code));
    CHECK(std::get<Question>(code).code_expr.has_value());
    auto reason = [&](RawCandidate r) { return std::get<Rejection>(validate_candidate(r, sch, 4)).reason; };
    CHECK(reason({"CODE", "bad", "age", "age >=", {}}) == Rejection::Reason::ParseFailure);
    CHECK(reason({"CODE", "bad", "age", "bio >= 3", {}}) == Rejection::Reason::TypeFailure);
    CHECK(reason({"CODE", "none", "age", {}, {}}) == Rejection::Reason::MissingPayload);
    CHECK(reason({"WHATEVER", "q", "age", {}, {}}) == Rejection::Reason::UnknownKind);
    CHECK(reason({"INFERENCE", "  ", "age", {}, {}}) == Rejection::Reason::EmptyText);
    CHECK(reason({"CLUSTERING", "g", "age", {}, Grouping{{"a", "x"}}}) == Rejection::Reason::NotCategorical);
    Grouping partial{{"eu", "a"}, {"us", "b"}};
    CHECK(reason({"CLUSTERING", "g", "region", {}, partial}) == Rejection::Reason::IncompleteGrouping);
    Grouping five{{"eu", "1"}, {"us", "2"}, {"asia", "3"}, {"latam", "4"}, {"africa", "5"}};
    CHECK(reason({"CLUSTERING", "g", "region", {}, five}) == Rejection::Reason::BranchingOverflow);
    Grouping one{{"eu", "1"}, {"us", "1"}, {"asia", "1"}, {"latam", "1"}, {"africa", "1"}};
    CHECK(reason({"CLUSTERING", "g", "region", {}, one}) == Rejection::Reason::DegenerateGrouping);

    Grouping two{{"eu", "west"}, {"us", "west"}, {"asia", "rest"}, {"latam", "rest"}, {"africa", "rest"}};
    auto ok = validate_candidate({"CLUSTERING", "g", "region", {}, two}, sch, 4);
    REQUIRE(std::holds_alternative<Question>(ok));
    CHECK(satisfies_payload_invariant(std::get<Question>(ok), sch, 4));
    CHECK(std::get<Question>(ok).branch_labels(sch) == std::vector<std::string>{"west", "rest"});

    // Inference candidates lose any payload.
    auto inf = std::get<Question>(validate_candidate({"INFERENCE", "Q", "age", "age > 1", {}}, sch, 4));
    CHECK_FALSE(inf.code_expr.has_value());
}

TEST_CASE("question json round trip") {
    auto sch = schema();
    auto q = std::get<Question>(validate_candidate({"CODE", "old", "age", "age >= 30", {}}, sch, 4));
    CHECK(Question::from_json(q.to_json(), &sch) == q);
}

TEST_CASE("generation: one call per feature, inference only by default") {
    auto data = rows();
    auto sch = schema();
    auto mg = fixtures::oracle_gateway(sch);
    auto set = generate_candidates(*mg.gateway, refs(data), sch, {}, "task");
    CHECK(mg.mock->calls(TemplateId::QuestionGen) == 3);
    CHECK_FALSE(set.questions.empty());
    for (const auto& q : set.questions) CHECK(q.kind == QuestionKind::Inference);
    CHECK(set.failed_features == 0);
}

TEST_CASE("generation: all kinds, clustering grouped, caps and dedupe") {
    auto data = rows();
    auto sch = schema();
    auto mg = fixtures::oracle_gateway(sch);
    GenerationOptions opts;
    opts.inference_only = false;
    opts.per_feature_max = 2;
    auto set = generate_candidates(*mg.gateway, refs(data), sch, {}, "task", opts);
    std::map<std::string, int> per_feature;
    bool clustering = false;
    for (const auto& q : set.questions) {
        CHECK(satisfies_payload_invariant(q, sch, opts.max_branching));
        if (q.kind == QuestionKind::Clustering) clustering = true;
    }
    CHECK(set.questions.size() <= 6);
    (void)clustering;

    // Duplicates across features collapse to the first, case and spacing aside.
    mg.mock->on(TemplateId::QuestionGen, [](const LlmRequest&) {
        return R"([{"kind":"INFERENCE","question":"Did they exit?"},{"kind":"INFERENCE","question":"did  they EXIT?"}])";
    });
    auto dup = generate_candidates(*mg.gateway, refs(data), sch, {}, "task");
    CHECK(dup.questions.size() == 1);
}

TEST_CASE("generation: clustering without a grouping asks for one") {
    auto data = rows();
    auto sch = schema();
    auto mg = fixtures::oracle_gateway(sch);
    mg.mock->on(TemplateId::QuestionGen, [](const LlmRequest& r) -> std::string {
        if (r.bindings.at("feature") != "region") return "[]";
        return R"([{"kind":"CLUSTERING","question":"Which region group?"}])";
    });
    GenerationOptions opts;
    opts.inference_only = false;
    auto set = generate_candidates(*mg.gateway, refs(data), sch, {}, "task", opts);
    REQUIRE(set.questions.size() == 1);
    CHECK(set.questions[0].kind == QuestionKind::Clustering);
    CHECK(set.questions[0].grouping->size() == 5);
    CHECK(mg.mock->calls(TemplateId::CategoryGroup) == 1);
}

TEST_CASE("generation: advice and failures") {
    auto data = rows();
    auto sch = schema();
    auto mg = fixtures::oracle_gateway(sch);
    std::atomic<int> with_advice{0};
    mg.mock->on(TemplateId::QuestionGen, [&](const LlmRequest& r) -> std::string {
        if (r.prompt.find("look at exits") != std::string::npos) ++with_advice;
        if (r.bindings.at("feature") == "bio") throw std::runtime_error("boom");
        return "[]";
    });
    GenerationOptions opts;
    opts.advice = "look at exits";
    auto set = generate_candidates(*mg.gateway, refs(data), sch, {}, "task", opts);
    CHECK(with_advice == 3);
    CHECK(set.failed_features == 1);
    CHECK_FALSE(set.warnings.empty());
    CHECK_THROWS_AS(generate_candidates(*mg.gateway, {}, sch, {}, "task"), std::invalid_argument);
}
