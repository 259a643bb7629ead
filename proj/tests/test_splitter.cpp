#include <doctest.h>

#include <boost/rational.hpp>
#include <random>
#include <set>

#include "lmtree/splitter.hpp"
#include "support.hpp"

using namespace lmtree;

namespace {

struct Pool {
    Schema schema{{{"x", FeatureKind::Numeric, {}}, {"c", FeatureKind::Categorical, {"a", "b", "c", "d", "e"}}}};
    std::vector<Sample> samples;

    SampleRefs refs() const {
        SampleRefs r;
        for (const auto& s : samples) r.push_back(&s);
        return r;
    }
};

Question code(const std::string& expr) {
    Question q;
    q.kind = QuestionKind::Code;
    q.text = expr;
    q.code_expr = dsl::parse(expr);
    return q;
}

Question inference(const std::string& text) {
    Question q;
    q.text = text;
    return q;
}

// Answers "Yes" for listed ids, "Unknown" for ids in `unknown`, "No" otherwise.
AnswerFn scripted(std::set<std::string> yes, std::set<std::string> unknown = {}) {
    return [yes, unknown](const std::string&, const SampleRefs& samples) {
        std::vector<Answer> out;
        for (const Sample* s : samples)
            out.push_back({yes.contains(s->id) ? AnswerKind::Yes
                                               : unknown.contains(s->id) ? AnswerKind::Unknown : AnswerKind::No,
                           "", ""});
        return out;
    };
}

const AnswerFn no_answers = [](const std::string&, const SampleRefs&) -> std::vector<Answer> {
    throw std::logic_error("no model calls expected");
};

}  // namespace

TEST_CASE("gini values") {
    CHECK(gini({5, 5}) == doctest::Approx(0.5));
    CHECK(gini({10, 0}) == 0.0);
    CHECK(gini({1, 3}) == doctest::Approx(0.375));
    CHECK_THROWS_AS(gini({0, 0}), std::domain_error);
    std::vector<ClassCounts> kids{{4, 0}, {1, 3}};
    CHECK(weighted_gini(kids) == doctest::Approx(0.1875));
    std::vector<ClassCounts> empty_kid{{4, 0}, {0, 0}};
    CHECK_THROWS_AS(weighted_gini(empty_kid), std::invalid_argument);
}

TEST_CASE("weighted gini matches an exact rational computation") {
    using Q = boost::rational<long long>;
    std::mt19937_64 rng(3);
    for (int it = 0; it < 200; ++it) {
        std::vector<ClassCounts> kids(2 + rng() % 3);
        for (auto& k : kids) k = {rng() % 20, 1 + rng() % 20};
        Q total = 0, acc = 0;
        for (auto& k : kids) total += Q(static_cast<long long>(k.total()));
        for (auto& k : kids) {
            Q n(static_cast<long long>(k.total()));
            Q p = Q(static_cast<long long>(k.pos)) / n, q = Q(static_cast<long long>(k.neg)) / n;
            acc += n / total * (Q(1) - p * p - q * q);
        }
        CHECK(weighted_gini(kids) == doctest::Approx(boost::rational_cast<double>(acc)).epsilon(1e-12));
    }
}

TEST_CASE("unknown answers under each policy") {
    Pool p;
    for (int i = 0; i < 6; ++i) p.samples.push_back({"s" + std::to_string(i), {}, i < 3});
    auto answers = scripted({"s0", "s1"}, {"s2"});
    auto q = inference("Q?");
    auto route_no = apply_question(q, p.refs(), answers, p.schema, UnknownPolicy::RouteNo);
    CHECK(route_no.children[0].samples.size() == 2);
    CHECK(route_no.children[1].samples.size() == 4);
    CHECK(route_no.abstained.empty());
    auto drop = apply_question(q, p.refs(), answers, p.schema, UnknownPolicy::AbstainDrop);
    CHECK(drop.children[1].samples.size() == 3);
    CHECK(drop.abstained.size() == 1);
    CHECK(unknown_policy_from_string("abstain-drop") == UnknownPolicy::AbstainDrop);
    CHECK_THROWS_AS(unknown_policy_from_string("yes"), std::invalid_argument);
}

TEST_CASE("best split: lowest weighted gini, ties to the first, min_leaf per child") {
    Pool p;
    for (int i = 0; i < 20; ++i) p.samples.push_back({"s" + std::to_string(i), {{"x", double(i)}}, i >= 10});
    auto refs = p.refs();
    std::vector<Question> cands{code("x >= 15"), code("x >= 10"), code("x >= 9.5"), code("x >= 19")};
    auto r = best_split(cands, refs, 1, no_answers, p.schema);
    REQUIRE(r.best);
    CHECK(r.best_index == 1);  // x >= 9.5 separates equally well; first wins
    CHECK(r.best->weighted_gini == 0.0);
    CHECK(r.scores[2] == 0.0);

    // With min_leaf 11 no candidate qualifies.
    auto none = best_split(cands, refs, 11, no_answers, p.schema);
    CHECK_FALSE(none.best);
    for (auto& s : none.scores) CHECK_FALSE(s.has_value());
    // min_leaf 2 rules out x >= 19 (one sample on the yes side).
    auto r2 = best_split({code("x >= 19")}, refs, 2, no_answers, p.schema);
    CHECK_FALSE(r2.best);
}

TEST_CASE("best split: candidates that fail are skipped with a warning") {
    Pool p;
    for (int i = 0; i < 4; ++i) p.samples.push_back({"s" + std::to_string(i), {{"x", double(i)}}, i >= 2});
    AnswerFn broken = [](const std::string&, const SampleRefs&) -> std::vector<Answer> {
        throw std::runtime_error("provider down");
    };
    auto r = best_split({inference("Q?"), code("x >= 2")}, p.refs(), 1, broken, p.schema);
    REQUIRE(r.best);
    CHECK(r.best_index == 1);
    CHECK(r.warnings.size() == 1);
    AnswerFn fatal = [](const std::string&, const SampleRefs&) -> std::vector<Answer> { throw FatalError("bad key"); };
    CHECK_THROWS_AS(best_split({inference("Q?")}, p.refs(), 1, fatal, p.schema), FatalError);
}

TEST_CASE("clustering partitions follow the grouping; unplaced go to the largest group") {
    Pool p;
    const char* cats[] = {"a", "a", "b", "c", "d", "e"};
    for (int i = 0; i < 6; ++i) p.samples.push_back({"s" + std::to_string(i), {{"c", Category{cats[i]}}}, i < 2});
    p.samples.push_back({"m", {}, false});
    Question q;
    q.kind = QuestionKind::Clustering;
    q.text = "group";
    q.target_feature = "c";
    q.grouping = Grouping{{"a", "g1"}, {"b", "g1"}, {"c", "g2"}, {"d", "g2"}, {"e", "g2"}};
    auto part = apply_question(q, p.refs(), no_answers, p.schema);
    REQUIRE(part.children.size() == 2);
    CHECK(part.children[0].label == "g1");
    // Both groups hold three placed samples; the tie goes to the first, which takes the missing one.
    CHECK(part.children[0].samples.size() == 4);
    CHECK(part.children[1].samples.size() == 3);
}

TEST_CASE("category grouping") {
    Schema s({{"c", FeatureKind::Categorical, {"a", "b", "c", "d", "e", "f"}}});
    std::vector<std::string> cats{"a", "b", "c", "d", "e", "f"};
    auto mg = fixtures::oracle_gateway(s);
    auto g = group_categories(*mg.gateway, "c", {"a", "b"}, 4, "t");
    CHECK(g == Grouping{{"a", "a"}, {"b", "b"}});
    CHECK(mg.mock->calls() == 0);

    auto g2 = group_categories(*mg.gateway, "c", cats, 3, "t");
    CHECK(g2.size() == 6);
    CHECK(g2.at("a") == "group_1");
    CHECK(g2.at("f") == "group_3");

    mg.mock->on(TemplateId::CategoryGroup, [](const LlmRequest&) { return "not a grouping"; });
    std::vector<std::string> warnings;
    std::map<std::string, std::size_t> freq{{"f", 9}, {"e", 8}};
    auto g3 = group_categories(*mg.gateway, "c", cats, 2, "t", &freq, &warnings);
    CHECK(warnings.size() == 2);
    CHECK(mg.mock->calls(TemplateId::CategoryGroup) == 3);
    CHECK(g3 == fallback_grouping(cats, 2, &freq));
    CHECK(g3.at("f") == "group_1");
    CHECK(g3.at("e") == "group_1");
    CHECK(g3.at("a") == "group_1");
    CHECK(g3.at("d") == "group_2");
}
