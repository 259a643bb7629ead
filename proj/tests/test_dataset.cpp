#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "lmtree/dataset.hpp"
#include "lmtree/synth.hpp"
#include "support.hpp"

using namespace lmtree;

namespace {

Schema small_schema() {
    return Schema({{"age", FeatureKind::Numeric, {}},
                   {"city", FeatureKind::Categorical, {"paris", "rome"}},
                   {"bio", FeatureKind::Text, {}}});
}

Dataset labelled(std::size_t n, std::size_t positives) {
    std::ostringstream s;
    for (std::size_t i = 0; i < n; ++i)
        s << R"({"id":"x)" << i << R"(","label":)" << (i < positives ? "true" : "false") << "}\n";
    std::istringstream in(s.str());
    return parse_jsonl(in, small_schema());
}

// Independent check of the balance contract: every sample in exactly one fold,
// fold sizes and per-fold positive counts each within one of each other.
void verify_balanced(const Dataset& ds, const FoldPlan& plan) {
    std::vector<std::size_t> size(plan.k, 0), pos(plan.k, 0);
    REQUIRE(plan.assignment.size() == ds.size());
    for (const auto& s : ds.samples()) {
        auto it = plan.assignment.find(s.id);
        REQUIRE(it != plan.assignment.end());
        REQUIRE(it->second < plan.k);
        ++size[it->second];
        pos[it->second] += s.label;
    }
    CHECK(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()) <= 1);
    CHECK(*std::max_element(pos.begin(), pos.end()) - *std::min_element(pos.begin(), pos.end()) <= 1);
}

}  // namespace

TEST_CASE("jsonl load types values per schema") {
    std::istringstream in(R"({"id":"a","label":1,"features":{"age":"41","city":"paris","bio":"Ran a startup"}}
{"id":"b","label":0,"features":{"age":33.5,"city":"rome"}}
{"id":"c","label":true,"features":{"age":null}}
{"id":"d","label":"false","features":{"age":"n/a"}}
)");
    LoadReport report;
    Dataset ds = parse_jsonl(in, small_schema(), &report);
    REQUIRE(ds.size() == 4);
    CHECK(ds.positives() == 2);
    CHECK(ds.positive_rate() == doctest::Approx(0.5));
    CHECK(std::get<double>(ds.find("a")->get("age")) == 41.0);
    CHECK(std::get<Category>(ds.find("b")->get("city")).value == "rome");
    CHECK(std::get<Text>(ds.find("a")->get("bio")).value == "Ran a startup");
    CHECK(is_missing(ds.find("b")->get("bio")));
    CHECK(is_missing(ds.find("c")->get("age")));
    CHECK(is_missing(ds.find("d")->get("age")));
    CHECK(report.unparseable_numeric == 1);
}

TEST_CASE("delimited load handles quoting and tabs") {
    std::istringstream csv("id,label,age,city,bio\n1,1,30,paris,\"likes, commas \"\"quoted\"\"\"\n2,0,,rome,plain\n");
    Dataset ds = parse_delimited(csv, small_schema(), {});
    CHECK(std::get<Text>(ds.find("1")->get("bio")).value == "likes, commas \"quoted\"");
    CHECK(is_missing(ds.find("2")->get("age")));

    std::istringstream tsv("id\tlabel\tcity\n1\t1\tparis\n2\t0\trome\n");
    DelimitedOptions opts;
    opts.delimiter = '\t';
    CHECK(parse_delimited(tsv, small_schema(), opts).positive_rate() == doctest::Approx(0.5));
}

TEST_CASE("load errors") {
    std::istringstream unknown("id,label,height\n1,1,3\n");
    CHECK_THROWS_AS(parse_delimited(unknown, small_schema(), {}), SchemaError);

    std::istringstream dup(R"({"id":"a","label":1}
{"id":"a","label":0}
)");
    CHECK_THROWS_AS(parse_jsonl(dup, small_schema()), IntegrityError);

    std::istringstream empty("");
    CHECK_THROWS_AS(parse_jsonl(empty, small_schema()), EmptyDatasetError);

    std::istringstream bad_cat(R"({"id":"a","label":1,"features":{"city":"oslo"}})");
    CHECK_THROWS_AS(parse_jsonl(bad_cat, small_schema()), SchemaError);

    CHECK_THROWS_WITH_AS(load_dataset("/nonexistent/founders.csv", small_schema()),
                         doctest::Contains("/nonexistent/founders.csv"), DatasetError);
}

TEST_CASE("positive rate of a dataset sized like the founder corpus") {
    Dataset ds = labelled(9892, 978);
    CHECK(ds.positive_rate() == doctest::Approx(0.099).epsilon(0.002));
}

TEST_CASE("schema fingerprint tracks names, kinds and categories") {
    Schema a = small_schema();
    Schema b({{"age", FeatureKind::Numeric, {}},
              {"city", FeatureKind::Categorical, {"paris", "rome", "oslo"}},
              {"bio", FeatureKind::Text, {}}});
    CHECK(a.fingerprint() == small_schema().fingerprint());
    CHECK(a.fingerprint() != b.fingerprint());
    CHECK(Schema::from_json(a.to_json()) == a);
    CHECK_THROWS_AS(Schema({{"x", FeatureKind::Numeric, {}}, {"x", FeatureKind::Text, {}}}), SchemaError);
}

TEST_CASE("stratified folds") {
    SUBCASE("exact divisibility: one positive and one negative per fold") {
        Dataset ds = labelled(10, 5);
        for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
            FoldPlan plan = stratified_folds(ds, 5, seed);
            for (std::size_t f = 0; f < 5; ++f) {
                std::size_t p = 0, n = 0;
                for (const auto& s : ds.samples())
                    if (plan.assignment.at(s.id) == f) (s.label ? p : n)++;
                CHECK(p == 1);
                CHECK(n == 1);
            }
        }
    }
    SUBCASE("deterministic for a seed") {
        Dataset ds = labelled(50, 12);
        CHECK(stratified_folds(ds, 5, 4).assignment == stratified_folds(ds, 5, 4).assignment);
        CHECK(stratified_folds(ds, 5, 4).assignment != stratified_folds(ds, 5, 5).assignment);
    }
    SUBCASE("103 samples, 11 positive") {
        Dataset ds = labelled(103, 11);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            FoldPlan plan = stratified_folds(ds, 5, seed);
            verify_balanced(ds, plan);
            std::multiset<std::size_t> sizes;
            for (std::size_t f = 0; f < 5; ++f) {
                const std::size_t folds[1] = {f};
                auto rows = plan.rows_in(ds, folds);
                sizes.insert(rows.size());
                std::size_t p = 0;
                for (auto r : rows) p += ds.samples()[r].label;
                CHECK((p == 2 || p == 3));
            }
            CHECK(sizes == std::multiset<std::size_t>{20, 20, 21, 21, 21});
        }
    }
    SUBCASE("balanced on random shapes") {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 50; ++i) {
            std::size_t n = 10 + rng() % 300;
            std::size_t p = 5 + rng() % (n - 9);
            if (n - p < 5) continue;
            Dataset ds = labelled(n, p);
            verify_balanced(ds, stratified_folds(ds, 5, rng()));
        }
    }
    SUBCASE("a class smaller than k") { CHECK_THROWS_AS(stratified_folds(labelled(20, 4), 5, 0), StratificationError); }
}

TEST_CASE("cross-validation partitions") {
    Dataset ds = labelled(10, 5);
    auto parts = enumerate_partitions(stratified_folds(ds, 5, 0));
    REQUIRE(parts.size() == 20);
    for (std::size_t i = 0; i < parts.size(); ++i)
        for (std::size_t j = i + 1; j < parts.size(); ++j) CHECK_FALSE(parts[i] == parts[j]);
    CHECK(parts[0] == CvPartition{{0, 1, 2}, 3, 4});
    CHECK(parts[1] == CvPartition{{0, 1, 2}, 4, 3});
    FoldPlan three = stratified_folds(ds, 5, 0);
    three.k = 3;
    CHECK_THROWS_AS(enumerate_partitions(three), std::invalid_argument);
}

TEST_CASE("batches") {
    Dataset big = labelled(9892, 978);
    auto b = batches(big.refs(), 250);
    CHECK(b.size() == 40);
    CHECK(b.back().size() == 142);
    SampleRefs joined;
    for (auto& x : b) joined.insert(joined.end(), x.begin(), x.end());
    CHECK(joined == big.refs());

    Dataset five = labelled(5, 2);
    CHECK(batches(five.refs(), 10).size() == 1);
    CHECK(batches({}, 10).empty());
    CHECK_THROWS_AS(batches(five.refs(), 0), std::invalid_argument);
}

TEST_CASE("planted-rule generator") {
    auto spec = fixtures::planted_spec();
    SUBCASE("noise 0: label equals rule") {
        auto s = synth_generate(spec, 1000, 11);
        for (std::size_t i = 0; i < s.data.size(); ++i) {
            CHECK(s.data.samples()[i].label == s.rule_values[i]);
            CHECK(dsl::evaluate(s.rule, s.data.samples()[i]) == s.rule_values[i]);
        }
    }
    SUBCASE("deterministic with noise") {
        spec.noise = 0.1;
        auto a = synth_generate(spec, 1000, 5), b = synth_generate(spec, 1000, 5);
        for (std::size_t i = 0; i < 1000; ++i) {
            CHECK(a.data.samples()[i].to_json() == b.data.samples()[i].to_json());
        }
        std::size_t flipped = 0;
        for (std::size_t i = 0; i < 1000; ++i) flipped += a.data.samples()[i].label != a.rule_values[i];
        CHECK(flipped > 50);
        CHECK(flipped < 150);
    }
    SUBCASE("rule-true fraction 0.1") {
        PlantedRuleSpec s;
        s.features = {SynthFeature::boolean("flag", 0.1), SynthFeature::numeric("x", 0, 1)};
        s.rule = "flag == 'true'";
        auto d = synth_generate(s, 1000, 21);
        CHECK(d.data.positive_rate() == doctest::Approx(0.1).epsilon(0.3));
        CHECK(std::abs(d.data.positive_rate() - 0.1) <= 0.03);
    }
    SUBCASE("undeclared feature in rule") {
        spec.rule = "founded_unicorn == 'true'";
        CHECK_THROWS_AS(synth_generate(spec, 10, 0), SchemaError);
    }
    SUBCASE("spec round-trips through json") {
        auto back = PlantedRuleSpec::from_json(spec.to_json());
        CHECK(back.schema() == spec.schema());
        CHECK(back.rule == spec.rule);
    }
}
