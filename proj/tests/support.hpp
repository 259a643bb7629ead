#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "lmtree/llm_gateway.hpp"
#include "lmtree/mock_backend.hpp"
#include "lmtree/synth.hpp"
#include "lmtree/tree.hpp"

namespace fixtures {

using namespace lmtree;

inline PlantedRuleSpec planted_spec(double noise = 0.0) {
    PlantedRuleSpec s;
    s.features = {SynthFeature::boolean("worked_big_tech", 0.5), SynthFeature::boolean("top20_university", 0.5),
                  SynthFeature::categorical("region", {"africa", "americas", "asia", "europe", "oceania"}),
                  SynthFeature::numeric("years_experience", 0, 30),
                  SynthFeature::text("bio", {"engineer", "founder", "designer", "sales", "research", "product"})};
    s.rule = "worked_big_tech == 'true' and top20_university == 'true'";
    s.noise = noise;
    return s;
}

// No backoff sleeps in tests.
inline BatchLimits fast_limits(std::size_t in_flight = 4) {
    BatchLimits l;
    l.max_in_flight = in_flight;
    l.retry.base_delay = std::chrono::milliseconds(0);
    l.retry.max_delay = std::chrono::milliseconds(0);
    return l;
}

struct MockGateway {
    std::shared_ptr<MockBackend> mock;
    std::unique_ptr<Gateway> gateway;
};

inline MockGateway oracle_gateway(const Schema& schema, OracleMockOptions options = {}) {
    MockGateway g;
    g.mock = make_oracle_mock(schema, std::move(options));
    g.gateway = std::make_unique<Gateway>(g.mock, fast_limits());
    return g;
}

inline TreeNode leaf(std::string id, std::string branch, std::size_t depth, std::uint64_t pos, std::uint64_t neg) {
    TreeNode n;
    n.id = std::move(id);
    n.branch = std::move(branch);
    n.depth = depth;
    n.counts = {pos, neg};
    return n;
}

// Binary internal node over a CODE question; counts are the children's sum.
inline TreeNode code_node(std::string id, std::string branch, std::size_t depth, const std::string& expr,
                          TreeNode yes, TreeNode no) {
    TreeNode n;
    n.id = std::move(id);
    n.branch = std::move(branch);
    n.depth = depth;
    Question q;
    q.kind = QuestionKind::Code;
    q.text = expr;
    q.code_expr = dsl::parse(expr);
    n.question = q;
    n.counts = yes.counts;
    n.counts += no.counts;
    n.children = {std::move(yes), std::move(no)};
    return n;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng{std::random_device{}()};
        path = std::filesystem::temp_directory_path() / ("lmtree-" + tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace fixtures
