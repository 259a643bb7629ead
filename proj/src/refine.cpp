#include "lmtree/refine.hpp"

#include <algorithm>
#include <ctime>
#include <map>
#include <set>

namespace lmtree {

RefinementAction RefinementAction::collapse(std::string node) {
    RefinementAction a;
    a.kind = Kind::Collapse;
    a.node_id = std::move(node);
    return a;
}

RefinementAction RefinementAction::rebuild(std::string node, std::string advice) {
    RefinementAction a;
    a.kind = Kind::Rebuild;
    a.node_id = std::move(node);
    a.advice = std::move(advice);
    return a;
}

RefinementAction RefinementAction::remove_trivial(double epsilon) {
    RefinementAction a;
    a.kind = Kind::RemoveTrivial;
    a.epsilon = epsilon;
    return a;
}

RefinementAction RefinementAction::qa(std::string node, std::string question) {
    RefinementAction a;
    a.kind = Kind::Qa;
    a.node_id = std::move(node);
    a.question = std::move(question);
    return a;
}

std::string to_string(RefinementAction::Kind k) {
    switch (k) {
        case RefinementAction::Kind::Collapse: return "collapse";
        case RefinementAction::Kind::Rebuild: return "rebuild";
        case RefinementAction::Kind::RemoveTrivial: return "remove_trivial";
        case RefinementAction::Kind::Qa: return "qa";
    }
    return "collapse";
}

nlohmann::json RefinementAction::to_json() const {
    nlohmann::json j{{"type", to_string(kind)}};
    switch (kind) {
        case Kind::Collapse: j["node"] = node_id; break;
        case Kind::Rebuild:
            j["node"] = node_id;
            j["advice"] = advice;
            break;
        case Kind::RemoveTrivial: j["epsilon"] = epsilon; break;
        case Kind::Qa:
            j["node"] = node_id;
            j["question"] = question;
            break;
    }
    return j;
}

RefinementAction RefinementAction::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
        throw InvalidAction("action needs a string 'type'");
    const std::string type = j["type"].get<std::string>();
    auto str = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_string()) throw InvalidAction(type + " action needs a string '" + key + "'");
        return j[key].get<std::string>();
    };
    if (type == "collapse") return collapse(str("node"));
    if (type == "rebuild") return rebuild(str("node"), j.contains("advice") ? str("advice") : std::string());
    if (type == "qa") return qa(str("node"), str("question"));
    if (type == "remove_trivial") {
        double eps = 0.005;
        if (j.contains("epsilon")) {
            if (!j["epsilon"].is_number()) throw InvalidAction("epsilon must be a number");
            eps = j["epsilon"].get<double>();
        }
        if (!(eps >= 0.0)) throw InvalidAction("epsilon must be >= 0");
        return remove_trivial(eps);
    }
    throw InvalidAction("unknown action type '" + type + "'");
}

// ---- diff ----

namespace {

void index_nodes(const TreeNode& n, std::map<std::string, const TreeNode*>& out) {
    out[n.id] = &n;
    for (const auto& c : n.children) index_nodes(c, out);
}

bool same_node(const TreeNode& a, const TreeNode& b) {
    if (a.counts != b.counts || a.question != b.question || a.children.size() != b.children.size()) return false;
    for (std::size_t i = 0; i < a.children.size(); ++i)
        if (a.children[i].id != b.children[i].id) return false;
    return true;
}

}  // namespace

StructuralDiff diff_trees(const Tree& before, const Tree& after) {
    std::map<std::string, const TreeNode*> a, b;
    index_nodes(before.root, a);
    index_nodes(after.root, b);
    StructuralDiff d;
    for (const auto& [id, n] : a) {
        auto it = b.find(id);
        if (it == b.end()) d.removed.push_back(id);
        else if (!same_node(*n, *it->second)) d.changed.push_back(id);
    }
    for (const auto& [id, n] : b)
        if (!a.contains(id)) d.added.push_back(id);
    return d;
}

std::string StructuralDiff::summary() const {
    if (empty()) return "no structural change";
    std::string s = std::to_string(removed.size()) + " removed, " + std::to_string(added.size()) + " added, " +
                    std::to_string(changed.size()) + " changed";
    if (!changed.empty()) s += " (at " + changed.front() + ")";
    return s;
}

nlohmann::json StructuralDiff::to_json() const {
    return {{"removed", removed}, {"added", added}, {"changed", changed}, {"summary", summary()}};
}

// ---- audit ----

nlohmann::json AuditRecord::to_json() const {
    return {{"action", action.to_json()},
            {"prior_version", prior_version},
            {"new_version", new_version},
            {"timestamp", timestamp},
            {"summary", summary}};
}

AuditRecord AuditRecord::from_json(const nlohmann::json& j) {
    AuditRecord r;
    r.action = RefinementAction::from_json(j.at("action"));
    r.prior_version = j.at("prior_version").get<std::uint64_t>();
    r.new_version = j.at("new_version").get<std::uint64_t>();
    r.timestamp = j.value("timestamp", "");
    r.summary = j.value("summary", "");
    return r;
}

RefineContext gateway_refine_context(Gateway& gateway, const Dataset& data, const Tree& tree) {
    RefineContext ctx;
    ctx.data = &data;
    const Schema* schema = &data.schema();
    ctx.make_build_context = [&gateway, schema, insights = tree.insights, task = tree.task,
                              params = tree.params](const std::string& advice) {
        return gateway_context(gateway, *schema, insights, task, params, advice);
    };
    ctx.answers = gateway_answers(gateway, tree.task);
    return ctx;
}

// ---- operations ----

namespace {

TreeNode& require_node(Tree& t, const std::string& id) {
    TreeNode* n = t.find(id);
    if (!n) throw NodeNotFound("no node '" + id + "' in tree version " + std::to_string(t.version));
    return *n;
}

const TreeNode& require_node(const Tree& t, const std::string& id) {
    const TreeNode* n = t.find(id);
    if (!n) throw NodeNotFound("no node '" + id + "' in tree version " + std::to_string(t.version));
    return *n;
}

void make_leaf(TreeNode& n) {
    n.children.clear();
    n.question.reset();
    n.chosen_weighted_gini.reset();
}

SampleRefs node_samples(const Tree& tree, const TreeNode& node, const RefineContext& ctx) {
    if (!tree.params.retain_samples) throw UnsupportedAction("tree was built without retained samples");
    if (!ctx.data) throw UnsupportedAction("no dataset available for the node's samples");
    try {
        return ctx.data->select(node.sample_ids);
    } catch (const DatasetError& e) {
        throw UnsupportedAction(std::string("node samples unavailable: ") + e.what());
    }
}

// Exact comparison of success ratios pos_a/n_a == pos_b/n_b.
bool same_ratio(const ClassCounts& a, const ClassCounts& b) {
    return static_cast<unsigned __int128>(a.pos) * b.total() == static_cast<unsigned __int128>(b.pos) * a.total();
}

bool trivial(const TreeNode& n, double epsilon) {
    for (const auto& c : n.children)
        if (!c.is_leaf() || c.counts.total() == 0) return false;
    bool identical = true;
    for (const auto& c : n.children) identical = identical && same_ratio(c.counts, n.children.front().counts);
    if (identical) return true;
    if (epsilon <= 0.0 || n.counts.total() == 0) return false;
    std::vector<ClassCounts> kids;
    for (const auto& c : n.children) kids.push_back(c.counts);
    return gini(n.counts) - weighted_gini(kids) < epsilon;
}

std::size_t prune(TreeNode& n, double epsilon) {
    std::size_t collapsed = 0;
    for (auto& c : n.children) collapsed += prune(c, epsilon);
    if (!n.is_leaf() && trivial(n, epsilon)) {
        make_leaf(n);
        ++collapsed;
    }
    return collapsed;
}

std::string iso_now(std::chrono::system_clock::time_point tp) {
    std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

Tree collapse(const Tree& tree, const std::string& node_id) {
    Tree out = tree;
    TreeNode& n = require_node(out, node_id);
    if (n.is_leaf()) throw InvalidAction("node '" + node_id + "' is already a leaf");
    make_leaf(n);
    ++out.version;
    return out;
}

Tree rebuild_subtree(const Tree& tree, const std::string& node_id, const std::string& advice,
                     const RefineContext& ctx) {
    const TreeNode& target = require_node(tree, node_id);
    SampleRefs samples = node_samples(tree, target, ctx);
    if (samples.empty()) throw InvalidAction("node '" + node_id + "' holds no samples");
    if (!ctx.make_build_context) throw UnsupportedAction("no question source configured for rebuilds");

    BuildContext bctx = ctx.make_build_context(advice);
    const std::size_t features = bctx.schema ? bctx.schema->size() : 0;
    // A rebuild that silently degrades to a leaf because the model was unreachable must not commit.
    auto source = bctx.candidates;
    bctx.candidates = [source, features](const SampleRefs& s) {
        CandidateSet c = source(s);
        if (features > 0 && c.failed_features == features)
            throw BackendFailure("question generation failed for every feature");
        return c;
    };
    auto answers = bctx.answers;
    bctx.answers = [answers](const std::string& q, const SampleRefs& s) {
        auto out = answers(q, s);
        for (const auto& a : out)
            if (!a.error.empty()) throw BackendFailure("answer call failed: " + a.error);
        return out;
    };

    Tree out = tree;
    TreeNode& n = require_node(out, node_id);
    try {
        n = grow(bctx, samples, tree.params, target.id, target.branch, target.depth);
    } catch (const FatalError& e) {
        throw BackendFailure(std::string("backend failure: ") + e.what());
    }
    ++out.version;
    return out;
}

Tree remove_trivial(const Tree& tree, double epsilon, std::size_t* collapsed) {
    if (!(epsilon >= 0.0)) throw InvalidAction("epsilon must be >= 0");
    Tree out = tree;
    std::size_t n = prune(out.root, epsilon);
    if (collapsed) *collapsed = n;
    if (n > 0) ++out.version;
    return out;
}

nlohmann::json QaReport::to_json() const {
    auto ex = nlohmann::json::array();
    for (const auto& e : examples) ex.push_back({{"id", e.sample_id}, {"answer", e.answer}, {"raw", e.raw}});
    return {{"node", node_id}, {"question", question}, {"yes", yes},           {"no", no},
            {"unknown", unknown}, {"failures", failures}, {"total", total()}, {"examples", ex}};
}

QaReport qa_samples(const Tree& tree, const std::string& node_id, const std::string& question,
                    const RefineContext& ctx, std::size_t examples_per_answer) {
    const TreeNode& node = require_node(tree, node_id);
    if (question.empty()) throw InvalidAction("empty question");
    SampleRefs samples = node_samples(tree, node, ctx);
    QaReport r;
    r.node_id = node_id;
    r.question = question;
    if (samples.empty()) return r;
    if (!ctx.answers) throw UnsupportedAction("no answer source configured");
    auto answers = ctx.answers(question, samples);
    std::map<AnswerKind, std::size_t> shown;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Answer& a = answers[i];
        switch (a.value) {
            case AnswerKind::Yes: ++r.yes; break;
            case AnswerKind::No: ++r.no; break;
            case AnswerKind::Unknown: ++r.unknown; break;
        }
        if (!a.error.empty()) ++r.failures;
        if (shown[a.value]++ < examples_per_answer)
            r.examples.push_back({samples[i]->id, to_string(a.value), a.error.empty() ? a.raw : a.error});
    }
    return r;
}

ApplyResult apply_action(const Tree& tree, const RefinementAction& action, const RefineContext& ctx,
                         const Clock& clock) {
    ApplyResult r;
    switch (action.kind) {
        case RefinementAction::Kind::Collapse: r.tree = collapse(tree, action.node_id); break;
        case RefinementAction::Kind::Rebuild: r.tree = rebuild_subtree(tree, action.node_id, action.advice, ctx); break;
        case RefinementAction::Kind::RemoveTrivial: r.tree = remove_trivial(tree, action.epsilon); break;
        case RefinementAction::Kind::Qa:
            r.qa = qa_samples(tree, action.node_id, action.question, ctx);
            r.tree = tree;
            return r;
    }
    r.changed = r.tree.version != tree.version;
    r.diff = diff_trees(tree, r.tree);
    if (r.changed) {
        AuditRecord rec;
        rec.action = action;
        rec.prior_version = tree.version;
        rec.new_version = r.tree.version;
        rec.timestamp = iso_now(clock ? clock() : std::chrono::system_clock::now());
        rec.summary = r.diff.summary();
        r.record = std::move(rec);
    }
    return r;
}

Tree replay(const Tree& original, const std::vector<AuditRecord>& log, const RefineContext& ctx) {
    Tree t = original;
    for (const auto& rec : log) {
        if (rec.prior_version != t.version)
            throw RefineError("audit log expects version " + std::to_string(rec.prior_version) + ", tree is at " +
                              std::to_string(t.version));
        auto r = apply_action(t, rec.action, ctx);
        if (r.tree.version != rec.new_version)
            throw RefineError("replay of " + to_string(rec.action.kind) + " produced version " +
                              std::to_string(r.tree.version) + ", log says " + std::to_string(rec.new_version));
        t = std::move(r.tree);
    }
    return t;
}

}  // namespace lmtree
