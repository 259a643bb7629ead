#include "lmtree/tree.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace lmtree {

void BuildParams::validate() const {
    if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
    if (min_leaf < 1) throw std::invalid_argument("min_leaf must be >= 1");
    if (max_branching < 2) throw std::invalid_argument("max_branching must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

nlohmann::json BuildParams::to_json() const {
    return {{"max_depth", max_depth},
            {"min_leaf", min_leaf},
            {"per_feature_max", per_feature_max},
            {"max_branching", max_branching},
            {"batch_size", batch_size},
            {"inference_only", inference_only},
            {"unknown_policy", to_string(unknown_policy)},
            {"seed", seed},
            {"retain_samples", retain_samples}};
}

BuildParams BuildParams::from_json(const nlohmann::json& j) {
    BuildParams p;
    p.max_depth = j.value("max_depth", p.max_depth);
    p.min_leaf = j.value("min_leaf", p.min_leaf);
    p.per_feature_max = j.value("per_feature_max", p.per_feature_max);
    p.max_branching = j.value("max_branching", p.max_branching);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.inference_only = j.value("inference_only", p.inference_only);
    p.unknown_policy = unknown_policy_from_string(j.value("unknown_policy", to_string(p.unknown_policy)));
    p.seed = j.value("seed", p.seed);
    p.retain_samples = j.value("retain_samples", p.retain_samples);
    p.validate();
    return p;
}

namespace {

template <typename Node>
Node* find_in(Node& node, const std::string& id) {
    if (node.id == id) return &node;
    // Ids are paths, so only the matching prefix needs descending into.
    if (id.size() <= node.id.size() || id.compare(0, node.id.size(), node.id) != 0 || id[node.id.size()] != '.')
        return nullptr;
    for (auto& c : node.children)
        if (auto* hit = find_in(c, id)) return hit;
    return nullptr;
}

void walk(const TreeNode& n, const std::function<void(const TreeNode&)>& f) {
    f(n);
    for (const auto& c : n.children) walk(c, f);
}

}  // namespace

const TreeNode* Tree::find(const std::string& id) const { return find_in(root, id); }
TreeNode* Tree::find(const std::string& id) { return find_in(root, id); }

std::size_t Tree::node_count() const {
    std::size_t n = 0;
    walk(root, [&](const TreeNode&) { ++n; });
    return n;
}

std::size_t Tree::leaf_count() const {
    std::size_t n = 0;
    walk(root, [&](const TreeNode& x) { n += x.is_leaf(); });
    return n;
}

std::size_t Tree::depth() const {
    std::size_t d = 0;
    walk(root, [&](const TreeNode& x) { d = std::max(d, x.depth); });
    return d;
}

std::string child_id(const std::string& parent, const std::string& label) {
    std::string s;
    for (unsigned char c : label) s += std::isalnum(c) || c == '_' || c == '-' ? static_cast<char>(c) : '_';
    if (s.empty()) s = "_";
    return parent + "." + s;
}

BuildContext gateway_context(Gateway& gateway, const Schema& schema, const InsightList& insights,
                             const std::string& task, const BuildParams& params, std::string advice) {
    GenerationOptions opts;
    opts.per_feature_max = params.per_feature_max;
    opts.max_branching = params.max_branching;
    opts.inference_only = params.inference_only;
    opts.advice = std::move(advice);
    BuildContext ctx;
    ctx.schema = &schema;
    ctx.candidates = [&gateway, &schema, insights, task, opts](const SampleRefs& samples) {
        return generate_candidates(gateway, samples, schema, insights, task, opts);
    };
    ctx.answers = gateway_answers(gateway, task);
    return ctx;
}

namespace {

std::size_t largest_child(const std::vector<std::size_t>& sizes) {
    return static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
}

}  // namespace

TreeNode grow(const BuildContext& ctx, const SampleRefs& samples, const BuildParams& params, std::string id,
              std::string branch, std::size_t depth, BuildReport* report) {
    TreeNode node;
    node.id = std::move(id);
    node.branch = std::move(branch);
    node.depth = depth;
    node.counts = count_classes(samples);
    if (params.retain_samples) {
        node.sample_ids.reserve(samples.size());
        for (const Sample* s : samples) node.sample_ids.push_back(s->id);
    }
    const bool pure = node.counts.pos == 0 || node.counts.neg == 0;
    if (pure || depth >= params.max_depth || samples.size() < 2 * params.min_leaf) return node;

    CandidateSet cands = ctx.candidates(samples);
    if (report) {
        ++report->nodes_expanded;
        report->candidates_scored += cands.questions.size();
        for (auto& w : cands.warnings) report->warnings.push_back(node.id + ": " + w);
    }
    SplitSearch search =
        best_split(cands.questions, samples, params.min_leaf, ctx.answers, *ctx.schema, params.unknown_policy);
    if (report)
        for (auto& w : search.warnings) report->warnings.push_back(node.id + ": " + w);
    if (!search.best) return node;

    SplitCandidate& best = *search.best;
    // Abstentions rejoin the largest child so node counts stay conserved.
    if (!best.partition.abstained.empty()) {
        std::vector<std::size_t> sizes;
        for (const auto& b : best.partition.children) sizes.push_back(b.samples.size());
        auto& target = best.partition.children[largest_child(sizes)].samples;
        target.insert(target.end(), best.partition.abstained.begin(), best.partition.abstained.end());
    }
    node.question = best.question;
    node.chosen_weighted_gini = best.weighted_gini;
    std::set<std::string> used;
    for (std::size_t i = 0; i < best.partition.children.size(); ++i) {
        const auto& b = best.partition.children[i];
        std::string cid = child_id(node.id, b.label);
        if (!used.insert(cid).second) cid += "~" + std::to_string(i);
        node.children.push_back(grow(ctx, b.samples, params, cid, b.label, depth + 1, report));
    }
    return node;
}

Tree build(const BuildContext& ctx, const SampleRefs& samples, const BuildParams& params, const std::string& task,
           const InsightList& insights, BuildReport* report) {
    params.validate();
    if (samples.empty()) throw BuildError("cannot build a tree from an empty sample set");
    if (!ctx.schema || !ctx.candidates || !ctx.answers) throw BuildError("incomplete build context");
    Tree t;
    t.params = params;
    t.task = task;
    t.insights = insights;
    t.schema_fingerprint = ctx.schema->fingerprint();
    t.root = grow(ctx, samples, params, "r", "", 0, report);
    return t;
}

TrainResult train(Gateway& gateway, const Dataset& data, const BuildParams& params, const std::string& task) {
    params.validate();
    if (data.empty()) throw BuildError("cannot train on an empty dataset");
    TrainResult r;
    auto refs = data.refs();
    r.insight_report = generate_insights(gateway, refs, task, params.batch_size);
    auto ctx = gateway_context(gateway, data.schema(), r.insight_report.insights, task, params);
    r.tree = build(ctx, refs, params, task, r.insight_report.insights, &r.build_report);
    return r;
}

// ---- prediction ----

namespace {

struct Routed {
    std::size_t child = 0;
    bool fallback = false;
};

std::size_t child_by_label(const TreeNode& node, const std::string& label) {
    for (std::size_t i = 0; i < node.children.size(); ++i)
        if (node.children[i].branch == label) return i;
    return node.children.size();
}

std::size_t largest(const TreeNode& node) {
    std::vector<std::size_t> sizes;
    for (const auto& c : node.children) sizes.push_back(c.counts.total());
    return largest_child(sizes);
}

std::vector<Routed> route(const TreeNode& node, const SampleRefs& samples, const AnswerFn& answers,
                          UnknownPolicy policy) {
    const Question& q = *node.question;
    std::vector<Routed> out(samples.size());
    const std::size_t n_children = node.children.size();
    const std::size_t fallback_child = largest(node);
    auto assign = [&](std::size_t i, const std::string& label) {
        std::size_t c = child_by_label(node, label);
        if (c == n_children) out[i] = {fallback_child, true};
        else out[i] = {c, false};
    };
    switch (q.kind) {
        case QuestionKind::Inference: {
            auto ans = answers(q.text, samples);
            if (ans.size() != samples.size()) throw std::runtime_error("answer provider returned a misaligned batch");
            for (std::size_t i = 0; i < samples.size(); ++i) {
                switch (ans[i].value) {
                    case AnswerKind::Yes: assign(i, "yes"); break;
                    case AnswerKind::No: assign(i, "no"); break;
                    case AnswerKind::Unknown:
                        if (policy == UnknownPolicy::RouteNo) assign(i, "no");
                        else out[i] = {fallback_child, true};
                        break;
                }
            }
            break;
        }
        case QuestionKind::Code:
            for (std::size_t i = 0; i < samples.size(); ++i)
                assign(i, dsl::evaluate(*q.code_expr, *samples[i]) ? "yes" : "no");
            break;
        case QuestionKind::Clustering:
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const auto* c = std::get_if<Category>(&samples[i]->get(*q.target_feature));
                auto it = c ? q.grouping->find(c->value) : q.grouping->end();
                if (it == q.grouping->end()) out[i] = {fallback_child, true};
                else assign(i, it->second);
            }
            break;
    }
    return out;
}

void descend(const TreeNode& node, const SampleRefs& samples, const std::vector<std::size_t>& slots,
             const AnswerFn& answers, UnknownPolicy policy, double sensitivity, std::vector<PredictionPath>& out) {
    if (samples.empty()) return;
    if (node.is_leaf()) {
        const double ratio = node.counts.ratio();
        for (auto s : slots) {
            out[s].leaf_id = node.id;
            out[s].leaf_ratio = ratio;
            out[s].predicted = ratio >= sensitivity;
        }
        return;
    }
    auto routed = route(node, samples, answers, policy);
    std::vector<SampleRefs> sub(node.children.size());
    std::vector<std::vector<std::size_t>> sub_slots(node.children.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& child = node.children[routed[i].child];
        out[slots[i]].steps.push_back({node.id, node.question->text, child.branch, routed[i].fallback});
        sub[routed[i].child].push_back(samples[i]);
        sub_slots[routed[i].child].push_back(slots[i]);
    }
    for (std::size_t c = 0; c < node.children.size(); ++c)
        descend(node.children[c], sub[c], sub_slots[c], answers, policy, sensitivity, out);
}

}  // namespace

bool PredictionPath::flagged() const {
    return std::any_of(steps.begin(), steps.end(), [](const PathStep& s) { return s.fallback; });
}

nlohmann::json PredictionPath::to_json() const {
    auto path = nlohmann::json::array();
    for (const auto& s : steps) {
        nlohmann::json step{{"node", s.node_id}, {"question", s.question}, {"branch", s.branch}};
        if (s.fallback) step["fallback"] = true;
        path.push_back(std::move(step));
    }
    return {{"id", sample_id},     {"predicted", predicted}, {"leaf", leaf_id},
            {"leaf_ratio", leaf_ratio}, {"path", path},     {"flagged", flagged()}};
}

std::vector<PredictionPath> predict_many(const Tree& tree, const SampleRefs& samples, const AnswerFn& answers,
                                         const Schema& schema, double sensitivity) {
    if (!(sensitivity >= 0.0 && sensitivity <= 1.0)) throw std::invalid_argument("sensitivity must lie in [0, 1]");
    if (!tree.schema_fingerprint.empty() && tree.schema_fingerprint != schema.fingerprint())
        throw TreeFormatError("sample schema does not match the tree's schema");
    std::vector<PredictionPath> out(samples.size());
    std::vector<std::size_t> slots(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out[i].sample_id = samples[i]->id;
        slots[i] = i;
    }
    descend(tree.root, samples, slots, answers, tree.params.unknown_policy, sensitivity, out);
    return out;
}

PredictionPath predict(const Tree& tree, const Sample& sample, const AnswerFn& answers, const Schema& schema,
                       double sensitivity) {
    return predict_many(tree, SampleRefs{&sample}, answers, schema, sensitivity).front();
}

// ---- serialization ----

namespace {

nlohmann::json node_to_json(const TreeNode& n) {
    nlohmann::json j{{"id", n.id},
                     {"branch", n.branch},
                     {"depth", n.depth},
                     {"kind", n.is_leaf() ? "leaf" : "internal"},
                     {"counts", {{"pos", n.counts.pos}, {"neg", n.counts.neg}}}};
    if (n.question) j["question"] = n.question->to_json();
    if (n.chosen_weighted_gini) j["weighted_gini"] = *n.chosen_weighted_gini;
    if (!n.children.empty()) {
        auto kids = nlohmann::json::array();
        for (const auto& c : n.children) kids.push_back(node_to_json(c));
        j["children"] = std::move(kids);
    }
    if (!n.sample_ids.empty()) j["sample_ids"] = n.sample_ids;
    return j;
}

TreeNode node_from_json(const nlohmann::json& j, const Schema* schema) {
    TreeNode n;
    n.id = j.at("id").get<std::string>();
    n.branch = j.value("branch", "");
    n.depth = j.at("depth").get<std::size_t>();
    n.counts = {j.at("counts").at("pos").get<std::uint64_t>(), j.at("counts").at("neg").get<std::uint64_t>()};
    if (j.contains("question")) n.question = Question::from_json(j["question"], schema);
    if (j.contains("weighted_gini")) n.chosen_weighted_gini = j["weighted_gini"].get<double>();
    if (j.contains("children"))
        for (const auto& c : j["children"]) n.children.push_back(node_from_json(c, schema));
    if (j.contains("sample_ids")) n.sample_ids = j["sample_ids"].get<std::vector<std::string>>();
    const bool internal = j.value("kind", "leaf") == "internal";
    if (internal != !n.children.empty() || internal != n.question.has_value())
        throw TreeFormatError("node '" + n.id + "' has inconsistent kind, question and children");
    if (internal && n.children.size() < 2) throw TreeFormatError("internal node '" + n.id + "' has one child");
    return n;
}

}  // namespace

nlohmann::json serialize(const Tree& tree) {
    return {{"format_version", kTreeFormatVersion},
            {"version", tree.version},
            {"task", tree.task},
            {"schema_fingerprint", tree.schema_fingerprint},
            {"params", tree.params.to_json()},
            {"insights", tree.insights.to_json()},
            {"root", node_to_json(tree.root)}};
}

Tree deserialize(const nlohmann::json& doc, const Schema* schema) {
    if (!doc.is_object() || !doc.contains("format_version")) throw TreeFormatError("not a tree document");
    if (doc["format_version"] != kTreeFormatVersion)
        throw TreeFormatError("unsupported tree format version " + doc["format_version"].dump());
    try {
        Tree t;
        t.version = doc.at("version").get<std::uint64_t>();
        t.task = doc.value("task", "");
        t.schema_fingerprint = doc.value("schema_fingerprint", "");
        if (schema && t.schema_fingerprint != schema->fingerprint())
            throw TreeFormatError("tree was built for a different schema");
        t.params = BuildParams::from_json(doc.at("params"));
        t.insights = InsightList::from_json(doc.value("insights", nlohmann::json::object()));
        t.root = node_from_json(doc.at("root"), schema);
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw TreeFormatError(std::string("malformed tree document: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw TreeFormatError(std::string("malformed tree document: ") + e.what());
    }
}

std::string dump_tree(const Tree& tree) { return serialize(tree).dump(2) + "\n"; }

}  // namespace lmtree
