#include "lmtree/question.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace lmtree {

std::string to_string(QuestionKind kind) {
    switch (kind) {
        case QuestionKind::Inference: return "INFERENCE";
        case QuestionKind::Code: return "CODE";
        case QuestionKind::Clustering: return "CLUSTERING";
    }
    return "INFERENCE";
}

std::optional<QuestionKind> question_kind_from_string(std::string_view s) {
    std::string up(s);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    if (up == "INFERENCE") return QuestionKind::Inference;
    if (up == "CODE") return QuestionKind::Code;
    if (up == "CLUSTERING") return QuestionKind::Clustering;
    return std::nullopt;
}

std::string to_string(Rejection::Reason r) {
    using R = Rejection::Reason;
    switch (r) {
        case R::UnknownKind: return "unknown kind";
        case R::EmptyText: return "empty question text";
        case R::ParseFailure: return "expression does not parse";
        case R::TypeFailure: return "expression does not type-check";
        case R::UnknownFeature: return "unknown feature";
        case R::NotCategorical: return "clustering over a non-categorical feature";
        case R::MissingPayload: return "missing payload";
        case R::IncompleteGrouping: return "grouping does not cover the categories";
        case R::BranchingOverflow: return "too many groups";
        case R::DegenerateGrouping: return "grouping has a single group";
    }
    return "rejected";
}

std::vector<std::string> Question::branch_labels(const Schema& schema) const {
    if (kind != QuestionKind::Clustering) return {"yes", "no"};
    std::vector<std::string> labels;
    const FeatureSpec* spec = target_feature ? schema.find(*target_feature) : nullptr;
    auto add = [&labels](const std::string& g) {
        if (std::find(labels.begin(), labels.end(), g) == labels.end()) labels.push_back(g);
    };
    if (spec) {
        for (const auto& c : spec->categories)
            if (auto it = grouping->find(c); it != grouping->end()) add(it->second);
    }
    for (const auto& [c, g] : *grouping) add(g);
    return labels;
}

nlohmann::json Question::to_json() const {
    nlohmann::json j{{"kind", to_string(kind)}, {"text", text}};
    if (target_feature) j["feature"] = *target_feature;
    if (code_expr) j["expr"] = dsl::format(*code_expr);
    if (grouping) j["grouping"] = *grouping;
    return j;
}

Question Question::from_json(const nlohmann::json& j, const Schema* schema) {
    Question q;
    auto kind = question_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw std::runtime_error("unknown question kind " + j.at("kind").dump());
    q.kind = *kind;
    q.text = j.at("text").get<std::string>();
    if (j.contains("feature")) q.target_feature = j["feature"].get<std::string>();
    if (j.contains("expr")) {
        auto text = j["expr"].get<std::string>();
        q.code_expr = schema ? dsl::parse(text, *schema) : dsl::parse(text);
    }
    if (j.contains("grouping")) q.grouping = j["grouping"].get<Grouping>();
    return q;
}

namespace {

std::optional<Rejection> check_grouping(const FeatureSpec& spec, const Grouping& grouping, std::size_t max_branching) {
    using R = Rejection::Reason;
    for (const auto& c : spec.categories)
        if (!grouping.contains(c)) return Rejection{R::IncompleteGrouping, "category '" + c + "' is not grouped"};
    for (const auto& [c, g] : grouping)
        if (!spec.has_category(c)) return Rejection{R::IncompleteGrouping, "'" + c + "' is not a category of " + spec.name};
    std::set<std::string> groups;
    for (const auto& [c, g] : grouping) groups.insert(g);
    if (groups.size() > max_branching)
        return Rejection{R::BranchingOverflow, std::to_string(groups.size()) + " groups, max " + std::to_string(max_branching)};
    if (groups.size() < 2) return Rejection{R::DegenerateGrouping, "all categories in one group"};
    return std::nullopt;
}

}  // namespace

Validated validate_candidate(const RawCandidate& raw, const Schema& schema, std::size_t max_branching) {
    using R = Rejection::Reason;
    auto kind = question_kind_from_string(raw.kind);
    if (!kind) return Rejection{R::UnknownKind, "'" + raw.kind + "'"};
    if (raw.text.find_first_not_of(" \t\r\n") == std::string::npos) return Rejection{R::EmptyText, ""};
    if (raw.feature && !schema.find(*raw.feature)) return Rejection{R::UnknownFeature, *raw.feature};

    Question q;
    q.kind = *kind;
    q.text = raw.text;
    q.target_feature = raw.feature;
    switch (*kind) {
        case QuestionKind::Inference: break;
        case QuestionKind::Code: {
            if (!raw.expr) return Rejection{R::MissingPayload, "CODE candidate without expression"};
            try {
                q.code_expr = dsl::parse(*raw.expr, schema);
            } catch (const dsl::SyntaxError& e) {
                return Rejection{R::ParseFailure, e.what()};
            } catch (const dsl::TypeError& e) {
                return Rejection{schema.find(e.feature()) ? R::TypeFailure : R::UnknownFeature, e.what()};
            }
            break;
        }
        case QuestionKind::Clustering: {
            if (!raw.feature) return Rejection{R::MissingPayload, "CLUSTERING candidate without feature"};
            const FeatureSpec* spec = schema.find(*raw.feature);
            if (spec->kind != FeatureKind::Categorical) return Rejection{R::NotCategorical, *raw.feature};
            if (!raw.grouping) return Rejection{R::MissingPayload, "CLUSTERING candidate without grouping"};
            if (auto r = check_grouping(*spec, *raw.grouping, max_branching)) return *r;
            q.grouping = raw.grouping;
            break;
        }
    }
    return q;
}

bool satisfies_payload_invariant(const Question& q, const Schema& schema, std::size_t max_branching) {
    switch (q.kind) {
        case QuestionKind::Inference: return !q.code_expr && !q.grouping;
        case QuestionKind::Code: {
            if (!q.code_expr || q.grouping) return false;
            try {
                dsl::check(*q.code_expr, schema);
                return dsl::parse(dsl::format(*q.code_expr)) == *q.code_expr;
            } catch (const std::exception&) {
                return false;
            }
        }
        case QuestionKind::Clustering: {
            if (q.code_expr || !q.grouping || !q.target_feature) return false;
            const FeatureSpec* spec = schema.find(*q.target_feature);
            return spec && spec->kind == FeatureKind::Categorical && !check_grouping(*spec, *q.grouping, max_branching);
        }
    }
    return false;
}

}  // namespace lmtree
