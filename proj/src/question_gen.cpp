#include "lmtree/question_gen.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "lmtree/splitter.hpp"

namespace lmtree {

const std::string& dsl_grammar_summary() {
    static const std::string g =
        "  feature == 'text' | feature != 'text' | feature >= 3 (also <, <=, >, ==, != on numbers)\n"
        "  feature contains 'word' | feature starts_with 'prefix'   (case-insensitive)\n"
        "  feature in {'a', 'b'} | feature is_missing\n"
        "  combine with and, or, not, parentheses";
    return g;
}

namespace {

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    // nearest-rank
    auto idx = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
    return v[std::min(idx, v.size() - 1)];
}

}  // namespace

nlohmann::json feature_profile(const FeatureSpec& spec, const SampleRefs& samples) {
    nlohmann::json j{{"kind", to_string(spec.kind)}};
    ClassCounts missing;
    switch (spec.kind) {
        case FeatureKind::Categorical: {
            nlohmann::json counts = nlohmann::json::object();
            for (const auto& c : spec.categories) counts[c] = {{"pos", 0}, {"neg", 0}};
            for (const Sample* s : samples) {
                const auto* c = std::get_if<Category>(&s->get(spec.name));
                if (!c) {
                    (s->label ? missing.pos : missing.neg)++;
                    continue;
                }
                auto& slot = counts[c->value][s->label ? "pos" : "neg"];
                slot = slot.get<long long>() + 1;
            }
            j["counts"] = counts;
            break;
        }
        case FeatureKind::Numeric: {
            std::vector<double> all, pos, neg;
            for (const Sample* s : samples) {
                const auto* d = std::get_if<double>(&s->get(spec.name));
                if (!d) {
                    (s->label ? missing.pos : missing.neg)++;
                    continue;
                }
                all.push_back(*d);
                (s->label ? pos : neg).push_back(*d);
            }
            if (!all.empty()) j["quantiles"] = {quantile(all, 0.5), quantile(all, 0.25), quantile(all, 0.75)};
            if (!pos.empty()) j["pos_median"] = quantile(pos, 0.5);
            if (!neg.empty()) j["neg_median"] = quantile(neg, 0.5);
            break;
        }
        case FeatureKind::Text: {
            std::map<std::string, ClassCounts> freq;
            for (const Sample* s : samples) {
                const auto* t = std::get_if<Text>(&s->get(spec.name));
                if (!t) {
                    (s->label ? missing.pos : missing.neg)++;
                    continue;
                }
                std::set<std::string> uniq;
                for (auto& w : words_of(t->value)) uniq.insert(std::move(w));
                for (const auto& w : uniq) (s->label ? freq[w].pos : freq[w].neg)++;
            }
            std::vector<std::pair<std::string, ClassCounts>> rows(freq.begin(), freq.end());
            // Words most concentrated in positives first.
            std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
                double ra = a.second.ratio(), rb = b.second.ratio();
                if (ra != rb) return ra > rb;
                return a.second.total() > b.second.total();
            });
            nlohmann::json top = nlohmann::json::array();
            for (std::size_t i = 0; i < rows.size() && i < 10; ++i)
                top.push_back({{"word", rows[i].first}, {"pos", rows[i].second.pos}, {"neg", rows[i].second.neg}});
            j["top_words"] = top;
            break;
        }
    }
    j["missing"] = {{"pos", missing.pos}, {"neg", missing.neg}};
    return j;
}

std::vector<RawCandidate> parse_candidates(const std::string& reply, const std::string& feature,
                                           std::vector<std::string>& warnings) {
    std::vector<RawCandidate> out;
    auto b = reply.find('[');
    auto e = reply.rfind(']');
    if (b == std::string::npos || e == std::string::npos || e < b) {
        warnings.push_back("feature '" + feature + "': reply holds no JSON array");
        return out;
    }
    auto arr = nlohmann::json::parse(reply.substr(b, e - b + 1), nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) {
        warnings.push_back("feature '" + feature + "': reply is not valid JSON");
        return out;
    }
    for (const auto& item : arr) {
        if (!item.is_object() || !item.contains("kind") || !item["kind"].is_string()) {
            warnings.push_back("feature '" + feature + "': candidate without a kind dropped");
            continue;
        }
        RawCandidate raw;
        raw.kind = item["kind"].get<std::string>();
        raw.text = item.value("question", item.value("text", std::string()));
        raw.feature = item.value("feature", feature);
        if (item.contains("expr") && item["expr"].is_string()) raw.expr = item["expr"].get<std::string>();
        if (item.contains("grouping") && item["grouping"].is_object()) {
            Grouping g;
            bool ok = true;
            for (const auto& [k, v] : item["grouping"].items()) {
                if (!v.is_string()) {
                    ok = false;
                    break;
                }
                g[k] = v.get<std::string>();
            }
            if (ok) raw.grouping = std::move(g);
        }
        out.push_back(std::move(raw));
    }
    return out;
}

CandidateSet generate_candidates(Gateway& gateway, const SampleRefs& node_samples, const Schema& schema,
                                 const InsightList& insights, const std::string& task,
                                 const GenerationOptions& options) {
    if (node_samples.empty()) throw std::invalid_argument("generate_candidates: node has no samples");
    CandidateSet out;
    if (options.per_feature_max == 0) return out;

    const std::string allowed = options.inference_only ? "INFERENCE" : "INFERENCE, CODE, CLUSTERING";
    const std::string advice =
        options.advice.empty()
            ? std::string()
            : render_prompt(gateway.get_template(TemplateId::RebuildAdvice), {{"advice", options.advice}});
    std::vector<LlmRequest> requests;
    for (const auto& f : schema.features()) {
        std::string kind = to_string(f.kind);
        if (f.kind == FeatureKind::Categorical) kind += ": " + nlohmann::json(f.categories).dump();
        requests.push_back(gateway.make_request(TemplateId::QuestionGen,
                                                {{"task", task},
                                                 {"feature", f.name},
                                                 {"feature_kind", kind},
                                                 {"feature_profile", feature_profile(f, node_samples).dump()},
                                                 {"insights", insights.as_text()},
                                                 {"advice", advice},
                                                 {"allowed_kinds", allowed},
                                                 {"dsl_grammar", dsl_grammar_summary()},
                                                 {"max_questions", std::to_string(options.per_feature_max)},
                                                 {"max_branching", std::to_string(options.max_branching)}},
                                                task, DecodingParams{0.0, 1024}));
    }
    auto responses = gateway.complete(requests);

    std::set<std::string> seen;
    for (std::size_t fi = 0; fi < responses.size(); ++fi) {
        const FeatureSpec& f = schema.features()[fi];
        if (!responses[fi].ok) {
            out.warnings.push_back("feature '" + f.name + "': generation failed: " + responses[fi].error);
            ++out.failed_features;
            continue;
        }
        std::size_t accepted = 0;
        for (auto& raw : parse_candidates(responses[fi].text, f.name, out.warnings)) {
            if (accepted >= options.per_feature_max) {
                out.warnings.push_back("feature '" + f.name + "': extra candidates beyond " +
                                       std::to_string(options.per_feature_max) + " dropped");
                break;
            }
            auto kind = question_kind_from_string(raw.kind);
            if (options.inference_only && kind && *kind != QuestionKind::Inference) {
                out.warnings.push_back("feature '" + f.name + "': " + raw.kind + " candidate dropped (inference-only)");
                continue;
            }
            if (kind == QuestionKind::Clustering && !raw.grouping && raw.feature) {
                const FeatureSpec* spec = schema.find(*raw.feature);
                if (spec && spec->kind == FeatureKind::Categorical) {
                    std::map<std::string, std::size_t> freq;
                    for (const Sample* s : node_samples)
                        if (const auto* c = std::get_if<Category>(&s->get(spec->name))) ++freq[c->value];
                    raw.grouping = group_categories(gateway, spec->name, spec->categories, options.max_branching,
                                                    task, &freq, &out.warnings);
                }
            }
            auto v = validate_candidate(raw, schema, options.max_branching);
            if (const auto* rej = std::get_if<Rejection>(&v)) {
                out.warnings.push_back("feature '" + f.name + "': candidate '" + raw.text + "' rejected: " +
                                       to_string(rej->reason) + (rej->detail.empty() ? "" : " (" + rej->detail + ")"));
                continue;
            }
            ++accepted;
            auto& q = std::get<Question>(v);
            if (!seen.insert(canonical_text(q.text)).second) continue;
            out.questions.push_back(std::move(q));
        }
    }
    return out;
}

}  // namespace lmtree
