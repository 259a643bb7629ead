#include "lmtree/splitter.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "lmtree/kernels.hpp"

namespace lmtree {

ClassCounts count_classes(const SampleRefs& samples) {
    ClassCounts c;
    for (const Sample* s : samples) (s->label ? c.pos : c.neg)++;
    return c;
}

double gini(const ClassCounts& counts) {
    if (counts.total() == 0) throw std::domain_error("gini of an empty node");
    const double n = static_cast<double>(counts.total());
    const double p = static_cast<double>(counts.pos) / n;
    const double q = static_cast<double>(counts.neg) / n;
    return 1.0 - (p * p + q * q);
}

double weighted_gini(std::span<const ClassCounts> children) {
    std::uint64_t total = 0;
    for (const auto& c : children) {
        if (c.total() == 0) throw std::invalid_argument("partition has an empty child");
        total += c.total();
    }
    if (total == 0) throw std::invalid_argument("partition has no children");
    double g = 0.0;
    for (const auto& c : children)
        g += static_cast<double>(c.total()) / static_cast<double>(total) * gini(c);
    return g;
}

std::vector<ClassCounts> Partition::child_counts() const {
    std::vector<ClassCounts> out;
    out.reserve(children.size());
    for (const auto& b : children) out.push_back(count_classes(b.samples));
    return out;
}

double weighted_gini(const Partition& partition) {
    auto counts = partition.child_counts();
    return weighted_gini(counts);
}

std::string to_string(UnknownPolicy p) { return p == UnknownPolicy::RouteNo ? "no" : "abstain-drop"; }

UnknownPolicy unknown_policy_from_string(const std::string& s) {
    if (s == "no" || s == "route-no") return UnknownPolicy::RouteNo;
    if (s == "abstain-drop" || s == "drop") return UnknownPolicy::AbstainDrop;
    throw std::invalid_argument("unknown-answer policy must be 'no' or 'abstain-drop', got '" + s + "'");
}

AnswerFn gateway_answers(Gateway& gateway, std::string task) {
    return [&gateway, task = std::move(task)](const std::string& question, const SampleRefs& samples) {
        return gateway.answer_many(question, samples, task);
    };
}

namespace {

constexpr std::uint8_t kDropped = 0xff;

struct Assignment {
    std::vector<std::string> labels;
    std::vector<std::uint8_t> groups;  // per sample; kDropped for abstentions
};

Assignment assign(const Question& q, const SampleRefs& samples, const AnswerFn& answers, const Schema& schema,
                  UnknownPolicy policy) {
    Assignment a;
    a.labels = q.branch_labels(schema);
    if (a.labels.size() >= kDropped) throw std::invalid_argument("too many branches");
    a.groups.resize(samples.size());
    switch (q.kind) {
        case QuestionKind::Inference: {
            auto ans = answers(q.text, samples);
            if (ans.size() != samples.size()) throw std::runtime_error("answer provider returned a misaligned batch");
            for (std::size_t i = 0; i < samples.size(); ++i) {
                switch (ans[i].value) {
                    case AnswerKind::Yes: a.groups[i] = 0; break;
                    case AnswerKind::No: a.groups[i] = 1; break;
                    case AnswerKind::Unknown: a.groups[i] = policy == UnknownPolicy::RouteNo ? 1 : kDropped; break;
                }
            }
            break;
        }
        case QuestionKind::Code:
            for (std::size_t i = 0; i < samples.size(); ++i)
                a.groups[i] = dsl::evaluate(*q.code_expr, *samples[i]) ? 0 : 1;
            break;
        case QuestionKind::Clustering: {
            std::map<std::string, std::uint8_t> index;
            for (std::size_t g = 0; g < a.labels.size(); ++g) index[a.labels[g]] = static_cast<std::uint8_t>(g);
            std::vector<std::size_t> sizes(a.labels.size(), 0);
            std::vector<std::size_t> unplaced;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const auto* c = std::get_if<Category>(&samples[i]->get(*q.target_feature));
                auto it = c ? q.grouping->find(c->value) : q.grouping->end();
                if (it == q.grouping->end()) {
                    unplaced.push_back(i);
                    continue;
                }
                a.groups[i] = index.at(it->second);
                ++sizes[a.groups[i]];
            }
            auto largest = static_cast<std::uint8_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
            for (auto i : unplaced) a.groups[i] = largest;
            break;
        }
    }
    return a;
}

Partition to_partition(const Assignment& a, const SampleRefs& samples) {
    Partition p;
    for (const auto& l : a.labels) p.children.push_back({l, {}});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (a.groups[i] == kDropped) p.abstained.push_back(samples[i]);
        else p.children[a.groups[i]].samples.push_back(samples[i]);
    }
    return p;
}

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
    while (b != 0) {
        u128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

// (sum_i (pos_i^2 + neg_i^2) / n_i) / N, the quantity 1 - weighted Gini. Larger is better.
struct Purity {
    bool exact = true;
    u128 num = 0, den = 1;
    double approx = 0.0;
};

bool mul(u128 a, u128 b, u128& out) { return !__builtin_mul_overflow(a, b, &out); }

Purity purity(std::span<const ClassCounts> counts) {
    Purity p;
    std::uint64_t total = 0;
    for (const auto& c : counts) total += c.total();
    p.approx = 1.0 - weighted_gini(counts);
    for (const auto& c : counts) {
        u128 a = static_cast<u128>(c.pos) * c.pos + static_cast<u128>(c.neg) * c.neg;
        u128 b = c.total();
        u128 x, y, d;
        if (!mul(p.num, b, x) || !mul(a, p.den, y) || !mul(p.den, b, d) || x + y < x) {
            p.exact = false;
            return p;
        }
        p.num = x + y;
        p.den = d;
        u128 g = gcd128(p.num, p.den);
        if (g > 1) {
            p.num /= g;
            p.den /= g;
        }
    }
    if (!mul(p.den, total, p.den)) {
        p.exact = false;
        return p;
    }
    u128 g = gcd128(p.num, p.den);
    if (g > 1) {
        p.num /= g;
        p.den /= g;
    }
    return p;
}

// Strictly purer, i.e. strictly lower weighted Gini.
bool purer(const Purity& a, const Purity& b) {
    if (a.exact && b.exact) {
        u128 l, r;
        if (mul(a.num, b.den, l) && mul(b.num, a.den, r)) return l > r;
    }
    return a.approx > b.approx;
}

}  // namespace

Partition apply_question(const Question& q, const SampleRefs& samples, const AnswerFn& answers, const Schema& schema,
                         UnknownPolicy policy) {
    return to_partition(assign(q, samples, answers, schema, policy), samples);
}

SplitSearch best_split(const std::vector<Question>& candidates, const SampleRefs& samples, std::size_t min_leaf,
                       const AnswerFn& answers, const Schema& schema, UnknownPolicy policy) {
    SplitSearch out;
    out.scores.assign(candidates.size(), std::nullopt);
    std::vector<std::uint8_t> labels(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i]->label ? 1 : 0;
    const std::uint64_t floor = std::max<std::size_t>(1, min_leaf);

    Purity best_purity;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        Assignment a;
        try {
            a = assign(candidates[c], samples, answers, schema, policy);
        } catch (const FatalError&) {
            throw;
        } catch (const std::exception& e) {
            out.warnings.push_back("candidate '" + candidates[c].text + "' unusable: " + e.what());
            continue;
        }
        if (a.labels.size() < 2) continue;
        std::vector<ClassCounts> counts;
        bool valid = true;
        for (std::size_t g = 0; g < a.labels.size() && valid; ++g) {
            auto gc = kernels::count_group(labels, a.groups, static_cast<std::uint8_t>(g));
            counts.push_back({gc.positives, gc.size - gc.positives});
            valid = gc.size >= floor;
        }
        if (!valid) continue;
        Purity p = purity(counts);
        out.scores[c] = 1.0 - p.approx;
        if (!out.best || purer(p, best_purity)) {
            best_purity = p;
            out.best_index = c;
            out.best = SplitCandidate{candidates[c], to_partition(a, samples), counts, weighted_gini(counts)};
        }
    }
    return out;
}

Grouping fallback_grouping(const std::vector<std::string>& categories, std::size_t max_branching,
                           const std::map<std::string, std::size_t>* frequencies) {
    std::vector<std::string> order = categories;
    auto freq = [frequencies](const std::string& c) -> std::size_t {
        if (!frequencies) return 0;
        auto it = frequencies->find(c);
        return it == frequencies->end() ? 0 : it->second;
    };
    std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        auto fa = freq(a), fb = freq(b);
        return fa != fb ? fa > fb : a < b;
    });
    const std::size_t n = order.size();
    const std::size_t m = std::max<std::size_t>(1, std::min(max_branching, n));
    Grouping g;
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t i = k * n / m; i < (k + 1) * n / m; ++i) g[order[i]] = "group_" + std::to_string(k + 1);
    return g;
}

Grouping group_categories(Gateway& gateway, const std::string& feature, const std::vector<std::string>& categories,
                          std::size_t max_branching, const std::string& task,
                          const std::map<std::string, std::size_t>* frequencies, std::vector<std::string>* warnings) {
    if (categories.empty()) throw std::invalid_argument("group_categories: no categories");
    if (categories.size() <= max_branching) {
        Grouping g;
        for (const auto& c : categories) g[c] = c;
        return g;
    }
    const std::set<std::string> wanted(categories.begin(), categories.end());
    auto valid = [&](const nlohmann::json& j) -> std::optional<Grouping> {
        if (!j.is_object()) return std::nullopt;
        Grouping g;
        std::set<std::string> groups;
        for (const auto& [k, v] : j.items()) {
            if (!v.is_string() || !wanted.contains(k)) return std::nullopt;
            g[k] = v.get<std::string>();
            groups.insert(g[k]);
        }
        if (g.size() != wanted.size() || groups.size() > max_branching || groups.size() < 2) return std::nullopt;
        return g;
    };
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto req = gateway.make_request(TemplateId::CategoryGroup,
                                        {{"feature", feature},
                                         {"categories", nlohmann::json(categories).dump()},
                                         {"max_groups", std::to_string(max_branching)}},
                                        task);
        auto resp = gateway.complete_one(req);
        if (resp.ok) {
            const auto& t = resp.text;
            auto b = t.find('{');
            auto e = t.rfind('}');
            if (b != std::string::npos && e != std::string::npos && e > b) {
                if (auto g = valid(nlohmann::json::parse(t.substr(b, e - b + 1), nullptr, false))) return *g;
            }
        }
        if (warnings) warnings->push_back("invalid category grouping for '" + feature + "' (attempt " +
                                          std::to_string(attempt + 1) + ")");
    }
    return fallback_grouping(categories, max_branching, frequencies);
}

}  // namespace lmtree
