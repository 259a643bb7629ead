#include "lmtree/mock_backend.hpp"

#include <algorithm>
#include <charconv>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace lmtree {

namespace {

std::uint64_t count_words(std::string_view s) {
    std::uint64_t n = 0;
    bool in_word = false;
    for (unsigned char c : s) {
        bool w = !std::isspace(c);
        if (w && !in_word) ++n;
        in_word = w;
    }
    return n;
}

std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

MockBackend::MockBackend(std::string id) : id_(std::move(id)) {}

void MockBackend::on(TemplateId id, Handler handler) {
    std::lock_guard lock(mu_);
    handlers_[id] = std::move(handler);
}

bool MockBackend::has_handler(TemplateId id) const {
    std::lock_guard lock(mu_);
    return handlers_.contains(id);
}

void MockBackend::fail_next(int n) { pending_failures_ = n; }

std::size_t MockBackend::calls(TemplateId id) const {
    std::lock_guard lock(mu_);
    auto it = per_template_.find(id);
    return it == per_template_.end() ? 0 : it->second;
}

void MockBackend::reset_counters() {
    std::lock_guard lock(mu_);
    per_template_.clear();
    calls_ = 0;
    peak_ = 0;
}

Completion MockBackend::complete(const LlmRequest& request) {
    ++calls_;
    std::size_t now = ++in_flight_;
    for (std::size_t prev = peak_; now > prev && !peak_.compare_exchange_weak(prev, now);) {
    }
    struct Leave {
        std::atomic<std::size_t>& n;
        ~Leave() { --n; }
    } leave{in_flight_};

    Handler handler;
    {
        std::lock_guard lock(mu_);
        ++per_template_[request.template_id];
        auto it = handlers_.find(request.template_id);
        if (it != handlers_.end()) handler = it->second;
    }
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    if (fatal_) throw FatalError("mock: scripted fatal failure");
    for (int left = pending_failures_; left > 0;) {
        if (pending_failures_.compare_exchange_weak(left, left - 1)) throw TransientError("mock: scripted transient failure");
    }
    if (!handler) throw std::runtime_error("mock: no handler for " + to_string(request.template_id));

    Completion c;
    c.text = handler(request);
    c.prompt_tokens = count_words(request.system) + count_words(request.prompt);
    c.completion_tokens = count_words(c.text);
    return c;
}

namespace mock_questions {

std::string category_is(const std::string& feature, const std::string& category) {
    return "Is the value of " + feature + " '" + category + "'?";
}

std::string at_least(const std::string& feature, double threshold) {
    return "Is " + feature + " at least " + shortest(threshold) + "?";
}

std::string mentions(const std::string& feature, const std::string& word) {
    return "Does " + feature + " mention '" + word + "'?";
}

std::optional<dsl::Expr> interpret(const std::string& question) {
    static const std::regex cat_re(R"(^Is the value of ([A-Za-z_][A-Za-z0-9_]*) '([^']*)'\?$)");
    static const std::regex num_re(R"(^Is ([A-Za-z_][A-Za-z0-9_]*) at least (\S+)\?$)");
    static const std::regex word_re(R"(^Does ([A-Za-z_][A-Za-z0-9_]*) mention '([^']*)'\?$)");
    std::smatch m;
    if (std::regex_match(question, m, cat_re)) return dsl::compare(dsl::Op::Eq, m[1], dsl::Literal{m[2].str()});
    if (std::regex_match(question, m, word_re)) return dsl::contains(m[1], m[2]);
    if (std::regex_match(question, m, num_re)) {
        std::string t = m[2];
        double v = 0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec == std::errc{} && ptr == t.data() + t.size()) return dsl::compare(dsl::Op::Ge, m[1], v);
    }
    return std::nullopt;
}

}  // namespace mock_questions

Sample sample_from_bindings(const LlmRequest& request, const Schema& schema, const std::string& key) {
    Sample s;
    auto it = request.bindings.find(key);
    if (it == request.bindings.end()) return s;
    auto j = nlohmann::json::parse(it->second);
    for (const auto& [name, value] : j.items()) {
        const FeatureSpec* spec = schema.find(name);
        if (!spec) continue;
        s.features[name] = coerce_json_value(value, *spec, nullptr);
    }
    return s;
}

namespace {

std::string binding(const LlmRequest& r, const std::string& name) {
    auto it = r.bindings.find(name);
    return it == r.bindings.end() ? std::string() : it->second;
}

bool allows(const LlmRequest& r, std::string_view kind) { return binding(r, "allowed_kinds").find(kind) != std::string::npos; }

nlohmann::json question_gen(const LlmRequest& r, const Schema& schema) {
    auto out = nlohmann::json::array();
    const std::string feature = binding(r, "feature");
    const FeatureSpec* spec = schema.find(feature);
    if (!spec) return out;
    std::size_t max_q = 3;
    if (auto m = binding(r, "max_questions"); !m.empty()) max_q = std::stoul(m);
    auto profile = nlohmann::json::parse(binding(r, "feature_profile"), nullptr, false);
    if (profile.is_discarded()) return out;

    const bool code = allows(r, "CODE");
    if (spec->kind == FeatureKind::Categorical) {
        struct Row {
            std::string category;
            double rate;
            long long total;
        };
        std::vector<Row> rows;
        const auto counts = profile.value("counts", nlohmann::json::object());
        for (const auto& [cat, c] : counts.items()) {
            long long pos = c.value("pos", 0LL), neg = c.value("neg", 0LL);
            if (pos + neg == 0) continue;
            rows.push_back({cat, static_cast<double>(pos) / static_cast<double>(pos + neg), pos + neg});
        }
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
            return a.rate != b.rate ? a.rate > b.rate : a.category < b.category;
        });
        // A two-valued feature needs one question; its complement is the same split.
        std::size_t wanted = spec->categories.size() <= 2 ? 1 : max_q;
        for (std::size_t i = 0; i < rows.size() && out.size() < std::min(wanted, max_q); ++i) {
            nlohmann::json q{{"kind", "INFERENCE"}, {"question", mock_questions::category_is(feature, rows[i].category)}};
            if (code) {
                q["kind"] = "CODE";
                q["expr"] = dsl::format(dsl::compare(dsl::Op::Eq, feature, dsl::Literal{rows[i].category}));
            }
            out.push_back(std::move(q));
        }
        if (allows(r, "CLUSTERING") && spec->categories.size() > 2 && out.size() < max_q)
            out.push_back({{"kind", "CLUSTERING"}, {"question", "Which group of " + feature + " values applies?"}});
    } else if (spec->kind == FeatureKind::Numeric) {
        std::set<double> seen;
        const auto quantiles = profile.value("quantiles", nlohmann::json::array());
        for (const auto& q : quantiles) {
            if (out.size() >= max_q) break;
            double t = q.get<double>();
            if (!seen.insert(t).second) continue;
            nlohmann::json item{{"kind", "INFERENCE"}, {"question", mock_questions::at_least(feature, t)}};
            if (code) {
                item["kind"] = "CODE";
                item["expr"] = dsl::format(dsl::compare(dsl::Op::Ge, feature, t));
            }
            out.push_back(std::move(item));
        }
    } else {
        const auto words = profile.value("top_words", nlohmann::json::array());
        for (const auto& w : words) {
            if (out.size() >= max_q) break;
            std::string word = w.value("word", "");
            nlohmann::json item{{"kind", "INFERENCE"}, {"question", mock_questions::mentions(feature, word)}};
            if (code) {
                item["kind"] = "CODE";
                item["expr"] = dsl::format(dsl::contains(feature, word));
            }
            out.push_back(std::move(item));
        }
    }
    return out;
}

std::string inference_answer(const LlmRequest& r, const Schema& schema) {
    auto expr = mock_questions::interpret(binding(r, "question"));
    if (!expr) return "I cannot tell from this record.";
    Sample s = sample_from_bindings(r, schema);
    if (is_missing(s.get(expr->feature))) return "Unknown - the record does not say.";
    return dsl::evaluate(*expr, s) ? "Yes" : "No";
}

std::string insight_batch(const LlmRequest& r, const Schema& schema) {
    auto records = nlohmann::json::parse(binding(r, "records"), nullptr, false);
    if (records.is_discarded() || !records.is_array()) return "";
    std::ostringstream out;
    for (const auto& f : schema.features()) {
        if (f.kind != FeatureKind::Categorical) continue;
        std::map<std::string, int> hist;
        for (const auto& rec : records)
            if (rec.contains(f.name) && rec[f.name].is_string()) ++hist[rec[f.name].get<std::string>()];
        if (hist.empty()) continue;
        auto best = std::max_element(hist.begin(), hist.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
        out << "Most common " << f.name << ": " << best->first << " (" << best->second << " of " << records.size()
            << ")\n";
    }
    return out.str();
}

std::string insight_synthesis(const LlmRequest& r) {
    std::istringstream in(binding(r, "summaries"));
    std::vector<std::string> lines;
    std::set<std::string> seen;
    for (std::string line; std::getline(in, line);) {
        if (line.empty() || line.starts_with("---")) continue;
        if (seen.insert(line).second) lines.push_back(line);
    }
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::string category_group(const LlmRequest& r) {
    auto cats = nlohmann::json::parse(binding(r, "categories"), nullptr, false);
    std::size_t groups = 2;
    if (auto m = binding(r, "max_groups"); !m.empty()) groups = std::max<std::size_t>(1, std::stoul(m));
    if (cats.is_discarded() || !cats.is_array()) return "{}";
    auto values = cats.get<std::vector<std::string>>();
    std::sort(values.begin(), values.end());
    nlohmann::json out = nlohmann::json::object();
    const std::size_t per = (values.size() + groups - 1) / groups;
    for (std::size_t i = 0; i < values.size(); ++i) out[values[i]] = "group_" + std::to_string(i / per + 1);
    return out.dump();
}

}  // namespace

void install_oracle_handlers(MockBackend& mock, const Schema& schema, OracleMockOptions options) {
    mock.on(TemplateId::QuestionGen, [schema](const LlmRequest& r) { return question_gen(r, schema).dump(); });
    mock.on(TemplateId::InferenceAnswer, [schema](const LlmRequest& r) { return inference_answer(r, schema); });
    mock.on(TemplateId::InsightBatch, [schema](const LlmRequest& r) { return insight_batch(r, schema); });
    mock.on(TemplateId::InsightSynthesis, [](const LlmRequest& r) { return insight_synthesis(r); });
    mock.on(TemplateId::CategoryGroup, [](const LlmRequest& r) { return category_group(r); });
    auto baseline = [schema, rule = options.baseline_rule](const LlmRequest& r) -> std::string {
        if (!rule) return "No";
        return dsl::evaluate(*rule, sample_from_bindings(r, schema)) ? "Yes" : "No";
    };
    mock.on(TemplateId::VanillaBaseline, baseline);
    mock.on(TemplateId::FewShotBaseline, baseline);
}

std::shared_ptr<MockBackend> make_oracle_mock(const Schema& schema, OracleMockOptions options) {
    auto mock = std::make_shared<MockBackend>("mock-oracle");
    install_oracle_handlers(*mock, schema, std::move(options));
    return mock;
}

}  // namespace lmtree
