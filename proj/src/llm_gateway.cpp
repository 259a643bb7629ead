#include "lmtree/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <exception>
#include <fstream>
#include <thread>

namespace lmtree {

std::chrono::milliseconds RetryPolicy::delay_before(int attempt) const {
    double d = static_cast<double>(base_delay.count());
    for (int i = 2; i < attempt; ++i) d *= multiplier;
    auto ms = static_cast<long long>(std::min(d, static_cast<double>(max_delay.count())));
    return std::chrono::milliseconds(ms);
}

std::vector<LlmResponse> complete_batch(Backend& backend, std::span<const LlmRequest> requests,
                                        const BatchLimits& limits) {
    std::vector<LlmResponse> out(requests.size());
    if (requests.empty()) return out;

    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;
    std::mutex fatal_mu;
    const std::string backend_id = backend.id();

    auto run_one = [&](std::size_t i) {
        const LlmRequest& req = requests[i];
        LlmResponse& resp = out[i];
        resp.correlation_id = req.correlation_id;
        resp.backend_id = backend_id;
        const int max_attempts = std::max(1, limits.retry.max_attempts);
        for (int attempt = 1; attempt <= max_attempts; ++attempt) {
            if (attempt > 1) std::this_thread::sleep_for(limits.retry.delay_before(attempt));
            resp.attempts = attempt;
            try {
                Completion c = backend.complete(req);
                resp.ok = true;
                resp.text = std::move(c.text);
                resp.prompt_tokens = c.prompt_tokens;
                resp.completion_tokens = c.completion_tokens;
                resp.error.clear();
                return;
            } catch (const TransientError& e) {
                resp.error = e.what();
            } catch (const FatalError& e) {
                resp.error = e.what();
                std::lock_guard lock(fatal_mu);
                if (!fatal) fatal = std::current_exception();
                abort = true;
                return;
            } catch (const std::exception& e) {
                resp.error = e.what();
                return;
            }
        }
        resp.error = "retries exhausted: " + resp.error;
    };

    const std::size_t workers = std::min(std::max<std::size_t>(1, limits.max_in_flight), requests.size());
    auto worker = [&] {
        for (std::size_t i; !abort && (i = next.fetch_add(1)) < requests.size();) run_one(i);
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (fatal) std::rethrow_exception(fatal);
    for (auto& r : out)
        if (!r.ok && r.error.empty()) r.error = "not attempted";
    return out;
}

std::string to_string(AnswerKind a) {
    switch (a) {
        case AnswerKind::Yes: return "yes";
        case AnswerKind::No: return "no";
        case AnswerKind::Unknown: return "unknown";
    }
    return "unknown";
}

AnswerKind parse_answer(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size() && !std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
    std::string token;
    while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i])))
        token += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
    // "Yes." and "No," are fine; "Yesterday" or "Nope" are not.
    if (i < text.size() && std::isalnum(static_cast<unsigned char>(text[i]))) return AnswerKind::Unknown;
    if (token == "yes") return AnswerKind::Yes;
    if (token == "no") return AnswerKind::No;
    return AnswerKind::Unknown;
}

std::string canonical_text(std::string_view text) {
    std::string out;
    bool space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

std::string AnswerCache::key(TemplateId tpl, const std::string& question, const std::string& sample_id) {
    return to_string(tpl) + '\x1f' + canonical_text(question) + '\x1f' + sample_id;
}

std::optional<Answer> AnswerCache::get(TemplateId tpl, const std::string& question,
                                       const std::string& sample_id) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(key(tpl, question, sample_id));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void AnswerCache::put(TemplateId tpl, const std::string& question, const std::string& sample_id,
                      const Answer& answer) {
    std::unique_lock lock(mu_);
    entries_[key(tpl, question, sample_id)] = answer;
}

std::size_t AnswerCache::size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
}

void AnswerCache::save(const std::filesystem::path& path) const {
    std::vector<std::pair<std::string, Answer>> rows;
    {
        std::shared_lock lock(mu_);
        rows.assign(entries_.begin(), entries_.end());
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write answer cache " + path.string());
        for (const auto& [k, a] : rows)
            out << nlohmann::json{{"key", k}, {"answer", to_string(a.value)}, {"raw", a.raw}}.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

void AnswerCache::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    std::unique_lock lock(mu_);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("key")) continue;
        Answer a;
        auto v = j.value("answer", "unknown");
        a.value = v == "yes" ? AnswerKind::Yes : v == "no" ? AnswerKind::No : AnswerKind::Unknown;
        a.raw = j.value("raw", "");
        entries_[j["key"].get<std::string>()] = std::move(a);
    }
}

nlohmann::json Usage::to_json() const {
    return {{"requests", requests},           {"failures", failures},
            {"attempts", attempts},           {"prompt_tokens", prompt_tokens},
            {"completion_tokens", completion_tokens}, {"total_tokens", total_tokens()},
            {"cache_hits", cache_hits}};
}

Gateway::Gateway(std::shared_ptr<Backend> backend, BatchLimits limits)
    : backend_(std::move(backend)), limits_(limits) {
    if (!backend_) throw FatalError("no backend configured");
}

void Gateway::set_template(PromptTemplate tpl) { overrides_[tpl.id] = std::move(tpl); }

const PromptTemplate& Gateway::get_template(TemplateId id) const {
    auto it = overrides_.find(id);
    return it != overrides_.end() ? it->second : default_template(id);
}

LlmRequest Gateway::make_request(TemplateId id, Bindings bindings, const std::string& task,
                                 DecodingParams decoding) {
    LlmRequest r;
    r.correlation_id = next_id_.fetch_add(1);
    r.template_id = id;
    r.system = render_prompt(get_template(TemplateId::TaskContext), {{"task", task}});
    r.prompt = render_prompt(get_template(id), bindings);
    r.bindings = std::move(bindings);
    if (id == TemplateId::InferenceAnswer || id == TemplateId::CategoryGroup) decoding.temperature = 0.0;
    r.decoding = decoding;
    return r;
}

void Gateway::account(const LlmResponse& r) {
    std::lock_guard lock(usage_mu_);
    ++usage_.requests;
    usage_.attempts += static_cast<std::uint64_t>(r.attempts);
    if (!r.ok) ++usage_.failures;
    usage_.prompt_tokens += r.prompt_tokens;
    usage_.completion_tokens += r.completion_tokens;
}

std::vector<LlmResponse> Gateway::complete(std::span<const LlmRequest> requests) {
    auto out = complete_batch(*backend_, requests, limits_);
    for (const auto& r : out) account(r);
    return out;
}

LlmResponse Gateway::complete_one(const LlmRequest& request) {
    return complete(std::span<const LlmRequest>(&request, 1)).front();
}

Usage Gateway::usage() const {
    std::lock_guard lock(usage_mu_);
    return usage_;
}

Answer Gateway::answer_yes_no(const std::string& question, const Sample& sample, const std::string& task) {
    SampleRefs one{&sample};
    return answer_many(question, one, task).front();
}

std::vector<Answer> Gateway::answer_many(const std::string& question, const SampleRefs& samples,
                                         const std::string& task) {
    if (question.empty()) throw std::invalid_argument("empty question");
    std::vector<Answer> out(samples.size());
    std::vector<LlmRequest> pending;
    std::vector<std::size_t> slots;
    // Duplicate ids within one call share a single request.
    std::map<std::string, std::size_t> first_slot;
    std::vector<std::pair<std::size_t, std::size_t>> aliases;
    std::uint64_t hits = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = *samples[i];
        if (auto cached = cache_.get(TemplateId::InferenceAnswer, question, s.id)) {
            out[i] = *cached;
            ++hits;
            continue;
        }
        if (auto [it, inserted] = first_slot.emplace(s.id, i); !inserted) {
            aliases.emplace_back(i, it->second);
            continue;
        }
        pending.push_back(make_request(TemplateId::InferenceAnswer,
                                       {{"question", question}, {"sample_json", s.features_json().dump()},
                                        {"task", task}},
                                       task));
        slots.push_back(i);
    }
    if (hits) {
        std::lock_guard lock(usage_mu_);
        usage_.cache_hits += hits;
    }
    if (!pending.empty()) {
        auto responses = complete(pending);
        for (std::size_t k = 0; k < responses.size(); ++k) {
            Answer a;
            const auto& r = responses[k];
            if (r.ok) {
                a.raw = r.text;
                a.value = parse_answer(r.text);
                cache_.put(TemplateId::InferenceAnswer, question, samples[slots[k]]->id, a);
            } else {
                a.error = r.error;
            }
            out[slots[k]] = std::move(a);
        }
    }
    for (auto [dst, src] : aliases) out[dst] = out[src];
    return out;
}

}  // namespace lmtree
