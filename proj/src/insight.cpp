#include "lmtree/insight.hpp"

#include <sstream>

namespace lmtree {

namespace {

std::string records_json(const SampleRefs& batch) {
    auto arr = nlohmann::json::array();
    for (const Sample* s : batch) arr.push_back(s->features_json());
    return arr.dump();
}

LlmRequest summary_request(Gateway& gateway, const SampleRefs& batch, const std::string& task) {
    return gateway.make_request(TemplateId::InsightBatch,
                                {{"task", task}, {"count", std::to_string(batch.size())}, {"records", records_json(batch)}},
                                task);
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        auto b = line.find_first_not_of(" \t\r-*");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r");
        out.push_back(line.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace

std::string InsightList::as_text() const {
    std::string out;
    for (const auto& i : items) out += "- " + i + "\n";
    return out.empty() ? "(none)" : out;
}

nlohmann::json InsightList::to_json() const { return {{"items", items}, {"provenance", provenance}}; }

InsightList InsightList::from_json(const nlohmann::json& j) {
    InsightList l;
    l.items = j.value("items", std::vector<std::string>{});
    l.provenance = j.value("provenance", std::size_t{0});
    return l;
}

std::optional<std::string> summarize_batch(Gateway& gateway, const SampleRefs& batch, const std::string& task) {
    if (batch.empty()) return std::string();
    auto resp = gateway.complete_one(summary_request(gateway, batch, task));
    if (!resp.ok) return std::nullopt;
    return resp.text;
}

InsightList synthesize(Gateway& gateway, const std::vector<std::string>& summaries, const std::string& task) {
    std::string joined;
    std::size_t contributing = 0;
    for (const auto& s : summaries) {
        if (s.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        joined += "--- summary " + std::to_string(++contributing) + "\n" + s;
        if (!s.ends_with('\n')) joined += '\n';
    }
    if (contributing == 0) throw EmptyInsightError("no non-empty summaries to synthesize");
    auto resp = gateway.complete_one(
        gateway.make_request(TemplateId::InsightSynthesis, {{"task", task}, {"summaries", joined}}, task));
    if (!resp.ok) throw TransientError("insight synthesis failed: " + resp.error);
    InsightList out;
    out.items = split_lines(resp.text);
    out.provenance = contributing;
    if (out.items.empty()) throw EmptyInsightError("synthesis returned no insights");
    return out;
}

InsightReport generate_insights(Gateway& gateway, const SampleRefs& samples, const std::string& task,
                                std::size_t batch_size) {
    SampleRefs positives;
    for (const Sample* s : samples)
        if (s->label) positives.push_back(s);

    InsightReport report;
    auto groups = batches(positives, batch_size);
    report.batches = groups.size();
    std::vector<LlmRequest> requests;
    for (const auto& b : groups) requests.push_back(summary_request(gateway, b, task));
    auto responses = gateway.complete(requests);

    std::vector<std::string> summaries;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        if (responses[i].ok) {
            summaries.push_back(responses[i].text);
        } else {
            ++report.skipped;
            report.warnings.push_back("insight batch " + std::to_string(i) + " skipped: " + responses[i].error);
        }
    }
    try {
        report.insights = synthesize(gateway, summaries, task);
    } catch (const std::exception& e) {
        // Insights condition question generation; building continues without them.
        report.warnings.push_back(std::string("no insights: ") + e.what());
    }
    return report;
}

}  // namespace lmtree
