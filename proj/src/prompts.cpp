#include "lmtree/prompts.hpp"

#include <algorithm>
#include <array>

namespace lmtree {

std::string to_string(TemplateId id) {
    switch (id) {
        case TemplateId::TaskContext: return "TaskContext";
        case TemplateId::InsightBatch: return "InsightBatch";
        case TemplateId::InsightSynthesis: return "InsightSynthesis";
        case TemplateId::QuestionGen: return "QuestionGen";
        case TemplateId::InferenceAnswer: return "InferenceAnswer";
        case TemplateId::CategoryGroup: return "CategoryGroup";
        case TemplateId::VanillaBaseline: return "VanillaBaseline";
        case TemplateId::FewShotBaseline: return "FewShotBaseline";
        case TemplateId::RebuildAdvice: return "RebuildAdvice";
    }
    return "Unknown";
}

namespace {

const std::array<PromptTemplate, 9>& templates() {
    static const std::array<PromptTemplate, 9> table{{
        {TemplateId::TaskContext,
         "You are a domain expert working on the following task.\n"
         "{{task}}\n"
         "Base every answer on the records you are shown."},

        {TemplateId::InsightBatch,
         "Task: {{task}}\n\n"
         "The {{count}} records below all belong to the positive class.\n"
         "{{records}}\n\n"
         "Write a concise summary of the characteristics these records share. "
         "One characteristic per line, no numbering."},

        {TemplateId::InsightSynthesis,
         "Task: {{task}}\n\n"
         "Several analysts summarized different batches of positive-class records:\n"
         "{{summaries}}\n\n"
         "Merge these summaries into one list of insights. Drop duplicates and keep the most "
         "discriminative points. One insight per line, no numbering."},

        {TemplateId::QuestionGen,
         "Task: {{task}}\n\n"
         "You act as one decision node of a decision tree. Propose up to {{max_questions}} questions about the "
         "feature '{{feature}}' ({{feature_kind}}) that separate positive from negative records at this node.\n\n"
         "Feature profile at this node (counts by label):\n{{feature_profile}}\n\n"
         "Insights about positive records:\n{{insights}}\n\n"
         "{{advice}}\n\n"
         "Allowed question kinds: {{allowed_kinds}}.\n"
         "- INFERENCE: a yes/no question answered from the record.\n"
         "- CODE: also give \"expr\", a predicate in this grammar:\n{{dsl_grammar}}\n"
         "- CLUSTERING: only for categorical features; give \"grouping\" mapping every category to a group "
         "label, at most {{max_branching}} groups.\n\n"
         "Reply with a JSON array of objects with keys \"kind\", \"question\", and where applicable \"expr\" or "
         "\"grouping\". Reply with [] if the feature is not useful."},

        {TemplateId::InferenceAnswer,
         "Task: {{task}}\n\n"
         "Record:\n{{sample_json}}\n\n"
         "Question: {{question}}\n"
         "Answer with a single word, Yes or No. If the record does not contain enough information, answer Unknown."},

        {TemplateId::CategoryGroup,
         "The feature '{{feature}}' takes these values:\n{{categories}}\n\n"
         "Group the values by similarity into at most {{max_groups}} groups. Reply with a JSON object that maps "
         "every value to a short group label."},

        {TemplateId::VanillaBaseline,
         "{{task}}\n\n"
         "Record:\n{{sample_json}}\n\n"
         "Is this record in the positive class? Answer with a single word, Yes or No."},

        {TemplateId::FewShotBaseline,
         "{{task}}\n\n"
         "Labelled examples:\n{{examples}}\n\n"
         "Record:\n{{sample_json}}\n\n"
         "Is this record in the positive class? Answer with a single word, Yes or No."},

        {TemplateId::RebuildAdvice,
         "An expert reviewing this part of the tree gave the following guidance. Prefer questions that follow "
         "it:\n{{advice}}"},
    }};
    return table;
}

}  // namespace

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = body.find("{{", pos)) != std::string::npos) {
        auto end = body.find("}}", pos + 2);
        if (end == std::string::npos) break;
        auto name = body.substr(pos + 2, end - pos - 2);
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
        pos = end + 2;
    }
    return out;
}

const PromptTemplate& default_template(TemplateId id) {
    for (const auto& t : templates())
        if (t.id == id) return t;
    throw TemplateError("no template for " + to_string(id));
}

std::string render_prompt(const PromptTemplate& tpl, const Bindings& bindings) {
    std::string out;
    out.reserve(tpl.body.size());
    std::size_t pos = 0;
    while (true) {
        auto open = tpl.body.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tpl.body, pos, std::string::npos);
            break;
        }
        auto close = tpl.body.find("}}", open + 2);
        if (close == std::string::npos) throw TemplateError(to_string(tpl.id) + ": unterminated placeholder");
        out.append(tpl.body, pos, open - pos);
        std::string name = tpl.body.substr(open + 2, close - open - 2);
        auto it = bindings.find(name);
        if (it == bindings.end()) throw TemplateError(to_string(tpl.id) + ": unbound placeholder '" + name + "'");
        out += it->second;
        pos = close + 2;
    }
    return out;
}

}  // namespace lmtree
