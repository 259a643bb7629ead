#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmtree {

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TemplateId {
    TaskContext,
    InsightBatch,
    InsightSynthesis,
    QuestionGen,
    InferenceAnswer,
    CategoryGroup,
    VanillaBaseline,
    FewShotBaseline,
    RebuildAdvice,
};

std::string to_string(TemplateId id);

using Bindings = std::map<std::string, std::string>;

// Body text with {{name}} placeholders.
struct PromptTemplate {
    TemplateId id;
    std::string body;

    // Distinct names in order of first appearance.
    std::vector<std::string> placeholders() const;
};

const PromptTemplate& default_template(TemplateId id);

// Substitutes every {{name}}; throws TemplateError naming the first unbound placeholder.
std::string render_prompt(const PromptTemplate& tpl, const Bindings& bindings);

}  // namespace lmtree
