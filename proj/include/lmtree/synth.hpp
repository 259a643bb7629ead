#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/predicate_dsl.hpp"

namespace lmtree {

// How one synthetic column is drawn.
struct SynthFeature {
    FeatureSpec spec;
    std::vector<double> weights;     // categorical: per-category weight (uniform when empty)
    double min = 0.0, max = 1.0;     // numeric: uniform range
    std::vector<std::string> words;  // text: vocabulary, three words per value
    double missing_rate = 0.0;

    static SynthFeature boolean(std::string name, double p_true, double missing_rate = 0.0);
    static SynthFeature categorical(std::string name, std::vector<std::string> categories,
                                    std::vector<double> weights = {});
    static SynthFeature numeric(std::string name, double min, double max);
    static SynthFeature text(std::string name, std::vector<std::string> words);
};

struct PlantedRuleSpec {
    std::vector<SynthFeature> features;
    std::string rule;  // predicate expression over the declared features
    double noise = 0.0;

    Schema schema() const;

    nlohmann::json to_json() const;
    static PlantedRuleSpec from_json(const nlohmann::json& j);
};

struct SynthDataset {
    Dataset data;
    dsl::Expr rule;
    std::vector<bool> rule_values;  // rule(sample) before noise, aligned with data.samples()
};

// label = rule(sample) XOR Bernoulli(noise). Deterministic for a fixed seed.
// Throws SchemaError if the rule references an undeclared feature.
SynthDataset synth_generate(const PlantedRuleSpec& spec, std::size_t n, std::uint64_t seed,
                            const std::string& id_prefix = "s");

}  // namespace lmtree
