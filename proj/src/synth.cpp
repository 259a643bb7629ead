#include "lmtree/synth.hpp"

#include <cstdio>
#include <numeric>
#include <random>

namespace lmtree {

namespace {

// Portable uniform in [0, 1): the top 53 bits of the engine output.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t pick_weighted(std::mt19937_64& rng, const std::vector<double>& weights, std::size_t n) {
    if (weights.empty()) return static_cast<std::size_t>(unit(rng) * static_cast<double>(n)) % n;
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = unit(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    return weights.size() - 1;
}

}  // namespace

SynthFeature SynthFeature::boolean(std::string name, double p_true, double missing_rate) {
    SynthFeature f;
    f.spec = {std::move(name), FeatureKind::Categorical, {"false", "true"}};
    f.weights = {1.0 - p_true, p_true};
    f.missing_rate = missing_rate;
    return f;
}

SynthFeature SynthFeature::categorical(std::string name, std::vector<std::string> categories,
                                       std::vector<double> weights) {
    SynthFeature f;
    f.spec = {std::move(name), FeatureKind::Categorical, std::move(categories)};
    f.weights = std::move(weights);
    return f;
}

SynthFeature SynthFeature::numeric(std::string name, double min, double max) {
    SynthFeature f;
    f.spec = {std::move(name), FeatureKind::Numeric, {}};
    f.min = min;
    f.max = max;
    return f;
}

SynthFeature SynthFeature::text(std::string name, std::vector<std::string> words) {
    SynthFeature f;
    f.spec = {std::move(name), FeatureKind::Text, {}};
    f.words = std::move(words);
    return f;
}

Schema PlantedRuleSpec::schema() const {
    std::vector<FeatureSpec> specs;
    for (const auto& f : features) specs.push_back(f.spec);
    return Schema(std::move(specs));
}

nlohmann::json PlantedRuleSpec::to_json() const {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features) {
        nlohmann::json j{{"name", f.spec.name}, {"kind", to_string(f.spec.kind)}};
        if (f.spec.kind == FeatureKind::Categorical) j["categories"] = f.spec.categories;
        if (!f.weights.empty()) j["weights"] = f.weights;
        if (f.spec.kind == FeatureKind::Numeric) {
            j["min"] = f.min;
            j["max"] = f.max;
        }
        if (!f.words.empty()) j["words"] = f.words;
        if (f.missing_rate > 0) j["missing_rate"] = f.missing_rate;
        feats.push_back(std::move(j));
    }
    return {{"features", feats}, {"rule", rule}, {"noise", noise}};
}

PlantedRuleSpec PlantedRuleSpec::from_json(const nlohmann::json& j) {
    PlantedRuleSpec spec;
    try {
        for (const auto& item : j.at("features")) {
            SynthFeature f;
            f.spec.name = item.at("name").get<std::string>();
            f.spec.kind = feature_kind_from_string(item.at("kind").get<std::string>());
            f.spec.categories = item.value("categories", std::vector<std::string>{});
            f.weights = item.value("weights", std::vector<double>{});
            f.min = item.value("min", 0.0);
            f.max = item.value("max", 1.0);
            f.words = item.value("words", std::vector<std::string>{});
            f.missing_rate = item.value("missing_rate", 0.0);
            spec.features.push_back(std::move(f));
        }
        spec.rule = j.at("rule").get<std::string>();
        spec.noise = j.value("noise", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed planted-rule spec: ") + e.what());
    }
    return spec;
}

SynthDataset synth_generate(const PlantedRuleSpec& spec, std::size_t n, std::uint64_t seed,
                            const std::string& id_prefix) {
    Schema schema = spec.schema();
    dsl::Expr rule;
    try {
        rule = dsl::parse(spec.rule, schema);
    } catch (const dsl::TypeError& e) {
        throw SchemaError(std::string("planted rule: ") + e.what());
    } catch (const dsl::SyntaxError& e) {
        throw SchemaError(std::string("planted rule: ") + e.what());
    }
    for (const auto& f : spec.features) {
        if (f.spec.kind == FeatureKind::Categorical && !f.weights.empty() &&
            f.weights.size() != f.spec.categories.size())
            throw SchemaError("weights of '" + f.spec.name + "' do not match its categories");
        if (f.spec.kind == FeatureKind::Text && f.words.empty())
            throw SchemaError("text feature '" + f.spec.name + "' needs a vocabulary");
    }

    std::mt19937_64 rng(seed);
    std::vector<Sample> samples;
    std::vector<bool> truth;
    samples.reserve(n);
    truth.reserve(n);
    const int width = n < 10 ? 1 : static_cast<int>(std::to_string(n - 1).size());
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%0*zu", width, i);
        s.id = id_prefix + idbuf;
        for (const auto& f : spec.features) {
            // Every feature consumes the same number of draws so columns stay aligned across specs.
            double miss = unit(rng);
            double draw = unit(rng);
            FeatureValue v;
            switch (f.spec.kind) {
                case FeatureKind::Numeric: v = f.min + draw * (f.max - f.min); break;
                case FeatureKind::Categorical: {
                    std::mt19937_64 local(rng());
                    v = Category{f.spec.categories[pick_weighted(local, f.weights, f.spec.categories.size())]};
                    break;
                }
                case FeatureKind::Text: {
                    std::mt19937_64 local(rng());
                    std::string t;
                    for (int w = 0; w < 3; ++w) {
                        if (w) t += ' ';
                        t += f.words[pick_weighted(local, {}, f.words.size())];
                    }
                    v = Text{std::move(t)};
                    break;
                }
            }
            if (miss < f.missing_rate) v = Missing{};
            s.features[f.spec.name] = std::move(v);
        }
        bool r = dsl::evaluate(rule, s);
        bool flip = unit(rng) < spec.noise;
        s.label = r != flip;
        truth.push_back(r);
        samples.push_back(std::move(s));
    }
    return {Dataset(std::move(schema), std::move(samples)), std::move(rule), std::move(truth)};
}

}  // namespace lmtree
