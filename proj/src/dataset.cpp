#include "lmtree/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace lmtree {

std::string to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::Text: return "text";
        case FeatureKind::Numeric: return "numeric";
        case FeatureKind::Categorical: return "categorical";
    }
    return "text";
}

FeatureKind feature_kind_from_string(const std::string& s) {
    if (s == "text") return FeatureKind::Text;
    if (s == "numeric" || s == "number") return FeatureKind::Numeric;
    if (s == "categorical" || s == "category") return FeatureKind::Categorical;
    throw SchemaError("unknown feature kind '" + s + "'");
}

bool FeatureSpec::has_category(const std::string& c) const {
    return std::find(categories.begin(), categories.end(), c) != categories.end();
}

Schema::Schema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
    std::set<std::string> seen;
    for (const auto& f : features_) {
        if (f.name.empty()) throw SchemaError("feature with empty name");
        if (!seen.insert(f.name).second) throw SchemaError("duplicate feature '" + f.name + "'");
        if (f.kind == FeatureKind::Categorical && f.categories.empty())
            throw SchemaError("categorical feature '" + f.name + "' declares no categories");
    }
}

const FeatureSpec* Schema::find(const std::string& name) const {
    for (const auto& f : features_)
        if (f.name == name) return &f;
    return nullptr;
}

std::string Schema::fingerprint() const {
    // FNV-1a, 64 bit
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff;
        h *= 0x100000001b3ULL;
    };
    for (const auto& f : features_) {
        mix(f.name);
        mix(to_string(f.kind));
        for (const auto& c : f.categories) mix(c);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json Schema::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& f : features_) {
        nlohmann::json j{{"name", f.name}, {"kind", to_string(f.kind)}};
        if (f.kind == FeatureKind::Categorical) j["categories"] = f.categories;
        arr.push_back(std::move(j));
    }
    return arr;
}

Schema Schema::from_json(const nlohmann::json& j) {
    const nlohmann::json& list = j.is_object() && j.contains("features") ? j.at("features") : j;
    if (!list.is_array()) throw SchemaError("schema must be a list of features");
    std::vector<FeatureSpec> specs;
    for (const auto& item : list) {
        FeatureSpec f;
        try {
            f.name = item.at("name").get<std::string>();
            f.kind = feature_kind_from_string(item.at("kind").get<std::string>());
            if (item.contains("categories"))
                f.categories = item.at("categories").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("malformed schema entry: ") + e.what());
        }
        specs.push_back(std::move(f));
    }
    return Schema(std::move(specs));
}

Schema Schema::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open schema file " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("schema file " + path.string() + ": " + e.what());
    }
}

const FeatureValue& Sample::get(const std::string& feature) const {
    static const FeatureValue kMissing = Missing{};
    auto it = features.find(feature);
    return it == features.end() ? kMissing : it->second;
}

nlohmann::json feature_value_to_json(const FeatureValue& v) {
    return std::visit(
        [](const auto& x) -> nlohmann::json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Missing>) return nullptr;
            else if constexpr (std::is_same_v<T, double>) return x;
            else return x.value;
        },
        v);
}

nlohmann::json Sample::features_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, value] : features) j[name] = feature_value_to_json(value);
    return j;
}

nlohmann::json Sample::to_json() const {
    nlohmann::json j;
    j["id"] = id;
    j["label"] = label ? 1 : 0;
    j["features"] = features_json();
    return j;
}

Dataset::Dataset(Schema schema, std::vector<Sample> samples)
    : schema_(std::move(schema)), samples_(std::move(samples)) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (!index_.emplace(s.id, i).second) throw IntegrityError("duplicate sample id '" + s.id + "'");
        for (const auto& [name, value] : s.features) {
            const FeatureSpec* spec = schema_.find(name);
            if (!spec) throw SchemaError("sample '" + s.id + "' has feature '" + name + "' absent from schema");
            if (const auto* c = std::get_if<Category>(&value); c && !spec->has_category(c->value))
                throw SchemaError("sample '" + s.id + "': '" + c->value + "' is not a declared category of '" +
                                  name + "'");
        }
        if (s.label) ++positives_;
    }
}

double Dataset::positive_rate() const {
    return samples_.empty() ? 0.0 : static_cast<double>(positives_) / static_cast<double>(samples_.size());
}

const Sample* Dataset::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &samples_[it->second];
}

SampleRefs Dataset::refs() const {
    SampleRefs out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(&s);
    return out;
}

SampleRefs Dataset::select(std::span<const std::string> ids) const {
    SampleRefs out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const Sample* s = find(id);
        if (!s) throw IntegrityError("unknown sample id '" + id + "'");
        out.push_back(s);
    }
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    std::vector<Sample> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(samples_.at(r));
    return Dataset(schema_, std::move(out));
}

void Dataset::save_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write " + path.string());
    for (const auto& s : samples_) out << s.to_json().dump() << '\n';
}

namespace {

std::optional<double> parse_number(std::string_view text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
    return v;
}

FeatureValue coerce_text(const std::string& raw, const FeatureSpec& spec, LoadReport* report) {
    switch (spec.kind) {
        case FeatureKind::Text: return Text{raw};
        case FeatureKind::Numeric: {
            if (auto v = parse_number(raw)) return *v;
            if (report) ++report->unparseable_numeric;
            return Missing{};
        }
        case FeatureKind::Categorical:
            if (!spec.has_category(raw))
                throw SchemaError("'" + raw + "' is not a declared category of '" + spec.name + "'");
            return Category{raw};
    }
    return Missing{};
}

bool parse_label(const nlohmann::json& j) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number_integer()) {
        auto v = j.get<long long>();
        if (v == 0 || v == 1) return v == 1;
    }
    if (j.is_string()) {
        auto s = j.get<std::string>();
        if (s == "0" || s == "false") return false;
        if (s == "1" || s == "true") return true;
    }
    throw IntegrityError("label must be 0 or 1, got " + j.dump());
}

std::vector<std::string> split_delimited_line(const std::string& line, char delim) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delim) {
            cells.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    cells.push_back(std::move(cur));
    return cells;
}

}  // namespace

FeatureValue coerce_json_value(const nlohmann::json& v, const FeatureSpec& spec, LoadReport* report) {
    if (v.is_null()) return Missing{};
    if (v.is_string()) return coerce_text(v.get<std::string>(), spec, report);
    if (v.is_boolean()) return coerce_text(v.get<bool>() ? "true" : "false", spec, report);
    if (v.is_number()) {
        if (spec.kind == FeatureKind::Numeric) return v.get<double>();
        return coerce_text(v.dump(), spec, report);
    }
    // Arrays and objects only make sense as text.
    if (spec.kind == FeatureKind::Text) return Text{v.dump()};
    if (spec.kind == FeatureKind::Numeric && report) ++report->unparseable_numeric;
    if (spec.kind == FeatureKind::Numeric) return Missing{};
    throw SchemaError("structured value for categorical feature '" + spec.name + "'");
}

Dataset parse_jsonl(std::istream& in, const Schema& schema, LoadReport* report) {
    std::vector<Sample> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw IntegrityError("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("label"))
            throw IntegrityError("line " + std::to_string(lineno) + ": record needs id and label");
        Sample s;
        s.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
        s.label = parse_label(rec["label"]);
        if (rec.contains("features")) {
            for (const auto& [name, value] : rec["features"].items()) {
                const FeatureSpec* spec = schema.find(name);
                if (!spec) throw SchemaError("unknown column '" + name + "' (line " + std::to_string(lineno) + ")");
                s.features[name] = coerce_json_value(value, *spec, report);
            }
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw EmptyDatasetError("dataset has no records");
    return Dataset(schema, std::move(samples));
}

Dataset parse_delimited(std::istream& in, const Schema& schema, const DelimitedOptions& opts, LoadReport* report) {
    std::string line;
    if (!std::getline(in, line)) throw EmptyDatasetError("dataset has no header row");
    auto header = split_delimited_line(line, opts.delimiter);
    std::ptrdiff_t id_col = -1, label_col = -1;
    std::vector<const FeatureSpec*> specs(header.size(), nullptr);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == opts.id_column) id_col = static_cast<std::ptrdiff_t>(c);
        else if (header[c] == opts.label_column) label_col = static_cast<std::ptrdiff_t>(c);
        else if (!(specs[c] = schema.find(header[c]))) throw SchemaError("unknown column '" + header[c] + "'");
    }
    if (id_col < 0) throw SchemaError("missing id column '" + opts.id_column + "'");
    if (label_col < 0) throw SchemaError("missing label column '" + opts.label_column + "'");

    std::vector<Sample> samples;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split_delimited_line(line, opts.delimiter);
        if (cells.size() != header.size())
            throw IntegrityError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                                 " cells, got " + std::to_string(cells.size()));
        Sample s;
        s.id = cells[static_cast<std::size_t>(id_col)];
        s.label = parse_label(nlohmann::json(cells[static_cast<std::size_t>(label_col)]));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (!specs[c]) continue;
            s.features[specs[c]->name] = cells[c].empty() ? FeatureValue{Missing{}} : coerce_text(cells[c], *specs[c], report);
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw EmptyDatasetError("dataset has no records");
    return Dataset(schema, std::move(samples));
}

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema, LoadReport* report,
                     const DelimitedOptions& delimited) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset " + path.string());
    auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".ndjson") return parse_jsonl(in, schema, report);
    DelimitedOptions opts = delimited;
    if (ext == ".tsv") opts.delimiter = '\t';
    return parse_delimited(in, schema, opts, report);
}

std::vector<std::size_t> FoldPlan::rows_in(const Dataset& ds, std::span<const std::size_t> folds) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto it = assignment.find(ds.samples()[i].id);
        if (it == assignment.end()) continue;
        if (std::find(folds.begin(), folds.end(), it->second) != folds.end()) rows.push_back(i);
    }
    return rows;
}

FoldPlan stratified_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw StratificationError("k must be at least 2");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < dataset.size(); ++i) (dataset.samples()[i].label ? pos : neg).push_back(i);
    if (pos.size() < k || neg.size() < k)
        throw StratificationError("each class needs at least k=" + std::to_string(k) + " members (have " +
                                  std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) +
                                  " negative)");

    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    // Negatives continue the round-robin where positives stopped, so fold sizes stay within one.
    FoldPlan plan;
    plan.k = k;
    std::size_t cursor = 0;
    for (auto* cls : {&pos, &neg}) {
        for (auto row : *cls) {
            plan.assignment[dataset.samples()[row].id] = cursor;
            cursor = (cursor + 1) % k;
        }
    }
    return plan;
}

std::vector<CvPartition> enumerate_partitions(const FoldPlan& plan) {
    if (plan.k != 5) throw std::invalid_argument("only the 5-fold (3 train, 1 validation, 1 test) scheme is supported");
    std::vector<CvPartition> out;
    for (std::size_t a = 0; a < 5; ++a)
        for (std::size_t b = a + 1; b < 5; ++b)
            for (std::size_t c = b + 1; c < 5; ++c) {
                std::array<std::size_t, 2> rest{};
                std::size_t n = 0;
                for (std::size_t f = 0; f < 5; ++f)
                    if (f != a && f != b && f != c) rest[n++] = f;
                out.push_back({{a, b, c}, rest[0], rest[1]});
                out.push_back({{a, b, c}, rest[1], rest[0]});
            }
    return out;
}

std::vector<SampleRefs> batches(const SampleRefs& samples, std::size_t size) {
    if (size == 0) throw std::invalid_argument("batch size must be at least 1");
    std::vector<SampleRefs> out;
    for (std::size_t i = 0; i < samples.size(); i += size) {
        auto end = std::min(samples.size(), i + size);
        out.emplace_back(samples.begin() + static_cast<std::ptrdiff_t>(i),
                         samples.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace lmtree
