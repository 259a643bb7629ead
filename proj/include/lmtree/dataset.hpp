#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace lmtree {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemaError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

class IntegrityError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

class EmptyDatasetError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

class StratificationError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

enum class FeatureKind { Text, Numeric, Categorical };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& s);

struct Missing {
    bool operator==(const Missing&) const = default;
};

struct Text {
    std::string value;
    bool operator==(const Text&) const = default;
};

struct Category {
    std::string value;
    bool operator==(const Category&) const = default;
};

// Missing is distinct from empty text.
using FeatureValue = std::variant<Missing, Text, double, Category>;

inline bool is_missing(const FeatureValue& v) { return std::holds_alternative<Missing>(v); }

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::Text;
    std::vector<std::string> categories;  // declared set, categorical only

    bool has_category(const std::string& c) const;
    bool operator==(const FeatureSpec&) const = default;
};

class Schema {
public:
    Schema() = default;
    explicit Schema(std::vector<FeatureSpec> features);

    const std::vector<FeatureSpec>& features() const { return features_; }
    const FeatureSpec* find(const std::string& name) const;
    std::size_t size() const { return features_.size(); }

    // Stable hex digest of names, kinds and category sets.
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static Schema from_json(const nlohmann::json& j);
    static Schema load(const std::filesystem::path& path);

    bool operator==(const Schema&) const = default;

private:
    std::vector<FeatureSpec> features_;
};

struct Sample {
    std::string id;
    std::map<std::string, FeatureValue> features;
    bool label = false;

    // Absent keys read as missing.
    const FeatureValue& get(const std::string& feature) const;

    // Feature values only (no label), as shown to a model.
    nlohmann::json features_json() const;
    // Full record line: {"id", "label", "features"}.
    nlohmann::json to_json() const;
};

using SampleRefs = std::vector<const Sample*>;

struct LoadReport {
    std::size_t unparseable_numeric = 0;
};

class Dataset {
public:
    Dataset() = default;
    Dataset(Schema schema, std::vector<Sample> samples);

    const Schema& schema() const { return schema_; }
    const std::vector<Sample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }

    std::size_t positives() const { return positives_; }
    double positive_rate() const;

    const Sample* find(const std::string& id) const;
    SampleRefs refs() const;
    // Rows whose ids are listed, in the listed order; unknown ids are an integrity error.
    SampleRefs select(std::span<const std::string> ids) const;

    Dataset subset(std::span<const std::size_t> rows) const;

    void save_jsonl(const std::filesystem::path& path) const;

private:
    Schema schema_;
    std::vector<Sample> samples_;
    std::map<std::string, std::size_t> index_;
    std::size_t positives_ = 0;
};

struct DelimitedOptions {
    char delimiter = ',';
    std::string id_column = "id";
    std::string label_column = "label";
};

// Record-per-line (.jsonl / .ndjson) or header-row delimited text (anything else).
Dataset load_dataset(const std::filesystem::path& path, const Schema& schema,
                     LoadReport* report = nullptr, const DelimitedOptions& delimited = {});
Dataset parse_jsonl(std::istream& in, const Schema& schema, LoadReport* report = nullptr);
Dataset parse_delimited(std::istream& in, const Schema& schema, const DelimitedOptions& opts,
                        LoadReport* report = nullptr);

FeatureValue coerce_json_value(const nlohmann::json& v, const FeatureSpec& spec, LoadReport* report);
nlohmann::json feature_value_to_json(const FeatureValue& v);

struct FoldPlan {
    std::size_t k = 0;
    std::map<std::string, std::size_t> assignment;

    std::vector<std::size_t> rows_in(const Dataset& ds, std::span<const std::size_t> folds) const;
};

FoldPlan stratified_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

struct CvPartition {
    std::array<std::size_t, 3> train_folds{};
    std::size_t val_fold = 0;
    std::size_t test_fold = 0;

    bool operator==(const CvPartition&) const = default;
};

std::vector<CvPartition> enumerate_partitions(const FoldPlan& plan);

std::vector<SampleRefs> batches(const SampleRefs& samples, std::size_t size);

}  // namespace lmtree
