#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmtree/dataset.hpp"
#include "lmtree/llm_gateway.hpp"
#include "lmtree/tree.hpp"

namespace lmtree {

class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
    nlohmann::json to_json() const;
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
    double beta = 0.5;

    nlohmann::json to_json() const;
};

// (1 + b^2) P R / (b^2 P + R), 0 when the denominator is 0.
double f_beta(double precision, double recall, double beta);

// Zero denominators give 0 for precision, recall and accuracy. Throws std::invalid_argument for beta <= 0.
Metrics metrics(const ConfusionCounts& c, double beta = 0.5);

// Counts with predicted = ratio >= threshold.
ConfusionCounts confusion_at(std::span<const double> ratios, std::span<const std::uint8_t> labels, double threshold);

struct SensitivityChoice {
    double sensitivity = 1.0;
    ConfusionCounts counts;
    Metrics metrics;
    std::vector<double> grid;  // ascending
};

// Grid = distinct ratios plus 0 and 1; F-beta maximizer, ties to the largest threshold.
SensitivityChoice select_sensitivity(std::span<const double> ratios, std::span<const std::uint8_t> labels,
                                     double beta = 0.5);
// Routes the validation samples first. Throws EvaluationError on an empty validation set.
SensitivityChoice select_sensitivity(const Tree& tree, const SampleRefs& validation, const AnswerFn& answers,
                                     const Schema& schema, double beta = 0.5);

struct Evaluation {
    double sensitivity = 0.0;
    ConfusionCounts counts;
    Metrics metrics;
};

Evaluation evaluate(const Tree& tree, const SampleRefs& samples, const AnswerFn& answers, const Schema& schema,
                    double sensitivity, double beta = 0.5);

struct CvRow {
    std::size_t tree_index = 0;  // 0..9; swapped (validation, test) rows share it
    CvPartition partition;
    bool failed = false;
    std::string error;
    double sensitivity = 0.0;
    Metrics validation;
    Metrics test;
    ConfusionCounts validation_counts;
    ConfusionCounts test_counts;
};

struct CvReport {
    std::vector<CvRow> rows;  // 20, in partition order
    std::size_t trees_built = 0;
    Metrics avg_validation;
    Metrics avg_test;
    double avg_sensitivity = 0.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    // Columns: tree | sensitivity | validation P R F | test accuracy P R F, in percent.
    std::string table() const;
};

// Builds the tree for one training set (three folds).
using TreeBuilder = std::function<Tree(const SampleRefs& train, std::size_t tree_index)>;

struct CvOptions {
    std::uint64_t seed = 0;
    double beta = 0.5;
};

CvReport run_cv(const Dataset& data, const TreeBuilder& builder, const AnswerFn& answers,
                const CvOptions& options = {});

// Gateway-backed: insights and tree per training set, answers through the shared cache.
CvReport run_cv(Gateway& gateway, const Dataset& data, const BuildParams& params, const std::string& task,
                double beta = 0.5);

struct BaselineResult {
    ConfusionCounts counts;
    Metrics metrics;
    std::size_t calls = 0;
    std::size_t failures = 0;  // excluded from counts

    nlohmann::json to_json() const;
};

// One completion per sample; Unknown counts as a negative prediction.
BaselineResult baseline_vanilla(Gateway& gateway, const SampleRefs& samples, const std::string& task,
                                double beta = 0.5);

// Exemplars: two positive and two negative samples, disjoint from `samples`.
BaselineResult baseline_fewshot(Gateway& gateway, const SampleRefs& samples, const SampleRefs& exemplars,
                                const std::string& task, double beta = 0.5);

// Two positives and two negatives from `pool` (seeded), none of whose ids appear in `exclude`.
SampleRefs pick_exemplars(const SampleRefs& pool, const SampleRefs& exclude, std::uint64_t seed);

// Report-time extrapolation of precision to a population with a different base rate.
inline constexpr double kIndustryBaseRate = 0.019;
inline constexpr double kDatasetBaseRate = 0.099;
double rescale_precision(double precision, double target_base_rate = kIndustryBaseRate,
                         double source_base_rate = kDatasetBaseRate);

}  // namespace lmtree
