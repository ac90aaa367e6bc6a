#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "reconad/dataset.hpp"
#include "reconad/oneclass.hpp"

namespace reconad {

struct ConfusionCounts {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// With positive class OK: FP is a NOK sample predicted OK, FN an OK sample
/// predicted NOK.
ConfusionCounts confusion_counts(std::span<const SampleLabel> predicted, std::span<const SampleLabel> truth,
                                 SampleLabel positive_class = SampleLabel::OK);

struct BinaryMetrics {
    double precision = 0;
    double recall = 0;
    double specificity = 0;
    double f1 = 0;
};

/// Zero denominators give 0.
BinaryMetrics binary_metrics(const ConfusionCounts& counts);
double f1_score(double precision, double recall);

struct RocPoint {
    double fpr = 0;
    double tpr = 0;
    double threshold = 0;  // scores at or above it are called NOK
};

struct RocCurve {
    std::vector<RocPoint> points;  // from (0,0) to (1,1)
    double auc = 0;
};

/// NOK is the positive class of the curve; larger scores point to NOK.
RocCurve roc_auc(std::span<const double> scores, std::span<const SampleLabel> labels);

struct CombinationId {
    std::string model;      // e.g. "ConvM3-BAE1"
    std::string extractor;
    std::string classifier;
    std::string str() const { return model + "__" + extractor + "__" + classifier; }
};

struct EvaluationReport {
    std::string combination_id;
    std::string species;
    double auc = 0;
    BinaryMetrics metrics;
    DecisionThreshold threshold;
    ConfusionCounts counts;
};

EvaluationReport build_report(std::string combination_id, std::string species, std::span<const double> scores,
                              std::span<const SampleLabel> labels, const DecisionThreshold& threshold,
                              SampleLabel positive_class = SampleLabel::OK);

/// Two-decimal display form used by the exported tables.
std::string format_metric(double value);

inline constexpr const char* kReportHeader =
    "combination_id,species,auc,f1,precision,recall,specificity,threshold,tp,tn,fp,fn";

std::string report_csv_row(const EvaluationReport& report);
void write_report_csv(const std::filesystem::path& path, std::span<const EvaluationReport> reports);
std::vector<EvaluationReport> read_report_csv(const std::filesystem::path& path);

}  // namespace reconad
