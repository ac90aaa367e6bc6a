#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reconad/dataset.hpp"

namespace reconad {

/// Row-major feature matrix; every row has the same length.
using FeatureMatrix = std::vector<std::vector<double>>;

struct RobustScaler {
    std::vector<double> median;
    std::vector<double> iqr;  // 1 where the fit column had zero spread
};

/// Linear-interpolation quantile of an unsorted sample, q in [0,1].
double quantile(std::vector<double> values, double q);

RobustScaler fit_scaler(const FeatureMatrix& features);
FeatureMatrix apply_scaler(const RobustScaler& scaler, const FeatureMatrix& features);
nlohmann::json to_json(const RobustScaler& scaler);
RobustScaler scaler_from_json(const nlohmann::json& doc);

enum class ClassifierKind { RobustCovariance, OCSVM, IsolationForest, LOF };

inline constexpr ClassifierKind kAllClassifiers[] = {ClassifierKind::RobustCovariance, ClassifierKind::OCSVM,
                                                     ClassifierKind::IsolationForest, ClassifierKind::LOF};

std::string_view to_string(ClassifierKind kind);
/// Accepts the full names and the abbreviations RC, IF, SVM.
ClassifierKind parse_classifier_kind(std::string_view text);

struct ClassifierOptions {
    double contamination = 0.01;
    int lof_neighbors = 20;
    int forest_trees = 100;
    int forest_subsample = 256;
    std::uint64_t seed = 0;
};

/// A fitted one-class model. Scores grow with abnormality for every kind.
class OneClassModel {
public:
    virtual ~OneClassModel() = default;
    virtual ClassifierKind kind() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual double score(std::span<const double> row) const = 0;
    virtual nlohmann::json to_json() const = 0;
};

/// Minimum covariance determinant fit by concentration steps on a support
/// of n - ceil(contamination * n) rows; scores are Mahalanobis distances.
class RobustCovarianceModel final : public OneClassModel {
public:
    RobustCovarianceModel(std::vector<double> mean, std::vector<double> covariance, std::vector<std::size_t> support);
    ClassifierKind kind() const override { return ClassifierKind::RobustCovariance; }
    std::size_t dimension() const override { return mean_.size(); }
    double score(std::span<const double> row) const override;
    nlohmann::json to_json() const override;

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& covariance() const { return covariance_; }  // d x d row-major
    const std::vector<std::size_t>& support() const { return support_; }   // fit row indices, ascending

private:
    std::vector<double> mean_;
    std::vector<double> covariance_;
    std::vector<double> inverse_;
    std::vector<std::size_t> support_;
};

/// Local outlier factor in novelty mode: the fit rows are the reference set.
class LofModel final : public OneClassModel {
public:
    LofModel(FeatureMatrix reference, int k);
    ClassifierKind kind() const override { return ClassifierKind::LOF; }
    std::size_t dimension() const override { return reference_.empty() ? 0 : reference_.front().size(); }
    double score(std::span<const double> row) const override;
    nlohmann::json to_json() const override;

    int neighbors() const { return k_; }

private:
    FeatureMatrix reference_;
    int k_;
    std::vector<double> k_distance_;
    std::vector<double> lrd_;
};

class IsolationForestModel final : public OneClassModel {
public:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double split = 0;
        int left = -1, right = -1;
        int size = 0;      // training rows reaching a leaf
    };
    using Tree = std::vector<Node>;

    IsolationForestModel(std::vector<Tree> trees, std::size_t dimension, int subsample);
    ClassifierKind kind() const override { return ClassifierKind::IsolationForest; }
    std::size_t dimension() const override { return dimension_; }
    double score(std::span<const double> row) const override;
    nlohmann::json to_json() const override;

    const std::vector<Tree>& trees() const { return trees_; }
    /// Average unsuccessful-search path length in a binary search tree of n nodes.
    static double average_path_length(double n);

private:
    std::vector<Tree> trees_;
    std::size_t dimension_;
    int subsample_;
};

/// nu-one-class SVM with an RBF kernel, trained by SMO.
class OcsvmModel final : public OneClassModel {
public:
    OcsvmModel(FeatureMatrix support_vectors, std::vector<double> coefficients, double rho, double gamma);
    ClassifierKind kind() const override { return ClassifierKind::OCSVM; }
    std::size_t dimension() const override { return support_.empty() ? 0 : support_.front().size(); }
    double score(std::span<const double> row) const override;
    nlohmann::json to_json() const override;

    double rho() const { return rho_; }
    double gamma() const { return gamma_; }
    const std::vector<double>& coefficients() const { return alpha_; }

private:
    FeatureMatrix support_;
    std::vector<double> alpha_;
    double rho_;
    double gamma_;
};

/// Fit on OK features only (already scaled).
std::shared_ptr<const OneClassModel> fit_one_class(ClassifierKind kind, const FeatureMatrix& features,
                                                   const ClassifierOptions& options = {});
std::vector<double> anomaly_scores(const OneClassModel& model, const FeatureMatrix& features);

std::shared_ptr<const OneClassModel> model_from_json(const nlohmann::json& doc);
void save_model(const OneClassModel& model, const RobustScaler& scaler, const std::filesystem::path& file);
std::pair<std::shared_ptr<const OneClassModel>, RobustScaler> load_model(const std::filesystem::path& file);

enum class ThresholdSource { Validation, Test };
std::string_view to_string(ThresholdSource source);
ThresholdSource parse_threshold_source(std::string_view text);

struct DecisionThreshold {
    double value = 0;
    double fpr = 0;  // OK samples flagged NOK
    double fnr = 0;  // NOK samples passed as OK
    ThresholdSource source = ThresholdSource::Validation;
};

/// -inf, the midpoints between adjacent distinct scores, +inf.
std::vector<double> eer_candidates(std::span<const double> scores);
/// (FPR, FNR) when scores above `threshold` are called NOK.
std::pair<double, double> error_rates(std::span<const double> scores, std::span<const SampleLabel> labels,
                                      double threshold);
/// Candidate minimizing |FPR - FNR|; ties go to the lower FPR, then the lower threshold.
DecisionThreshold select_threshold_eer(std::span<const double> scores, std::span<const SampleLabel> labels,
                                       ThresholdSource source = ThresholdSource::Validation);
/// score > threshold -> NOK.
std::vector<SampleLabel> classify(std::span<const double> scores, double threshold);

}  // namespace reconad
