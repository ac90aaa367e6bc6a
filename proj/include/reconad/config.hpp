#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reconad/autoencoder.hpp"
#include "reconad/dataset.hpp"
#include "reconad/features.hpp"
#include "reconad/oneclass.hpp"
#include "reconad/synthetic.hpp"

namespace reconad {

struct DatasetConfig {
    std::string format = "synthetic";  // COCO | YOLO | synthetic
    std::filesystem::path path;        // annotation file (COCO) or dataset directory (YOLO)
    std::string species_scope = "all";
    SyntheticOptions synthetic;
};

struct SplitConfig {
    double train_frac = 0.7;
    std::optional<int> val_count;
    std::optional<int> test_count;
    std::uint64_t seed = 0;
};

struct ModelConfig {
    std::vector<Core> cores{Core::BAE1};
    std::vector<ConvPair> conv_pairs{ConvPair::ConvM3};
    int channels = 1;
    LatentConfig latent;
};

struct FeaturesConfig {
    std::vector<Extractor> extractors{Extractor::ErrMetrics};
    std::filesystem::path descriptor_weights;  // TorchScript HardNet; empty -> fallback descriptor
    bool hardnet1_on_original = false;
};

struct ClassifierConfig {
    std::vector<ClassifierKind> kinds{ClassifierKind::RobustCovariance};
    ClassifierOptions options;
};

struct EvaluationConfig {
    ThresholdSource threshold_source = ThresholdSource::Validation;
    SampleLabel positive_class = SampleLabel::OK;
};

struct OutputConfig {
    std::filesystem::path dir = "out";
    std::string grid_id = "default";
    bool plots = false;  // grid runs render per-combination plots only when set
};

struct RunnerConfig {
    int parallel = 1;
    bool verbose = false;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    SplitConfig split;
    ModelConfig model;
    TrainingConfig training;
    FeaturesConfig features;
    ClassifierConfig classifier;
    EvaluationConfig evaluation;
    OutputConfig output;
    RunnerConfig runner;

    /// Throws SchemaError / DomainError describing the first problem found.
    void validate() const;
    std::filesystem::path grid_dir() const { return output.dir / output.grid_id; }
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown sections or keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);

using Environment = std::map<std::string, std::string>;

/// Current process environment restricted to PIPELINE_* variables.
Environment pipeline_environment();

/// PIPELINE_<SECTION>_<KEY>=value sets doc[section][key]. The value is parsed
/// as JSON when possible and taken as a string otherwise.
void apply_environment_overrides(nlohmann::json& doc, const Environment& env);

/// Reads a JSON config file (empty path -> defaults) and applies overrides.
ExperimentConfig load_config(const std::filesystem::path& path, const Environment& env = pipeline_environment());

}  // namespace reconad
