#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "reconad/autoencoder.hpp"
#include "reconad/config.hpp"
#include "reconad/evaluation.hpp"

namespace reconad {

std::vector<AnnotatedImage> load_dataset(const DatasetConfig& config);

/// Split plus canonical-size images for every sample the split references.
struct PreparedData {
    DatasetSplit split;
    InMemoryImages images;
    std::unordered_map<std::string, std::string> species;  // sample id -> species
    InputShape input;
};

/// Loads the dataset, labels and splits it (or reuses `manifest` when it
/// exists), and resizes the referenced images.
PreparedData prepare_data(const ExperimentConfig& config, const std::filesystem::path& manifest = {});

std::string combination_id(Core core, ConvPair pair, Extractor extractor, ClassifierKind classifier);

struct Combination {
    Core core;
    ConvPair pair;
    Extractor extractor;
    ClassifierKind classifier;
    std::string model_id() const;
    std::string id() const { return combination_id(core, pair, extractor, classifier); }
};

/// core x conv pair x extractor x classifier, in that nesting order.
std::vector<Combination> enumerate_combinations(const ExperimentConfig& config);

struct RunOptions {
    bool resume = false;                 // reuse checkpoints and completed reports
    std::optional<bool> plots;           // defaults to config.output.plots
    std::ostream* log = nullptr;         // progress messages
};

struct CombinationResult {
    enum class Status { Completed, Resumed, Failed };

    Combination combination;
    std::string id;
    Status status = Status::Failed;
    std::string stage;  // failing stage
    std::string error;
    std::vector<EvaluationReport> reports;  // scope-wide first, then per species
    std::string checkpoint_digest;
    double seconds = 0;

    const EvaluationReport* overall() const { return reports.empty() ? nullptr : &reports.front(); }
};

std::string_view to_string(CombinationResult::Status status);

struct GridResult {
    std::string grid_id;
    std::vector<CombinationResult> combinations;  // enumeration order
    int trainings = 0;                            // models trained (not loaded) in this run

    /// Successful combinations by scope-wide F1 descending, ties by id.
    std::vector<const CombinationResult*> ranking() const;
    const CombinationResult* find(const std::string& id) const;
};

GridResult run_grid(const ExperimentConfig& config, const RunOptions& options = {});

/// The config must name exactly one core, pair, extractor and classifier.
/// Failures surface as StageError naming the stage.
EvaluationReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Trains (or with resume, keeps) one model per core x pair; returns the
/// number trained.
int train_models(const ExperimentConfig& config, const RunOptions& options = {});

/// Directory holding the shared checkpoint of a model.
std::filesystem::path model_dir(const ExperimentConfig& config, const std::string& model_id);

void write_grid_index(const GridResult& result, const std::filesystem::path& file);
/// Rebuilds a GridResult from index.json and the per-combination reports.
GridResult load_grid_result(const std::filesystem::path& grid_dir);

struct CombinationPlots {
    std::filesystem::path roc;
    std::filesystem::path feature_space;
    std::vector<std::filesystem::path> panels;
};

/// Re-renders the plots of a finished combination from its artifacts. Panels
/// are drawn for `sample_ids` (default: the first OK and NOK test samples).
CombinationPlots render_combination_plots(const ExperimentConfig& config, const std::string& combination_id,
                                          const std::vector<std::string>& sample_ids = {});

enum class TableStyle { PerSpecies, FixedModelAblation, FixedExtractorAblation, FixedClassifierAblation };
TableStyle parse_table_style(std::string_view text);
std::string_view to_string(TableStyle style);

/// Components held fixed by a table; unset parts come from the best combination.
struct TableSlice {
    std::optional<std::string> model;
    std::optional<std::string> extractor;
    std::optional<std::string> classifier;
};

struct ExportedTable {
    std::filesystem::path file;
    std::vector<std::string> row_labels;
    std::vector<EvaluationReport> rows;
    std::size_t best_row = 0;  // max F1
};

/// per_species: species rows of one combination.
/// fixed_extractor_ablation: extractor and classifier fixed, every model (plus
///   core-only and conv-only slices).
/// fixed_model_ablation: model and classifier fixed, every extractor.
/// fixed_classifier_ablation: model and extractor fixed, every classifier.
std::vector<ExportedTable> export_tables(const GridResult& result, TableStyle style, const std::filesystem::path& dir,
                                         const TableSlice& slice = {});

}  // namespace reconad
