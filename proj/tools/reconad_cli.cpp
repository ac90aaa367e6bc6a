// Command-line front end: prepare-data, train, run, grid, report, plot.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "reconad/error.hpp"
#include "reconad/runner.hpp"

namespace fs = std::filesystem;
using namespace reconad;

namespace {

struct CommonArgs {
    std::string config;
    std::string species;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string grid_id;
    bool resume = false;
    int parallel = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "JSON experiment config")->check(CLI::ExistingFile);
    cmd->add_option("--species", a.species, "species scope, a species name or 'all'");
    cmd->add_option("--seed", a.seed, "seed for split, training and classifiers");
    cmd->add_option("--out", a.out, "output directory");
    cmd->add_option("--grid-id", a.grid_id, "name of the run below the output directory");
    cmd->add_flag("--quiet", a.quiet, "suppress progress output");
}

ExperimentConfig resolve(const CommonArgs& a) {
    ExperimentConfig c = load_config(a.config);
    if (!a.species.empty()) c.dataset.species_scope = a.species;
    if (a.seed) {
        c.split.seed = *a.seed;
        c.training.seed = *a.seed;
        c.classifier.options.seed = *a.seed;
    }
    if (!a.out.empty()) c.output.dir = a.out;
    if (!a.grid_id.empty()) c.output.grid_id = a.grid_id;
    if (a.parallel > 0) c.runner.parallel = a.parallel;
    c.validate();
    return c;
}

RunOptions run_options(const CommonArgs& a) {
    RunOptions o;
    o.resume = a.resume;
    o.log = a.quiet ? nullptr : &std::cerr;
    return o;
}

void print_report(const EvaluationReport& r) {
    std::cout << kReportHeader << '\n' << report_csv_row(r) << '\n';
}

void write_ranking(const GridResult& result, const fs::path& file) {
    std::ofstream out(file);
    out << "rank," << kReportHeader << '\n';
    int rank = 0;
    for (const auto* c : result.ranking()) out << ++rank << ',' << report_csv_row(*c->overall()) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Autoencoder reconstruction anomaly detection pipeline"};
    app.require_subcommand(1);

    CommonArgs prep_args, train_args, run_args, grid_args, report_args, plot_args;

    auto* prep = app.add_subcommand("prepare-data", "label and split the dataset, write the split manifest");
    add_common(prep, prep_args);
    std::string export_dir;
    prep->add_option("--export-coco", export_dir, "also write the loaded images as a COCO dataset here");

    auto* train_cmd = app.add_subcommand("train", "train one autoencoder per core x conv pair");
    add_common(train_cmd, train_args);
    train_cmd->add_flag("--resume", train_args.resume, "keep existing checkpoints");

    auto* run = app.add_subcommand("run", "run one combination end to end");
    add_common(run, run_args);
    run->add_flag("--resume", run_args.resume, "reuse an existing checkpoint and report");

    auto* grid = app.add_subcommand("grid", "run every combination of the configured ranges");
    add_common(grid, grid_args);
    grid->add_flag("--resume", grid_args.resume, "skip completed combinations, reuse checkpoints");
    grid->add_option("--parallel", grid_args.parallel, "number of models processed concurrently")
        ->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "rank a finished grid and export the tables");
    add_common(report, report_args);
    std::vector<std::string> styles;
    TableSlice slice;
    report->add_option("--style", styles, "per_species, fixed_model_ablation, fixed_extractor_ablation, "
                                          "fixed_classifier_ablation (default: all)");
    report->add_option("--model", slice.model, "fixed model id, e.g. ConvM2-VQVAE1");
    report->add_option("--extractor", slice.extractor, "fixed extractor");
    report->add_option("--classifier", slice.classifier, "fixed classifier");

    auto* plot = app.add_subcommand("plot", "render ROC, feature-space and reconstruction plots");
    add_common(plot, plot_args);
    std::string combination;
    std::vector<std::string> samples;
    plot->add_option("--combination", combination, "combination id (default: best ranked)");
    plot->add_option("--sample", samples, "sample ids for reconstruction panels");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*prep) {
            const auto config = resolve(prep_args);
            const fs::path grid_dir = config.grid_dir();
            const auto data = prepare_data(config);
            write_split_manifest(data.split, grid_dir / "split.json");
            if (!export_dir.empty()) write_coco_dataset(load_dataset(config.dataset), export_dir);
            std::cout << "split: " << data.split.train.size() << " train, " << data.split.validation.size()
                      << " validation, " << data.split.test.size() << " test -> " << (grid_dir / "split.json").string()
                      << '\n';
        } else if (*train_cmd) {
            const auto config = resolve(train_args);
            const int trained = train_models(config, run_options(train_args));
            std::cout << "trained " << trained << " model(s) under " << (config.grid_dir() / "models").string() << '\n';
        } else if (*run) {
            const auto config = resolve(run_args);
            print_report(run_experiment(config, run_options(run_args)));
        } else if (*grid) {
            const auto config = resolve(grid_args);
            const GridResult result = run_grid(config, run_options(grid_args));
            write_ranking(result, config.grid_dir() / "ranking.csv");
            std::size_t failed = 0;
            for (const auto& c : result.combinations) failed += c.status == CombinationResult::Status::Failed;
            std::cout << result.combinations.size() << " combinations, " << failed << " failed, " << result.trainings
                      << " model(s) trained\n";
            const auto ranking = result.ranking();
            for (std::size_t i = 0; i < std::min<std::size_t>(10, ranking.size()); ++i) {
                const auto& r = *ranking[i]->overall();
                std::cout << i + 1 << ". " << r.combination_id << "  F1 " << format_metric(r.metrics.f1) << "  AUC "
                          << format_metric(r.auc) << '\n';
            }
            if (failed == result.combinations.size()) return 1;
        } else if (*report) {
            const auto config = resolve(report_args);
            const GridResult result = load_grid_result(config.grid_dir());
            write_ranking(result, config.grid_dir() / "ranking.csv");
            if (styles.empty()) {
                styles = {"per_species", "fixed_model_ablation", "fixed_extractor_ablation", "fixed_classifier_ablation"};
            }
            for (const auto& s : styles) {
                for (const auto& t : export_tables(result, parse_table_style(s), config.grid_dir() / "tables", slice)) {
                    std::cout << t.file.string() << " (" << t.rows.size() << " rows)\n";
                }
            }
        } else if (*plot) {
            const auto config = resolve(plot_args);
            if (combination.empty()) {
                const GridResult result = load_grid_result(config.grid_dir());
                const auto ranking = result.ranking();
                if (ranking.empty()) throw DomainError("no completed combinations to plot");
                combination = ranking.front()->id;
            }
            const auto plots = render_combination_plots(config, combination, samples);
            std::cout << plots.roc.string() << '\n' << plots.feature_space.string() << '\n';
            for (const auto& p : plots.panels) std::cout << p.string() << '\n';
        }
    } catch (const StageError& e) {
        std::cerr << "error in stage " << e.stage() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
