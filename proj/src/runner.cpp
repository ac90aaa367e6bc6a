#include "reconad/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <opencv2/imgproc.hpp>

#include "reconad/error.hpp"
#include "reconad/plots.hpp"

namespace reconad {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename F>
auto with_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

class Logger {
public:
    explicit Logger(std::ostream* out) : out_(out) {}
    void operator()(const std::string& line) const {
        if (!out_) return;
        std::lock_guard lock(mutex_);
        *out_ << line << std::endl;
    }

private:
    std::ostream* out_;
    mutable std::mutex mutex_;
};

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

cv::Mat match_channels(const cv::Mat& image, int channels) {
    if (image.channels() == channels) return image;
    cv::Mat out;
    cv::cvtColor(image, out, channels == 1 ? cv::COLOR_RGB2GRAY : cv::COLOR_GRAY2RGB);
    return out;
}

json threshold_json(const DecisionThreshold& t) {
    json value = std::isfinite(t.value) ? json(t.value) : json(t.value > 0 ? "inf" : "-inf");
    return {{"value", value}, {"fpr", t.fpr}, {"fnr", t.fnr}, {"source", std::string(to_string(t.source))}};
}

DecisionThreshold threshold_from_json(const json& doc) {
    DecisionThreshold t;
    const json& v = doc.at("value");
    t.value = v.is_string() ? std::stod(v.get<std::string>()) : v.get<double>();
    t.fpr = doc.at("fpr").get<double>();
    t.fnr = doc.at("fnr").get<double>();
    t.source = parse_threshold_source(doc.at("source").get<std::string>());
    return t;
}

void write_json(const fs::path& file, const json& doc) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw LoadError("cannot write " + file.string());
        out << doc.dump(2) << '\n';
    }
    fs::rename(tmp, file);
}

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot read " + file.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
}

Combination parse_combination(const std::string& id) {
    const auto a = id.find("__");
    const auto b = a == std::string::npos ? a : id.find("__", a + 2);
    const auto dash = id.find('-');
    if (b == std::string::npos || dash == std::string::npos || dash > a) {
        throw ParseError("malformed combination id '" + id + "'");
    }
    return {parse_core(id.substr(dash + 1, a - dash - 1)), parse_conv_pair(id.substr(0, dash)),
            parse_extractor(id.substr(a + 2, b - a - 2)), parse_classifier_kind(id.substr(b + 2))};
}

// Features of one sample set for one extractor.
struct FeatureSet {
    std::vector<std::string> ids;
    std::vector<SampleLabel> labels;
    std::vector<FeatureVector> rows;

    FeatureMatrix matrix() const {
        FeatureMatrix m;
        m.reserve(rows.size());
        for (const auto& r : rows) m.push_back(r.values);
        return m;
    }
};

struct TripletSet {
    std::vector<std::string> ids;
    std::vector<SampleLabel> labels;
    std::vector<ReconstructionTriplet> triplets;
};

TripletSet reconstruct_set(const TrainedAE& ae, const PreparedData& data,
                           const std::vector<std::pair<std::string, SampleLabel>>& samples) {
    TripletSet set;
    std::vector<cv::Mat> images;
    for (const auto& [id, label] : samples) {
        set.ids.push_back(id);
        set.labels.push_back(label);
        images.push_back(data.images.image(id));
    }
    set.triplets = ae.reconstruct(images);
    return set;
}

FeatureSet extract_set(Extractor kind, const TripletSet& set, const PatchDescriptor& descriptor,
                       const FeatureOptions& options) {
    FeatureSet out{set.ids, set.labels, {}};
    out.rows.reserve(set.triplets.size());
    for (std::size_t i = 0; i < set.triplets.size(); ++i) {
        out.rows.push_back(extract_features(kind, set.triplets[i], descriptor, set.ids[i], options));
    }
    return out;
}

void write_scores_csv(const fs::path& file, const std::vector<std::tuple<std::string, const FeatureSet*,
                                                                         const std::vector<double>*>>& parts,
                      const PreparedData& data) {
    std::ofstream out(file);
    out.precision(17);
    out << "split,sample_id,species,label,score\n";
    for (const auto& [split, set, scores] : parts) {
        for (std::size_t i = 0; i < set->ids.size(); ++i) {
            const auto sp = data.species.find(set->ids[i]);
            out << split << ',' << set->ids[i] << ',' << (sp == data.species.end() ? "" : sp->second) << ','
                << to_string(set->labels[i]) << ',' << (*scores)[i] << '\n';
        }
    }
}

struct ScoreRow {
    std::string split, id, species;
    SampleLabel label;
    double score;
};

std::vector<ScoreRow> read_scores_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DomainError("missing artifact " + file.string());
    std::string line;
    std::getline(in, line);
    std::vector<ScoreRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> c;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) c.push_back(cell);
        if (c.size() != 5) throw ParseError(file.string() + ": malformed row");
        rows.push_back({c[0], c[1], c[2], parse_sample_label(c[3]), std::stod(c[4])});
    }
    return rows;
}

std::pair<FeatureMatrix, std::vector<SampleLabel>> read_feature_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DomainError("missing artifact " + file.string());
    std::string line;
    std::getline(in, line);
    FeatureMatrix m;
    std::vector<SampleLabel> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        std::getline(ss, cell, ',');
        labels.push_back(parse_sample_label(cell));
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        m.push_back(std::move(row));
    }
    return {m, labels};
}

std::vector<fs::path> render_panels(const TrainedAE& ae, const PreparedData& data, const std::vector<std::string>& ids,
                                    const fs::path& plot_dir) {
    std::vector<fs::path> out;
    for (const auto& id : ids) {
        const cv::Mat image = data.images.image(id);
        const auto file = plot_dir / ("panel_" + id + ".png");
        render_reconstruction_panel(ae.reconstruct(image), ae.encode_latent(image), file);
        out.push_back(file);
    }
    return out;
}

std::vector<std::string> default_panel_samples(const DatasetSplit& split) {
    std::vector<std::string> ids;
    for (SampleLabel want : {SampleLabel::OK, SampleLabel::NOK}) {
        for (const auto& [id, label] : split.test) {
            if (label == want) {
                ids.push_back(id);
                break;
            }
        }
    }
    return ids;
}

template <typename F>
void parallel_for(std::size_t n, int workers, F&& f) {
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) f(i);
    };
    const int count = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (count == 1) {
        work();
        return;
    }
    std::vector<std::jthread> threads;
    for (int t = 0; t < count; ++t) threads.emplace_back(work);
}

// Shared state of one grid run.
struct GridContext {
    const ExperimentConfig& config;
    const RunOptions& options;
    const PreparedData& data;
    std::shared_ptr<const PatchDescriptor> descriptor;
    bool plots = false;
    Logger log;
    std::atomic<int> trainings{0};
    std::mutex index_mutex;
    fs::path grid;

    void append_index(const CombinationResult& r) {
        json line{{"id", r.id}, {"status", std::string(to_string(r.status))}, {"seconds", r.seconds}};
        if (r.overall()) line["f1"] = r.overall()->metrics.f1;
        if (!r.error.empty()) line["error"] = r.error;
        std::lock_guard lock(index_mutex);
        std::ofstream(grid / "index.jsonl", std::ios::app) << line.dump() << '\n';
    }
};

TrainedAE obtain_model(GridContext& ctx, const ModelSpec& spec) {
    const fs::path dir = model_dir(ctx.config, spec.id());
    if (ctx.options.resume && fs::exists(dir / "model.json") && fs::exists(dir / "weights.pt")) {
        ctx.log("[" + spec.id() + "] reusing checkpoint " + dir.string());
        return with_stage("checkpoint", [&] { return TrainedAE::load(dir); });
    }
    ctx.log("[" + spec.id() + "] training");
    TrainingConfig training = ctx.config.training;
    const std::string model_id = spec.id();
    training.on_epoch = [&ctx, model_id](const EpochLog& e) {
        std::ostringstream line;
        line << "[" << model_id << "] epoch " << e.epoch << " train " << e.train_loss << " val " << e.validation_loss;
        ctx.log(line.str());
    };
    TrainedAE ae = with_stage("train", [&] { return train(spec, ctx.data.split, ctx.data.images, training); });
    with_stage("checkpoint", [&] { ae.save(dir); });
    ++ctx.trainings;
    return ae;
}

void evaluate_cell(GridContext& ctx, CombinationResult& cell, const TrainedAE& ae, const std::string& digest,
                   const FeatureSet& train_f, const FeatureSet& val_f, const FeatureSet& test_f) {
    const auto& cfg = ctx.config;
    const fs::path dir = ctx.grid / cell.id;
    fs::create_directories(dir);

    const RobustScaler scaler = with_stage("scaler", [&] { return fit_scaler(train_f.matrix()); });
    const auto model = with_stage("classifier", [&] {
        return fit_one_class(cell.combination.classifier, apply_scaler(scaler, train_f.matrix()), cfg.classifier.options);
    });
    const FeatureMatrix val_scaled = apply_scaler(scaler, val_f.matrix());
    const FeatureMatrix test_scaled = apply_scaler(scaler, test_f.matrix());
    const auto train_scores = with_stage("score", [&] { return anomaly_scores(*model, apply_scaler(scaler, train_f.matrix())); });
    const auto val_scores = with_stage("score", [&] { return anomaly_scores(*model, val_scaled); });
    const auto test_scores = with_stage("score", [&] { return anomaly_scores(*model, test_scaled); });

    const DecisionThreshold threshold = with_stage("threshold", [&] {
        return cfg.evaluation.threshold_source == ThresholdSource::Validation
                   ? select_threshold_eer(val_scores, val_f.labels, ThresholdSource::Validation)
                   : select_threshold_eer(test_scores, test_f.labels, ThresholdSource::Test);
    });

    std::vector<EvaluationReport> reports = with_stage("report", [&] {
        std::vector<EvaluationReport> out;
        out.push_back(build_report(cell.id, ctx.data.split.species_scope, test_scores, test_f.labels, threshold,
                                   cfg.evaluation.positive_class));
        if (normalize_species(ctx.data.split.species_scope) == "all") {
            std::map<std::string, std::pair<std::vector<double>, std::vector<SampleLabel>>> by_species;
            for (std::size_t i = 0; i < test_f.ids.size(); ++i) {
                auto& [s, l] = by_species[ctx.data.species.at(test_f.ids[i])];
                s.push_back(test_scores[i]);
                l.push_back(test_f.labels[i]);
            }
            for (const auto& [species, sl] : by_species) {
                const auto& [s, l] = sl;
                const bool both = std::count(l.begin(), l.end(), SampleLabel::OK) > 0 &&
                                  std::count(l.begin(), l.end(), SampleLabel::NOK) > 0;
                if (both) out.push_back(build_report(cell.id, species, s, l, threshold, cfg.evaluation.positive_class));
            }
        }
        return out;
    });

    with_stage("artifacts", [&] {
        write_feature_csv(dir / "features.csv", test_f.rows, test_f.labels);
        write_feature_csv(dir / "features_train.csv", train_f.rows, train_f.labels);
        write_feature_csv(dir / "features_validation.csv", val_f.rows, val_f.labels);
        write_scores_csv(dir / "scores.csv",
                         {{"train", &train_f, &train_scores}, {"validation", &val_f, &val_scores},
                          {"test", &test_f, &test_scores}},
                         ctx.data);
        save_model(*model, scaler, dir / "classifier.json");
        write_json(dir / "threshold.json", threshold_json(threshold));
        write_json(dir / "checkpoint.json",
                   {{"model_id", cell.combination.model_id()},
                    {"model_dir", fs::relative(model_dir(cfg, cell.combination.model_id()), ctx.grid).string()},
                    {"weights_digest", digest}});
    });
    if (ctx.plots) {
        with_stage("plots", [&] {
            const fs::path plot_dir = dir / "plots";
            render_roc(roc_auc(test_scores, test_f.labels), threshold, plot_dir / "roc.png", cell.id);
            render_feature_space(test_scaled, test_f.labels, plot_dir / "feature_space.png", cell.id);
            render_panels(ae, ctx.data, default_panel_samples(ctx.data.split), plot_dir);
        });
    }
    // the report is written last: its presence marks the combination complete
    with_stage("artifacts", [&] { write_report_csv(dir / "report.csv", reports); });
    cell.reports = std::move(reports);
    cell.checkpoint_digest = digest;
    cell.status = CombinationResult::Status::Completed;
}

void fail(CombinationResult& cell, const std::exception& e) {
    cell.status = CombinationResult::Status::Failed;
    const auto* staged = dynamic_cast<const StageError*>(&e);
    cell.stage = staged ? staged->stage() : "unknown";
    cell.error = e.what();
}

void run_model_group(GridContext& ctx, std::vector<CombinationResult*> cells) {
    using Clock = std::chrono::steady_clock;
    std::vector<CombinationResult*> pending;
    for (auto* cell : cells) {
        const fs::path report = ctx.grid / cell->id / "report.csv";
        if (ctx.options.resume && fs::exists(report)) {
            try {
                cell->reports = read_report_csv(report);
                const json cp = read_json(ctx.grid / cell->id / "checkpoint.json");
                cell->checkpoint_digest = cp.value("weights_digest", std::string());
                cell->status = CombinationResult::Status::Resumed;
                ctx.append_index(*cell);
                continue;
            } catch (const std::exception&) {
                // unreadable artifacts: recompute
            }
        }
        pending.push_back(cell);
    }
    if (pending.empty()) return;

    const Combination& head = pending.front()->combination;
    const auto group_start = Clock::now();
    try {
        const ModelSpec spec = with_stage("model", [&] {
            return build_model(head.core, head.pair, ctx.data.input, ctx.config.model.latent);
        });
        const TrainedAE ae = obtain_model(ctx, spec);
        const std::string digest = file_digest(model_dir(ctx.config, spec.id()) / "weights.pt");

        std::vector<std::pair<std::string, SampleLabel>> train_samples;
        for (const auto& id : ctx.data.split.train) train_samples.emplace_back(id, SampleLabel::OK);
        const auto [train_t, val_t, test_t] = with_stage("reconstruct", [&] {
            return std::tuple{reconstruct_set(ae, ctx.data, train_samples), reconstruct_set(ae, ctx.data, ctx.data.split.validation),
                              reconstruct_set(ae, ctx.data, ctx.data.split.test)};
        });
        const double shared_seconds = std::chrono::duration<double>(Clock::now() - group_start).count();

        std::vector<Extractor> extractors;
        for (auto* cell : pending) {
            if (std::find(extractors.begin(), extractors.end(), cell->combination.extractor) == extractors.end()) {
                extractors.push_back(cell->combination.extractor);
            }
        }
        const FeatureOptions feature_options{ctx.config.features.hardnet1_on_original};
        for (Extractor kind : extractors) {
            const auto feature_start = Clock::now();
            std::vector<CombinationResult*> users;
            for (auto* cell : pending) {
                if (cell->combination.extractor == kind) users.push_back(cell);
            }
            try {
                const auto [train_f, val_f, test_f] = with_stage("features", [&] {
                    return std::tuple{extract_set(kind, train_t, *ctx.descriptor, feature_options),
                                      extract_set(kind, val_t, *ctx.descriptor, feature_options),
                                      extract_set(kind, test_t, *ctx.descriptor, feature_options)};
                });
                const double feature_seconds = std::chrono::duration<double>(Clock::now() - feature_start).count();
                for (auto* cell : users) {
                    const auto cell_start = Clock::now();
                    try {
                        evaluate_cell(ctx, *cell, ae, digest, train_f, val_f, test_f);
                    } catch (const std::exception& e) {
                        fail(*cell, e);
                    }
                    // shared work is charged evenly to the cells that used it
                    cell->seconds = std::chrono::duration<double>(Clock::now() - cell_start).count() +
                                    feature_seconds / static_cast<double>(users.size()) +
                                    shared_seconds / static_cast<double>(pending.size());
                    ctx.log("[" + cell->id + "] " + std::string(to_string(cell->status)) +
                            (cell->overall() ? " F1 " + format_metric(cell->overall()->metrics.f1) : " " + cell->error));
                    ctx.append_index(*cell);
                }
            } catch (const std::exception& e) {
                for (auto* cell : users) {
                    fail(*cell, e);
                    ctx.log("[" + cell->id + "] failed: " + cell->error);
                    ctx.append_index(*cell);
                }
            }
        }
    } catch (const std::exception& e) {
        for (auto* cell : pending) {
            if (cell->status != CombinationResult::Status::Failed || !cell->error.empty()) continue;
            fail(*cell, e);
            ctx.log("[" + cell->id + "] failed: " + cell->error);
            ctx.append_index(*cell);
        }
    }
}

bool uses_descriptor(const ExperimentConfig& config) {
    return std::any_of(config.features.extractors.begin(), config.features.extractors.end(), [](Extractor e) {
        return e != Extractor::ErrMetrics && e != Extractor::SIFT;
    });
}

void write_table(const ExportedTable& table, const std::string& dimension) {
    if (table.file.has_parent_path()) fs::create_directories(table.file.parent_path());
    std::ofstream out(table.file);
    out << dimension << ",AUC,F1,Prec,Rec,best\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        out << table.row_labels[i] << ',' << format_metric(r.auc) << ',' << format_metric(r.metrics.f1) << ','
            << format_metric(r.metrics.precision) << ',' << format_metric(r.metrics.recall) << ','
            << (i == table.best_row ? "*" : "") << '\n';
    }
}

std::size_t best_index(const std::vector<EvaluationReport>& rows) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].metrics.f1 > rows[best].metrics.f1) best = i;
    }
    return best;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<AnnotatedImage> load_dataset(const DatasetConfig& config) {
    const std::string format = upper(config.format);
    if (format == "SYNTHETIC") return make_synthetic_dataset(config.synthetic);
    return parse_annotations(config.path, parse_annotation_format(format));
}

PreparedData prepare_data(const ExperimentConfig& config, const fs::path& manifest) {
    const auto images = load_dataset(config.dataset);
    const auto samples = label_samples(images);
    PreparedData data;
    if (!manifest.empty() && fs::exists(manifest)) {
        data.split = read_split_manifest(manifest);
        if (normalize_species(data.split.species_scope) != normalize_species(config.dataset.species_scope)) {
            throw SchemaError("split manifest " + manifest.string() + " was built for species scope '" +
                              data.split.species_scope + "'");
        }
    } else {
        SplitOptions options;
        options.species_scope = config.dataset.species_scope;
        options.train_frac = config.split.train_frac;
        options.val_count = config.split.val_count;
        options.test_count = config.split.test_count;
        options.seed = config.split.seed;
        data.split = build_split(samples, options);
    }

    std::unordered_map<std::string, const AnnotatedImage*> by_id;
    for (const auto& image : images) by_id[image.id] = &image;
    std::unordered_map<std::string, SampleLabel> labels;
    for (const auto& s : samples) labels[s.id] = s.label;

    std::optional<cv::Size> size;
    auto add = [&](const std::string& id) {
        if (data.images.contains(id)) return;
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw SchemaError("split references unknown sample '" + id + "'");
        cv::Mat pixels = match_channels(canonical_resize(*it->second, data.split.species_scope), config.model.channels);
        if (size && pixels.size() != *size) throw ShapeError("samples resize to different shapes under this scope");
        size = pixels.size();
        data.images.add(id, pixels, labels.at(id));
        data.species[id] = it->second->species;
    };
    for (const auto& id : data.split.train) add(id);
    for (const auto& [id, label] : data.split.validation) add(id);
    for (const auto& [id, label] : data.split.test) add(id);
    if (!size) throw CapacityError("split is empty");
    data.input = InputShape{size->height, size->width, config.model.channels};
    return data;
}

std::string combination_id(Core core, ConvPair pair, Extractor extractor, ClassifierKind classifier) {
    return std::string(to_string(pair)) + "-" + std::string(to_string(core)) + "__" + std::string(to_string(extractor)) +
           "__" + std::string(to_string(classifier));
}

std::string Combination::model_id() const { return std::string(to_string(pair)) + "-" + std::string(to_string(core)); }

std::vector<Combination> enumerate_combinations(const ExperimentConfig& config) {
    std::vector<Combination> out;
    for (Core core : config.model.cores) {
        for (ConvPair pair : config.model.conv_pairs) {
            for (Extractor e : config.features.extractors) {
                for (ClassifierKind k : config.classifier.kinds) out.push_back({core, pair, e, k});
            }
        }
    }
    return out;
}

std::string_view to_string(CombinationResult::Status status) {
    switch (status) {
        case CombinationResult::Status::Completed: return "completed";
        case CombinationResult::Status::Resumed: return "resumed";
        case CombinationResult::Status::Failed: return "failed";
    }
    return "?";
}

std::vector<const CombinationResult*> GridResult::ranking() const {
    std::vector<const CombinationResult*> out;
    for (const auto& c : combinations) {
        if (c.status != CombinationResult::Status::Failed && c.overall()) out.push_back(&c);
    }
    std::sort(out.begin(), out.end(), [](const CombinationResult* a, const CombinationResult* b) {
        const double fa = a->overall()->metrics.f1, fb = b->overall()->metrics.f1;
        if (fa != fb) return fa > fb;
        return a->id < b->id;
    });
    return out;
}

const CombinationResult* GridResult::find(const std::string& id) const {
    for (const auto& c : combinations) {
        if (c.id == id) return &c;
    }
    return nullptr;
}

fs::path model_dir(const ExperimentConfig& config, const std::string& model_id) {
    return config.grid_dir() / "models" / model_id;
}

GridResult run_grid(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const fs::path grid = config.grid_dir();
    fs::create_directories(grid);
    write_json(grid / "config.json", to_json(config));

    const PreparedData data =
        with_stage("data", [&] { return prepare_data(config, options.resume ? grid / "split.json" : fs::path()); });
    with_stage("data", [&] { write_split_manifest(data.split, grid / "split.json"); });

    GridContext ctx{config, options, data, nullptr, options.plots.value_or(config.output.plots), Logger(options.log), {}, {}, grid};
    ctx.descriptor = uses_descriptor(config) ? with_stage("descriptor", [&] {
        return make_descriptor(config.features.descriptor_weights);
    })
                                             : std::make_shared<FallbackDescriptor>();
    if (!options.resume) fs::remove(grid / "index.jsonl");

    GridResult result;
    result.grid_id = config.output.grid_id;
    for (const auto& c : enumerate_combinations(config)) {
        CombinationResult cell;
        cell.combination = c;
        cell.id = c.id();
        result.combinations.push_back(std::move(cell));
    }
    std::vector<std::vector<CombinationResult*>> groups;
    std::map<std::string, std::size_t> group_of;
    for (auto& cell : result.combinations) {
        const auto [it, inserted] = group_of.try_emplace(cell.combination.model_id(), groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(&cell);
    }
    ctx.log("grid " + config.output.grid_id + ": " + std::to_string(result.combinations.size()) + " combinations, " +
            std::to_string(groups.size()) + " models");

    parallel_for(groups.size(), config.runner.parallel, [&](std::size_t g) { run_model_group(ctx, groups[g]); });

    result.trainings = ctx.trainings.load();
    write_grid_index(result, grid / "index.json");
    return result;
}

EvaluationReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    if (config.model.cores.size() != 1 || config.model.conv_pairs.size() != 1 || config.features.extractors.size() != 1 ||
        config.classifier.kinds.size() != 1) {
        throw SchemaError("a single experiment needs exactly one core, conv pair, extractor and classifier");
    }
    RunOptions opts = options;
    if (!opts.plots) opts.plots = true;
    const GridResult result = run_grid(config, opts);
    const CombinationResult& cell = result.combinations.front();
    if (cell.status == CombinationResult::Status::Failed) {
        const std::string prefix = cell.stage + ": ";
        const std::string cause = cell.error.rfind(prefix, 0) == 0 ? cell.error.substr(prefix.size()) : cell.error;
        throw StageError(cell.stage, cause);
    }
    return *cell.overall();
}

int train_models(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const fs::path grid = config.grid_dir();
    fs::create_directories(grid);
    const PreparedData data =
        with_stage("data", [&] { return prepare_data(config, options.resume ? grid / "split.json" : fs::path()); });
    with_stage("data", [&] { write_split_manifest(data.split, grid / "split.json"); });
    GridContext ctx{config, options, data, nullptr, false, Logger(options.log), {}, {}, grid};
    for (Core core : config.model.cores) {
        for (ConvPair pair : config.model.conv_pairs) {
            const ModelSpec spec =
                with_stage("model", [&] { return build_model(core, pair, data.input, config.model.latent); });
            obtain_model(ctx, spec);
        }
    }
    return ctx.trainings.load();
}

void write_grid_index(const GridResult& result, const fs::path& file) {
    json combos = json::array();
    for (const auto& c : result.combinations) {
        json entry{{"id", c.id},
                   {"model", c.combination.model_id()},
                   {"extractor", std::string(to_string(c.combination.extractor))},
                   {"classifier", std::string(to_string(c.combination.classifier))},
                   {"status", std::string(to_string(c.status))},
                   {"seconds", c.seconds},
                   {"checkpoint_digest", c.checkpoint_digest}};
        if (const auto* r = c.overall()) {
            entry["auc"] = r->auc;
            entry["f1"] = r->metrics.f1;
            entry["precision"] = r->metrics.precision;
            entry["recall"] = r->metrics.recall;
            entry["report"] = (fs::path(c.id) / "report.csv").string();
        }
        if (c.status == CombinationResult::Status::Failed) {
            entry["stage"] = c.stage;
            entry["error"] = c.error;
        }
        combos.push_back(std::move(entry));
    }
    json ranking = json::array();
    for (const auto* c : result.ranking()) ranking.push_back(c->id);
    write_json(file, {{"grid_id", result.grid_id},
                      {"trainings", result.trainings},
                      {"combinations", combos},
                      {"ranking", ranking}});
}

GridResult load_grid_result(const fs::path& grid_dir) {
    const json doc = read_json(grid_dir / "index.json");
    GridResult result;
    try {
        result.grid_id = doc.at("grid_id").get<std::string>();
        result.trainings = doc.value("trainings", 0);
        for (const auto& e : doc.at("combinations")) {
            CombinationResult c;
            c.id = e.at("id").get<std::string>();
            c.combination = parse_combination(c.id);
            const std::string status = e.at("status").get<std::string>();
            c.status = status == "completed" ? CombinationResult::Status::Completed
                       : status == "resumed" ? CombinationResult::Status::Resumed
                                             : CombinationResult::Status::Failed;
            c.seconds = e.value("seconds", 0.0);
            c.checkpoint_digest = e.value("checkpoint_digest", std::string());
            c.stage = e.value("stage", std::string());
            c.error = e.value("error", std::string());
            if (c.status != CombinationResult::Status::Failed) c.reports = read_report_csv(grid_dir / c.id / "report.csv");
            result.combinations.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw SchemaError("grid index: " + std::string(e.what()));
    }
    return result;
}

CombinationPlots render_combination_plots(const ExperimentConfig& config, const std::string& id,
                                          const std::vector<std::string>& sample_ids) {
    const fs::path grid = config.grid_dir();
    const fs::path dir = grid / id;
    if (!fs::exists(dir / "report.csv")) throw DomainError("combination '" + id + "' has no report in " + grid.string());
    const fs::path plot_dir = dir / "plots";
    CombinationPlots out;

    std::vector<double> scores;
    std::vector<SampleLabel> labels;
    for (const auto& row : read_scores_csv(dir / "scores.csv")) {
        if (row.split == "test") {
            scores.push_back(row.score);
            labels.push_back(row.label);
        }
    }
    const DecisionThreshold threshold = threshold_from_json(read_json(dir / "threshold.json"));
    out.roc = plot_dir / "roc.png";
    render_roc(roc_auc(scores, labels), threshold, out.roc, id);

    const auto [features, feature_labels] = read_feature_csv(dir / "features.csv");
    if (!fs::exists(dir / "classifier.json")) throw DomainError("missing artifact " + (dir / "classifier.json").string());
    const auto scaler = load_model(dir / "classifier.json").second;
    out.feature_space = plot_dir / "feature_space.png";
    render_feature_space(apply_scaler(scaler, features), feature_labels, out.feature_space, id);

    const json cp = read_json(dir / "checkpoint.json");
    const fs::path checkpoint = grid / cp.at("model_dir").get<std::string>();
    if (!fs::exists(checkpoint / "model.json")) throw DomainError("missing checkpoint " + checkpoint.string());
    const TrainedAE ae = TrainedAE::load(checkpoint);
    const PreparedData data = prepare_data(config, grid / "split.json");
    out.panels = render_panels(ae, data, sample_ids.empty() ? default_panel_samples(data.split) : sample_ids, plot_dir);
    return out;
}

TableStyle parse_table_style(std::string_view text) {
    if (text == "per_species") return TableStyle::PerSpecies;
    if (text == "fixed_model_ablation") return TableStyle::FixedModelAblation;
    if (text == "fixed_extractor_ablation") return TableStyle::FixedExtractorAblation;
    if (text == "fixed_classifier_ablation") return TableStyle::FixedClassifierAblation;
    throw DomainError("unknown table style '" + std::string(text) + "'");
}

std::string_view to_string(TableStyle style) {
    switch (style) {
        case TableStyle::PerSpecies: return "per_species";
        case TableStyle::FixedModelAblation: return "fixed_model_ablation";
        case TableStyle::FixedExtractorAblation: return "fixed_extractor_ablation";
        case TableStyle::FixedClassifierAblation: return "fixed_classifier_ablation";
    }
    return "?";
}

std::vector<ExportedTable> export_tables(const GridResult& result, TableStyle style, const fs::path& dir,
                                         const TableSlice& slice) {
    const auto ranking = result.ranking();
    if (ranking.empty()) throw DomainError("no completed combinations to tabulate");
    const Combination& best = ranking.front()->combination;
    const std::string model = slice.model.value_or(best.model_id());
    const std::string extractor = slice.extractor.value_or(std::string(to_string(best.extractor)));
    const std::string classifier = slice.classifier.value_or(std::string(to_string(best.classifier)));

    // distinct components in enumeration order
    std::vector<std::string> models, extractors, classifiers;
    auto remember = [](std::vector<std::string>& v, const std::string& s) {
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
    };
    for (const auto& c : result.combinations) {
        remember(models, c.combination.model_id());
        remember(extractors, std::string(to_string(c.combination.extractor)));
        remember(classifiers, std::string(to_string(c.combination.classifier)));
    }

    auto collect = [&](const std::vector<std::string>& ids, std::vector<std::string> labels, const fs::path& file) {
        ExportedTable t;
        t.file = file;
        std::vector<std::string> missing;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto* c = result.find(ids[i]);
            if (!c || !c->overall()) {
                missing.push_back(ids[i]);
                continue;
            }
            t.rows.push_back(*c->overall());
            t.row_labels.push_back(labels[i]);
        }
        if (!missing.empty()) {
            std::string list;
            for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
            throw DomainError("table slice is missing results for: " + list);
        }
        t.best_row = best_index(t.rows);
        return t;
    };

    std::vector<ExportedTable> tables;
    switch (style) {
        case TableStyle::PerSpecies: {
            const std::string id = model + "__" + extractor + "__" + classifier;
            const auto* c = result.find(id);
            if (!c || !c->overall()) throw DomainError("table slice is missing results for: " + id);
            ExportedTable t;
            t.file = dir / "per_species.csv";
            for (const auto& r : c->reports) {
                t.rows.push_back(r);
                t.row_labels.push_back(r.species);
            }
            t.best_row = best_index(t.rows);
            write_table(t, "species");
            tables.push_back(std::move(t));
            break;
        }
        case TableStyle::FixedExtractorAblation: {
            const std::string suffix = "__" + extractor + "__" + classifier;
            std::vector<std::string> ids;
            for (const auto& m : models) ids.push_back(m + suffix);
            tables.push_back(collect(ids, models, dir / "fixed_extractor_ablation_models.csv"));
            write_table(tables.back(), "model");

            const auto dash = model.find('-');
            const std::string pair = model.substr(0, dash), core = model.substr(dash + 1);
            std::vector<std::string> core_ids, core_labels, pair_ids, pair_labels;
            for (const auto& m : models) {
                const auto d = m.find('-');
                if (m.substr(0, d) == pair) {
                    core_ids.push_back(m + suffix);
                    core_labels.push_back(m.substr(d + 1));
                }
                if (m.substr(d + 1) == core) {
                    pair_ids.push_back(m + suffix);
                    pair_labels.push_back(m.substr(0, d));
                }
            }
            tables.push_back(collect(core_ids, core_labels, dir / "fixed_extractor_ablation_cores.csv"));
            write_table(tables.back(), "core");
            tables.push_back(collect(pair_ids, pair_labels, dir / "fixed_extractor_ablation_convs.csv"));
            write_table(tables.back(), "conv");
            break;
        }
        case TableStyle::FixedModelAblation: {
            std::vector<std::string> ids;
            for (const auto& e : extractors) ids.push_back(model + "__" + e + "__" + classifier);
            tables.push_back(collect(ids, extractors, dir / "fixed_model_ablation.csv"));
            write_table(tables.back(), "extractor");
            break;
        }
        case TableStyle::FixedClassifierAblation: {
            std::vector<std::string> ids;
            for (const auto& k : classifiers) ids.push_back(model + "__" + extractor + "__" + k);
            tables.push_back(collect(ids, classifiers, dir / "fixed_classifier_ablation.csv"));
            write_table(tables.back(), "classifier");
            break;
        }
    }
    return tables;
}

}  // namespace reconad
