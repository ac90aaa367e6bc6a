#include "reconad/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "reconad/error.hpp"

extern char** environ;

namespace reconad {

using json = nlohmann::json;

namespace {

void check_keys(const json& section, const std::string& name, std::initializer_list<const char*> allowed) {
    if (!section.is_object()) throw SchemaError("config section '" + name + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : section.items()) {
        if (!ok.contains(key)) throw SchemaError("unknown config key '" + name + "." + key + "'");
    }
}

template <typename T, typename Parse>
std::vector<T> parse_list(const json& doc, const char* key, std::vector<T> fallback, Parse parse) {
    if (!doc.contains(key)) return fallback;
    const json& v = doc.at(key);
    std::vector<T> out;
    if (v.is_string()) {
        // "all" or a comma-separated list
        const std::string s = v.get<std::string>();
        if (s == "all") return {};
        std::size_t start = 0;
        while (start <= s.size()) {
            const std::size_t end = std::min(s.find(',', start), s.size());
            if (end > start) out.push_back(parse(s.substr(start, end - start)));
            start = end + 1;
        }
        return out;
    }
    if (!v.is_array()) throw SchemaError(std::string("config key '") + key + "' must be a list or a string");
    if (v.empty()) throw SchemaError(std::string("config key '") + key + "' must be nonempty");
    for (const auto& e : v) out.push_back(parse(e.get<std::string>()));
    return out;
}

template <typename T, std::size_t N, typename Parse>
std::vector<T> parse_range(const json& doc, const char* key, std::vector<T> fallback, const T (&all)[N], Parse parse) {
    auto out = parse_list<T>(doc, key, std::move(fallback), parse);
    if (out.empty()) out.assign(std::begin(all), std::end(all));
    return out;
}

template <typename T>
json names(const std::vector<T>& values) {
    json out = json::array();
    for (const auto& v : values) out.push_back(std::string(to_string(v)));
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

void ExperimentConfig::validate() const {
    const std::string fmt = lower(dataset.format);
    if (fmt != "coco" && fmt != "yolo" && fmt != "synthetic") {
        throw SchemaError("dataset.format must be COCO, YOLO or synthetic, got '" + dataset.format + "'");
    }
    if (fmt != "synthetic") {
        if (dataset.path.empty()) throw SchemaError("dataset.path is required for " + dataset.format + " datasets");
        if (!std::filesystem::exists(dataset.path)) {
            throw SchemaError("dataset.path '" + dataset.path.string() + "' does not exist");
        }
    }
    if (!(split.train_frac > 0 && split.train_frac <= 1)) throw DomainError("split.train_frac must lie in (0, 1]");
    if (model.cores.empty() || model.conv_pairs.empty()) throw SchemaError("model ranges must be nonempty");
    if (model.channels != 1 && model.channels != 3) throw SchemaError("model.channels must be 1 or 3");
    if (features.extractors.empty()) throw SchemaError("features.extractors must be nonempty");
    if (classifier.kinds.empty()) throw SchemaError("classifier.kinds must be nonempty");
    if (!(classifier.options.contamination > 0 && classifier.options.contamination <= 0.5)) {
        throw DomainError("classifier.contamination must lie in (0, 0.5]");
    }
    if (classifier.options.lof_neighbors < 1) throw DomainError("classifier.lof_neighbors must be positive");
    if (runner.parallel < 1) throw DomainError("runner.parallel must be >= 1");
    if (output.grid_id.empty() || output.grid_id.find('/') != std::string::npos) {
        throw SchemaError("output.grid_id must be a nonempty name without '/'");
    }
    training.validate();
}

json to_json(const ExperimentConfig& c) {
    const auto& s = c.dataset.synthetic;
    json split = {{"train_frac", c.split.train_frac}, {"seed", c.split.seed}};
    if (c.split.val_count) split["val_count"] = *c.split.val_count;
    if (c.split.test_count) split["test_count"] = *c.split.test_count;
    return {
        {"dataset",
         {{"format", c.dataset.format},
          {"path", c.dataset.path.string()},
          {"species_scope", c.dataset.species_scope},
          {"synthetic",
           {{"ok_count", s.ok_count},
            {"nok_count", s.nok_count},
            {"size", s.size},
            {"blob_min", s.blob_min},
            {"blob_max", s.blob_max},
            {"species", s.species},
            {"seed", s.seed}}}}},
        {"split", split},
        {"model",
         {{"cores", names(c.model.cores)},
          {"conv_pairs", names(c.model.conv_pairs)},
          {"channels", c.model.channels},
          {"latent", to_json(c.model.latent)}}},
        {"training", to_json(c.training)},
        {"features",
         {{"extractors", names(c.features.extractors)},
          {"descriptor_weights", c.features.descriptor_weights.string()},
          {"hardnet1_on_original", c.features.hardnet1_on_original}}},
        {"classifier",
         {{"kinds", names(c.classifier.kinds)},
          {"contamination", c.classifier.options.contamination},
          {"lof_neighbors", c.classifier.options.lof_neighbors},
          {"forest_trees", c.classifier.options.forest_trees},
          {"forest_subsample", c.classifier.options.forest_subsample},
          {"seed", c.classifier.options.seed}}},
        {"evaluation",
         {{"threshold_source", std::string(to_string(c.evaluation.threshold_source))},
          {"positive_class", std::string(to_string(c.evaluation.positive_class))}}},
        {"output", {{"dir", c.output.dir.string()}, {"grid_id", c.output.grid_id}, {"plots", c.output.plots}}},
        {"runner", {{"parallel", c.runner.parallel}, {"verbose", c.runner.verbose}}},
    };
}

ExperimentConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw SchemaError("config root must be an object");
    check_keys(doc, "<root>",
               {"dataset", "split", "model", "training", "features", "classifier", "evaluation", "output", "runner"});
    ExperimentConfig c;
    const json empty = json::object();
    auto section = [&](const char* name) -> const json& { return doc.contains(name) ? doc.at(name) : empty; };
    try {
        const json& d = section("dataset");
        check_keys(d, "dataset", {"format", "path", "species_scope", "synthetic"});
        c.dataset.format = d.value("format", c.dataset.format);
        c.dataset.path = d.value("path", std::string());
        c.dataset.species_scope = d.value("species_scope", c.dataset.species_scope);
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            check_keys(s, "dataset.synthetic", {"ok_count", "nok_count", "size", "blob_min", "blob_max", "species", "seed"});
            auto& o = c.dataset.synthetic;
            o.ok_count = s.value("ok_count", o.ok_count);
            o.nok_count = s.value("nok_count", o.nok_count);
            o.size = s.value("size", o.size);
            o.blob_min = s.value("blob_min", o.blob_min);
            o.blob_max = s.value("blob_max", o.blob_max);
            o.species = s.value("species", o.species);
            o.seed = s.value("seed", o.seed);
        }

        const json& sp = section("split");
        check_keys(sp, "split", {"train_frac", "val_count", "test_count", "seed"});
        c.split.train_frac = sp.value("train_frac", c.split.train_frac);
        if (sp.contains("val_count") && !sp.at("val_count").is_null()) c.split.val_count = sp.at("val_count").get<int>();
        if (sp.contains("test_count") && !sp.at("test_count").is_null()) c.split.test_count = sp.at("test_count").get<int>();
        c.split.seed = sp.value("seed", c.split.seed);

        const json& m = section("model");
        check_keys(m, "model", {"cores", "conv_pairs", "channels", "latent"});
        c.model.cores = parse_range(m, "cores", c.model.cores, kAllCores, [](const std::string& s) { return parse_core(s); });
        c.model.conv_pairs = parse_range(m, "conv_pairs", c.model.conv_pairs, kAllConvPairs,
                                         [](const std::string& s) { return parse_conv_pair(s); });
        c.model.channels = m.value("channels", c.model.channels);
        if (m.contains("latent")) {
            check_keys(m.at("latent"), "model.latent",
                       {"fc_width", "vae_channels", "codebook_size", "embedding_dim", "commitment_beta"});
            c.model.latent = latent_from_json(m.at("latent"));
        }

        const json& t = section("training");
        check_keys(t, "training", {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "patience", "seed", "augmentation"});
        c.training = training_from_json(t);

        const json& f = section("features");
        check_keys(f, "features", {"extractors", "descriptor_weights", "hardnet1_on_original"});
        c.features.extractors = parse_range(f, "extractors", c.features.extractors, kAllExtractors,
                                            [](const std::string& s) { return parse_extractor(s); });
        c.features.descriptor_weights = f.value("descriptor_weights", std::string());
        c.features.hardnet1_on_original = f.value("hardnet1_on_original", false);

        const json& k = section("classifier");
        check_keys(k, "classifier", {"kinds", "contamination", "lof_neighbors", "forest_trees", "forest_subsample", "seed"});
        c.classifier.kinds = parse_range(k, "kinds", c.classifier.kinds, kAllClassifiers,
                                         [](const std::string& s) { return parse_classifier_kind(s); });
        auto& o = c.classifier.options;
        o.contamination = k.value("contamination", o.contamination);
        o.lof_neighbors = k.value("lof_neighbors", o.lof_neighbors);
        o.forest_trees = k.value("forest_trees", o.forest_trees);
        o.forest_subsample = k.value("forest_subsample", o.forest_subsample);
        o.seed = k.value("seed", o.seed);

        const json& e = section("evaluation");
        check_keys(e, "evaluation", {"threshold_source", "positive_class"});
        c.evaluation.threshold_source = parse_threshold_source(e.value("threshold_source", std::string("validation")));
        c.evaluation.positive_class = parse_sample_label(e.value("positive_class", std::string("OK")));

        const json& out = section("output");
        check_keys(out, "output", {"dir", "grid_id", "plots"});
        c.output.dir = out.value("dir", c.output.dir.string());
        c.output.grid_id = out.value("grid_id", c.output.grid_id);
        c.output.plots = out.value("plots", c.output.plots);

        const json& r = section("runner");
        check_keys(r, "runner", {"parallel", "verbose"});
        c.runner.parallel = r.value("parallel", c.runner.parallel);
        c.runner.verbose = r.value("verbose", c.runner.verbose);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

Environment pipeline_environment() {
    Environment env;
    for (char** p = environ; p && *p; ++p) {
        const std::string entry(*p);
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        if (entry.rfind("PIPELINE_", 0) == 0) env[entry.substr(0, eq)] = entry.substr(eq + 1);
    }
    return env;
}

void apply_environment_overrides(json& doc, const Environment& env) {
    static const char* kSections[] = {"dataset", "split",      "model",  "training", "features",
                                      "classifier", "evaluation", "output", "runner"};
    for (const auto& [name, raw] : env) {
        if (name.rfind("PIPELINE_", 0) != 0) continue;
        const std::string rest = lower(name.substr(9));
        std::string section, key;
        for (const char* s : kSections) {
            const std::string prefix = std::string(s) + "_";
            if (rest.rfind(prefix, 0) == 0 && rest.size() > prefix.size()) {
                section = s;
                key = rest.substr(prefix.size());
            }
        }
        if (section.empty()) throw SchemaError("environment override " + name + " names no config section");
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        doc[section][key] = std::move(value);
    }
}

ExperimentConfig load_config(const std::filesystem::path& path, const Environment& env) {
    json doc = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw LoadError("cannot read config " + path.string());
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
    }
    apply_environment_overrides(doc, env);
    return config_from_json(doc);
}

}  // namespace reconad
