#include "reconad/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "reconad/error.hpp"
#include "reconad/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace reconad {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool ends_with_ci(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && lower(s.substr(s.size() - suffix.size())) == suffix;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Clamp to the image and reject boxes that end up empty.
BoundingBox clamp_box(BoundingBox box, int width, int height, const std::string& image_id) {
    const double x0 = std::clamp(box.x, 0.0, static_cast<double>(width));
    const double y0 = std::clamp(box.y, 0.0, static_cast<double>(height));
    const double x1 = std::clamp(box.x + box.w, 0.0, static_cast<double>(width));
    const double y1 = std::clamp(box.y + box.h, 0.0, static_cast<double>(height));
    box.x = x0;
    box.y = y0;
    box.w = x1 - x0;
    box.h = y1 - y0;
    if (box.w <= 0 || box.h <= 0) {
        throw SchemaError("image '" + image_id + "': bounding box is empty after clamping");
    }
    return box;
}

std::string species_from_boxes(const std::vector<BoundingBox>& boxes) {
    for (const auto& b : boxes) {
        if (!b.species.empty()) return b.species;
    }
    return {};
}

fs::path resolve_image(const fs::path& base, const std::string& file_name) {
    const fs::path rel(file_name);
    for (const fs::path& candidate :
         {rel.is_absolute() ? rel : base / rel, base / "images" / rel.filename(), base / rel.filename()}) {
        if (fs::exists(candidate)) return candidate;
    }
    return {};
}

std::vector<AnnotatedImage> parse_coco(const fs::path& path) {
    const std::string text = read_text(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
    }
    for (const char* key : {"images", "annotations", "categories"}) {
        if (!doc.contains(key) || !doc[key].is_array()) {
            throw ParseError(path.string() + ": missing array '" + key + "'");
        }
    }

    std::map<long long, LabelInfo> categories;
    for (const auto& cat : doc["categories"]) {
        try {
            categories.emplace(cat.at("id").get<long long>(),
                               classify_label(cat.at("name").get<std::string>()));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": categories: " + e.what());
        }
    }

    const fs::path base = path.parent_path();
    std::vector<AnnotatedImage> images;
    std::map<long long, std::size_t> index;
    std::map<std::string, int> seen_ids;
    for (const auto& entry : doc["images"]) {
        long long coco_id = 0;
        std::string file_name;
        try {
            coco_id = entry.at("id").get<long long>();
            file_name = entry.at("file_name").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": images: " + e.what());
        }
        AnnotatedImage image;
        image.id = fs::path(file_name).stem().string();
        if (seen_ids[image.id]++ > 0) image.id += "#" + std::to_string(coco_id);
        const fs::path file = resolve_image(base, file_name);
        if (file.empty()) throw LoadError("image '" + image.id + "': file not found: " + file_name);
        image.pixels = load_image(file);
        index[coco_id] = images.size();
        images.push_back(std::move(image));
    }

    for (const auto& ann : doc["annotations"]) {
        long long image_id = 0, category_id = 0;
        std::vector<double> bbox;
        try {
            image_id = ann.at("image_id").get<long long>();
            category_id = ann.at("category_id").get<long long>();
            bbox = ann.at("bbox").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": annotations: " + e.what());
        }
        if (bbox.size() != 4) throw ParseError(path.string() + ": annotations: bbox needs 4 values");
        auto img = index.find(image_id);
        if (img == index.end()) {
            throw SchemaError(path.string() + ": annotation references unknown image " +
                              std::to_string(image_id));
        }
        auto cat = categories.find(category_id);
        if (cat == categories.end()) {
            throw SchemaError(path.string() + ": unknown category " + std::to_string(category_id));
        }
        AnnotatedImage& target = images[img->second];
        BoundingBox box{cat->second.kind, bbox[0], bbox[1], bbox[2], bbox[3], cat->second.species};
        target.boxes.push_back(clamp_box(box, target.width(), target.height(), target.id));
    }

    for (auto& image : images) {
        image.species = species_from_boxes(image.boxes);
    }
    return images;
}

std::vector<AnnotatedImage> parse_yolo(const fs::path& dir) {
    fs::path names_file;
    for (const char* name : {"classes.txt", "obj.names"}) {
        if (fs::exists(dir / name)) {
            names_file = dir / name;
            break;
        }
    }
    if (names_file.empty()) throw ParseError(dir.string() + ": no classes.txt or obj.names");

    std::vector<LabelInfo> classes;
    {
        std::istringstream in(read_text(names_file));
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
            if (!line.empty()) classes.push_back(classify_label(line));
        }
    }

    const fs::path image_dir = dir / "images";
    const fs::path label_dir = dir / "labels";
    if (!fs::is_directory(image_dir)) throw ParseError(dir.string() + ": missing images/ directory");

    std::map<std::string, fs::path> image_files;
    for (const auto& e : fs::directory_iterator(image_dir)) {
        if (e.is_regular_file()) image_files[e.path().stem().string()] = e.path();
    }
    if (fs::is_directory(label_dir)) {
        for (const auto& e : fs::directory_iterator(label_dir)) {
            if (e.path().extension() == ".txt" && !image_files.contains(e.path().stem().string())) {
                throw LoadError("image '" + e.path().stem().string() + "': file not found in " +
                                image_dir.string());
            }
        }
    }

    std::vector<AnnotatedImage> images;
    for (const auto& [stem, file] : image_files) {
        AnnotatedImage image;
        image.id = stem;
        image.pixels = load_image(file);
        const fs::path labels = label_dir / (stem + ".txt");
        if (fs::exists(labels)) {
            std::istringstream in(read_text(labels));
            std::string line;
            int line_no = 0;
            while (std::getline(in, line)) {
                ++line_no;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                std::istringstream fields(line);
                long long cls = -1;
                double cx, cy, w, h;
                std::string extra;
                if (!(fields >> cls >> cx >> cy >> w >> h) || (fields >> extra)) {
                    throw ParseError(labels.string() + ":" + std::to_string(line_no) +
                                     ": expected 'class cx cy w h'");
                }
                if (cls < 0 || cls >= static_cast<long long>(classes.size())) {
                    throw SchemaError(labels.string() + ":" + std::to_string(line_no) +
                                      ": class index out of range");
                }
                const double W = image.width(), H = image.height();
                BoundingBox box{classes[cls].kind, (cx - w / 2) * W, (cy - h / 2) * H, w * W, h * H,
                                classes[cls].species};
                image.boxes.push_back(clamp_box(box, image.width(), image.height(), image.id));
            }
        }
        image.species = species_from_boxes(image.boxes);
        images.push_back(std::move(image));
    }
    return images;
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::string_view to_string(SampleLabel label) { return label == SampleLabel::OK ? "OK" : "NOK"; }

SampleLabel parse_sample_label(std::string_view text) {
    if (text == "OK") return SampleLabel::OK;
    if (text == "NOK") return SampleLabel::NOK;
    throw DomainError("unknown sample label '" + std::string(text) + "'");
}

AnnotationFormat parse_annotation_format(std::string_view text) {
    const auto t = lower(text);
    if (t == "coco") return AnnotationFormat::COCO;
    if (t == "yolo") return AnnotationFormat::YOLO;
    throw DomainError("unknown annotation format '" + std::string(text) + "'");
}

LabelInfo classify_label(std::string_view label) {
    if (lower(label) == "anomaly") return {BoxKind::Anomaly, {}};
    if (ends_with_ci(label, "_anomaly") && label.size() > 8) {
        return {BoxKind::SpeciesAnomaly, std::string(label.substr(0, label.size() - 8))};
    }
    if (ends_with_ci(label, "_clean") && label.size() > 6) {
        return {BoxKind::SpeciesClean, std::string(label.substr(0, label.size() - 6))};
    }
    throw SchemaError("unknown annotation label '" + std::string(label) + "'");
}

std::vector<AnnotatedImage> parse_annotations(const fs::path& path, AnnotationFormat format) {
    if (!fs::exists(path)) throw LoadError("annotation path does not exist: " + path.string());
    return format == AnnotationFormat::COCO ? parse_coco(path) : parse_yolo(path);
}

std::vector<BoundingBox> resolve_overlaps(std::span<const BoundingBox> boxes) {
    std::vector<BoundingBox> kept;
    for (const auto& box : boxes) {
        if (box.kind == BoxKind::SpeciesClean) {
            const bool overlaps = std::any_of(boxes.begin(), boxes.end(), [&](const BoundingBox& other) {
                return other.kind == BoxKind::SpeciesAnomaly && iou(box, other) > 0;
            });
            if (overlaps) continue;
        }
        kept.push_back(box);
    }
    return kept;
}

SampleLabel derive_sample_label(std::span<const BoundingBox> boxes) {
    const auto kept = resolve_overlaps(boxes);
    const bool anomalous = std::any_of(kept.begin(), kept.end(), [](const BoundingBox& b) {
        return b.kind == BoxKind::Anomaly || b.kind == BoxKind::SpeciesAnomaly;
    });
    return anomalous ? SampleLabel::NOK : SampleLabel::OK;
}

std::vector<LabeledSample> label_samples(std::span<const AnnotatedImage> images) {
    std::vector<LabeledSample> out;
    out.reserve(images.size());
    for (const auto& image : images) {
        out.push_back({image.id, image.species, derive_sample_label(image.boxes)});
    }
    return out;
}

DatasetSplit build_split(std::span<const LabeledSample> samples, const SplitOptions& options) {
    if (!(options.train_frac > 0.0 && options.train_frac <= 1.0)) {
        throw DomainError("train_frac must lie in (0, 1], got " + std::to_string(options.train_frac));
    }
    const bool all = lower(options.species_scope) == "all";
    const std::string scope = normalize_species(options.species_scope);

    // species -> (OK ids, NOK ids), both sorted so input order does not matter
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> groups;
    for (const auto& s : samples) {
        const std::string species = normalize_species(s.species);
        if (!all && species != scope) continue;
        auto& g = groups[species];
        (s.label == SampleLabel::OK ? g.first : g.second).push_back(s.id);
    }
    if (groups.empty()) {
        throw CapacityError("no samples for species scope '" + options.species_scope + "'");
    }

    DatasetSplit split;
    split.species_scope = options.species_scope;
    split.seed = options.seed;
    Rng rng(options.seed);
    for (auto& [species, g] : groups) {
        auto& [ok, nok] = g;
        std::sort(ok.begin(), ok.end());
        std::sort(nok.begin(), nok.end());
        shuffle(ok, rng);
        shuffle(nok, rng);

        const auto n_train = static_cast<std::size_t>(std::floor(options.train_frac * ok.size() + 1e-9));
        const auto default_count = [&]() -> int {
            if (all) return 10;
            return static_cast<int>(std::min(nok.size() / 2, (ok.size() - n_train) / 2));
        };
        const int n_val = options.val_count.value_or(default_count());
        const int n_test = options.test_count.value_or(default_count());
        if (n_val < 0 || n_test < 0) throw DomainError("validation/test counts must be nonnegative");
        if (n_val + n_test == 0) {
            throw CapacityError("species '" + species + "': not enough samples for a balanced validation/test set");
        }
        const std::size_t need_ok = n_train + n_val + n_test;
        const std::size_t need_nok = static_cast<std::size_t>(n_val + n_test);
        if (ok.size() < need_ok || nok.size() < need_nok) {
            std::ostringstream msg;
            msg << "species '" << species << "': need " << need_ok << " OK and " << need_nok
                << " NOK samples, have " << ok.size() << " OK and " << nok.size() << " NOK (short "
                << (ok.size() < need_ok ? need_ok - ok.size() : 0) << " OK, "
                << (nok.size() < need_nok ? need_nok - nok.size() : 0) << " NOK)";
            throw CapacityError(msg.str());
        }

        std::size_t o = 0;
        for (; o < n_train; ++o) split.train.push_back(ok[o]);
        for (int i = 0; i < n_val; ++i) split.validation.emplace_back(ok[o++], SampleLabel::OK);
        for (int i = 0; i < n_val; ++i) split.validation.emplace_back(nok[i], SampleLabel::NOK);
        for (int i = 0; i < n_test; ++i) split.test.emplace_back(ok[o++], SampleLabel::OK);
        for (int i = 0; i < n_test; ++i) split.test.emplace_back(nok[n_val + i], SampleLabel::NOK);
    }
    return split;
}

json split_to_json(const DatasetSplit& split) {
    auto labeled = [](const std::vector<std::pair<std::string, SampleLabel>>& v) {
        json arr = json::array();
        for (const auto& [id, label] : v) arr.push_back({id, std::string(to_string(label))});
        return arr;
    };
    return json{{"species_scope", split.species_scope},
                {"seed", split.seed},
                {"train", split.train},
                {"validation", labeled(split.validation)},
                {"test", labeled(split.test)}};
}

DatasetSplit split_from_json(const json& doc) {
    try {
        DatasetSplit split;
        split.species_scope = doc.at("species_scope").get<std::string>();
        split.seed = doc.at("seed").get<std::uint64_t>();
        split.train = doc.at("train").get<std::vector<std::string>>();
        for (const char* key : {"validation", "test"}) {
            auto& target = std::string_view(key) == "validation" ? split.validation : split.test;
            for (const auto& pair : doc.at(key)) {
                target.emplace_back(pair.at(0).get<std::string>(),
                                    parse_sample_label(pair.at(1).get<std::string>()));
            }
        }
        return split;
    } catch (const json::exception& e) {
        throw ParseError(std::string("split manifest: ") + e.what());
    }
}

void write_split_manifest(const DatasetSplit& split, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << split_to_json(split).dump(2) << '\n';
}

DatasetSplit read_split_manifest(const fs::path& path) {
    try {
        return split_from_json(json::parse(read_text(path)));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

std::string normalize_species(std::string_view species) {
    std::string out = lower(species);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

int aspect_ratio_for(std::string_view species) {
    static const std::map<std::string, int> table = {
        {"aphanizomenon", 4},      {"dolichospermum", 4},     {"nodularia", 4},
        {"skeletonem", 4},         {"skeletonema", 4},        {"chaetocero", 4},
        {"chaetoceros", 4},        {"centrales", 1},          {"pauliella", 1},
        {"peridiniella single", 1}, {"peridiniella chain", 2}, {"all", 2},
    };
    auto it = table.find(normalize_species(species));
    return it == table.end() ? 1 : it->second;
}

cv::Size canonical_size(std::string_view species_scope, std::string_view species) {
    const int ratio = lower(species_scope) == "all" ? 2 : aspect_ratio_for(species_scope.empty() ? species : species_scope);
    return {128 * ratio, 128};
}

cv::Mat resize_to(const cv::Mat& pixels, cv::Size target) {
    if (pixels.empty()) throw DomainError("cannot resize an empty image");
    const double want = static_cast<double>(target.width) / target.height;
    const double have = static_cast<double>(pixels.cols) / pixels.rows;
    cv::Mat padded = pixels;
    if (have < want) {
        const int width = static_cast<int>(std::lround(pixels.rows * want));
        const int extra = width - pixels.cols;
        cv::copyMakeBorder(pixels, padded, 0, 0, extra / 2, extra - extra / 2, cv::BORDER_REPLICATE);
    } else if (have > want) {
        const int height = static_cast<int>(std::lround(pixels.cols / want));
        const int extra = height - pixels.rows;
        cv::copyMakeBorder(pixels, padded, extra / 2, extra - extra / 2, 0, 0, cv::BORDER_REPLICATE);
    }
    cv::Mat out;
    cv::resize(padded, out, target, 0, 0, cv::INTER_LINEAR);
    return out;
}

cv::Mat canonical_resize(const AnnotatedImage& image, std::string_view species_scope) {
    if (image.pixels.empty() || image.height() < 1 || image.width() < 1) {
        throw DomainError("image '" + image.id + "' is empty");
    }
    return resize_to(image.pixels, canonical_size(species_scope, image.species));
}

AugmentationPolicy AugmentationPolicy::identity() {
    AugmentationPolicy p;
    p.salt_pepper_fraction = 0;
    return p;
}

AugmentationPolicy AugmentationPolicy::training_default() {
    AugmentationPolicy p;
    p.flip_h = 0.5;
    p.flip_v = 0.5;
    p.contrast = 0.1;
    p.saturation = 0.1;
    p.brightness = 0.1;
    p.hue = 0.02;
    p.invert = 0.0;
    p.salt_pepper_fraction = 0.05;
    return p;
}

void AugmentationPolicy::validate() const {
    for (double p : {flip_h, flip_v, invert, salt_pepper_fraction}) {
        if (!(p >= 0 && p <= 1)) throw DomainError("augmentation probabilities must lie in [0,1]");
    }
    for (double j : {contrast, saturation, brightness, hue}) {
        if (!(j >= 0)) throw DomainError("augmentation jitter ranges must be nonnegative");
    }
}

json to_json(const AugmentationPolicy& p) {
    return json{{"flip_h", p.flip_h},         {"flip_v", p.flip_v},
                {"contrast", p.contrast},     {"saturation", p.saturation},
                {"brightness", p.brightness}, {"hue", p.hue},
                {"invert", p.invert},         {"salt_pepper_fraction", p.salt_pepper_fraction},
                {"seed", p.seed}};
}

AugmentationPolicy augmentation_from_json(const json& doc) {
    AugmentationPolicy p = AugmentationPolicy::training_default();
    p.flip_h = doc.value("flip_h", p.flip_h);
    p.flip_v = doc.value("flip_v", p.flip_v);
    p.contrast = doc.value("contrast", p.contrast);
    p.saturation = doc.value("saturation", p.saturation);
    p.brightness = doc.value("brightness", p.brightness);
    p.hue = doc.value("hue", p.hue);
    p.invert = doc.value("invert", p.invert);
    p.salt_pepper_fraction = doc.value("salt_pepper_fraction", p.salt_pepper_fraction);
    p.seed = doc.value("seed", p.seed);
    p.validate();
    return p;
}

cv::Mat flip_horizontal(const cv::Mat& image) {
    cv::Mat out;
    cv::flip(image, out, 1);
    return out;
}

cv::Mat augment(const cv::Mat& image, const AugmentationPolicy& policy) {
    policy.validate();
    Rng rng(policy.seed);
    // Draw every random value up front so each operation always sees the same stream.
    const bool do_flip_h = uniform01(rng) < policy.flip_h;
    const bool do_flip_v = uniform01(rng) < policy.flip_v;
    const double brightness = uniform(rng, -policy.brightness, policy.brightness);
    const double contrast = uniform(rng, -policy.contrast, policy.contrast);
    const double saturation = uniform(rng, -policy.saturation, policy.saturation);
    const double hue = uniform(rng, -policy.hue, policy.hue);
    const bool do_invert = uniform01(rng) < policy.invert;

    cv::Mat out = image.clone();
    if (do_flip_h) cv::flip(out, out, 1);
    if (do_flip_v) cv::flip(out, out, 0);
    if (policy.brightness > 0) out *= 1.0 + brightness;
    if (policy.contrast > 0) {
        const cv::Scalar m = cv::mean(out);
        const double mean = out.channels() == 3 ? (m[0] + m[1] + m[2]) / 3 : m[0];
        out = (out - cv::Scalar::all(mean)) * (1.0 + contrast) + cv::Scalar::all(mean);
    }
    if (out.channels() == 3 && policy.saturation > 0) {
        cv::Mat gray, gray3;
        cv::cvtColor(out, gray, cv::COLOR_BGR2GRAY);
        cv::cvtColor(gray, gray3, cv::COLOR_GRAY2BGR);
        out = gray3 + (out - gray3) * (1.0 + saturation);
    }
    if (out.channels() == 3 && policy.hue > 0) {
        cv::Mat clamped, hsv;
        cv::min(cv::max(out, 0.0), 1.0, clamped);
        cv::cvtColor(clamped, hsv, cv::COLOR_BGR2HSV);  // H in [0, 360)
        std::vector<cv::Mat> planes;
        cv::split(hsv, planes);
        planes[0].forEach<float>([&](float& h, const int*) {
            h = static_cast<float>(std::fmod(h + hue * 360.0 + 360.0, 360.0));
        });
        cv::merge(planes, hsv);
        cv::cvtColor(hsv, out, cv::COLOR_HSV2BGR);
    }
    if (do_invert) out = cv::Scalar::all(1.0) - out;
    cv::min(cv::max(out, 0.0), 1.0, out);
    return out;
}

cv::Mat add_salt_pepper(const cv::Mat& image, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0 && fraction <= 1)) throw DomainError("salt-and-pepper fraction must lie in [0,1]");
    cv::Mat out = image.clone();
    const std::size_t n = static_cast<std::size_t>(out.rows) * out.cols;
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (count == 0) return out;
    Rng rng(seed);
    std::vector<std::uint32_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<std::uint32_t>(i);
    const int channels = out.channels();
    auto* data = out.ptr<float>();  // clone() is continuous
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(positions[i], positions[i + uniform_index(rng, n - i)]);
        const float value = (rng() >> 63) ? 1.0f : 0.0f;
        for (int c = 0; c < channels; ++c) data[positions[i] * channels + c] = value;
    }
    return out;
}

cv::Mat load_image(const fs::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw LoadError("cannot decode image " + path.string());
    if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2BGR);
    if (raw.channels() == 2) cv::extractChannel(raw, raw, 0);
    double scale = 1.0;
    switch (raw.depth()) {
        case CV_8U: scale = 1.0 / 255; break;
        case CV_16U: scale = 1.0 / 65535; break;
        default: break;
    }
    cv::Mat out;
    raw.convertTo(out, CV_MAKETYPE(CV_32F, raw.channels()), scale);
    cv::min(cv::max(out, 0.0), 1.0, out);
    return out;
}

void save_image(const cv::Mat& image, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    cv::Mat u8;
    image.convertTo(u8, CV_MAKETYPE(CV_8U, image.channels()), 255.0);
    if (!cv::imwrite(path.string(), u8)) throw LoadError("cannot write image " + path.string());
}

}  // namespace reconad
