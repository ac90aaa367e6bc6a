#include "reconad/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "reconad/random.hpp"

namespace fs = std::filesystem;

namespace reconad {

namespace {

AnnotatedImage make_sample(const SyntheticOptions& opt, int index, bool anomalous) {
    Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(index)));
    const int n = opt.size;
    const double s = n / 128.0;

    cv::Mat img(n, n, CV_32FC1, cv::Scalar(0.08));
    const cv::Point2d center(n / 2.0 + uniform(rng, -8, 8) * s, n / 2.0 + uniform(rng, -8, 8) * s);
    const double a = uniform(rng, 26, 40) * s;
    const double b = uniform(rng, 13, 22) * s;
    const double angle = uniform(rng, 0, 180);
    const double level = uniform(rng, 0.55, 0.7);
    cv::ellipse(img, cv::RotatedRect(cv::Point2f(center), cv::Size2f(2 * a, 2 * b), static_cast<float>(angle)),
                cv::Scalar(level), cv::FILLED, cv::LINE_AA);

    const double rad = angle * std::numbers::pi / 180.0;
    const double ext_x = std::sqrt(a * a * std::cos(rad) * std::cos(rad) + b * b * std::sin(rad) * std::sin(rad));
    const double ext_y = std::sqrt(a * a * std::sin(rad) * std::sin(rad) + b * b * std::cos(rad) * std::cos(rad));
    BoundingBox cell{anomalous ? BoxKind::SpeciesAnomaly : BoxKind::SpeciesClean, center.x - ext_x,
                     center.y - ext_y, 2 * ext_x, 2 * ext_y, opt.species};

    AnnotatedImage sample;
    sample.species = opt.species;
    sample.id = (anomalous ? "nok_" : "ok_") + std::to_string(index);

    std::vector<BoundingBox> boxes;
    if (anomalous) {
        const double d = uniform(rng, opt.blob_min, opt.blob_max);
        const double t = uniform(rng, 0, 2 * std::numbers::pi);
        // point on the rotated ellipse boundary, pushed outward so the blob protrudes
        const double bx = a * std::cos(t), by = b * std::sin(t);
        cv::Point2d edge(center.x + bx * std::cos(rad) - by * std::sin(rad),
                         center.y + bx * std::sin(rad) + by * std::cos(rad));
        const cv::Point2d dir = (edge - center) * (1.0 / cv::norm(edge - center));
        const cv::Point2d blob = edge + dir * (d * 0.25);
        cv::circle(img, cv::Point(static_cast<int>(std::lround(blob.x * 16)), static_cast<int>(std::lround(blob.y * 16))),
                   static_cast<int>(std::lround(d / 2 * 16)), cv::Scalar(uniform(rng, 0.92, 1.0)), cv::FILLED,
                   cv::LINE_AA, 4);
        boxes.push_back({BoxKind::Anomaly, blob.x - d / 2, blob.y - d / 2, d, d, {}});
    }
    cv::GaussianBlur(img, img, cv::Size(0, 0), 0.8 * s);
    cv::Mat noise(n, n, CV_32FC1);
    cv::RNG cvrng(static_cast<std::uint64_t>(rng()));
    cvrng.fill(noise, cv::RNG::NORMAL, 0.0, 0.01);
    img += noise;
    cv::min(cv::max(img, 0.0), 1.0, img);

    boxes.insert(boxes.begin(), cell);
    for (auto& box : boxes) {
        const double x0 = std::clamp(box.x, 0.0, double(n)), y0 = std::clamp(box.y, 0.0, double(n));
        const double x1 = std::clamp(box.x + box.w, 0.0, double(n)), y1 = std::clamp(box.y + box.h, 0.0, double(n));
        box = {box.kind, x0, y0, x1 - x0, y1 - y0, box.species};
    }
    sample.pixels = img;
    sample.boxes = std::move(boxes);
    return sample;
}

}  // namespace

std::vector<AnnotatedImage> make_synthetic_dataset(const SyntheticOptions& options) {
    std::vector<AnnotatedImage> out;
    out.reserve(static_cast<std::size_t>(options.ok_count + options.nok_count));
    for (int i = 0; i < options.ok_count; ++i) out.push_back(make_sample(options, i, false));
    for (int i = 0; i < options.nok_count; ++i) out.push_back(make_sample(options, options.ok_count + i, true));
    return out;
}

fs::path write_coco_dataset(std::span<const AnnotatedImage> images, const fs::path& dir) {
    using nlohmann::json;
    fs::create_directories(dir / "images");
    std::map<std::string, int> categories;
    auto category = [&](const BoundingBox& box) {
        const std::string name = box.kind == BoxKind::Anomaly        ? std::string("Anomaly")
                                 : box.kind == BoxKind::SpeciesClean ? box.species + "_Clean"
                                                                     : box.species + "_Anomaly";
        auto [it, inserted] = categories.emplace(name, static_cast<int>(categories.size()) + 1);
        return it->second;
    };

    json doc{{"images", json::array()}, {"annotations", json::array()}, {"categories", json::array()}};
    int ann_id = 1;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        const std::string file = "images/" + img.id + ".png";
        save_image(img.pixels, dir / file);
        doc["images"].push_back({{"id", i + 1}, {"file_name", file}, {"width", img.width()}, {"height", img.height()}});
        for (const auto& box : img.boxes) {
            doc["annotations"].push_back({{"id", ann_id++},
                                          {"image_id", i + 1},
                                          {"category_id", category(box)},
                                          {"bbox", {box.x, box.y, box.w, box.h}}});
        }
    }
    for (const auto& [name, id] : categories) doc["categories"].push_back({{"id", id}, {"name", name}});
    const fs::path path = dir / "annotations.json";
    std::ofstream(path) << doc.dump(1) << '\n';
    return path;
}

}  // namespace reconad
