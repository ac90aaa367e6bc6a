#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

namespace reconad {

// Images are cv::Mat of type CV_32FC1 or CV_32FC3 with values in [0,1].

enum class BoxKind { Anomaly, SpeciesAnomaly, SpeciesClean };

struct BoundingBox {
    BoxKind kind = BoxKind::Anomaly;
    double x = 0, y = 0, w = 0, h = 0;  // pixels, top-left origin
    std::string species;                // empty for BoxKind::Anomaly

    double area() const { return w * h; }
};

/// Intersection over union of two axis-aligned boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

struct AnnotatedImage {
    std::string id;
    cv::Mat pixels;
    std::string species;
    std::vector<BoundingBox> boxes;

    int height() const { return pixels.rows; }
    int width() const { return pixels.cols; }
    int channels() const { return pixels.channels(); }
};

enum class SampleLabel { OK, NOK };

std::string_view to_string(SampleLabel label);
SampleLabel parse_sample_label(std::string_view text);

enum class AnnotationFormat { COCO, YOLO };

AnnotationFormat parse_annotation_format(std::string_view text);

/// Map an annotation label string onto the three-label scheme:
/// "Anomaly", "<Species>_Anomaly", "<Species>_Clean" (suffix case-insensitive).
/// Throws SchemaError for anything else.
struct LabelInfo {
    BoxKind kind;
    std::string species;
};
LabelInfo classify_label(std::string_view label);

/// Load every image referenced by an annotation set together with its boxes.
///
/// COCO: `path` is the JSON file; image paths are resolved relative to the
/// file's directory (and its `images/` subdirectory).
/// YOLO: `path` is a directory holding a class-name file (`classes.txt` or
/// `obj.names`), `labels/*.txt` and `images/*`.
std::vector<AnnotatedImage> parse_annotations(const std::filesystem::path& path,
                                              AnnotationFormat format);

/// Boxes left after dropping every SpeciesClean box that overlaps
/// (IoU > 0) a SpeciesAnomaly box.
std::vector<BoundingBox> resolve_overlaps(std::span<const BoundingBox> boxes);

SampleLabel derive_sample_label(std::span<const BoundingBox> boxes);

struct LabeledSample {
    std::string id;
    std::string species;
    SampleLabel label = SampleLabel::OK;
};

std::vector<LabeledSample> label_samples(std::span<const AnnotatedImage> images);

struct SplitOptions {
    std::string species_scope = "all";
    double train_frac = 0.7;
    // Per-class counts for validation and test. When unset: 10 per species for
    // scope "all", otherwise min(|NOK|/2, (|OK| - train)/2).
    std::optional<int> val_count;
    std::optional<int> test_count;
    std::uint64_t seed = 0;
};

struct DatasetSplit {
    std::string species_scope;
    std::uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::pair<std::string, SampleLabel>> validation;
    std::vector<std::pair<std::string, SampleLabel>> test;
};

DatasetSplit build_split(std::span<const LabeledSample> samples, const SplitOptions& options);

nlohmann::json split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& doc);
void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_split_manifest(const std::filesystem::path& path);

/// Lower-case, spaces for underscores; "Peridiniella_Chain" -> "peridiniella chain".
std::string normalize_species(std::string_view species);

/// Width:height ratio used for a species ("all" -> 2). Unknown species -> 1.
int aspect_ratio_for(std::string_view species);

/// Canonical (width, height) for a sample of `species` under `species_scope`.
cv::Size canonical_size(std::string_view species_scope, std::string_view species);

/// Pad to the target aspect ratio with edge replication, then bilinear resize
/// to the canonical size.
cv::Mat canonical_resize(const AnnotatedImage& image, std::string_view species_scope);
cv::Mat resize_to(const cv::Mat& pixels, cv::Size target);

struct AugmentationPolicy {
    double flip_h = 0;
    double flip_v = 0;
    double contrast = 0;
    double saturation = 0;
    double brightness = 0;
    double hue = 0;  // fraction of the hue circle
    double invert = 0;
    double salt_pepper_fraction = 0.05;
    std::uint64_t seed = 0;

    static AugmentationPolicy identity();
    /// Moderate jitter used for autoencoder training.
    static AugmentationPolicy training_default();
    void validate() const;
};

nlohmann::json to_json(const AugmentationPolicy& policy);
AugmentationPolicy augmentation_from_json(const nlohmann::json& doc);

cv::Mat flip_horizontal(const cv::Mat& image);

/// Random photometric and geometric jitter; a pure function of (image, policy).
cv::Mat augment(const cv::Mat& image, const AugmentationPolicy& policy);

/// Sets exactly round(fraction * H * W) distinct pixel positions to 0 or 1.
cv::Mat add_salt_pepper(const cv::Mat& image, double fraction, std::uint64_t seed);

/// Read an image file as float [0,1]; 1 channel for grayscale files, else 3.
cv::Mat load_image(const std::filesystem::path& path);
void save_image(const cv::Mat& image, const std::filesystem::path& path);

}  // namespace reconad
