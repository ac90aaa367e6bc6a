#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "reconad/autoencoder.hpp"
#include "reconad/dataset.hpp"

namespace reconad {

enum class Extractor { ErrMetrics, SIFT, HardNet1, HardNet2, HardNet3, HardNet4 };

inline constexpr Extractor kAllExtractors[] = {Extractor::ErrMetrics, Extractor::SIFT,     Extractor::HardNet1,
                                               Extractor::HardNet2,   Extractor::HardNet3, Extractor::HardNet4};

std::string_view to_string(Extractor kind);
Extractor parse_extractor(std::string_view text);

struct FeatureVector {
    Extractor extractor = Extractor::ErrMetrics;
    std::vector<double> values;
    std::string sample_id;
};

inline constexpr int kPatchSize = 32;
inline constexpr int kDescriptorSize = 128;

using Descriptor = std::vector<float>;

enum class DescriptorBackend { PretrainedHardNet, DeterministicFallback };

/// Maps normalized 32x32 single-channel patches to 128-d vectors. Callers go
/// through describe_patch(es), which normalize input and output.
class PatchDescriptor {
public:
    virtual ~PatchDescriptor() = default;
    virtual DescriptorBackend backend() const = 0;
    virtual std::vector<Descriptor> describe_normalized(std::span<const cv::Mat> patches) const = 0;
};

/// Fixed-seed random projection plus bias of the normalized patch.
class FallbackDescriptor final : public PatchDescriptor {
public:
    explicit FallbackDescriptor(std::uint64_t seed = 20170921);
    DescriptorBackend backend() const override { return DescriptorBackend::DeterministicFallback; }
    std::vector<Descriptor> describe_normalized(std::span<const cv::Mat> patches) const override;

private:
    cv::Mat projection_;  // 128 x 1024, CV_32F
    cv::Mat bias_;        // 128 x 1
};

/// HardNet weights exported as a TorchScript module taking [N,1,32,32] and
/// returning [N,128].
std::shared_ptr<const PatchDescriptor> load_hardnet(const std::filesystem::path& torchscript_file);

/// Pretrained backend when `weights` names an existing file, otherwise the
/// fallback (with a warning on stderr).
std::shared_ptr<const PatchDescriptor> make_descriptor(const std::filesystem::path& weights = {});

/// Row-major 32x32 blocks; multi-channel input is averaged over channels first.
std::vector<cv::Mat> split_blocks(const cv::Mat& image);

/// Zero-mean, unit-std copy of a single-channel patch (all zeros if flat).
cv::Mat normalize_patch(const cv::Mat& patch);

Descriptor describe_patch(const cv::Mat& patch, const PatchDescriptor& descriptor);
std::vector<Descriptor> describe_patches(std::span<const cv::Mat> patches, const PatchDescriptor& descriptor);

// Individual error metrics (single-channel view: mean over channels).
double l2_distance(const cv::Mat& a, const cv::Mat& b);
double mean_squared_error(const cv::Mat& a, const cv::Mat& b);
/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1.
double ssim(const cv::Mat& a, const cv::Mat& b);
std::uint64_t average_hash(const cv::Mat& image);
int hamming_distance(std::uint64_t a, std::uint64_t b);

struct FeatureOptions {
    /// HardNet1 describes the difference image by default; set to describe
    /// the original image instead.
    bool hardnet1_on_original = false;
};

/// Length of the feature vector produced by `kind` for an image of `size`.
std::size_t feature_length(Extractor kind, cv::Size size);

FeatureVector extract_features(Extractor kind, const ReconstructionTriplet& triplet,
                               const PatchDescriptor& descriptor, std::string sample_id = {},
                               const FeatureOptions& options = {});

/// Header `sample_id,label,f0..fK-1`.
void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureVector> rows,
                       std::span<const SampleLabel> labels);

}  // namespace reconad
