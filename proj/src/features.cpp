#include "reconad/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/features2d.hpp>
#include <opencv2/imgproc.hpp>

#include "reconad/error.hpp"

namespace reconad {

namespace {

cv::Mat gray64(const cv::Mat& image) {
    cv::Mat out;
    if (image.channels() == 1) {
        image.convertTo(out, CV_64F);
    } else {
        std::vector<cv::Mat> planes;
        cv::split(image, planes);
        out = cv::Mat::zeros(image.size(), CV_64F);
        for (const auto& p : planes) {
            cv::Mat d;
            p.convertTo(d, CV_64F);
            out += d;
        }
        out /= static_cast<double>(planes.size());
    }
    return out;
}

cv::Mat gray32(const cv::Mat& image) {
    cv::Mat out;
    gray64(image).convertTo(out, CV_32F);
    return out;
}

void check_same_shape(const cv::Mat& a, const cv::Mat& b) {
    if (a.size() != b.size() || a.channels() != b.channels()) throw ShapeError("images differ in shape");
}

double cosine(const Descriptor& a, const Descriptor& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<double> sift_statistics(const cv::Mat& difference) {
    cv::Mat u8;
    gray64(difference).convertTo(u8, CV_8U, 255.0);
    std::vector<cv::KeyPoint> keypoints;
    cv::SIFT::create()->detect(u8, keypoints);
    std::vector<double> stats(6, 0.0);
    if (keypoints.empty()) return stats;
    double size_sum = 0, size_max = 0, resp_sum = 0, resp_max = 0;
    for (const auto& kp : keypoints) {
        size_sum += kp.size;
        size_max = std::max<double>(size_max, kp.size);
        resp_sum += kp.response;
        resp_max = std::max<double>(resp_max, kp.response);
    }
    const double n = static_cast<double>(keypoints.size());
    return {n, size_sum / n, size_max, resp_sum / n, resp_max, resp_sum};
}

}  // namespace

std::string_view to_string(Extractor kind) {
    switch (kind) {
        case Extractor::ErrMetrics: return "ErrMetrics";
        case Extractor::SIFT: return "SIFT";
        case Extractor::HardNet1: return "HardNet1";
        case Extractor::HardNet2: return "HardNet2";
        case Extractor::HardNet3: return "HardNet3";
        case Extractor::HardNet4: return "HardNet4";
    }
    return "?";
}

Extractor parse_extractor(std::string_view text) {
    for (Extractor e : kAllExtractors) {
        if (to_string(e) == text) return e;
    }
    throw DomainError("unknown feature extractor '" + std::string(text) + "'");
}

std::vector<cv::Mat> split_blocks(const cv::Mat& image) {
    if (image.empty() || image.rows % kPatchSize != 0 || image.cols % kPatchSize != 0) {
        throw ShapeError("image " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                         " is not divisible into 32x32 blocks");
    }
    const cv::Mat gray = gray32(image);
    std::vector<cv::Mat> blocks;
    for (int r = 0; r < gray.rows; r += kPatchSize) {
        for (int c = 0; c < gray.cols; c += kPatchSize) {
            blocks.push_back(gray(cv::Rect(c, r, kPatchSize, kPatchSize)).clone());
        }
    }
    return blocks;
}

cv::Mat normalize_patch(const cv::Mat& patch) {
    cv::Mat p;
    patch.convertTo(p, CV_64F);
    cv::Scalar mean, stddev;
    cv::meanStdDev(p, mean, stddev);
    double lo = 0, hi = 0;
    cv::minMaxLoc(p, &lo, &hi);
    cv::Mat out;
    // meanStdDev leaves ~1e-8 of cancellation noise on constant input
    if (hi - lo < 1e-12 || stddev[0] < 1e-6) {
        out = cv::Mat::zeros(patch.size(), CV_32F);
    } else {
        cv::Mat centered = (p - mean[0]) / stddev[0];
        centered.convertTo(out, CV_32F);
    }
    return out;
}

std::vector<Descriptor> describe_patches(std::span<const cv::Mat> patches, const PatchDescriptor& descriptor) {
    std::vector<cv::Mat> normalized;
    normalized.reserve(patches.size());
    for (const auto& p : patches) {
        if (p.rows != kPatchSize || p.cols != kPatchSize || p.channels() != 1) {
            throw ShapeError("patch must be 32x32 single-channel");
        }
        normalized.push_back(normalize_patch(p));
    }
    auto out = descriptor.describe_normalized(normalized);
    for (auto& d : out) {
        if (d.size() != static_cast<std::size_t>(kDescriptorSize)) throw ShapeError("descriptor must have 128 entries");
        double norm = 0;
        for (float v : d) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        if (!std::isfinite(norm) || norm == 0) throw NumericError("descriptor has zero or non-finite norm");
        for (float& v : d) v = static_cast<float>(v / norm);
    }
    return out;
}

Descriptor describe_patch(const cv::Mat& patch, const PatchDescriptor& descriptor) {
    return describe_patches(std::span(&patch, 1), descriptor).front();
}

double l2_distance(const cv::Mat& a, const cv::Mat& b) {
    check_same_shape(a, b);
    return cv::norm(a, b, cv::NORM_L2);
}

double mean_squared_error(const cv::Mat& a, const cv::Mat& b) {
    check_same_shape(a, b);
    const double l2 = cv::norm(a, b, cv::NORM_L2SQR);
    return l2 / static_cast<double>(a.total() * a.channels());
}

double ssim(const cv::Mat& a, const cv::Mat& b) {
    check_same_shape(a, b);
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const cv::Mat x = gray64(a), y = gray64(b);
    const cv::Size window(11, 11);
    constexpr double sigma = 1.5;
    auto blur = [&](const cv::Mat& m) {
        cv::Mat out;
        cv::GaussianBlur(m, out, window, sigma, sigma, cv::BORDER_REFLECT);
        return out;
    };
    const cv::Mat mu_x = blur(x), mu_y = blur(y);
    const cv::Mat mu_xx = mu_x.mul(mu_x), mu_yy = mu_y.mul(mu_y), mu_xy = mu_x.mul(mu_y);
    const cv::Mat s_xx = blur(x.mul(x)) - mu_xx;
    const cv::Mat s_yy = blur(y.mul(y)) - mu_yy;
    const cv::Mat s_xy = blur(x.mul(y)) - mu_xy;
    cv::Mat num = (2 * mu_xy + c1).mul(2 * s_xy + c2);
    cv::Mat den = (mu_xx + mu_yy + c1).mul(s_xx + s_yy + c2);
    cv::Mat map;
    cv::divide(num, den, map);
    return cv::mean(map)[0];
}

std::uint64_t average_hash(const cv::Mat& image) {
    cv::Mat small;
    cv::resize(gray64(image), small, cv::Size(8, 8), 0, 0, cv::INTER_AREA);
    const double mean = cv::mean(small)[0];
    std::uint64_t hash = 0;
    for (int i = 0; i < 64; ++i) {
        if (small.at<double>(i / 8, i % 8) > mean) hash |= std::uint64_t{1} << i;
    }
    return hash;
}

int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

std::size_t feature_length(Extractor kind, cv::Size size) {
    switch (kind) {
        case Extractor::ErrMetrics: return 4;
        case Extractor::SIFT: return 6;
        case Extractor::HardNet1: return kDescriptorSize;
        default:
            return static_cast<std::size_t>(size.height / kPatchSize) * static_cast<std::size_t>(size.width / kPatchSize);
    }
}

FeatureVector extract_features(Extractor kind, const ReconstructionTriplet& t, const PatchDescriptor& descriptor,
                               std::string sample_id, const FeatureOptions& options) {
    check_same_shape(t.original, t.reconstruction);
    check_same_shape(t.original, t.difference);
    if (t.original.rows % kPatchSize != 0 || t.original.cols % kPatchSize != 0) {
        throw ShapeError("triplet images must have dimensions divisible by 32");
    }

    FeatureVector fv;
    fv.extractor = kind;
    fv.sample_id = std::move(sample_id);
    switch (kind) {
        case Extractor::ErrMetrics:
            fv.values = {l2_distance(t.original, t.reconstruction), ssim(t.original, t.reconstruction),
                         static_cast<double>(hamming_distance(average_hash(t.original), average_hash(t.reconstruction))),
                         mean_squared_error(t.original, t.reconstruction)};
            break;
        case Extractor::SIFT:
            fv.values = sift_statistics(t.difference);
            break;
        case Extractor::HardNet1: {
            cv::Mat small;
            cv::resize(gray32(options.hardnet1_on_original ? t.original : t.difference), small,
                       cv::Size(kPatchSize, kPatchSize), 0, 0, cv::INTER_AREA);
            const auto d = describe_patch(small, descriptor);
            fv.values.assign(d.begin(), d.end());
            break;
        }
        case Extractor::HardNet2: {
            // distance of each block's descriptor from the descriptor of an empty block
            const auto blocks = split_blocks(t.difference);
            const cv::Mat empty = cv::Mat::zeros(kPatchSize, kPatchSize, CV_32F);
            const Descriptor reference = describe_patch(empty, descriptor);
            for (const auto& d : describe_patches(blocks, descriptor)) {
                double sq = 0;
                for (std::size_t i = 0; i < d.size(); ++i) {
                    const double diff = static_cast<double>(d[i]) - reference[i];
                    sq += diff * diff;
                }
                fv.values.push_back(std::sqrt(sq));
            }
            break;
        }
        case Extractor::HardNet3:
        case Extractor::HardNet4: {
            const auto a = describe_patches(split_blocks(t.original), descriptor);
            const auto b = describe_patches(split_blocks(t.reconstruction), descriptor);
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double c = cosine(a[i], b[i]);
                fv.values.push_back(kind == Extractor::HardNet3 ? c : std::log(std::clamp(c, 1e-6, 1.0)));
            }
            break;
        }
    }
    for (double v : fv.values) {
        if (!std::isfinite(v)) throw NumericError(std::string(to_string(kind)) + " produced a non-finite feature");
    }
    return fv;
}

void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureVector> rows,
                       std::span<const SampleLabel> labels) {
    if (rows.size() != labels.size()) throw ShapeError("feature rows and labels differ in count");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    out.precision(10);
    out << "sample_id,label";
    const std::size_t k = rows.empty() ? 0 : rows.front().values.size();
    for (std::size_t i = 0; i < k; ++i) out << ",f" << i;
    out << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << rows[r].sample_id << ',' << to_string(labels[r]);
        for (double v : rows[r].values) out << ',' << v;
        out << '\n';
    }
}

}  // namespace reconad
