#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include <fstream>

#include "reconad/error.hpp"
#include "reconad/features.hpp"
#include "support.hpp"

using namespace reconad;
namespace ts = testing_support;

namespace {

ReconstructionTriplet make_triplet(const cv::Mat& original, const cv::Mat& reconstruction) {
    ReconstructionTriplet t{original.clone(), reconstruction.clone(), {}};
    cv::absdiff(original, reconstruction, t.difference);
    return t;
}

ReconstructionTriplet noisy_triplet(Rng& rng, int rows, int cols, double noise) {
    const auto original = ts::random_image(rng, rows, cols);
    cv::Mat recon = original.clone();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            recon.at<float>(r, c) = static_cast<float>(std::clamp(recon.at<float>(r, c) + noise * ts::gaussian(rng), 0.0, 1.0));
        }
    }
    return make_triplet(original, recon);
}

int reflect(int i, int n) {
    // fedcba|abcdef|fedcba
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
}

double ssim_oracle(const cv::Mat& a, const cv::Mat& b) {
    double w[11];
    double wsum = 0;
    for (int i = 0; i < 11; ++i) wsum += w[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
    for (double& v : w) v /= wsum;
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    for (int r = 0; r < a.rows; ++r) {
        for (int c = 0; c < a.cols; ++c) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int i = 0; i < 11; ++i) {
                for (int j = 0; j < 11; ++j) {
                    const double k = w[i] * w[j];
                    const double x = a.at<float>(reflect(r + i - 5, a.rows), reflect(c + j - 5, a.cols));
                    const double y = b.at<float>(reflect(r + i - 5, a.rows), reflect(c + j - 5, a.cols));
                    mx += k * x;
                    my += k * y;
                    xx += k * x * x;
                    yy += k * y * y;
                    xy += k * x * y;
                }
            }
            const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    return total / (a.rows * a.cols);
}

/// 8x8 block means of a 64x64 image, bit set where the block mean exceeds the overall mean.
std::uint64_t hash_oracle(const cv::Mat& img) {
    double blocks[64];
    double mean = 0;
    for (int by = 0; by < 8; ++by) {
        for (int bx = 0; bx < 8; ++bx) {
            double s = 0;
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 8; ++x) s += img.at<float>(by * 8 + y, bx * 8 + x);
            }
            blocks[by * 8 + bx] = s / 64;
            mean += s / 64 / 64;
        }
    }
    std::uint64_t h = 0;
    for (int i = 0; i < 64; ++i) {
        if (blocks[i] > mean) h |= std::uint64_t{1} << i;
    }
    return h;
}

double norm(const Descriptor& d) {
    double s = 0;
    for (float v : d) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

}  // namespace

TEST(Blocks, GridCounts) {
    Rng rng(1);
    EXPECT_EQ(split_blocks(ts::random_image(rng, 128, 256)).size(), 32u);
    EXPECT_EQ(split_blocks(ts::random_image(rng, 32, 32)).size(), 1u);
    EXPECT_THROW(split_blocks(ts::random_image(rng, 100, 100)), ShapeError);
}

TEST(Blocks, RowMajorOrderAndChannelMean) {
    cv::Mat img(64, 96, CV_32FC3);
    for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 96; ++c) {
            const float v = static_cast<float>((r / 32) * 3 + c / 32) / 10.0f;
            img.at<cv::Vec3f>(r, c) = {v, v + 0.1f, v + 0.2f};
        }
    }
    const auto blocks = split_blocks(img);
    ASSERT_EQ(blocks.size(), 6u);
    for (int i = 0; i < 6; ++i) {
        EXPECT_EQ(blocks[i].channels(), 1);
        EXPECT_EQ(blocks[i].size(), cv::Size(32, 32));
        EXPECT_NEAR(blocks[i].at<float>(5, 5), i / 10.0 + 0.1, 1e-6);
    }
}

TEST(Descriptor, FallbackContracts) {
    const FallbackDescriptor d;
    EXPECT_EQ(d.backend(), DescriptorBackend::DeterministicFallback);
    Rng rng(2);
    const auto patch = ts::random_image(rng, 32, 32);
    const auto a = describe_patch(patch, d);
    ASSERT_EQ(a.size(), static_cast<std::size_t>(kDescriptorSize));
    EXPECT_NEAR(norm(a), 1.0, 1e-5);
    EXPECT_EQ(a, describe_patch(patch, d));
    const cv::Mat brighter = patch + 0.3;
    const auto b = describe_patch(brighter, d);
    for (int i = 0; i < kDescriptorSize; ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
    EXPECT_THROW(describe_patch(ts::random_image(rng, 32, 16), d), ShapeError);
    EXPECT_THROW(describe_patch(ts::random_image(rng, 32, 32, 3), d), ShapeError);
}

TEST(DescriptorProperties, UnitNormOnRandomPatches) {
    const FallbackDescriptor d(123);
    Rng rng(3);
    std::vector<cv::Mat> patches;
    for (int i = 0; i < 50; ++i) {
        cv::Mat p = ts::random_image(rng, 32, 32) * uniform(rng, 0.0, 2.0);
        if (i % 10 == 0) p.setTo(0.4);  // flat patch
        patches.push_back(p);
    }
    for (const auto& desc : describe_patches(patches, d)) EXPECT_NEAR(norm(desc), 1.0, 1e-5);
}

TEST(Descriptor, Normalization) {
    Rng rng(4);
    const auto n = normalize_patch(ts::random_image(rng, 32, 32) * 3 + 1);
    cv::Scalar mean, stddev;
    cv::meanStdDev(n, mean, stddev);
    EXPECT_NEAR(mean[0], 0, 1e-5);
    EXPECT_NEAR(stddev[0], 1, 1e-4);
    EXPECT_EQ(cv::countNonZero(normalize_patch(cv::Mat(32, 32, CV_32FC1, cv::Scalar(0.7)))), 0);
}

TEST(Descriptor, MissingWeightsFallBack) {
    EXPECT_EQ(make_descriptor()->backend(), DescriptorBackend::DeterministicFallback);
    EXPECT_EQ(make_descriptor("/nonexistent/hardnet.pt")->backend(), DescriptorBackend::DeterministicFallback);
    EXPECT_THROW(load_hardnet("/nonexistent/hardnet.pt"), LoadError);
}

TEST(Metrics, IdentityValues) {
    Rng rng(5);
    const auto img = ts::random_image(rng, 64, 64);
    EXPECT_DOUBLE_EQ(l2_distance(img, img), 0.0);
    EXPECT_DOUBLE_EQ(mean_squared_error(img, img), 0.0);
    EXPECT_NEAR(ssim(img, img), 1.0, 1e-12);
    EXPECT_EQ(hamming_distance(average_hash(img), average_hash(img)), 0);
}

TEST(Metrics, AgainstDirectFormulas) {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const auto t = noisy_triplet(rng, 32, 32, 0.2);
        double sq = 0;
        for (int r = 0; r < 32; ++r) {
            for (int c = 0; c < 32; ++c) {
                const double d = t.original.at<float>(r, c) - t.reconstruction.at<float>(r, c);
                sq += d * d;
            }
        }
        EXPECT_NEAR(l2_distance(t.original, t.reconstruction), std::sqrt(sq), 1e-9);
        EXPECT_NEAR(mean_squared_error(t.original, t.reconstruction), sq / 1024, 1e-12);
        EXPECT_NEAR(ssim(t.original, t.reconstruction), ssim_oracle(t.original, t.reconstruction), 1e-6);
    }
}

TEST(Metrics, AverageHashMatchesBlockMeans) {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const auto img = ts::random_image(rng, 64, 64);
        EXPECT_EQ(average_hash(img), hash_oracle(img));
    }
    EXPECT_EQ(hamming_distance(0, ~std::uint64_t{0}), 64);
    EXPECT_EQ(hamming_distance(0b1011, 0b0001), 2);
}

TEST(Extract, IdentityTriplet) {
    Rng rng(8);
    const auto img = ts::random_image(rng, 64, 128);
    const auto t = make_triplet(img, img);
    const FallbackDescriptor d;
    const auto err = extract_features(Extractor::ErrMetrics, t, d, "s1");
    EXPECT_EQ(err.sample_id, "s1");
    ASSERT_EQ(err.values.size(), 4u);
    EXPECT_DOUBLE_EQ(err.values[0], 0.0);
    EXPECT_NEAR(err.values[1], 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(err.values[2], 0.0);
    EXPECT_DOUBLE_EQ(err.values[3], 0.0);
    for (double v : extract_features(Extractor::HardNet3, t, d).values) EXPECT_NEAR(v, 1.0, 1e-6);
    for (double v : extract_features(Extractor::HardNet4, t, d).values) EXPECT_NEAR(v, 0.0, 1e-6);
    for (double v : extract_features(Extractor::SIFT, t, d).values) EXPECT_EQ(v, 0.0);
}

TEST(Extract, HardNet2BlockCount) {
    Rng rng(9);
    const FallbackDescriptor d;
    const auto t = noisy_triplet(rng, 128, 256, 0.1);
    EXPECT_EQ(extract_features(Extractor::HardNet2, t, d).values.size(), 32u);
    // a zero difference image sits exactly on the reference descriptor
    const auto same = make_triplet(t.original, t.original);
    for (double v : extract_features(Extractor::HardNet2, same, d).values) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(Extract, HardNet1SourceOption) {
    Rng rng(10);
    const FallbackDescriptor d;
    const auto t = noisy_triplet(rng, 64, 64, 0.2);
    const auto on_diff = extract_features(Extractor::HardNet1, t, d).values;
    FeatureOptions opts;
    opts.hardnet1_on_original = true;
    const auto on_orig = extract_features(Extractor::HardNet1, t, d, {}, opts).values;
    EXPECT_EQ(on_diff.size(), 128u);
    EXPECT_EQ(on_orig.size(), 128u);
    EXPECT_NE(on_diff, on_orig);
}

TEST(ExtractProperties, LengthsRangesAndPurity) {
    Rng rng(11);
    const FallbackDescriptor fallback(1), other(2);
    const std::vector<cv::Size> sizes{{32, 32}, {64, 32}, {128, 64}};
    for (int trial = 0; trial < 12; ++trial) {
        const auto size = sizes[trial % sizes.size()];
        const auto t = noisy_triplet(rng, size.height, size.width, uniform(rng, 0.0, 0.5));
        for (Extractor kind : kAllExtractors) {
            for (const PatchDescriptor* d : {static_cast<const PatchDescriptor*>(&fallback),
                                             static_cast<const PatchDescriptor*>(&other)}) {
                const auto f = extract_features(kind, t, *d);
                ASSERT_EQ(f.values.size(), feature_length(kind, size)) << to_string(kind);
                for (double v : f.values) EXPECT_TRUE(std::isfinite(v));
                if (kind == Extractor::HardNet3) {
                    for (double v : f.values) {
                        EXPECT_GE(v, -1.0);
                        EXPECT_LE(v, 1.0);
                    }
                }
                if (kind == Extractor::HardNet4) {
                    for (double v : f.values) EXPECT_LE(v, 0.0);
                }
                if (kind == Extractor::ErrMetrics) {
                    EXPECT_GE(f.values[1], -1.0);
                    EXPECT_LE(f.values[1], 1.0);
                    EXPECT_GE(f.values[2], 0.0);
                    EXPECT_LE(f.values[2], 64.0);
                }
                EXPECT_EQ(f.values, extract_features(kind, t, *d).values);
            }
        }
    }
    EXPECT_EQ(feature_length(Extractor::HardNet4, {256, 128}), 32u);
    EXPECT_EQ(feature_length(Extractor::SIFT, {256, 128}), 6u);
}

TEST(Extract, ErrorsSurface) {
    Rng rng(12);
    const FallbackDescriptor d;
    auto t = noisy_triplet(rng, 32, 32, 0.1);
    t.reconstruction.at<float>(3, 3) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(extract_features(Extractor::ErrMetrics, t, d), NumericError);
    const auto bad = make_triplet(ts::random_image(rng, 40, 40), ts::random_image(rng, 40, 40));
    EXPECT_THROW(extract_features(Extractor::HardNet3, bad, d), ShapeError);
    EXPECT_THROW(parse_extractor("HardNet5"), DomainError);
    EXPECT_EQ(parse_extractor("SIFT"), Extractor::SIFT);
}

TEST(Extract, SiftFindsKeypointsOnBlobs) {
    cv::Mat diff(64, 64, CV_32FC1, cv::Scalar(0));
    cv::circle(diff, {20, 20}, 5, cv::Scalar(1), cv::FILLED);
    cv::circle(diff, {44, 40}, 7, cv::Scalar(1), cv::FILLED);
    ReconstructionTriplet t{diff.clone(), cv::Mat::zeros(64, 64, CV_32FC1), diff.clone()};
    const auto f = extract_features(Extractor::SIFT, t, FallbackDescriptor{}).values;
    EXPECT_GT(f[0], 0);
    EXPECT_LE(f[1], f[2]);  // mean scale <= max scale
    EXPECT_LE(f[3], f[4]);
    EXPECT_NEAR(f[5], f[3] * f[0], 1e-6 * std::max(1.0, f[5]));
}

TEST(FeatureCsv, HeaderAndRows) {
    Rng rng(13);
    const FallbackDescriptor d;
    std::vector<FeatureVector> rows;
    for (int i = 0; i < 3; ++i) {
        rows.push_back(extract_features(Extractor::ErrMetrics, noisy_triplet(rng, 32, 32, 0.1), d, "id" + std::to_string(i)));
    }
    const std::vector<SampleLabel> labels{SampleLabel::OK, SampleLabel::NOK, SampleLabel::OK};
    const auto file = ts::temp_dir("feature_csv") / "features.csv";
    write_feature_csv(file, rows, labels);
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "sample_id,label,f0,f1,f2,f3");
    std::getline(in, line);
    EXPECT_EQ(line.rfind("id0,OK,", 0), 0u);
    std::getline(in, line);
    EXPECT_EQ(line.rfind("id1,NOK,", 0), 0u);
}
