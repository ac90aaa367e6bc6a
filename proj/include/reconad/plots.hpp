#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "reconad/autoencoder.hpp"
#include "reconad/evaluation.hpp"
#include "reconad/oneclass.hpp"

namespace reconad {

struct PanelPlot {
    std::filesystem::path file;
    int panel_width = 0;
    cv::Size size;
    int panels = 0;
};

/// Original, latent, reconstruction and difference side by side, each the
/// size of the sample.
PanelPlot render_reconstruction_panel(const ReconstructionTriplet& triplet, const Latent& latent,
                                      const std::filesystem::path& file);

/// First two principal components of the rows (columns centered).
std::vector<cv::Point2d> pca_2d(const FeatureMatrix& features);

struct ScatterPlot {
    std::filesystem::path file;
    std::vector<std::string> legend;
    std::size_t points = 0;
};

ScatterPlot render_feature_space(const FeatureMatrix& features, std::span<const SampleLabel> labels,
                                 const std::filesystem::path& file, const std::string& title = {});

struct RocPlot {
    std::filesystem::path file;
    std::size_t curve_points = 0;
    std::size_t marked_points = 0;
    cv::Point2d eer_point;  // (FPR, TPR) of the threshold on the plotted curve
};

RocPlot render_roc(const RocCurve& roc, const DecisionThreshold& threshold, const std::filesystem::path& file,
                   const std::string& title = {});

}  // namespace reconad
