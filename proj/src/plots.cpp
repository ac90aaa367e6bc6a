#include "reconad/plots.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "reconad/error.hpp"

namespace reconad {

namespace {

const cv::Scalar kOkColor(200, 120, 30);   // BGR
const cv::Scalar kNokColor(40, 40, 220);
const cv::Scalar kInk(30, 30, 30);
const cv::Scalar kPaper(255, 255, 255);

cv::Mat to_bgr8(const cv::Mat& image, bool stretch) {
    cv::Mat f;
    image.convertTo(f, CV_32F);
    if (stretch) {
        double lo = 0, hi = 0;
        cv::minMaxLoc(f.reshape(1), &lo, &hi);
        f = hi > lo ? (f - lo) / (hi - lo) : cv::Mat::zeros(f.size(), f.type());
    }
    cv::Mat u8;
    f.convertTo(u8, CV_8U, 255.0);
    cv::Mat bgr;
    if (u8.channels() == 1) {
        cv::cvtColor(u8, bgr, cv::COLOR_GRAY2BGR);
    } else {
        cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    }
    return bgr;
}

// Latent activations as an image: channel mean for spatial latents, a near
// square grid for flat ones.
cv::Mat latent_image(const Latent& latent, cv::Size target) {
    cv::Mat grid;
    if (latent.values.empty()) {
        grid = cv::Mat::zeros(1, 1, CV_32F);
    } else if (latent.shape.size() == 3) {
        const int c = static_cast<int>(latent.shape[0]);
        const int h = static_cast<int>(latent.shape[1]);
        const int w = static_cast<int>(latent.shape[2]);
        grid = cv::Mat::zeros(h, w, CV_32F);
        for (int k = 0; k < c; ++k) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    grid.at<float>(y, x) += latent.values[static_cast<std::size_t>((k * h + y) * w + x)] / c;
                }
            }
        }
    } else {
        const int n = static_cast<int>(latent.values.size());
        const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
        grid = cv::Mat::zeros(side, side, CV_32F);
        for (int i = 0; i < n; ++i) grid.at<float>(i / side, i % side) = latent.values[static_cast<std::size_t>(i)];
    }
    cv::Mat resized;
    cv::resize(grid, resized, target, 0, 0, cv::INTER_NEAREST);
    return resized;
}

void write_png(const cv::Mat& image, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    if (!cv::imwrite(file.string(), image)) throw LoadError("cannot write " + file.string());
}

struct Frame {
    cv::Rect area;
    double x0, x1, y0, y1;
    cv::Point map(double x, double y) const {
        const double u = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
        const double v = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
        return {area.x + static_cast<int>(std::lround(u * area.width)),
                area.y + area.height - static_cast<int>(std::lround(v * area.height))};
    }
};

void draw_axes(cv::Mat& canvas, const Frame& f, const std::string& xlabel, const std::string& ylabel,
               const std::string& title) {
    cv::rectangle(canvas, f.area, kInk, 1);
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    cv::putText(canvas, xlabel, {f.area.x + f.area.width / 2 - 40, f.area.y + f.area.height + 35}, font, 0.5, kInk, 1,
                cv::LINE_AA);
    cv::putText(canvas, ylabel, {5, f.area.y - 8}, font, 0.5, kInk, 1, cv::LINE_AA);
    if (!title.empty()) cv::putText(canvas, title, {f.area.x, 20}, font, 0.5, kInk, 1, cv::LINE_AA);
    char buf[32];
    for (int i = 0; i <= 4; ++i) {
        const double t = i / 4.0;
        const double xv = f.x0 + t * (f.x1 - f.x0), yv = f.y0 + t * (f.y1 - f.y0);
        const cv::Point px = f.map(xv, f.y0), py = f.map(f.x0, yv);
        cv::line(canvas, px, px + cv::Point(0, 4), kInk, 1);
        cv::line(canvas, py, py - cv::Point(4, 0), kInk, 1);
        std::snprintf(buf, sizeof buf, "%.2g", xv);
        cv::putText(canvas, buf, px + cv::Point(-12, 18), font, 0.35, kInk, 1, cv::LINE_AA);
        std::snprintf(buf, sizeof buf, "%.2g", yv);
        cv::putText(canvas, buf, py + cv::Point(-40, 4), font, 0.35, kInk, 1, cv::LINE_AA);
    }
}

}  // namespace

PanelPlot render_reconstruction_panel(const ReconstructionTriplet& t, const Latent& latent,
                                      const std::filesystem::path& file) {
    if (t.original.empty() || t.reconstruction.empty() || t.difference.empty()) {
        throw DomainError("reconstruction panel needs original, reconstruction and difference images");
    }
    const cv::Size s = t.original.size();
    std::vector<cv::Mat> tiles{to_bgr8(t.original, false), to_bgr8(latent_image(latent, s), true),
                               to_bgr8(t.reconstruction, false), to_bgr8(t.difference, true)};
    cv::Mat panel;
    cv::hconcat(tiles, panel);
    write_png(panel, file);
    return {file, s.width, panel.size(), static_cast<int>(tiles.size())};
}

std::vector<cv::Point2d> pca_2d(const FeatureMatrix& features) {
    if (features.empty()) return {};
    const auto n = static_cast<Eigen::Index>(features.size());
    const auto d = static_cast<Eigen::Index>(features.front().size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(features[static_cast<std::size_t>(i)].size()) != d) throw ShapeError("ragged feature matrix");
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = features[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    x.rowwise() -= x.colwise().mean();
    Eigen::MatrixXd components = Eigen::MatrixXd::Zero(d, 2);
    if (n > 1) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x / static_cast<double>(n - 1));
        // eigenvalues ascend; take the last two columns, fixing each sign so the
        // largest-magnitude loading is positive
        for (int c = 0; c < 2 && c < d; ++c) {
            Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
            Eigen::Index arg = 0;
            v.cwiseAbs().maxCoeff(&arg);
            if (v(arg) < 0) v = -v;
            components.col(c) = v;
        }
    }
    const Eigen::MatrixXd p = x * components;
    std::vector<cv::Point2d> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out.emplace_back(p(i, 0), p(i, 1));
    return out;
}

ScatterPlot render_feature_space(const FeatureMatrix& features, std::span<const SampleLabel> labels,
                                 const std::filesystem::path& file, const std::string& title) {
    if (features.empty()) throw DomainError("feature-space plot needs at least one sample");
    if (features.size() != labels.size()) throw ShapeError("features and labels differ in count");
    const auto points = pca_2d(features);
    double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
    for (const auto& p : points) {
        x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    const double mx = (x1 - x0) * 0.05 + 1e-9, my = (y1 - y0) * 0.05 + 1e-9;
    cv::Mat canvas(520, 640, CV_8UC3, kPaper);
    const Frame f{cv::Rect(70, 40, 540, 420), x0 - mx, x1 + mx, y0 - my, y1 + my};
    draw_axes(canvas, f, "component 1", "component 2", title);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const cv::Point p = f.map(points[i].x, points[i].y);
        if (labels[i] == SampleLabel::OK) {
            cv::circle(canvas, p, 3, kOkColor, cv::FILLED, cv::LINE_AA);
        } else {
            cv::drawMarker(canvas, p, kNokColor, cv::MARKER_TILTED_CROSS, 8, 2, cv::LINE_AA);
        }
    }
    const std::vector<std::string> legend{"OK", "NOK"};
    const cv::Point origin(f.area.x + f.area.width - 80, f.area.y + 15);
    cv::rectangle(canvas, cv::Rect(origin - cv::Point(10, 12), cv::Size(80, 42)), kInk, 1);
    cv::circle(canvas, origin, 3, kOkColor, cv::FILLED, cv::LINE_AA);
    cv::putText(canvas, legend[0], origin + cv::Point(12, 5), cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1, cv::LINE_AA);
    cv::drawMarker(canvas, origin + cv::Point(0, 18), kNokColor, cv::MARKER_TILTED_CROSS, 8, 2, cv::LINE_AA);
    cv::putText(canvas, legend[1], origin + cv::Point(12, 23), cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1, cv::LINE_AA);
    write_png(canvas, file);
    return {file, legend, points.size()};
}

RocPlot render_roc(const RocCurve& roc, const DecisionThreshold& threshold, const std::filesystem::path& file,
                   const std::string& title) {
    if (roc.points.empty()) throw DomainError("ROC plot needs a computed curve");
    cv::Mat canvas(520, 560, CV_8UC3, kPaper);
    const Frame f{cv::Rect(70, 40, 440, 420), 0, 1, 0, 1};
    draw_axes(canvas, f, "false positive rate", "true positive rate", title);
    cv::line(canvas, f.map(0, 0), f.map(1, 1), cv::Scalar(180, 180, 180), 1, cv::LINE_AA);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
        cv::line(canvas, f.map(roc.points[i - 1].fpr, roc.points[i - 1].tpr), f.map(roc.points[i].fpr, roc.points[i].tpr),
                 kOkColor, 2, cv::LINE_AA);
    }
    // the threshold may come from validation scores: place it on this curve,
    // at the last point whose scores all lie strictly above it
    cv::Point2d eer(roc.points.front().fpr, roc.points.front().tpr);
    for (const auto& p : roc.points) {
        if (p.threshold > threshold.value) eer = {p.fpr, p.tpr};
    }
    cv::circle(canvas, f.map(eer.x, eer.y), 6, kNokColor, cv::FILLED, cv::LINE_AA);
    char buf[96];
    std::snprintf(buf, sizeof buf, "EER threshold %.3g  AUC %.2f", threshold.value, roc.auc);
    cv::putText(canvas, buf, f.map(0.35, 0.08), cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1, cv::LINE_AA);
    write_png(canvas, file);
    return {file, roc.points.size(), 1, eer};
}

}  // namespace reconad
