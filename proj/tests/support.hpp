#pragma once

// Hand-rolled generators and brute-force reference implementations shared by
// the unit tests and the acceptance binary. The oracles deliberately avoid the
// library's own helpers (no Eigen, no sorting tricks) so agreement means
// something.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "reconad/dataset.hpp"
#include "reconad/oneclass.hpp"
#include "reconad/random.hpp"

namespace testing_support {

using reconad::FeatureMatrix;
using reconad::Rng;
using reconad::SampleLabel;

inline double gaussian(Rng& rng) {
    const double u1 = std::max(reconad::uniform01(rng), 1e-300);
    const double u2 = reconad::uniform01(rng);
    return std::sqrt(-2 * std::log(u1)) * std::cos(2 * M_PI * u2);
}

inline FeatureMatrix random_points(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
    FeatureMatrix m(n, std::vector<double>(d));
    for (auto& row : m) {
        for (auto& v : row) v = scale * gaussian(rng);
    }
    return m;
}

/// Random labels with at least one of each class.
inline std::vector<SampleLabel> random_labels(Rng& rng, std::size_t n) {
    std::vector<SampleLabel> labels(n);
    for (auto& l : labels) l = reconad::uniform01(rng) < 0.5 ? SampleLabel::OK : SampleLabel::NOK;
    if (n >= 2) {
        labels[reconad::uniform_index(rng, n / 2)] = SampleLabel::OK;
        labels[n / 2 + reconad::uniform_index(rng, n - n / 2)] = SampleLabel::NOK;
    }
    return labels;
}

/// Scores drawn from a small integer grid so ties are frequent.
inline std::vector<double> random_scores(Rng& rng, std::size_t n, bool ties) {
    std::vector<double> s(n);
    for (auto& v : s) v = ties ? static_cast<double>(reconad::uniform_index(rng, 8)) / 4.0 : gaussian(rng);
    return s;
}

inline cv::Mat random_image(Rng& rng, int rows, int cols, int channels = 1) {
    cv::Mat m(rows, cols, CV_MAKETYPE(CV_32F, channels));
    auto* p = m.ptr<float>();
    for (std::size_t i = 0; i < m.total() * static_cast<std::size_t>(channels); ++i) {
        p[i] = static_cast<float>(reconad::uniform01(rng));
    }
    return m;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Local outlier factor written straight from the definition: reachability
/// distances over the k nearest reference points, local reachability density
/// with the conventional 1e-10 guard, ratio of neighbor to own density.
inline std::vector<double> lof_oracle(const FeatureMatrix& ref, const FeatureMatrix& queries, int k) {
    const std::size_t n = ref.size();
    auto knn = [&](const std::vector<double>& q, std::size_t self) {
        std::vector<std::size_t> chosen;
        std::vector<bool> used(n, false);
        if (self < n) used[self] = true;
        for (int t = 0; t < k; ++t) {
            std::size_t best = n;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (used[j]) continue;
                const double d = distance(ref[j], q);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            used[best] = true;
            chosen.push_back(best);
        }
        return chosen;
    };
    std::vector<double> kdist(n);
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) {
        neighbors[i] = knn(ref[i], i);
        kdist[i] = distance(ref[i], ref[neighbors[i].back()]);
    }
    auto lrd_of = [&](const std::vector<double>& q, const std::vector<std::size_t>& nb) {
        double sum = 0;
        for (std::size_t j : nb) sum += std::max(distance(q, ref[j]), kdist[j]);
        return 1.0 / (sum / k + 1e-10);
    };
    std::vector<double> lrd(n);
    for (std::size_t i = 0; i < n; ++i) lrd[i] = lrd_of(ref[i], neighbors[i]);

    std::vector<double> out;
    for (const auto& q : queries) {
        const auto nb = knn(q, n);
        double neighbor_lrd = 0;
        for (std::size_t j : nb) neighbor_lrd += lrd[j];
        out.push_back(neighbor_lrd / k / lrd_of(q, nb));
    }
    return out;
}

/// Gauss-Jordan inverse with partial pivoting.
inline std::vector<std::vector<double>> invert(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> inv(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
        }
        std::swap(a[c], a[p]);
        std::swap(inv[c], inv[p]);
        const double pivot = a[c][c];
        for (std::size_t j = 0; j < n; ++j) {
            a[c][j] /= pivot;
            inv[c][j] /= pivot;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r][c];
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[c][j];
                inv[r][j] -= f * inv[c][j];
            }
        }
    }
    return inv;
}

/// Mahalanobis distance of each query from the mean/covariance (divide by n)
/// computed directly from `rows`.
inline std::vector<double> mahalanobis_oracle(const FeatureMatrix& rows, const FeatureMatrix& queries) {
    const std::size_t n = rows.size(), d = rows.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / static_cast<double>(n);
    }
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / static_cast<double>(n);
        }
    }
    const auto inv = invert(cov);
    std::vector<double> out;
    for (const auto& q : queries) {
        double s = 0;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) s += (q[i] - mean[i]) * inv[i][j] * (q[j] - mean[j]);
        }
        out.push_back(std::sqrt(s));
    }
    return out;
}

/// Probability that a random NOK sample outscores a random OK sample, ties 1/2.
inline double concordance_oracle(const std::vector<double>& scores, const std::vector<SampleLabel>& labels) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != SampleLabel::NOK) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != SampleLabel::OK) continue;
            pairs += 1;
            if (scores[i] > scores[j]) wins += 1;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

/// |FPR - FNR| at a threshold, counted one sample at a time.
inline double rate_gap(const std::vector<double>& scores, const std::vector<SampleLabel>& labels, double t) {
    double ok = 0, nok = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == SampleLabel::OK) {
            ok += 1;
            if (scores[i] > t) fp += 1;
        } else {
            nok += 1;
            if (!(scores[i] > t)) fn += 1;
        }
    }
    return std::abs(fp / ok - fn / nok);
}

/// Every threshold that can change a decision: each score itself, the
/// midpoints between distinct scores, and both infinities.
inline std::vector<double> exhaustive_thresholds(const std::vector<double>& scores) {
    std::vector<double> t{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (double a : scores) {
        t.push_back(a);
        for (double b : scores) {
            if (a < b) t.push_back((a + b) / 2);
        }
    }
    return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("reconad_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing_support
