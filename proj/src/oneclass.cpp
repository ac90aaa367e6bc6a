#include "reconad/oneclass.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "reconad/error.hpp"
#include "reconad/random.hpp"

namespace reconad {

namespace {

constexpr double kShrinkage = 1e-3;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t check_matrix(const FeatureMatrix& x, const char* what) {
    if (x.empty()) throw DomainError(std::string(what) + ": empty feature matrix");
    const std::size_t d = x.front().size();
    if (d == 0) throw DomainError(std::string(what) + ": zero-length feature rows");
    for (const auto& row : x) {
        if (row.size() != d) throw ShapeError(std::string(what) + ": ragged feature matrix");
        for (double v : row) {
            if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite feature value");
        }
    }
    return d;
}

void check_row(std::span<const double> row, std::size_t d) {
    if (row.size() != d) {
        throw ShapeError("feature row has " + std::to_string(row.size()) + " entries, model expects " +
                         std::to_string(d));
    }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

nlohmann::json matrix_json(const FeatureMatrix& m) { return m; }

FeatureMatrix matrix_from(const nlohmann::json& doc) { return doc.get<FeatureMatrix>(); }

// --- robust covariance ---------------------------------------------------

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

Moments support_moments(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
    const auto d = x.cols();
    Moments m{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
    for (std::size_t r : rows) m.mean += x.row(static_cast<Eigen::Index>(r)).transpose();
    m.mean /= static_cast<double>(rows.size());
    for (std::size_t r : rows) {
        const Eigen::VectorXd c = x.row(static_cast<Eigen::Index>(r)).transpose() - m.mean;
        m.covariance += c * c.transpose();
    }
    m.covariance /= static_cast<double>(rows.size());
    return m;
}

// Shrink toward a scaled identity when the covariance is (numerically) singular.
Eigen::MatrixXd regularize(const Eigen::MatrixXd& c) {
    const auto d = c.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo > 1e-12 * std::max(hi, 1e-300) && lo > 0) return c;
    double scale = c.trace() / static_cast<double>(d);
    if (!(scale > 0)) scale = 1;
    return (1 - kShrinkage) * c + kShrinkage * scale * Eigen::MatrixXd::Identity(d, d);
}

std::shared_ptr<const OneClassModel> fit_robust_covariance(const FeatureMatrix& features, double contamination) {
    const std::size_t n = features.size();
    const std::size_t d = features.front().size();
    if (n < 2) throw CapacityError("RobustCovariance needs at least 2 samples, got " + std::to_string(n));
    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features[i][j];
    }
    const auto outliers = static_cast<std::size_t>(std::ceil(contamination * static_cast<double>(n) - 1e-9));
    const std::size_t h = std::max<std::size_t>(2, n - std::min(outliers, n - 2));

    std::vector<std::size_t> support(n);
    std::iota(support.begin(), support.end(), 0);
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (int step = 0; step < 100; ++step) {
        const Moments m = support_moments(x, support);
        const Eigen::LDLT<Eigen::MatrixXd> solver(regularize(m.covariance));
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::VectorXd c = x.row(static_cast<Eigen::Index>(i)).transpose() - m.mean;
            dist[i] = {c.dot(solver.solve(c)), i};
        }
        std::sort(dist.begin(), dist.end());
        std::vector<std::size_t> next(h);
        for (std::size_t i = 0; i < h; ++i) next[i] = dist[i].second;
        std::sort(next.begin(), next.end());
        if (next == support) break;
        support = std::move(next);
    }

    const Moments m = support_moments(x, support);
    const Eigen::MatrixXd cov = regularize(m.covariance);
    std::vector<double> mean(m.mean.data(), m.mean.data() + d);
    std::vector<double> flat(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    return std::make_shared<RobustCovarianceModel>(std::move(mean), std::move(flat), std::move(support));
}

// --- isolation forest ----------------------------------------------------

int build_tree(IsolationForestModel::Tree& tree, const FeatureMatrix& x, std::vector<std::size_t>& rows,
               std::size_t begin, std::size_t end, int depth, int limit, Rng& rng) {
    const int index = static_cast<int>(tree.size());
    tree.push_back({});
    const int count = static_cast<int>(end - begin);
    if (depth >= limit || count <= 1) {
        tree[index].size = count;
        return index;
    }
    const std::size_t d = x.front().size();
    std::vector<int> candidates;
    std::vector<std::pair<double, double>> ranges(d);
    for (std::size_t f = 0; f < d; ++f) {
        double lo = kInf, hi = -kInf;
        for (std::size_t i = begin; i < end; ++i) {
            lo = std::min(lo, x[rows[i]][f]);
            hi = std::max(hi, x[rows[i]][f]);
        }
        ranges[f] = {lo, hi};
        if (hi > lo) candidates.push_back(static_cast<int>(f));
    }
    if (candidates.empty()) {
        tree[index].size = count;
        return index;
    }
    const int feature = candidates[uniform_index(rng, candidates.size())];
    const auto [lo, hi] = ranges[static_cast<std::size_t>(feature)];
    double split = uniform(rng, lo, hi);
    if (split <= lo) split = std::nextafter(lo, hi);
    const auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                    rows.begin() + static_cast<std::ptrdiff_t>(end),
                                    [&](std::size_t r) { return x[r][static_cast<std::size_t>(feature)] < split; });
    const auto mid_index = static_cast<std::size_t>(mid - rows.begin());
    tree[index].feature = feature;
    tree[index].split = split;
    const int left = build_tree(tree, x, rows, begin, mid_index, depth + 1, limit, rng);
    const int right = build_tree(tree, x, rows, mid_index, end, depth + 1, limit, rng);
    tree[index].left = left;
    tree[index].right = right;
    return index;
}

std::shared_ptr<const OneClassModel> fit_isolation_forest(const FeatureMatrix& x, const ClassifierOptions& options) {
    const std::size_t n = x.size();
    if (n < 2) throw CapacityError("IsolationForest needs at least 2 samples, got " + std::to_string(n));
    if (options.forest_trees < 1 || options.forest_subsample < 2) {
        throw DomainError("IsolationForest needs at least one tree and a subsample of at least 2");
    }
    const std::size_t psi = std::min<std::size_t>(n, static_cast<std::size_t>(options.forest_subsample));
    const int limit = static_cast<int>(std::ceil(std::log2(static_cast<double>(psi))));
    Rng rng(mix_seed(options.seed, 0x1F));
    std::vector<IsolationForestModel::Tree> trees;
    std::vector<std::size_t> all(n);
    for (int t = 0; t < options.forest_trees; ++t) {
        std::iota(all.begin(), all.end(), 0);
        // partial Fisher-Yates: the first psi entries are a uniform sample
        for (std::size_t i = 0; i < psi; ++i) std::swap(all[i], all[i + uniform_index(rng, n - i)]);
        std::vector<std::size_t> rows(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(psi));
        IsolationForestModel::Tree tree;
        build_tree(tree, x, rows, 0, psi, 0, limit, rng);
        trees.push_back(std::move(tree));
    }
    return std::make_shared<IsolationForestModel>(std::move(trees), x.front().size(), static_cast<int>(psi));
}

// --- one-class SVM ---------------------------------------------------------

std::shared_ptr<const OneClassModel> fit_ocsvm(const FeatureMatrix& x, double nu) {
    const std::size_t n = x.size();
    const std::size_t d = x.front().size();
    // gamma = 1 / (d * Var(X)) over every entry
    double sum = 0, sum_sq = 0;
    for (const auto& row : x) {
        for (double v : row) {
            sum += v;
            sum_sq += v * v;
        }
    }
    const double count = static_cast<double>(n * d);
    const double var = sum_sq / count - (sum / count) * (sum / count);
    const double gamma = var > 0 ? 1.0 / (static_cast<double>(d) * var) : 1.0;

    std::vector<double> q(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        q[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double k = std::exp(-gamma * squared_distance(x[i], x[j]));
            q[i * n + j] = k;
            q[j * n + i] = k;
        }
    }

    // LIBSVM scaling: 0 <= alpha_i <= 1, sum(alpha) = nu * n.
    std::vector<double> alpha(n, 0.0);
    const double total = nu * static_cast<double>(n);
    const auto full = static_cast<std::size_t>(total);
    for (std::size_t i = 0; i < std::min(full, n); ++i) alpha[i] = 1.0;
    if (full < n) alpha[full] = total - static_cast<double>(full);

    std::vector<double> grad(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == 0) continue;
        for (std::size_t j = 0; j < n; ++j) grad[j] += alpha[i] * q[i * n + j];
    }

    constexpr double kTol = 1e-6;
    const std::size_t max_iter = std::max<std::size_t>(10'000'000, 100 * n);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // maximal violating pair: i can grow, j can shrink
        std::size_t up = n, low = n;
        double g_max = -kInf, g_min = kInf;
        for (std::size_t t = 0; t < n; ++t) {
            if (alpha[t] < 1.0 && -grad[t] > g_max) {
                g_max = -grad[t];
                up = t;
            }
            if (alpha[t] > 0.0 && -grad[t] < g_min) {
                g_min = -grad[t];
                low = t;
            }
        }
        if (up == n || low == n || g_max - g_min < kTol) break;
        const double curvature = std::max(q[up * n + up] + q[low * n + low] - 2 * q[up * n + low], 1e-12);
        double step = (grad[low] - grad[up]) / curvature;
        step = std::min({step, 1.0 - alpha[up], alpha[low]});
        if (step <= 0) break;
        alpha[up] += step;
        alpha[low] -= step;
        for (std::size_t t = 0; t < n; ++t) grad[t] += step * (q[up * n + t] - q[low * n + t]);
    }

    double ub = kInf, lb = -kInf, free_sum = 0;
    int free_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (alpha[t] >= 1.0) {
            lb = std::max(lb, grad[t]);
        } else if (alpha[t] <= 0.0) {
            ub = std::min(ub, grad[t]);
        } else {
            free_sum += grad[t];
            ++free_count;
        }
    }
    const double rho = free_count > 0 ? free_sum / free_count : (ub + lb) / 2;

    FeatureMatrix sv;
    std::vector<double> coef;
    for (std::size_t t = 0; t < n; ++t) {
        if (alpha[t] > 0) {
            sv.push_back(x[t]);
            coef.push_back(alpha[t]);
        }
    }
    return std::make_shared<OcsvmModel>(std::move(sv), std::move(coef), rho, gamma);
}

}  // namespace

// --- scaler ---------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

RobustScaler fit_scaler(const FeatureMatrix& features) {
    const std::size_t d = check_matrix(features, "fit_scaler");
    if (features.size() < 2) throw DomainError("fit_scaler needs at least 2 rows");
    RobustScaler s;
    std::vector<double> column(features.size());
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < features.size(); ++i) column[i] = features[i][j];
        s.median.push_back(quantile(column, 0.5));
        const double iqr = quantile(column, 0.75) - quantile(column, 0.25);
        s.iqr.push_back(iqr > 0 ? iqr : 1.0);
    }
    return s;
}

FeatureMatrix apply_scaler(const RobustScaler& scaler, const FeatureMatrix& features) {
    FeatureMatrix out;
    out.reserve(features.size());
    for (const auto& row : features) {
        check_row(row, scaler.median.size());
        std::vector<double> r(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) r[j] = (row[j] - scaler.median[j]) / scaler.iqr[j];
        out.push_back(std::move(r));
    }
    return out;
}

nlohmann::json to_json(const RobustScaler& scaler) { return {{"median", scaler.median}, {"iqr", scaler.iqr}}; }

RobustScaler scaler_from_json(const nlohmann::json& doc) {
    RobustScaler s{doc.at("median").get<std::vector<double>>(), doc.at("iqr").get<std::vector<double>>()};
    if (s.median.size() != s.iqr.size()) throw SchemaError("scaler median and iqr differ in length");
    return s;
}

// --- kinds ----------------------------------------------------------------

std::string_view to_string(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::RobustCovariance: return "RobustCovariance";
        case ClassifierKind::OCSVM: return "OCSVM";
        case ClassifierKind::IsolationForest: return "IsolationForest";
        case ClassifierKind::LOF: return "LOF";
    }
    return "?";
}

ClassifierKind parse_classifier_kind(std::string_view text) {
    for (ClassifierKind k : kAllClassifiers) {
        if (to_string(k) == text) return k;
    }
    if (text == "RC") return ClassifierKind::RobustCovariance;
    if (text == "IF") return ClassifierKind::IsolationForest;
    if (text == "SVM") return ClassifierKind::OCSVM;
    throw DomainError("unknown classifier '" + std::string(text) + "'");
}

// --- robust covariance model ------------------------------------------------

RobustCovarianceModel::RobustCovarianceModel(std::vector<double> mean, std::vector<double> covariance,
                                             std::vector<std::size_t> support)
    : mean_(std::move(mean)), covariance_(std::move(covariance)), support_(std::move(support)) {
    const auto d = static_cast<Eigen::Index>(mean_.size());
    if (covariance_.size() != mean_.size() * mean_.size()) throw ShapeError("covariance must be d x d");
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> c(covariance_.data(),
                                                                                                     d, d);
    const Eigen::MatrixXd inv = Eigen::LDLT<Eigen::MatrixXd>(c).solve(Eigen::MatrixXd::Identity(d, d));
    inverse_.resize(covariance_.size());
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) inverse_[static_cast<std::size_t>(i * d + j)] = inv(i, j);
    }
}

double RobustCovarianceModel::score(std::span<const double> row) const {
    check_row(row, mean_.size());
    const std::size_t d = mean_.size();
    std::vector<double> c(d);
    for (std::size_t i = 0; i < d; ++i) c[i] = row[i] - mean_[i];
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) {
        double t = 0;
        for (std::size_t j = 0; j < d; ++j) t += inverse_[i * d + j] * c[j];
        s += c[i] * t;
    }
    return std::sqrt(std::max(s, 0.0));
}

nlohmann::json RobustCovarianceModel::to_json() const {
    return {{"kind", to_string(kind())}, {"mean", mean_}, {"covariance", covariance_}, {"support", support_}};
}

// --- LOF -------------------------------------------------------------------

namespace {

// k nearest reference rows of `q` as (distance, index), nearest first.
std::vector<std::pair<double, std::size_t>> nearest(const FeatureMatrix& ref, std::span<const double> q, int k,
                                                    std::size_t skip) {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (i != skip) d.emplace_back(std::sqrt(squared_distance(ref[i], q)), i);
    }
    const auto kk = static_cast<std::ptrdiff_t>(std::min<std::size_t>(static_cast<std::size_t>(k), d.size()));
    std::partial_sort(d.begin(), d.begin() + kk, d.end());
    d.resize(static_cast<std::size_t>(kk));
    return d;
}

}  // namespace

LofModel::LofModel(FeatureMatrix reference, int k) : reference_(std::move(reference)), k_(k) {
    const std::size_t n = reference_.size();
    if (k_ < 1) throw DomainError("LOF neighbor count must be positive");
    if (n <= static_cast<std::size_t>(k_)) {
        throw CapacityError("LOF with k=" + std::to_string(k_) + " needs more than " + std::to_string(k_) +
                            " samples, got " + std::to_string(n));
    }
    std::vector<std::vector<std::pair<double, std::size_t>>> neighbors(n);
    k_distance_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        neighbors[i] = nearest(reference_, reference_[i], k_, i);
        k_distance_[i] = neighbors[i].back().first;
    }
    lrd_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double reach = 0;
        for (const auto& [dist, j] : neighbors[i]) reach += std::max(dist, k_distance_[j]);
        lrd_[i] = 1.0 / (reach / k_ + 1e-10);
    }
}

double LofModel::score(std::span<const double> row) const {
    check_row(row, dimension());
    const auto neighbors = nearest(reference_, row, k_, reference_.size());
    double reach = 0, lrd_sum = 0;
    for (const auto& [dist, j] : neighbors) {
        reach += std::max(dist, k_distance_[j]);
        lrd_sum += lrd_[j];
    }
    const double lrd = 1.0 / (reach / k_ + 1e-10);
    return (lrd_sum / k_) / lrd;
}

nlohmann::json LofModel::to_json() const {
    return {{"kind", to_string(kind())}, {"k", k_}, {"reference", matrix_json(reference_)}};
}

// --- isolation forest model -------------------------------------------------

IsolationForestModel::IsolationForestModel(std::vector<Tree> trees, std::size_t dimension, int subsample)
    : trees_(std::move(trees)), dimension_(dimension), subsample_(subsample) {}

double IsolationForestModel::average_path_length(double n) {
    if (n <= 1) return 0;
    if (n <= 2) return 1;
    constexpr double euler = 0.5772156649015329;
    return 2.0 * (std::log(n - 1) + euler) - 2.0 * (n - 1) / n;
}

double IsolationForestModel::score(std::span<const double> row) const {
    check_row(row, dimension_);
    double total = 0;
    for (const auto& tree : trees_) {
        int node = 0;
        int depth = 0;
        while (tree[static_cast<std::size_t>(node)].feature >= 0) {
            const auto& nd = tree[static_cast<std::size_t>(node)];
            node = row[static_cast<std::size_t>(nd.feature)] < nd.split ? nd.left : nd.right;
            ++depth;
        }
        total += depth + average_path_length(tree[static_cast<std::size_t>(node)].size);
    }
    const double mean = total / static_cast<double>(trees_.size());
    return std::pow(2.0, -mean / average_path_length(subsample_));
}

nlohmann::json IsolationForestModel::to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : trees_) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& n : tree) nodes.push_back({n.feature, n.split, n.left, n.right, n.size});
        trees.push_back(std::move(nodes));
    }
    return {{"kind", to_string(kind())}, {"dimension", dimension_}, {"subsample", subsample_}, {"trees", trees}};
}

// --- OCSVM model ------------------------------------------------------------

OcsvmModel::OcsvmModel(FeatureMatrix support_vectors, std::vector<double> coefficients, double rho, double gamma)
    : support_(std::move(support_vectors)), alpha_(std::move(coefficients)), rho_(rho), gamma_(gamma) {
    if (support_.size() != alpha_.size()) throw ShapeError("support vectors and coefficients differ in count");
}

double OcsvmModel::score(std::span<const double> row) const {
    check_row(row, dimension());
    double f = 0;
    for (std::size_t i = 0; i < support_.size(); ++i) f += alpha_[i] * std::exp(-gamma_ * squared_distance(support_[i], row));
    return rho_ - f;
}

nlohmann::json OcsvmModel::to_json() const {
    return {{"kind", to_string(kind())},
            {"support_vectors", matrix_json(support_)},
            {"coefficients", alpha_},
            {"rho", rho_},
            {"gamma", gamma_}};
}

// --- fitting and scoring ----------------------------------------------------

std::shared_ptr<const OneClassModel> fit_one_class(ClassifierKind kind, const FeatureMatrix& features,
                                                   const ClassifierOptions& options) {
    if (!(options.contamination > 0 && options.contamination <= 0.5)) {
        throw DomainError("contamination must lie in (0, 0.5]");
    }
    if (features.empty()) throw CapacityError(std::string(to_string(kind)) + " cannot be fit on zero samples");
    check_matrix(features, "fit_one_class");
    switch (kind) {
        case ClassifierKind::RobustCovariance: return fit_robust_covariance(features, options.contamination);
        case ClassifierKind::LOF: return std::make_shared<LofModel>(features, options.lof_neighbors);
        case ClassifierKind::IsolationForest: return fit_isolation_forest(features, options);
        case ClassifierKind::OCSVM: return fit_ocsvm(features, options.contamination);
    }
    throw DomainError("unknown classifier kind");
}

std::vector<double> anomaly_scores(const OneClassModel& model, const FeatureMatrix& features) {
    std::vector<double> out;
    out.reserve(features.size());
    for (const auto& row : features) {
        const double s = model.score(row);
        if (!std::isfinite(s)) throw NumericError(std::string(to_string(model.kind())) + " produced a non-finite score");
        out.push_back(s);
    }
    return out;
}

std::shared_ptr<const OneClassModel> model_from_json(const nlohmann::json& doc) {
    try {
        switch (parse_classifier_kind(doc.at("kind").get<std::string>())) {
            case ClassifierKind::RobustCovariance:
                return std::make_shared<RobustCovarianceModel>(doc.at("mean").get<std::vector<double>>(),
                                                               doc.at("covariance").get<std::vector<double>>(),
                                                               doc.at("support").get<std::vector<std::size_t>>());
            case ClassifierKind::LOF:
                return std::make_shared<LofModel>(matrix_from(doc.at("reference")), doc.at("k").get<int>());
            case ClassifierKind::IsolationForest: {
                std::vector<IsolationForestModel::Tree> trees;
                for (const auto& t : doc.at("trees")) {
                    IsolationForestModel::Tree tree;
                    for (const auto& n : t) {
                        tree.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                                        n.at(3).get<int>(), n.at(4).get<int>()});
                    }
                    trees.push_back(std::move(tree));
                }
                return std::make_shared<IsolationForestModel>(std::move(trees), doc.at("dimension").get<std::size_t>(),
                                                              doc.at("subsample").get<int>());
            }
            case ClassifierKind::OCSVM:
                return std::make_shared<OcsvmModel>(matrix_from(doc.at("support_vectors")),
                                                    doc.at("coefficients").get<std::vector<double>>(),
                                                    doc.at("rho").get<double>(), doc.at("gamma").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("classifier JSON: ") + e.what());
    }
    throw SchemaError("classifier JSON: unknown kind");
}

void save_model(const OneClassModel& model, const RobustScaler& scaler, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw LoadError("cannot write " + file.string());
    out << nlohmann::json{{"scaler", to_json(scaler)}, {"model", model.to_json()}}.dump();
}

std::pair<std::shared_ptr<const OneClassModel>, RobustScaler> load_model(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot read classifier " + file.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
    return {model_from_json(doc.at("model")), scaler_from_json(doc.at("scaler"))};
}

// --- thresholds ---------------------------------------------------------------

std::string_view to_string(ThresholdSource source) {
    return source == ThresholdSource::Validation ? "validation" : "test";
}

ThresholdSource parse_threshold_source(std::string_view text) {
    if (text == "validation") return ThresholdSource::Validation;
    if (text == "test") return ThresholdSource::Test;
    throw DomainError("threshold source must be 'validation' or 'test', got '" + std::string(text) + "'");
}

std::vector<double> eer_candidates(std::span<const double> scores) {
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double> out{-kInf};
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) out.push_back(sorted[i] + (sorted[i + 1] - sorted[i]) / 2);
    out.push_back(kInf);
    return out;
}

std::pair<double, double> error_rates(std::span<const double> scores, std::span<const SampleLabel> labels,
                                      double threshold) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
    std::size_t ok = 0, nok = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool flagged = scores[i] > threshold;
        if (labels[i] == SampleLabel::OK) {
            ++ok;
            fp += flagged;
        } else {
            ++nok;
            fn += !flagged;
        }
    }
    return {ok ? static_cast<double>(fp) / ok : 0.0, nok ? static_cast<double>(fn) / nok : 0.0};
}

DecisionThreshold select_threshold_eer(std::span<const double> scores, std::span<const SampleLabel> labels,
                                       ThresholdSource source) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
    const auto nok = std::count(labels.begin(), labels.end(), SampleLabel::NOK);
    if (nok == 0 || nok == static_cast<std::ptrdiff_t>(labels.size())) {
        throw DomainError("threshold selection needs both OK and NOK samples");
    }
    for (double s : scores) {
        if (std::isnan(s)) throw NumericError("NaN score in threshold selection");
    }

    // Sweep thresholds in ascending order over the sorted scores.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    const double n_ok = static_cast<double>(labels.size() - static_cast<std::size_t>(nok));
    const double n_nok = static_cast<double>(nok);

    const auto candidates = eer_candidates(scores);
    DecisionThreshold best;
    best.source = source;
    double best_gap = kInf;
    std::size_t pos = 0, ok_below = 0, nok_below = 0;
    for (double t : candidates) {
        while (pos < order.size() && scores[order[pos]] <= t) {
            (labels[order[pos]] == SampleLabel::OK ? ok_below : nok_below)++;
            ++pos;
        }
        const double fpr = (n_ok - static_cast<double>(ok_below)) / n_ok;
        const double fnr = static_cast<double>(nok_below) / n_nok;
        const double gap = std::abs(fpr - fnr);
        // candidates ascend, so strict comparisons keep the lowest threshold on full ties
        if (gap < best_gap || (gap == best_gap && fpr < best.fpr)) {
            best_gap = gap;
            best.value = t;
            best.fpr = fpr;
            best.fnr = fnr;
        }
    }
    return best;
}

std::vector<SampleLabel> classify(std::span<const double> scores, double threshold) {
    std::vector<SampleLabel> out;
    out.reserve(scores.size());
    for (double s : scores) out.push_back(s > threshold ? SampleLabel::NOK : SampleLabel::OK);
    return out;
}

}  // namespace reconad
