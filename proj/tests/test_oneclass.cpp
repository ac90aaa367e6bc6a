#include <gtest/gtest.h>

#include "reconad/error.hpp"
#include "reconad/oneclass.hpp"
#include "support.hpp"

using namespace reconad;
namespace ts = testing_support;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<SampleLabel> labels_of(std::size_t ok, std::size_t nok) {
    std::vector<SampleLabel> l(ok, SampleLabel::OK);
    l.insert(l.end(), nok, SampleLabel::NOK);
    return l;
}

FeatureMatrix uniform_grid(int side, double spacing) {
    FeatureMatrix g;
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) g.push_back({i * spacing, j * spacing});
    }
    return g;
}

}  // namespace

TEST(Scaler, FiveValueColumn) {
    const FeatureMatrix col{{1}, {2}, {3}, {4}, {5}};
    const auto s = fit_scaler(col);
    EXPECT_DOUBLE_EQ(s.median[0], 3);
    EXPECT_DOUBLE_EQ(s.iqr[0], 2);
    const auto scaled = apply_scaler(s, {{3}, {5}});
    EXPECT_DOUBLE_EQ(scaled[0][0], 0);
    EXPECT_DOUBLE_EQ(scaled[1][0], 1);
}

TEST(Scaler, ConstantColumnAndErrors) {
    const auto s = fit_scaler({{4, 1}, {4, 2}, {4, 3}});
    EXPECT_DOUBLE_EQ(s.iqr[0], 1);
    EXPECT_DOUBLE_EQ(apply_scaler(s, {{6, 2}})[0][0], 2);
    EXPECT_THROW(fit_scaler({}), Error);
    EXPECT_THROW(fit_scaler({{1, 2}}), DomainError);
    EXPECT_THROW(apply_scaler(s, {{1, 2, 3}}), ShapeError);
    const auto back = scaler_from_json(to_json(s));
    EXPECT_EQ(back.median, s.median);
    EXPECT_EQ(back.iqr, s.iqr);
}

TEST(Scaler, QuantileInterpolates) {
    EXPECT_DOUBLE_EQ(quantile({10, 0}, 0.25), 2.5);
    EXPECT_DOUBLE_EQ(quantile({3, 1, 2}, 0.5), 2);
    EXPECT_DOUBLE_EQ(quantile({7}, 0.9), 7);
}

TEST(ScalerProperties, FitDataHasZeroMedianUnitIqr) {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 40), d = 1 + uniform_index(rng, 5);
        auto m = ts::random_points(rng, n, d, uniform(rng, 0.1, 10));
        for (auto& row : m) row[0] = std::round(row[0]);  // ties and possibly zero spread
        const auto s = fit_scaler(m);
        const auto scaled = apply_scaler(s, m);
        for (std::size_t j = 0; j < d; ++j) {
            std::vector<double> col;
            for (const auto& row : scaled) col.push_back(row[j]);
            EXPECT_NEAR(quantile(col, 0.5), 0.0, 1e-12);
            std::vector<double> raw;
            for (const auto& row : m) raw.push_back(row[j]);
            if (quantile(raw, 0.75) > quantile(raw, 0.25)) {
                EXPECT_NEAR(quantile(col, 0.75) - quantile(col, 0.25), 1.0, 1e-12);
            }
        }
    }
}

TEST(Classifiers, KindNames) {
    EXPECT_EQ(parse_classifier_kind("RC"), ClassifierKind::RobustCovariance);
    EXPECT_EQ(parse_classifier_kind("IF"), ClassifierKind::IsolationForest);
    EXPECT_EQ(parse_classifier_kind("SVM"), ClassifierKind::OCSVM);
    for (auto k : kAllClassifiers) EXPECT_EQ(parse_classifier_kind(to_string(k)), k);
    EXPECT_THROW(parse_classifier_kind("kNN"), DomainError);
    EXPECT_DOUBLE_EQ(ClassifierOptions{}.contamination, 0.01);
}

TEST(Classifiers, ContaminationAndCapacity) {
    Rng rng(1);
    const auto ten = ts::random_points(rng, 10, 2);
    EXPECT_THROW(fit_one_class(ClassifierKind::LOF, ten), CapacityError);
    ClassifierOptions bad;
    bad.contamination = 0;
    EXPECT_THROW(fit_one_class(ClassifierKind::RobustCovariance, ten, bad), DomainError);
    bad.contamination = 0.6;
    EXPECT_THROW(fit_one_class(ClassifierKind::OCSVM, ten, bad), DomainError);
    const auto model = fit_one_class(ClassifierKind::RobustCovariance, ten);
    EXPECT_THROW(anomaly_scores(*model, {{1, 2, 3}}), ShapeError);
}

TEST(RobustCovariance, CenterAndUnitOffset) {
    // symmetric design: mean exactly 0, covariance exactly I
    FeatureMatrix pts;
    for (int s1 : {-1, 1}) {
        for (int s2 : {-1, 1}) {
            pts.push_back({double(s1), double(s2)});
        }
    }
    ClassifierOptions opts;
    opts.contamination = 0.01;
    FeatureMatrix many;
    for (int rep = 0; rep < 25; ++rep) many.insert(many.end(), pts.begin(), pts.end());
    const auto model = fit_one_class(ClassifierKind::RobustCovariance, many, opts);
    // the support drops one of the 100 rows, which perturbs mean and covariance slightly
    const auto scores = anomaly_scores(*model, {{0, 0}, {3, 0}});
    EXPECT_NEAR(scores[0], 0.0, 0.05);
    EXPECT_NEAR(scores[1], 3.0, 0.05);
}

TEST(RobustCovariance, MatchesDirectMahalanobisOnSupport) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 30 + uniform_index(rng, 170), d = 1 + uniform_index(rng, 4);
        const auto pts = ts::random_points(rng, n, d);
        const auto model = fit_one_class(ClassifierKind::RobustCovariance, pts);
        const auto& rc = dynamic_cast<const RobustCovarianceModel&>(*model);
        FeatureMatrix support;
        for (auto i : rc.support()) support.push_back(pts[i]);
        // contamination 0.01 drops ceil(0.01 n) rows
        EXPECT_EQ(support.size(), n - static_cast<std::size_t>(std::ceil(0.01 * n - 1e-9)));
        const auto queries = ts::random_points(rng, 10, d, 2.0);
        const auto expect = ts::mahalanobis_oracle(support, queries);
        const auto got = anomaly_scores(*model, queries);
        for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-6);
    }
}

TEST(RobustCovariance, DropsTheOutlierFromSupport) {
    Rng rng(3);
    auto pts = ts::random_points(rng, 60, 2);
    pts.push_back({40, -40});
    ClassifierOptions opts;
    opts.contamination = 0.02;
    const auto& rc = dynamic_cast<const RobustCovarianceModel&>(*fit_one_class(ClassifierKind::RobustCovariance, pts, opts));
    EXPECT_EQ(std::count(rc.support().begin(), rc.support().end(), 60u), 0);
}

TEST(RobustCovariance, SingularCovarianceIsShrunk) {
    FeatureMatrix line;
    for (int i = 0; i < 20; ++i) line.push_back({double(i), 2.0 * i});
    const auto model = fit_one_class(ClassifierKind::RobustCovariance, line);
    const auto s = anomaly_scores(*model, {{5, 10}, {5, -10}});
    EXPECT_TRUE(std::isfinite(s[0]));
    EXPECT_GT(s[1], s[0]);
}

TEST(Lof, MatchesDirectFormula) {
    Rng rng(4);
    const auto ref = ts::random_points(rng, 200, 2);
    const auto queries = ts::random_points(rng, 30, 2, 1.5);
    const auto model = fit_one_class(ClassifierKind::LOF, ref);
    const auto expect = ts::lof_oracle(ref, queries, 20);
    const auto got = anomaly_scores(*model, queries);
    for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-6);
}

TEST(Lof, FarPointOutscoresCluster) {
    Rng rng(5);
    const auto cluster = ts::random_points(rng, 50, 2, 0.1);
    const auto model = fit_one_class(ClassifierKind::LOF, cluster);
    const auto inside = anomaly_scores(*model, cluster);
    const double far = model->score(std::vector<double>{1.0, 0.0});  // 10 radii
    for (double s : inside) EXPECT_GT(far, s);
    const auto oracle = ts::lof_oracle(cluster, {{1.0, 0.0}}, 20);
    EXPECT_NEAR(far, oracle[0], 1e-6);
}

TEST(Lof, InteriorOfUniformGridScoresOne) {
    const auto grid = uniform_grid(15, 1.0);
    ClassifierOptions opts;
    opts.lof_neighbors = 8;
    const auto model = fit_one_class(ClassifierKind::LOF, grid, opts);
    for (const auto& p : grid) {
        if (p[0] < 4 || p[0] > 10 || p[1] < 4 || p[1] > 10) continue;
        const double s = model->score(p);
        EXPECT_NEAR(s, 1.0, 0.1);
        EXPECT_NEAR(s, ts::lof_oracle(grid, {p}, 8)[0], 1e-6);
    }
}

TEST(LofProperties, ScaleInvariantOrdering) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ref = ts::random_points(rng, 40, 3);
        const auto q = ts::random_points(rng, 15, 3, 2.0);
        const double c = uniform(rng, 0.01, 100);
        auto scale = [c](FeatureMatrix m) {
            for (auto& r : m) {
                for (auto& v : r) v *= c;
            }
            return m;
        };
        ClassifierOptions opts;
        opts.lof_neighbors = 5;
        const auto a = anomaly_scores(*fit_one_class(ClassifierKind::LOF, ref, opts), q);
        const auto b = anomaly_scores(*fit_one_class(ClassifierKind::LOF, scale(ref), opts), scale(q));
        for (std::size_t i = 0; i < q.size(); ++i) {
            for (std::size_t j = 0; j < q.size(); ++j) {
                if (std::abs(a[i] - a[j]) > 1e-6) EXPECT_EQ(a[i] < a[j], b[i] < b[j]);
            }
        }
    }
}

TEST(IsolationForest, OutlierIsolatedQuickly) {
    Rng rng(7);
    const auto pts = ts::random_points(rng, 300, 3);
    ClassifierOptions opts;
    opts.seed = 9;
    const auto model = fit_one_class(ClassifierKind::IsolationForest, pts, opts);
    const auto& forest = dynamic_cast<const IsolationForestModel&>(*model);
    EXPECT_EQ(forest.trees().size(), 100u);
    const double center = model->score(std::vector<double>{0, 0, 0});
    const double far = model->score(std::vector<double>{8, -8, 8});
    EXPECT_GT(far, center);
    EXPECT_GT(far, 0.6);
    EXPECT_LT(center, 0.5);
    for (double s : anomaly_scores(*model, pts)) {
        EXPECT_GT(s, 0.0);
        EXPECT_LT(s, 1.0);
    }
}

TEST(IsolationForest, AveragePathLength) {
    EXPECT_DOUBLE_EQ(IsolationForestModel::average_path_length(1), 0.0);
    EXPECT_DOUBLE_EQ(IsolationForestModel::average_path_length(2), 1.0);
    // 2 H(n-1) - 2(n-1)/n with H(k) ~ ln k + Euler-Mascheroni
    const double n = 256;
    EXPECT_NEAR(IsolationForestModel::average_path_length(n),
                2 * (std::log(n - 1) + 0.5772156649) - 2 * (n - 1) / n, 1e-9);
}

TEST(Ocsvm, DualFeasibleAndSeparates) {
    Rng rng(8);
    const auto pts = ts::random_points(rng, 120, 2);
    ClassifierOptions opts;
    opts.contamination = 0.1;
    const auto model = fit_one_class(ClassifierKind::OCSVM, pts, opts);
    const auto& svm = dynamic_cast<const OcsvmModel&>(*model);
    double sum = 0;
    for (double a : svm.coefficients()) {
        EXPECT_GE(a, -1e-12);
        EXPECT_LE(a, 1 + 1e-12);
        sum += a;
    }
    EXPECT_NEAR(sum, 0.1 * 120, 1e-6);
    const auto train_scores = anomaly_scores(*model, pts);
    const auto flagged = std::count_if(train_scores.begin(), train_scores.end(), [](double s) { return s > 1e-6; });
    // nu bounds the training outlier fraction from above
    EXPECT_LE(static_cast<double>(flagged) / 120.0, 0.1 + 0.05);
    EXPECT_GT(model->score(std::vector<double>{6, 6}), model->score(std::vector<double>{0, 0}));
}

TEST(ClassifierProperties, DeterministicAndSerializable) {
    Rng rng(10);
    const auto dir = ts::temp_dir("classifier_json");
    for (int trial = 0; trial < 3; ++trial) {
        const auto pts = ts::random_points(rng, 60, 3);
        const auto q = ts::random_points(rng, 20, 3, 2.0);
        ClassifierOptions opts;
        opts.seed = rng();
        opts.contamination = 0.05;
        for (ClassifierKind kind : kAllClassifiers) {
            const auto a = fit_one_class(kind, pts, opts);
            const auto b = fit_one_class(kind, pts, opts);
            const auto sa = anomaly_scores(*a, q);
            EXPECT_EQ(sa, anomaly_scores(*b, q)) << to_string(kind);
            const auto scaler = fit_scaler(pts);
            save_model(*a, scaler, dir / "model.json");
            const auto [loaded, loaded_scaler] = load_model(dir / "model.json");
            EXPECT_EQ(loaded->kind(), kind);
            EXPECT_EQ(loaded_scaler.median, scaler.median);
            const auto sl = anomaly_scores(*loaded, q);
            for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(sl[i], sa[i], 1e-12 * std::max(1.0, std::abs(sa[i])));
        }
    }
}

TEST(Eer, SeparableScores) {
    const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    const auto t = select_threshold_eer(s, labels_of(2, 2));
    EXPECT_DOUBLE_EQ(t.value, 0.5);
    EXPECT_DOUBLE_EQ(t.fpr, 0);
    EXPECT_DOUBLE_EQ(t.fnr, 0);
    EXPECT_EQ(t.source, ThresholdSource::Validation);
}

TEST(Eer, IdenticalScores) {
    const std::vector<double> s{0.3, 0.3, 0.3, 0.3};
    const auto t = select_threshold_eer(s, labels_of(2, 2), ThresholdSource::Test);
    // only -inf (1,0) and +inf (0,1) exist; the lower FPR wins
    EXPECT_EQ(t.value, kInf);
    EXPECT_DOUBLE_EQ(t.fpr, 0);
    EXPECT_DOUBLE_EQ(t.fnr, 1);
    EXPECT_EQ(t.source, ThresholdSource::Test);
}

TEST(Eer, InterleavedScores) {
    const std::vector<double> s{0.1, 0.6, 0.4, 0.9};
    const std::vector<SampleLabel> l{SampleLabel::OK, SampleLabel::OK, SampleLabel::NOK, SampleLabel::NOK};
    const auto t = select_threshold_eer(s, l);
    EXPECT_DOUBLE_EQ(t.fpr, 0.5);
    EXPECT_DOUBLE_EQ(t.fnr, 0.5);
    EXPECT_DOUBLE_EQ(t.value, 0.5);  // lowest of the tied candidates
    EXPECT_THROW(select_threshold_eer(s, labels_of(4, 0)), DomainError);
}

TEST(Eer, Candidates) {
    const std::vector<double> s{2, 1, 2, 4};
    EXPECT_EQ(eer_candidates(s), (std::vector<double>{-kInf, 1.5, 3, kInf}));
    const auto [fpr, fnr] = error_rates(s, std::vector<SampleLabel>{SampleLabel::OK, SampleLabel::OK,
                                                                    SampleLabel::NOK, SampleLabel::NOK},
                                        1.5);
    EXPECT_DOUBLE_EQ(fpr, 0.5);
    EXPECT_DOUBLE_EQ(fnr, 0.0);
}

TEST(EerProperties, NoCandidateBeatsSelection) {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 40);
        const auto labels = ts::random_labels(rng, n);
        const auto scores = ts::random_scores(rng, n, trial % 2 == 0);
        const auto t = select_threshold_eer(scores, labels);
        const double chosen = ts::rate_gap(scores, labels, t.value);
        EXPECT_NEAR(chosen, std::abs(t.fpr - t.fnr), 1e-12);
        for (double c : ts::exhaustive_thresholds(scores)) EXPECT_LE(chosen, ts::rate_gap(scores, labels, c) + 1e-12);
    }
}

TEST(Classify, TieGoesToOk) {
    const std::vector<double> s{0.4, 0.6, 0.5};
    EXPECT_EQ(classify(s, 0.5), (std::vector<SampleLabel>{SampleLabel::OK, SampleLabel::NOK, SampleLabel::OK}));
    EXPECT_EQ(classify(s, -kInf), std::vector<SampleLabel>(3, SampleLabel::NOK));
    EXPECT_EQ(classify(s, kInf), std::vector<SampleLabel>(3, SampleLabel::OK));
    EXPECT_EQ(parse_threshold_source("test"), ThresholdSource::Test);
    EXPECT_THROW(parse_threshold_source("train"), DomainError);
}
