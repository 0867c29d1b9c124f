#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "emgdis/metrics.hpp"
#include "emgdis/rng.hpp"

using namespace emgdis;

namespace {

// Independent reference implementations, written pairwise/naively so they
// share no code paths with the library versions.

int ref_argmax(const double* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

double ref_accuracy(const PredictionSet& p) {
    size_t hit = 0;
    for (size_t i = 0; i < p.size(); ++i)
        if (ref_argmax(p.probabilities.data() + i * p.n_classes, p.n_classes) == p.labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

double ref_macro_f1(const PredictionSet& p) {
    double total = 0.0;
    for (int c = 0; c < p.n_classes; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < p.size(); ++i) {
            const int pred = ref_argmax(p.probabilities.data() + i * p.n_classes, p.n_classes);
            if (pred == c && p.labels[i] == c) ++tp;
            if (pred == c && p.labels[i] != c) ++fp;
            if (pred != c && p.labels[i] == c) ++fn;
        }
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        total += prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    return total / p.n_classes;
}

// AUROC as the fraction of (positive, negative) pairs ranked correctly, ties
// counting one half.
std::optional<double> ref_macro_auroc(const PredictionSet& p) {
    double total = 0.0;
    int counted = 0;
    for (int c = 0; c < p.n_classes; ++c) {
        double wins = 0.0;
        size_t pairs = 0;
        for (size_t i = 0; i < p.size(); ++i) {
            if (p.labels[i] != c) continue;
            const double si = p.probabilities[i * p.n_classes + c];
            for (size_t j = 0; j < p.size(); ++j) {
                if (p.labels[j] == c) continue;
                const double sj = p.probabilities[j * p.n_classes + c];
                wins += si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
                ++pairs;
            }
        }
        if (pairs == 0) continue;
        total += wins / static_cast<double>(pairs);
        ++counted;
    }
    if (counted == 0) return std::nullopt;
    return total / counted;
}

double ref_davies_bouldin(const ClusterSet& cs) {
    std::map<int, std::vector<size_t>> groups;
    for (size_t i = 0; i < cs.size(); ++i) groups[cs.labels[i]].push_back(i);
    std::vector<std::vector<double>> cent;
    std::vector<double> spread;
    for (const auto& [id, rows] : groups) {
        std::vector<double> c(static_cast<size_t>(cs.dim), 0.0);
        for (size_t r : rows)
            for (int j = 0; j < cs.dim; ++j) c[static_cast<size_t>(j)] += cs.points[r * cs.dim + j];
        for (auto& v : c) v /= static_cast<double>(rows.size());
        double s = 0.0;
        for (size_t r : rows) {
            double d2 = 0.0;
            for (int j = 0; j < cs.dim; ++j) {
                const double diff = cs.points[r * cs.dim + j] - c[static_cast<size_t>(j)];
                d2 += diff * diff;
            }
            s += std::sqrt(d2);
        }
        cent.push_back(c);
        spread.push_back(s / static_cast<double>(rows.size()));
    }
    double total = 0.0;
    for (size_t i = 0; i < cent.size(); ++i) {
        double worst = 0.0;
        for (size_t j = 0; j < cent.size(); ++j) {
            if (i == j) continue;
            double d2 = 0.0;
            for (int t = 0; t < cs.dim; ++t) {
                const double diff = cent[i][static_cast<size_t>(t)] - cent[j][static_cast<size_t>(t)];
                d2 += diff * diff;
            }
            worst = std::max(worst, (spread[i] + spread[j]) / std::sqrt(d2));
        }
        total += worst;
    }
    return total / static_cast<double>(cent.size());
}

// Random prediction set whose probabilities come from softmaxed quantized
// logits, so identical scores (rank ties) occur often.
PredictionSet random_predictions(Rng& rng, bool quantized) {
    PredictionSet p;
    p.n_classes = 2 + static_cast<int>(rng.below(5));
    const size_t n = 5 + rng.below(46);
    p.labels.resize(n);
    p.subject_ids.assign(n, 1);
    p.probabilities.resize(n * static_cast<size_t>(p.n_classes));
    for (size_t i = 0; i < n; ++i) {
        p.labels[i] = static_cast<int>(rng.below(static_cast<uint64_t>(p.n_classes)));
        std::vector<double> logits(static_cast<size_t>(p.n_classes));
        for (auto& l : logits) l = quantized ? static_cast<double>(rng.below(3)) : rng.normal();
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double sum = 0.0;
        for (auto& l : logits) {
            l = std::exp(l - mx);
            sum += l;
        }
        for (int c = 0; c < p.n_classes; ++c)
            p.probabilities[i * p.n_classes + static_cast<size_t>(c)] =
                logits[static_cast<size_t>(c)] / sum;
    }
    return p;
}

PredictionSet tiny_predictions(int n_classes, const std::vector<int>& labels,
                               const std::vector<int>& argmaxes,
                               const std::vector<int>& subjects = {}) {
    PredictionSet p;
    p.n_classes = n_classes;
    p.labels = labels;
    p.subject_ids = subjects.empty() ? std::vector<int>(labels.size(), 1) : subjects;
    p.probabilities.assign(labels.size() * static_cast<size_t>(n_classes),
                           0.1 / (n_classes - 1));
    for (size_t i = 0; i < labels.size(); ++i)
        p.probabilities[i * n_classes + static_cast<size_t>(argmaxes[i])] = 0.9;
    return p;
}

}  // namespace

TEST_CASE("accuracy and macro_f1 match hand-computed confusion") {
    // labels 0,0,1,1,2 / predictions 0,1,1,1,0:
    //   class 0: P=1/2 R=1/2 F1=1/2; class 1: P=2/3 R=1 F1=4/5; class 2: F1=0.
    const PredictionSet p = tiny_predictions(3, {0, 0, 1, 1, 2}, {0, 1, 1, 1, 0});
    CHECK(accuracy(p) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(macro_f1(p) == doctest::Approx((0.5 + 0.8 + 0.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("macro_f1 counts classes absent from the labels as zero") {
    // Class 2 never appears and is never predicted; it still divides the mean.
    const PredictionSet p = tiny_predictions(3, {0, 1, 0, 1}, {0, 1, 0, 1});
    CHECK(accuracy(p) == 1.0);
    CHECK(macro_f1(p) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("accuracy breaks argmax ties toward the lowest index") {
    PredictionSet p;
    p.n_classes = 3;
    p.labels = {1, 0};
    p.subject_ids = {1, 1};
    p.probabilities = {0.4, 0.4, 0.2, 0.4, 0.4, 0.2};
    CHECK(accuracy(p) == 0.5);  // tie resolves to class 0: row 0 wrong, row 1 right
}

TEST_CASE("binary auroc handles midrank ties exactly") {
    // Scores for class 1: positives {0.8, 0.5}, negatives {0.5, 0.2}.
    // Midranks give AUC = 0.875; class 0 scores mirror to the same value.
    PredictionSet p;
    p.n_classes = 2;
    p.labels = {1, 1, 0, 0};
    p.subject_ids = {1, 1, 1, 1};
    p.probabilities = {0.2, 0.8, 0.5, 0.5, 0.5, 0.5, 0.8, 0.2};
    const auto auc = macro_auroc(p);
    REQUIRE(auc.has_value());
    CHECK(*auc == doctest::Approx(0.875).epsilon(1e-12));
}

TEST_CASE("auroc skips degenerate classes and can be undefined") {
    // Class 2 has no positives: skipped with a warning.
    PredictionSet p = tiny_predictions(3, {0, 1, 0, 1}, {0, 1, 1, 0});
    std::vector<std::string> warnings;
    const auto auc = macro_auroc(p, &warnings);
    REQUIRE(auc.has_value());
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("class 2") != std::string::npos);

    // Single distinct label: every class degenerate, metric undefined.
    PredictionSet q = tiny_predictions(2, {0, 0, 0}, {0, 1, 0});
    warnings.clear();
    CHECK(!macro_auroc(q, &warnings).has_value());
    REQUIRE(!warnings.empty());
    CHECK(warnings.back().find("every class degenerate") != std::string::npos);
}

TEST_CASE("metrics agree with pairwise references on 500 random sets") {
    Rng rng(20240812);
    for (int trial = 0; trial < 500; ++trial) {
        const PredictionSet p = random_predictions(rng, trial % 2 == 0);
        CHECK(std::abs(accuracy(p) - ref_accuracy(p)) <= 1e-9);
        CHECK(std::abs(macro_f1(p) - ref_macro_f1(p)) <= 1e-9);
        const auto a = macro_auroc(p);
        const auto r = ref_macro_auroc(p);
        REQUIRE(a.has_value() == r.has_value());
        if (a) CHECK(std::abs(*a - *r) <= 1e-9);
    }
}

TEST_CASE("davies_bouldin matches the hand case exactly") {
    ClusterSet cs;
    cs.dim = 2;
    cs.points = {0, 0, 0, 2, 10, 0, 10, 2};
    cs.labels = {1, 1, 2, 2};
    // Scatters 1 and 1, centroid distance 10: R = 0.2 for both clusters.
    CHECK(davies_bouldin(cs) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("davies_bouldin agrees with reference on 500 random clusterings") {
    Rng rng(424242);
    for (int trial = 0; trial < 500; ++trial) {
        ClusterSet cs;
        cs.dim = 1 + static_cast<int>(rng.below(4));
        const int k = 2 + static_cast<int>(rng.below(4));
        std::vector<std::vector<double>> centers(static_cast<size_t>(k));
        for (auto& c : centers) {
            c.resize(static_cast<size_t>(cs.dim));
            for (auto& v : c) v = rng.normal(0.0, 5.0);
        }
        const size_t n = 2 * static_cast<size_t>(k) + rng.below(40);
        for (size_t i = 0; i < n; ++i) {
            const int label = static_cast<int>(i % static_cast<size_t>(k));
            cs.labels.push_back(label * 3 + 1);  // non-contiguous raw ids
            for (int j = 0; j < cs.dim; ++j)
                cs.points.push_back(centers[static_cast<size_t>(label)][static_cast<size_t>(j)] +
                                    rng.normal());
        }
        CHECK(std::abs(davies_bouldin(cs) - ref_davies_bouldin(cs)) <= 1e-9);
    }
}

TEST_CASE("davies_bouldin is invariant under rotation and translation") {
    Rng rng(7);
    ClusterSet cs;
    cs.dim = 2;
    for (int i = 0; i < 60; ++i) {
        const int label = i % 3;
        cs.labels.push_back(label);
        cs.points.push_back(label * 4.0 + rng.normal());
        cs.points.push_back(label * -2.0 + rng.normal());
    }
    const double base = davies_bouldin(cs);

    const double theta = 0.73;
    const double c = std::cos(theta), s = std::sin(theta);
    ClusterSet moved = cs;
    for (size_t i = 0; i < cs.size(); ++i) {
        const double x = cs.points[i * 2], y = cs.points[i * 2 + 1];
        moved.points[i * 2] = c * x - s * y + 100.0;
        moved.points[i * 2 + 1] = s * x + c * y - 42.0;
    }
    CHECK(std::abs(davies_bouldin(moved) - base) <= 1e-9);
}

TEST_CASE("davies_bouldin rejects coincident centroids naming both clusters") {
    ClusterSet cs;
    cs.dim = 2;
    cs.points = {1, 0, -1, 0, 0, 1, 0, -1};
    cs.labels = {1, 1, 5, 5};  // both centroids at the origin
    try {
        davies_bouldin(cs);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("coincident") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
        CHECK(msg.find("5") != std::string::npos);
    }
}

TEST_CASE("per-subject aggregation is an unweighted mean over subjects") {
    // Subject 1: 4 rows, 2 correct (0.5). Subject 2: 1 row, correct (1.0).
    // Pooled accuracy would be 0.6; the subject mean is 0.75.
    const PredictionSet p =
        tiny_predictions(2, {0, 0, 1, 1, 0}, {0, 1, 1, 0, 0}, {1, 1, 1, 1, 2});
    const EvalReport rep = aggregate_per_subject(p);
    REQUIRE(rep.per_subject.size() == 2);
    CHECK(rep.per_subject[0].subject_id == 1);
    CHECK(rep.per_subject[0].n_windows == 4);
    CHECK(rep.per_subject[0].accuracy == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.per_subject[1].subject_id == 2);
    CHECK(rep.per_subject[1].n_windows == 1);
    CHECK(rep.per_subject[1].accuracy == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.accuracy == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(std::abs(rep.accuracy - accuracy(p)) > 0.1);

    // Subject 2 has one distinct class: auroc skipped there with a warning,
    // and the overall auroc comes from subject 1 alone.
    CHECK(!rep.per_subject[1].auroc.has_value());
    REQUIRE(rep.per_subject[0].auroc.has_value());
    REQUIRE(rep.auroc.has_value());
    CHECK(*rep.auroc == *rep.per_subject[0].auroc);
    bool warned = false;
    for (const auto& w : rep.warnings)
        warned = warned || w.find("subject 2") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("aggregation with equal subject sizes equals pooled metrics") {
    Rng rng(31);
    PredictionSet p = random_predictions(rng, false);
    // Duplicate the block under a second subject id: equal weights.
    const size_t n = p.size();
    for (size_t i = 0; i < n; ++i) {
        p.labels.push_back(p.labels[i]);
        p.subject_ids.push_back(2);
        for (int c = 0; c < p.n_classes; ++c)
            p.probabilities.push_back(p.probabilities[i * p.n_classes + static_cast<size_t>(c)]);
    }
    const EvalReport rep = aggregate_per_subject(p);
    CHECK(std::abs(rep.accuracy - accuracy(p)) <= 1e-12);
    CHECK(std::abs(rep.macro_f1 - macro_f1(p)) <= 1e-12);
}

TEST_CASE("aggregation reports auroc undefined when every subject is degenerate") {
    const PredictionSet p = tiny_predictions(2, {0, 0, 1, 1}, {0, 0, 1, 1}, {1, 1, 2, 2});
    const EvalReport rep = aggregate_per_subject(p);
    CHECK(!rep.auroc.has_value());
    bool warned = false;
    for (const auto& w : rep.warnings)
        warned = warned || w.find("auroc undefined for every subject") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("pca recovers planted orthogonal directions exactly") {
    // Rows a*d1 + b*d2 with a·b = 0, so sample covariance eigenpairs are
    // (|a|^2/(n-1), d1) and (|b|^2/(n-1), d2).
    const double inv = 1.0 / std::sqrt(5.0);
    const std::vector<double> d1 = {1 * inv, 2 * inv, 0.0};
    const std::vector<double> d2 = {-2 * inv, 1 * inv, 0.0};
    const std::vector<double> a = {3, -3, 1, -1};
    const std::vector<double> b = {1, 1, -1, -1};
    std::vector<double> X(4 * 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j)
            X[static_cast<size_t>(i) * 3 + j] =
                a[static_cast<size_t>(i)] * d1[static_cast<size_t>(j)] +
                b[static_cast<size_t>(i)] * d2[static_cast<size_t>(j)];

    const PcaProjection proj = pca_project(X, 4, 3, 3);
    REQUIRE(proj.components.size() == 9);

    const auto dot3 = [&](const double* u, const std::vector<double>& v) {
        return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    };
    CHECK(std::abs(dot3(proj.components.data(), d1)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(dot3(proj.components.data() + 3, d2)) == doctest::Approx(1.0).epsilon(1e-6));

    // Eigenvalues 20/3 and 4/3 of a total variance of 8.
    CHECK(proj.explained[0] == doctest::Approx(20.0 / 24.0).epsilon(1e-6));
    CHECK(proj.explained[1] == doctest::Approx(4.0 / 24.0).epsilon(1e-6));
    CHECK(proj.explained[2] == 0.0);
    bool rank_warned = false;
    for (const auto& w : proj.warnings)
        rank_warned = rank_warned || w.find("beyond data rank") != std::string::npos;
    CHECK(rank_warned);
    for (int j = 0; j < 3; ++j) CHECK(proj.components[6 + static_cast<size_t>(j)] == 0.0);

    // Coordinates are the planted coefficients up to the sign convention.
    const double s0 = dot3(proj.components.data(), d1) > 0 ? 1.0 : -1.0;
    const double s1 = dot3(proj.components.data() + 3, d2) > 0 ? 1.0 : -1.0;
    for (int i = 0; i < 4; ++i) {
        CHECK(proj.coords[static_cast<size_t>(i) * 3 + 0] ==
              doctest::Approx(s0 * a[static_cast<size_t>(i)]).epsilon(1e-6));
        CHECK(proj.coords[static_cast<size_t>(i) * 3 + 1] ==
              doctest::Approx(s1 * b[static_cast<size_t>(i)]).epsilon(1e-6));
    }
}

TEST_CASE("pca sign convention makes the largest coordinate positive") {
    Rng rng(55);
    std::vector<double> X;
    for (int i = 0; i < 40; ++i) {
        const double t = rng.normal();
        X.push_back(-3.0 * t + 0.01 * rng.normal());
        X.push_back(1.0 * t + 0.01 * rng.normal());
    }
    const PcaProjection proj = pca_project(X, 40, 2, 1);
    // Dominant direction is ±(-3,1)/sqrt(10); convention picks +3 first coord.
    CHECK(proj.components[0] > 0.9);
    CHECK(proj.components[1] < 0.0);
}

TEST_CASE("pca is invariant to feature translation") {
    Rng rng(91);
    std::vector<double> X(30 * 4);
    for (auto& v : X) v = rng.normal();
    std::vector<double> shifted = X;
    for (size_t i = 0; i < 30; ++i)
        for (size_t j = 0; j < 4; ++j) shifted[i * 4 + j] += 10.0 * static_cast<double>(j + 1);

    const PcaProjection a = pca_project(X, 30, 4, 2);
    const PcaProjection b = pca_project(shifted, 30, 4, 2);
    REQUIRE(a.coords.size() == b.coords.size());
    for (size_t i = 0; i < a.coords.size(); ++i)
        CHECK(a.coords[i] == doctest::Approx(b.coords[i]).epsilon(1e-9));
}

TEST_CASE("pca validates its inputs") {
    std::vector<double> X(6, 1.0);
    CHECK_THROWS_AS(pca_project(X, 2, 3, 2), ValidationError);
    CHECK_THROWS_AS(pca_project(X, 3, 2, 0), ValidationError);
    CHECK_THROWS_AS(pca_project(X, 3, 3, 2), ValidationError);
}

TEST_CASE("prediction and cluster sets validate their invariants") {
    PredictionSet p = tiny_predictions(2, {0, 1}, {0, 1});
    CHECK_NOTHROW(p.validate());

    PredictionSet bad = p;
    bad.n_classes = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = p;
    bad.labels.clear();
    bad.probabilities.clear();
    bad.subject_ids.clear();
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = p;
    bad.probabilities.pop_back();
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = p;
    bad.subject_ids.pop_back();
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = p;
    bad.labels[0] = 2;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = p;
    bad.labels[0] = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = p;
    bad.probabilities[0] = 0.5;  // row no longer sums to 1
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    ClusterSet cs;
    cs.dim = 0;
    cs.points = {1.0};
    cs.labels = {1};
    CHECK_THROWS_AS(cs.validate(), ValidationError);
    cs.dim = 1;
    CHECK_NOTHROW(cs.validate());
    cs.labels.clear();
    cs.points.clear();
    CHECK_THROWS_AS(cs.validate(), ValidationError);
    cs.labels = {1, 1};
    cs.points = {0.0};
    CHECK_THROWS_AS(cs.validate(), ValidationError);

    ClusterSet single;
    single.dim = 1;
    single.points = {0.0, 1.0};
    single.labels = {3, 3};
    CHECK_THROWS_AS(davies_bouldin(single), ValidationError);
}
