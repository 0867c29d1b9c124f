#include "emgdis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "emgdis/rng.hpp"

namespace emgdis {

namespace {

int argmax_row(const double* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

}  // namespace

void PredictionSet::validate() const {
    if (n_classes < 2) throw ValidationError("prediction set needs at least 2 classes");
    if (labels.empty()) throw ValidationError("prediction set is empty");
    if (probabilities.size() != labels.size() * static_cast<size_t>(n_classes))
        throw ValidationError("probability matrix does not match labels x classes");
    if (subject_ids.size() != labels.size())
        throw ValidationError("subject ids do not match label count");
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw ValidationError("label " + std::to_string(labels[i]) + " at row " +
                                  std::to_string(i) + " outside [0," + std::to_string(n_classes) +
                                  ")");
        double sum = 0.0;
        for (int j = 0; j < n_classes; ++j) sum += probabilities[i * n_classes + j];
        if (std::abs(sum - 1.0) > 1e-6)
            throw ValidationError("probability row " + std::to_string(i) + " sums to " +
                                  std::to_string(sum));
    }
}

double accuracy(const PredictionSet& preds) {
    preds.validate();
    size_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        const int pred = argmax_row(preds.probabilities.data() + i * preds.n_classes,
                                    preds.n_classes);
        if (pred == preds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double macro_f1(const PredictionSet& preds) {
    preds.validate();
    const int k = preds.n_classes;
    std::vector<size_t> tp(static_cast<size_t>(k), 0), fp(static_cast<size_t>(k), 0),
        fn(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        const int pred = argmax_row(preds.probabilities.data() + i * preds.n_classes, k);
        const int truth = preds.labels[i];
        if (pred == truth) {
            ++tp[static_cast<size_t>(truth)];
        } else {
            ++fp[static_cast<size_t>(pred)];
            ++fn[static_cast<size_t>(truth)];
        }
    }
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
        const double tpc = static_cast<double>(tp[static_cast<size_t>(c)]);
        const double denom_p = tpc + static_cast<double>(fp[static_cast<size_t>(c)]);
        const double denom_r = tpc + static_cast<double>(fn[static_cast<size_t>(c)]);
        const double precision = denom_p > 0 ? tpc / denom_p : 0.0;
        const double recall = denom_r > 0 ? tpc / denom_r : 0.0;
        const double f1 =
            precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        total += f1;
    }
    return total / static_cast<double>(k);
}

namespace {

// One-vs-rest AUROC via the rank-sum statistic with midranks for ties.
std::optional<double> binary_auroc(const std::vector<double>& scores,
                                   const std::vector<bool>& positive) {
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (bool p : positive) n_pos += p ? 1 : 0;
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t t = i; t <= j; ++t)
            if (positive[order[t]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

std::optional<double> macro_auroc(const PredictionSet& preds,
                                  std::vector<std::string>* warnings) {
    preds.validate();
    const int k = preds.n_classes;
    const size_t n = preds.size();
    double total = 0.0;
    int counted = 0;
    for (int c = 0; c < k; ++c) {
        std::vector<double> scores(n);
        std::vector<bool> positive(n);
        for (size_t i = 0; i < n; ++i) {
            scores[i] = preds.probabilities[i * static_cast<size_t>(k) + static_cast<size_t>(c)];
            positive[i] = preds.labels[i] == c;
        }
        const auto auc = binary_auroc(scores, positive);
        if (!auc) {
            if (warnings)
                warnings->push_back("auroc: class " + std::to_string(c) +
                                    " lacks positives or negatives, skipped");
            continue;
        }
        total += *auc;
        ++counted;
    }
    if (counted == 0) {
        if (warnings) warnings->push_back("auroc: every class degenerate, metric undefined");
        return std::nullopt;
    }
    return total / static_cast<double>(counted);
}

void ClusterSet::validate() const {
    if (dim < 1) throw ValidationError("cluster set dimension must be >= 1");
    if (labels.empty()) throw ValidationError("cluster set is empty");
    if (points.size() != labels.size() * static_cast<size_t>(dim))
        throw ValidationError("points matrix does not match labels x dim");
}

double davies_bouldin(const ClusterSet& clusters) {
    clusters.validate();
    const int d = clusters.dim;

    std::map<int, std::vector<size_t>> members;
    for (size_t i = 0; i < clusters.labels.size(); ++i) members[clusters.labels[i]].push_back(i);
    const size_t k = members.size();
    if (k < 2) throw ValidationError("davies_bouldin needs at least 2 clusters, got " +
                                     std::to_string(k));

    std::vector<int> ids;
    std::vector<std::vector<double>> centroids;
    std::vector<double> scatter;
    for (const auto& [id, rows] : members) {
        std::vector<double> c(static_cast<size_t>(d), 0.0);
        for (size_t r : rows) {
            const double* p = clusters.points.data() + r * static_cast<size_t>(d);
            for (int j = 0; j < d; ++j) c[static_cast<size_t>(j)] += p[j];
        }
        for (int j = 0; j < d; ++j) c[static_cast<size_t>(j)] /= static_cast<double>(rows.size());
        double s = 0.0;
        for (size_t r : rows) {
            const double* p = clusters.points.data() + r * static_cast<size_t>(d);
            double dist2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = p[j] - c[static_cast<size_t>(j)];
                dist2 += diff * diff;
            }
            s += std::sqrt(dist2);
        }
        ids.push_back(id);
        centroids.push_back(std::move(c));
        scatter.push_back(s / static_cast<double>(rows.size()));
    }

    double total = 0.0;
    for (size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            double dist2 = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = centroids[i][static_cast<size_t>(t)] -
                                    centroids[j][static_cast<size_t>(t)];
                dist2 += diff * diff;
            }
            const double dist = std::sqrt(dist2);
            if (dist == 0.0)
                throw ValidationError("davies_bouldin: clusters " + std::to_string(ids[i]) +
                                      " and " + std::to_string(ids[j]) +
                                      " have coincident centroids");
            const double r = (scatter[i] + scatter[j]) / dist;
            worst = std::max(worst, r);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

EvalReport aggregate_per_subject(const PredictionSet& preds) {
    preds.validate();
    EvalReport report;

    std::map<int, std::vector<size_t>> by_subject;
    for (size_t i = 0; i < preds.size(); ++i) by_subject[preds.subject_ids[i]].push_back(i);

    double acc_sum = 0.0, f1_sum = 0.0, auroc_sum = 0.0;
    int auroc_count = 0;
    for (const auto& [subject, rows] : by_subject) {
        PredictionSet sub;
        sub.n_classes = preds.n_classes;
        sub.labels.reserve(rows.size());
        sub.probabilities.reserve(rows.size() * static_cast<size_t>(preds.n_classes));
        sub.subject_ids.assign(rows.size(), subject);
        for (size_t r : rows) {
            sub.labels.push_back(preds.labels[r]);
            const double* p = preds.probabilities.data() + r * preds.n_classes;
            sub.probabilities.insert(sub.probabilities.end(), p, p + preds.n_classes);
        }

        SubjectMetrics m;
        m.subject_id = subject;
        m.n_windows = rows.size();
        m.accuracy = accuracy(sub);
        m.macro_f1 = macro_f1(sub);
        std::set<int> distinct(sub.labels.begin(), sub.labels.end());
        if (distinct.size() < 2) {
            report.warnings.push_back("subject " + std::to_string(subject) +
                                      " has fewer than 2 classes, auroc skipped");
        } else {
            m.auroc = macro_auroc(sub, &report.warnings);
        }

        acc_sum += m.accuracy;
        f1_sum += m.macro_f1;
        if (m.auroc) {
            auroc_sum += *m.auroc;
            ++auroc_count;
        }
        report.per_subject.push_back(std::move(m));
    }

    const double n_subjects = static_cast<double>(report.per_subject.size());
    report.accuracy = acc_sum / n_subjects;
    report.macro_f1 = f1_sum / n_subjects;
    if (auroc_count > 0)
        report.auroc = auroc_sum / static_cast<double>(auroc_count);
    else
        report.warnings.push_back("auroc undefined for every subject");
    return report;
}

namespace {

// Power iteration on the implicit covariance of centered data, with deflation
// against the directions already found.
struct PowerIterResult {
    std::vector<double> direction;
    double eigenvalue = 0.0;
    bool converged = false;
};

PowerIterResult power_iteration(const std::vector<double>& centered, size_t n, size_t f,
                                const std::vector<std::vector<double>>& found,
                                const std::vector<double>& found_values, Rng& rng) {
    std::vector<double> v(f);
    for (auto& x : v) x = rng.normal();
    auto dot = [f](const double* a, const double* b) {
        double s = 0.0;
        for (size_t j = 0; j < f; ++j) s += a[j] * b[j];
        return s;
    };
    auto normalize_vec = [&](std::vector<double>& x) {
        const double norm = std::sqrt(dot(x.data(), x.data()));
        if (norm == 0.0) return false;
        for (auto& e : x) e /= norm;
        return true;
    };
    if (!normalize_vec(v)) return {};

    std::vector<double> xv(n), next(f);
    PowerIterResult result;
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (int iter = 0; iter < 1000; ++iter) {
        // next = Cov * v  computed as X^T (X v) / (n-1), minus deflation terms
        for (size_t i = 0; i < n; ++i) xv[i] = dot(centered.data() + i * f, v.data());
        std::fill(next.begin(), next.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            const double* row = centered.data() + i * f;
            const double w = xv[i];
            for (size_t j = 0; j < f; ++j) next[j] += w * row[j];
        }
        for (auto& e : next) e /= denom;
        for (size_t q = 0; q < found.size(); ++q) {
            const double proj = dot(found[q].data(), v.data()) * found_values[q];
            for (size_t j = 0; j < f; ++j) next[j] -= proj * found[q][j];
        }

        const double norm = std::sqrt(dot(next.data(), next.data()));
        if (norm < 1e-300) return {};  // deflated to nothing: rank exhausted
        for (auto& e : next) e /= norm;
        if (dot(next.data(), v.data()) < 0)
            for (auto& e : next) e = -e;

        double delta = 0.0;
        for (size_t j = 0; j < f; ++j) delta += (next[j] - v[j]) * (next[j] - v[j]);
        v = next;
        if (std::sqrt(delta) < 1e-7) {
            result.converged = true;
            break;
        }
    }
    // Rayleigh quotient for the eigenvalue under the deflated operator.
    for (size_t i = 0; i < n; ++i) xv[i] = dot(centered.data() + i * f, v.data());
    double quad = 0.0;
    for (size_t i = 0; i < n; ++i) quad += xv[i] * xv[i];
    quad /= denom;
    for (size_t q = 0; q < found.size(); ++q) {
        const double proj = dot(found[q].data(), v.data());
        quad -= found_values[q] * proj * proj;
    }
    result.direction = std::move(v);
    result.eigenvalue = quad;
    return result;
}

}  // namespace

PcaProjection pca_project(const std::vector<double>& features, size_t n, size_t n_features,
                          int dims) {
    if (n < 3) throw ValidationError("pca_project needs at least 3 rows, got " + std::to_string(n));
    if (dims < 1) throw ValidationError("pca_project dims must be >= 1");
    if (features.size() != n * n_features)
        throw ValidationError("feature matrix size does not match n x n_features");

    PcaProjection out;
    out.n = static_cast<int>(n);
    out.dims = dims;

    std::vector<double> centered(features);
    std::vector<double> mean(n_features, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n_features; ++j) mean[j] += features[i * n_features + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n_features; ++j) centered[i * n_features + j] -= mean[j];

    double total_var = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n_features; ++j)
            total_var += centered[i * n_features + j] * centered[i * n_features + j];
    total_var /= n > 1 ? static_cast<double>(n - 1) : 1.0;

    Rng rng(0x9e3779b9);
    std::vector<std::vector<double>> found;
    std::vector<double> found_values;
    out.components.assign(static_cast<size_t>(dims) * n_features, 0.0);
    out.explained.assign(static_cast<size_t>(dims), 0.0);

    for (int q = 0; q < dims; ++q) {
        auto r = power_iteration(centered, n, n_features, found, found_values, rng);
        if (r.direction.empty() || r.eigenvalue <= 1e-12 * std::max(1.0, total_var)) {
            out.warnings.push_back("pca: component " + std::to_string(q) +
                                   " beyond data rank, filled with zeros");
            continue;
        }
        if (!r.converged)
            out.warnings.push_back("pca: component " + std::to_string(q) +
                                   " did not converge in 1000 iterations");
        // Sign convention: the largest-magnitude coordinate is positive.
        size_t arg = 0;
        for (size_t j = 1; j < n_features; ++j)
            if (std::abs(r.direction[j]) > std::abs(r.direction[arg])) arg = j;
        if (r.direction[arg] < 0)
            for (auto& e : r.direction) e = -e;

        std::copy(r.direction.begin(), r.direction.end(),
                  out.components.begin() + static_cast<size_t>(q) * n_features);
        out.explained[static_cast<size_t>(q)] = total_var > 0 ? r.eigenvalue / total_var : 0.0;
        found.push_back(r.direction);
        found_values.push_back(r.eigenvalue);
    }

    out.coords.assign(n * static_cast<size_t>(dims), 0.0);
    for (size_t i = 0; i < n; ++i)
        for (int q = 0; q < dims; ++q) {
            double s = 0.0;
            const double* dir = out.components.data() + static_cast<size_t>(q) * n_features;
            const double* row = centered.data() + i * n_features;
            for (size_t j = 0; j < n_features; ++j) s += dir[j] * row[j];
            out.coords[i * static_cast<size_t>(dims) + static_cast<size_t>(q)] = s;
        }
    return out;
}

}  // namespace emgdis
