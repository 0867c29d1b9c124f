#pragma once
// Evaluation metrics: accuracy, macro-F1, macro one-vs-rest AUROC with
// midrank tie handling, the Davies-Bouldin index, per-subject aggregation,
// and a principal-component projection for feature visualization exports.

#include <optional>
#include <string>
#include <vector>

#include "emgdis/errors.hpp"

namespace emgdis {

struct PredictionSet {
    int n_classes = 0;
    std::vector<int> labels;          // true class index per row
    std::vector<double> probabilities;  // n x n_classes, rows sum to 1
    std::vector<int> subject_ids;     // per row

    size_t size() const { return labels.size(); }
    void validate() const;
};

double accuracy(const PredictionSet& preds);
double macro_f1(const PredictionSet& preds);

// Macro one-vs-rest AUROC. Classes without both positives and negatives are
// skipped with a warning; if every class is degenerate the result is empty.
std::optional<double> macro_auroc(const PredictionSet& preds,
                                  std::vector<std::string>* warnings = nullptr);

struct ClusterSet {
    int dim = 0;
    std::vector<double> points;  // n x dim
    std::vector<int> labels;     // raw cluster ids per point

    size_t size() const { return labels.size(); }
    void validate() const;
};

double davies_bouldin(const ClusterSet& clusters);

struct SubjectMetrics {
    int subject_id = 0;
    size_t n_windows = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::optional<double> auroc;
};

struct EvalReport {
    std::vector<SubjectMetrics> per_subject;
    double accuracy = 0.0;   // unweighted mean over subjects
    double macro_f1 = 0.0;   // unweighted mean over subjects
    std::optional<double> auroc;  // mean over subjects where defined
    std::optional<double> dbi_pattern;
    std::optional<double> dbi_subject;
    std::vector<std::string> warnings;
};

// Computes each metric within each subject's rows, then averages unweighted
// across subjects. DBI fields are left empty; callers fill them from pooled
// features.
EvalReport aggregate_per_subject(const PredictionSet& preds);

struct PcaProjection {
    int n = 0;
    int dims = 0;
    std::vector<double> coords;      // n x dims
    std::vector<double> components;  // dims x n_features
    std::vector<double> explained;   // variance ratio per component
    std::vector<std::string> warnings;
};

// Mean-centered projection onto the top principal directions via power
// iteration with deflation (tolerance 1e-7, max 1000 iterations). The
// largest-magnitude coordinate of each direction is made positive. Directions
// beyond the data rank come out as zeros with a warning.
PcaProjection pca_project(const std::vector<double>& features, size_t n, size_t n_features,
                          int dims = 2);

}  // namespace emgdis
