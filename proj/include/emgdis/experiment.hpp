#pragma once
// Experiment orchestration shared by the CLI and the acceptance suite:
// recordings -> fold plan -> windowed+normalized dataset -> training ->
// evaluation reports and feature exports, all deterministic under a seed.

#include <optional>
#include <string>
#include <vector>

#include "emgdis/checkpoint.hpp"
#include "emgdis/data.hpp"
#include "emgdis/metrics.hpp"
#include "emgdis/network.hpp"
#include "emgdis/training.hpp"

namespace emgdis {

TrainConfig load_train_config(const std::string& path);
void save_train_config(const std::string& path, const TrainConfig& cfg);

// Windows the recordings with the fold's subjects held out, then normalizes
// from the training split when requested.
WindowedDataset prepare_fold_dataset(const std::vector<Recording>& recordings,
                                     const FoldPlan& plan, int fold, const WindowSpec& spec,
                                     bool normalize_channels);

struct FoldRun {
    int fold = 0;
    DualBranchNet<float> net;
    CheckpointExtras extras;
    std::vector<TrainLogRow> log;
    std::vector<std::string> warnings;
};

// Trains one fold. The run seed is config.seed + fold; the fold plan itself
// is derived from the config seed so train/eval agree on the split.
FoldRun run_fold(const std::vector<Recording>& recordings, const FoldPlan& plan, int fold,
                 const TrainConfig& cfg, const WindowSpec& spec, bool normalize_channels);

// Evaluates a trained model on the recordings, using the checkpoint bindings
// for label spaces, normalization, and the train/test subject split.
struct EvalOutputs {
    EvalReport report;
    PredictionSet predictions;
    std::vector<float> pattern_features;  // n x bottleneck_dim, split rows only
    std::vector<int> feature_subjects, feature_gestures;
};

EvalOutputs evaluate_model(DualBranchNet<float>& net, const CheckpointExtras& extras,
                           const std::vector<Recording>& recordings, const std::string& split,
                           int batch_size = 256);

// Eval-mode feature export over a split, batched like evaluate_model.
struct EmbedOutputs {
    size_t n = 0;
    int dim = 0;
    std::vector<float> features;  // n x dim
    std::vector<int> subjects, gestures;
};

EmbedOutputs embed_features(DualBranchNet<float>& net, const CheckpointExtras& extras,
                            const std::vector<Recording>& recordings, FeatureSpace space,
                            const std::string& split, int batch_size = 256);

// Report writers. All numeric formatting is fixed so reruns are byte-equal.
void write_training_log(const std::string& path, const std::vector<TrainLogRow>& log);
void write_config_snapshot(const std::string& path, const TrainConfig& cfg,
                           const WindowSpec& spec, bool normalize_channels, const FoldPlan& plan,
                           int fold);
void write_eval_report(const std::string& dir, const std::string& stem, const EvalReport& report);
void write_feature_csv(const std::string& path, const std::vector<float>& features, size_t n,
                       size_t dim, const std::vector<int>& subjects,
                       const std::vector<int>& gestures);
void write_projection_csv(const std::string& path, const PcaProjection& proj,
                          const std::vector<int>& subjects, const std::vector<int>& gestures);

struct CrossvalCell {
    std::string variant;
    int fold = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::optional<double> auroc;
    std::optional<double> dbi;
};

void write_crossval_summary(const std::string& dir, const std::vector<CrossvalCell>& cells,
                            int n_folds);

std::string format_double(double v);

}  // namespace emgdis
