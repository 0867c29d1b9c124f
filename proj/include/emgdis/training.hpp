#pragma once
// Two-step alternating training. Step 1 optimizes the pattern side (shared
// extractor, pattern encoder/bottleneck/classifier, and the subject head when
// its reversed path is active); step 2 optimizes the subject side
// symmetrically. Each step runs a fresh forward pass, so the two steps of a
// batch see independent dropout masks and batch statistics. Reversal
// coefficients follow per-epoch linear schedules.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "emgdis/data.hpp"
#include "emgdis/network.hpp"

namespace emgdis {

struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg)
        : std::runtime_error("training diverged: " + msg) {}
};

struct TrainConfig {
    Variant variant = Variant::Proposed;
    int epochs = 100;
    int batch_size = 256;
    double learning_rate = 0.001;
    double lambda_s_init = 0.0;
    double lambda_s_max = 0.1;
    double lambda_p_init = 1.0;
    double lambda_p_max = 1.5;
    uint64_t seed = 0;
    int iterations_per_step = 1;

    void validate() const;
};

// init + p * (max - init); p outside [0,1] is clamped with a warning.
double lambda_schedule(double p, double init, double max_value,
                       std::vector<std::string>* warnings = nullptr);

constexpr double kAbsentLoss = std::numeric_limits<double>::quiet_NaN();

struct LossValues {
    double p_cls = kAbsentLoss;
    double s_cls = kAbsentLoss;
    double s_adv = kAbsentLoss;
    double p_adv = kAbsentLoss;
};

// Scalar loss tensors for every path present in the forward outputs. The
// batch-mean tensors drive backward; the summed forms equal batch_size times
// the means and exist for exact-equation checks.
struct LossBundle {
    ad::TensorPtr<float> p_cls, s_cls, s_adv, p_adv;                  // batch means
    ad::TensorPtr<float> p_cls_sum, s_cls_sum, s_adv_sum, p_adv_sum;  // summed
    ad::TensorPtr<float> probs_p, probs_s;

    LossValues values() const;
};

LossBundle compute_losses(ad::Graph<float>& g, const ForwardOutputs<float>& out,
                          const ad::TensorPtr<float>& targets_p,
                          const ad::TensorPtr<float>& targets_s);

struct Batch {
    ad::TensorPtr<float> x;    // [n, window, channels]
    ad::TensorPtr<float> y_p;  // [n, n_patterns] one-hot
    ad::TensorPtr<float> y_s;  // [n, n_train_subjects] one-hot
    std::vector<size_t> rows;  // dataset window indices
    int size() const { return static_cast<int>(rows.size()); }
};

struct TrainState {
    int epoch = 0;
    double progress = 0.0;  // 0 at the first epoch, 1 at the last
    double lambda_s = 0.0;
    double lambda_p = 0.0;
    Rng rng;
    int64_t step1_updates = 0;
    int64_t step2_updates = 0;
    std::vector<std::string> warnings;
};

// Shuffles the training split and chunks it; a trailing chunk of fewer than
// 2 windows is dropped (batch statistics need two positions).
std::vector<Batch> make_batches(const WindowedDataset& ds, int batch_size, Rng& rng,
                                std::vector<std::string>* warnings = nullptr);

struct StepResult {
    LossValues losses;
    double pattern_acc = kAbsentLoss;
    double subject_acc = kAbsentLoss;
};

// One optimizer update for one side. step_index 1 = pattern side, 2 = subject
// side. Throws TrainingDiverged on a non-finite loss.
StepResult run_train_step(DualBranchNet<float>& net, const Batch& batch, int step_index,
                          const TrainConfig& cfg, TrainState& state);

// Parameter groups the two optimizers update.
std::vector<ad::TensorPtr<float>> step1_param_group(DualBranchNet<float>& net,
                                                    bool include_subject_head);
std::vector<ad::TensorPtr<float>> step2_param_group(DualBranchNet<float>& net,
                                                    bool include_pattern_head);

struct EpochStats {
    LossValues losses;  // window-weighted means over the epoch
    double pattern_acc = kAbsentLoss;
    double subject_acc = kAbsentLoss;
    int64_t optimizer_steps = 0;
    size_t windows = 0;
};

// Runs one epoch at the schedule position given by state.progress.
EpochStats train_epoch(DualBranchNet<float>& net, const WindowedDataset& ds, TrainState& state,
                       const TrainConfig& cfg);

struct TrainLogRow {
    int epoch = 0;
    double lambda_s = 0.0;
    double lambda_p = 0.0;
    LossValues losses;
    double pattern_acc = kAbsentLoss;
    double subject_acc = kAbsentLoss;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    TrainState state;
};

TrainResult train(DualBranchNet<float>& net, const WindowedDataset& ds, const TrainConfig& cfg);

}  // namespace emgdis
