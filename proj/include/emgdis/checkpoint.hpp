#pragma once
// Checkpoint file: a single little-endian binary holding the variant tag,
// architecture, every named parameter tensor, BN running statistics, the
// resolved training config, and the dataset bindings needed to evaluate
// (label spaces, split subjects, normalization statistics, window geometry).
// Writes are byte-stable for a fixed seed and schedule.

#include <string>
#include <vector>

#include "emgdis/network.hpp"
#include "emgdis/training.hpp"

namespace emgdis {

struct CheckpointExtras {
    TrainConfig config;
    std::vector<int> gesture_classes;
    std::vector<int> train_subjects;
    std::vector<int> test_subjects;
    std::vector<float> norm_mean, norm_std;
    bool normalized = false;
    int window_samples = 408;
    int step_samples = 20;
    int fold_index = -1;
    int n_folds = 0;
};

void save_checkpoint(const std::string& path, DualBranchNet<float>& net,
                     const CheckpointExtras& extras);

struct LoadedCheckpoint {
    DualBranchNet<float> net;
    CheckpointExtras extras;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace emgdis
