#pragma once
// Dataset model: recordings, sliding windows, subject-wise folds, and
// per-channel normalization. Subjects are atomic units for splitting, so a
// subject's windows are either all training or all test and normalization
// statistics come from training windows only.

#include <cstdint>
#include <string>
#include <vector>

#include "emgdis/errors.hpp"

namespace emgdis {

struct Recording {
    int subject_id = 0;
    int gesture_id = 0;
    int trial_id = 0;
    double sample_rate = 2048.0;
    int channels = 0;
    int samples = 0;
    std::vector<float> signal;  // samples x channels, row-major

    void validate() const;
};

struct WindowSpec {
    int window_samples = 408;
    int step_samples = 20;

    void validate() const;
};

// Number of full windows in a recording of the given length; 0 when the
// recording is shorter than one window.
int window_count(int samples, int window_samples, int step_samples);
std::vector<int> window_starts(int samples, int window_samples, int step_samples);

struct FoldPlan {
    int n_folds = 0;
    uint64_t seed = 0;
    std::vector<std::vector<int>> fold_subjects;  // each sorted ascending

    const std::vector<int>& test_subjects(int fold) const;
    std::vector<int> train_subjects(int fold) const;
    int fold_of(int subject_id) const;
};

FoldPlan make_folds(std::vector<int> subject_ids, int n_folds, uint64_t seed);

// Flat window store with labels and split bookkeeping. gesture_idx indexes
// gesture_classes; subject_idx indexes train_subjects and is -1 for held-out
// subjects, whose identity is used only to group evaluation metrics.
struct WindowedDataset {
    int window_len = 0;
    int channels = 0;
    std::vector<float> data;  // n * window_len * channels

    std::vector<int> subject_ids, gesture_ids, trial_ids;  // per window
    std::vector<int> gesture_classes;                      // sorted unique gesture ids
    std::vector<int> train_subjects;                       // sorted training subject ids
    std::vector<int> gesture_idx;                          // per window
    std::vector<int> subject_idx;                          // per window, -1 for test subjects

    std::vector<size_t> train_indices, test_indices;

    std::vector<float> norm_mean, norm_std;  // per channel
    bool normalized = false;

    std::vector<std::string> warnings;

    size_t size() const { return gesture_ids.size(); }
    const float* window(size_t i) const {
        return data.data() + i * static_cast<size_t>(window_len) * channels;
    }
    int gesture_class_index(int gesture_id) const;
};

// Windows all recordings (sorted by subject, gesture, trial) and splits them
// by subject. Recordings shorter than one window are skipped with a warning.
WindowedDataset assemble_windows(const std::vector<Recording>& recordings, const WindowSpec& spec,
                                 const std::vector<int>& test_subjects);

// Computes per-channel statistics from the training split (std floored at
// 1e-8) and standardizes every window in place.
void normalize(WindowedDataset& ds);

// Standardizes with externally supplied statistics, e.g. from a checkpoint.
void apply_normalization(WindowedDataset& ds, const std::vector<float>& mean,
                         const std::vector<float>& stddev);

}  // namespace emgdis
