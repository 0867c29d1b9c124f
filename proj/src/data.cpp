#include "emgdis/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "emgdis/rng.hpp"

namespace emgdis {

void Recording::validate() const {
    if (channels < 1) throw ValidationError("recording channels must be >= 1");
    if (samples < 0) throw ValidationError("recording sample count must be >= 0");
    if (!(sample_rate > 0)) throw ValidationError("recording sample_rate must be > 0");
    if (signal.size() != static_cast<size_t>(samples) * channels)
        throw ValidationError("recording signal size does not match samples x channels");
}

void WindowSpec::validate() const {
    if (window_samples < 1) throw ValidationError("window_samples must be >= 1");
    if (step_samples < 1) throw ValidationError("step_samples must be >= 1");
}

int window_count(int samples, int window_samples, int step_samples) {
    if (window_samples < 1 || step_samples < 1)
        throw ValidationError("window and step must be >= 1");
    if (samples < window_samples) return 0;
    return (samples - window_samples) / step_samples + 1;
}

std::vector<int> window_starts(int samples, int window_samples, int step_samples) {
    const int n = window_count(samples, window_samples, step_samples);
    std::vector<int> starts(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) starts[static_cast<size_t>(i)] = i * step_samples;
    return starts;
}

const std::vector<int>& FoldPlan::test_subjects(int fold) const {
    if (fold < 0 || fold >= n_folds)
        throw ValidationError("fold index " + std::to_string(fold) + " out of range [0," +
                              std::to_string(n_folds) + ")");
    return fold_subjects[static_cast<size_t>(fold)];
}

std::vector<int> FoldPlan::train_subjects(int fold) const {
    test_subjects(fold);
    std::vector<int> out;
    for (int f = 0; f < n_folds; ++f) {
        if (f == fold) continue;
        const auto& fs = fold_subjects[static_cast<size_t>(f)];
        out.insert(out.end(), fs.begin(), fs.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int FoldPlan::fold_of(int subject_id) const {
    for (int f = 0; f < n_folds; ++f) {
        const auto& fs = fold_subjects[static_cast<size_t>(f)];
        if (std::binary_search(fs.begin(), fs.end(), subject_id)) return f;
    }
    throw ValidationError("subject " + std::to_string(subject_id) + " is not in the fold plan");
}

FoldPlan make_folds(std::vector<int> subject_ids, int n_folds, uint64_t seed) {
    if (n_folds < 2) throw ValidationError("need at least 2 folds");
    if (static_cast<int>(subject_ids.size()) < n_folds)
        throw ValidationError("need at least as many subjects as folds (" +
                              std::to_string(subject_ids.size()) + " < " +
                              std::to_string(n_folds) + ")");
    std::set<int> unique(subject_ids.begin(), subject_ids.end());
    if (unique.size() != subject_ids.size())
        throw ValidationError("duplicate subject ids in fold input");

    std::sort(subject_ids.begin(), subject_ids.end());
    Rng rng(Rng::derive(seed, 0xf01d));
    rng.shuffle(subject_ids);

    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.seed = seed;
    plan.fold_subjects.resize(static_cast<size_t>(n_folds));
    for (size_t i = 0; i < subject_ids.size(); ++i)
        plan.fold_subjects[i % static_cast<size_t>(n_folds)].push_back(subject_ids[i]);
    for (auto& fs : plan.fold_subjects) std::sort(fs.begin(), fs.end());
    return plan;
}

int WindowedDataset::gesture_class_index(int gesture_id) const {
    const auto it = std::lower_bound(gesture_classes.begin(), gesture_classes.end(), gesture_id);
    if (it == gesture_classes.end() || *it != gesture_id) return -1;
    return static_cast<int>(it - gesture_classes.begin());
}

WindowedDataset assemble_windows(const std::vector<Recording>& recordings, const WindowSpec& spec,
                                 const std::vector<int>& test_subjects) {
    spec.validate();
    if (recordings.empty()) throw ValidationError("no recordings to window");

    std::vector<const Recording*> ordered;
    ordered.reserve(recordings.size());
    for (const auto& r : recordings) {
        r.validate();
        ordered.push_back(&r);
    }
    std::sort(ordered.begin(), ordered.end(), [](const Recording* a, const Recording* b) {
        if (a->subject_id != b->subject_id) return a->subject_id < b->subject_id;
        if (a->gesture_id != b->gesture_id) return a->gesture_id < b->gesture_id;
        return a->trial_id < b->trial_id;
    });

    const int channels = ordered.front()->channels;
    std::set<int> test_set(test_subjects.begin(), test_subjects.end());
    std::set<int> gestures, train_subject_set;
    size_t total_windows = 0;

    WindowedDataset ds;
    for (const Recording* r : ordered) {
        if (r->channels != channels)
            throw ValidationError("recording (subject " + std::to_string(r->subject_id) +
                                  ", gesture " + std::to_string(r->gesture_id) + ") has " +
                                  std::to_string(r->channels) + " channels, expected " +
                                  std::to_string(channels));
        const int n = window_count(r->samples, spec.window_samples, spec.step_samples);
        if (n == 0) {
            ds.warnings.push_back("recording (subject " + std::to_string(r->subject_id) +
                                  ", gesture " + std::to_string(r->gesture_id) + ", trial " +
                                  std::to_string(r->trial_id) + ") shorter than one window, skipped");
            continue;
        }
        total_windows += static_cast<size_t>(n);
        gestures.insert(r->gesture_id);
        if (test_set.count(r->subject_id) == 0) train_subject_set.insert(r->subject_id);
    }
    if (total_windows == 0) throw ValidationError("no recording is long enough for one window");

    ds.window_len = spec.window_samples;
    ds.channels = channels;
    ds.gesture_classes.assign(gestures.begin(), gestures.end());
    ds.train_subjects.assign(train_subject_set.begin(), train_subject_set.end());
    ds.data.reserve(total_windows * static_cast<size_t>(spec.window_samples) * channels);

    for (const Recording* r : ordered) {
        const auto starts = window_starts(r->samples, spec.window_samples, spec.step_samples);
        if (starts.empty()) continue;
        const bool is_test = test_set.count(r->subject_id) > 0;
        int subj_idx = -1;
        if (!is_test) {
            const auto it = std::lower_bound(ds.train_subjects.begin(), ds.train_subjects.end(),
                                             r->subject_id);
            subj_idx = static_cast<int>(it - ds.train_subjects.begin());
        }
        const int gest_idx = ds.gesture_class_index(r->gesture_id);
        for (int start : starts) {
            const float* src = r->signal.data() + static_cast<size_t>(start) * channels;
            ds.data.insert(ds.data.end(), src,
                           src + static_cast<size_t>(spec.window_samples) * channels);
            const size_t row = ds.gesture_ids.size();
            ds.subject_ids.push_back(r->subject_id);
            ds.gesture_ids.push_back(r->gesture_id);
            ds.trial_ids.push_back(r->trial_id);
            ds.gesture_idx.push_back(gest_idx);
            ds.subject_idx.push_back(subj_idx);
            if (is_test)
                ds.test_indices.push_back(row);
            else
                ds.train_indices.push_back(row);
        }
    }
    return ds;
}

void normalize(WindowedDataset& ds) {
    if (ds.normalized) throw ContractError("dataset already normalized");
    if (ds.train_indices.empty())
        throw ValidationError("cannot compute normalization statistics: empty training split");

    const int c = ds.channels;
    const size_t per_window = static_cast<size_t>(ds.window_len) * c;
    std::vector<double> sum(static_cast<size_t>(c), 0.0), ssq(static_cast<size_t>(c), 0.0);
    const size_t positions = ds.train_indices.size() * static_cast<size_t>(ds.window_len);
    for (size_t row : ds.train_indices) {
        const float* w = ds.data.data() + row * per_window;
        for (int t = 0; t < ds.window_len; ++t)
            for (int ch = 0; ch < c; ++ch) {
                const double v = w[static_cast<size_t>(t) * c + ch];
                sum[static_cast<size_t>(ch)] += v;
            }
    }
    std::vector<float> mean(static_cast<size_t>(c)), stddev(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        mean[static_cast<size_t>(ch)] =
            static_cast<float>(sum[static_cast<size_t>(ch)] / static_cast<double>(positions));
    for (size_t row : ds.train_indices) {
        const float* w = ds.data.data() + row * per_window;
        for (int t = 0; t < ds.window_len; ++t)
            for (int ch = 0; ch < c; ++ch) {
                const double d = static_cast<double>(w[static_cast<size_t>(t) * c + ch]) -
                                 static_cast<double>(mean[static_cast<size_t>(ch)]);
                ssq[static_cast<size_t>(ch)] += d * d;
            }
    }
    for (int ch = 0; ch < c; ++ch) {
        const double sd = std::sqrt(ssq[static_cast<size_t>(ch)] / static_cast<double>(positions));
        stddev[static_cast<size_t>(ch)] = static_cast<float>(std::max(sd, 1e-8));
    }
    apply_normalization(ds, mean, stddev);
}

void apply_normalization(WindowedDataset& ds, const std::vector<float>& mean,
                         const std::vector<float>& stddev) {
    if (ds.normalized) throw ContractError("dataset already normalized");
    const int c = ds.channels;
    if (mean.size() != static_cast<size_t>(c) || stddev.size() != static_cast<size_t>(c))
        throw ValidationError("normalization statistics do not match channel count " +
                              std::to_string(c));
    for (float sd : stddev)
        if (!(sd > 0)) throw ValidationError("normalization std must be positive");

    std::vector<float> inv(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) inv[static_cast<size_t>(ch)] = 1.0f / stddev[static_cast<size_t>(ch)];
    for (size_t i = 0; i < ds.data.size(); ++i) {
        const int ch = static_cast<int>(i % static_cast<size_t>(c));
        ds.data[i] = (ds.data[i] - mean[static_cast<size_t>(ch)]) * inv[static_cast<size_t>(ch)];
    }
    ds.norm_mean = mean;
    ds.norm_std = stddev;
    ds.normalized = true;
}

}  // namespace emgdis
