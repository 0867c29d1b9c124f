#pragma once
// Synthetic multi-subject EMG generator. Each gesture has a latent source
// signal (band-limited sinusoid mixtures under a gesture-specific envelope)
// shared by all subjects; each subject sees that source through a random
// channel-mixing matrix A_u = I + alpha * R_u plus a subject offset that also
// scales with alpha, then additive Gaussian noise. alpha = 0 and noise = 0
// yields identical recordings across subjects for a given gesture and trial.

#include <cstdint>
#include <vector>

#include "emgdis/data.hpp"

namespace emgdis {

struct SynthConfig {
    int n_subjects = 12;
    int n_gestures = 4;
    int trials_per_gesture = 3;
    double duration_s = 1.0;
    double sample_rate = 2048.0;
    int channels = 8;
    double alpha = 0.5;  // subject-mixing strength
    double noise = 0.1;  // additive noise sigma
    uint64_t seed = 0;

    void validate() const;
};

std::vector<Recording> synthesize(const SynthConfig& cfg);

}  // namespace emgdis
