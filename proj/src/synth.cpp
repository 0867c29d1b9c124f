#include "emgdis/synth.hpp"

#include <algorithm>
#include <cmath>

#include "emgdis/rng.hpp"

namespace emgdis {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
constexpr int kHarmonics = 3;

struct GestureSource {
    // per channel x harmonic
    std::vector<double> freq, amp, phase;
    double env_rate = 1.0;
    double env_phase = 0.0;
};

GestureSource make_gesture_source(const SynthConfig& cfg, int gesture) {
    Rng rng(Rng::derive(cfg.seed, 100 + static_cast<uint64_t>(gesture)));
    GestureSource s;
    const size_t n = static_cast<size_t>(cfg.channels) * kHarmonics;
    s.freq.resize(n);
    s.amp.resize(n);
    s.phase.resize(n);
    for (size_t i = 0; i < n; ++i) {
        s.freq[i] = rng.uniform(30.0, 300.0);
        s.amp[i] = rng.uniform(0.3, 1.0);
        s.phase[i] = rng.uniform(0.0, kTwoPi);
    }
    s.env_rate = rng.uniform(0.5, 2.0);
    s.env_phase = rng.uniform(0.0, kTwoPi);
    return s;
}

struct SubjectProfile {
    std::vector<double> mixing;  // channels x channels, A = I + alpha * R
    std::vector<double> offset;  // channels, scaled by alpha
};

SubjectProfile make_subject_profile(const SynthConfig& cfg, int subject) {
    Rng rng(Rng::derive(cfg.seed, 500000 + static_cast<uint64_t>(subject)));
    const int c = cfg.channels;
    SubjectProfile p;
    p.mixing.resize(static_cast<size_t>(c) * c);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j)
            p.mixing[static_cast<size_t>(i) * c + j] =
                (i == j ? 1.0 : 0.0) + cfg.alpha * rng.normal();
    p.offset.resize(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) p.offset[static_cast<size_t>(j)] = cfg.alpha * rng.normal(0.0, 0.5);
    return p;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_subjects < 2) throw ValidationError("n_subjects must be >= 2");
    if (n_gestures < 2) throw ValidationError("n_gestures must be >= 2");
    if (trials_per_gesture < 2) throw ValidationError("trials_per_gesture must be >= 2");
    if (channels < 2) throw ValidationError("channels must be >= 2");
    if (!(duration_s > 0)) throw ValidationError("duration_s must be > 0");
    if (!(sample_rate > 0)) throw ValidationError("sample_rate must be > 0");
    if (!(alpha >= 0)) throw ValidationError("alpha must be >= 0");
    if (!(noise >= 0)) throw ValidationError("noise must be >= 0");
}

std::vector<Recording> synthesize(const SynthConfig& cfg) {
    cfg.validate();
    const int t_total = static_cast<int>(std::llround(cfg.duration_s * cfg.sample_rate));
    if (t_total < 1) throw ValidationError("duration_s x sample_rate must be >= 1 sample");
    const int c = cfg.channels;

    std::vector<GestureSource> sources;
    sources.reserve(static_cast<size_t>(cfg.n_gestures));
    for (int gd = 0; gd < cfg.n_gestures; ++gd) sources.push_back(make_gesture_source(cfg, gd + 1));

    std::vector<SubjectProfile> profiles;
    profiles.reserve(static_cast<size_t>(cfg.n_subjects));
    for (int u = 0; u < cfg.n_subjects; ++u) profiles.push_back(make_subject_profile(cfg, u + 1));

    std::vector<Recording> out;
    out.reserve(static_cast<size_t>(cfg.n_subjects) * cfg.n_gestures * cfg.trials_per_gesture);
    const double dt = 1.0 / cfg.sample_rate;

    std::vector<double> latent(static_cast<size_t>(t_total) * c);
    for (int gd = 0; gd < cfg.n_gestures; ++gd) {
        const auto& src = sources[static_cast<size_t>(gd)];
        for (int trial = 0; trial < cfg.trials_per_gesture; ++trial) {
            // Trial-level phase jitter is shared by all subjects so the only
            // cross-subject differences come from mixing, offset, and noise.
            Rng trial_rng(Rng::derive(cfg.seed, 10000 + static_cast<uint64_t>(gd) * 1000 +
                                                    static_cast<uint64_t>(trial)));
            std::vector<double> jitter(static_cast<size_t>(c) * kHarmonics);
            for (auto& j : jitter) j = trial_rng.uniform(0.0, kTwoPi);

            for (int t = 0; t < t_total; ++t) {
                const double time = t * dt;
                const double env =
                    0.55 + 0.45 * std::sin(kTwoPi * src.env_rate * time + src.env_phase);
                for (int ch = 0; ch < c; ++ch) {
                    double v = 0.0;
                    for (int h = 0; h < kHarmonics; ++h) {
                        const size_t i = static_cast<size_t>(ch) * kHarmonics + h;
                        v += src.amp[i] *
                             std::sin(kTwoPi * src.freq[i] * time + src.phase[i] + jitter[i]);
                    }
                    latent[static_cast<size_t>(t) * c + ch] = env * v;
                }
            }

            for (int u = 0; u < cfg.n_subjects; ++u) {
                const auto& prof = profiles[static_cast<size_t>(u)];
                Rng noise_rng(Rng::derive(
                    cfg.seed, 900000 + ((static_cast<uint64_t>(u) * 977 + static_cast<uint64_t>(gd)) *
                                            991 +
                                        static_cast<uint64_t>(trial))));
                Recording rec;
                rec.subject_id = u + 1;
                rec.gesture_id = gd + 1;
                rec.trial_id = trial;
                rec.sample_rate = cfg.sample_rate;
                rec.channels = c;
                rec.samples = t_total;
                rec.signal.resize(static_cast<size_t>(t_total) * c);
                for (int t = 0; t < t_total; ++t) {
                    const double* s = latent.data() + static_cast<size_t>(t) * c;
                    float* x = rec.signal.data() + static_cast<size_t>(t) * c;
                    for (int i = 0; i < c; ++i) {
                        double v = prof.offset[static_cast<size_t>(i)];
                        const double* row = prof.mixing.data() + static_cast<size_t>(i) * c;
                        for (int j = 0; j < c; ++j) v += row[j] * s[j];
                        if (cfg.noise > 0) v += cfg.noise * noise_rng.normal();
                        x[i] = static_cast<float>(v);
                    }
                }
                out.push_back(std::move(rec));
            }
        }
    }

    std::sort(out.begin(), out.end(), [](const Recording& a, const Recording& b) {
        if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
        if (a.gesture_id != b.gesture_id) return a.gesture_id < b.gesture_id;
        return a.trial_id < b.trial_id;
    });
    return out;
}

}  // namespace emgdis
