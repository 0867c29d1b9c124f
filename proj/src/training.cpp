#include "emgdis/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace emgdis {

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
    if (!(lambda_s_init >= 0)) throw ValidationError("lambda_s_init must be >= 0");
    if (!(lambda_p_init >= 0)) throw ValidationError("lambda_p_init must be >= 0");
    if (lambda_s_max < lambda_s_init)
        throw ValidationError("lambda_s_max must be >= lambda_s_init");
    if (lambda_p_max < lambda_p_init)
        throw ValidationError("lambda_p_max must be >= lambda_p_init");
    if (iterations_per_step < 1) throw ValidationError("iterations_per_step must be >= 1");
}

double lambda_schedule(double p, double init, double max_value,
                       std::vector<std::string>* warnings) {
    if (!(init >= 0)) throw ValidationError("schedule init must be >= 0");
    if (max_value < init) throw ValidationError("schedule max must be >= init");
    if (!(p >= 0.0)) {
        if (warnings)
            warnings->push_back("schedule progress " + std::to_string(p) + " clamped to 0");
        p = 0.0;
    } else if (p > 1.0) {
        if (warnings)
            warnings->push_back("schedule progress " + std::to_string(p) + " clamped to 1");
        p = 1.0;
    }
    return init + p * (max_value - init);
}

LossValues LossBundle::values() const {
    LossValues v;
    if (p_cls) v.p_cls = static_cast<double>(p_cls->v[0]);
    if (s_cls) v.s_cls = static_cast<double>(s_cls->v[0]);
    if (s_adv) v.s_adv = static_cast<double>(s_adv->v[0]);
    if (p_adv) v.p_adv = static_cast<double>(p_adv->v[0]);
    return v;
}

LossBundle compute_losses(ad::Graph<float>& g, const ForwardOutputs<float>& out,
                          const ad::TensorPtr<float>& targets_p,
                          const ad::TensorPtr<float>& targets_s) {
    LossBundle bundle;
    auto attach = [&g](const ad::TensorPtr<float>& logits, const ad::TensorPtr<float>& targets,
                       const char* which, ad::TensorPtr<float>& sum_slot,
                       ad::TensorPtr<float>& mean_slot) -> ad::TensorPtr<float> {
        if (!targets)
            throw ContractError(std::string("loss path '") + which + "' present but targets missing");
        auto ce = ad::softmax_cross_entropy(g, logits, targets);
        sum_slot = ce.loss;
        mean_slot = ad::scale(g, ce.loss, 1.0f / static_cast<float>(logits->dim(0)));
        return ce.probs;
    };

    if (out.logits_p) bundle.probs_p = attach(out.logits_p, targets_p, "p_cls", bundle.p_cls_sum,
                                              bundle.p_cls);
    if (out.logits_s) bundle.probs_s = attach(out.logits_s, targets_s, "s_cls", bundle.s_cls_sum,
                                              bundle.s_cls);
    if (out.logits_adv_s)
        attach(out.logits_adv_s, targets_s, "s_adv", bundle.s_adv_sum, bundle.s_adv);
    if (out.logits_adv_p)
        attach(out.logits_adv_p, targets_p, "p_adv", bundle.p_adv_sum, bundle.p_adv);
    if (!bundle.p_cls && !bundle.s_cls && !bundle.s_adv && !bundle.p_adv)
        throw ContractError("forward outputs contain no classifier paths");
    return bundle;
}

std::vector<Batch> make_batches(const WindowedDataset& ds, int batch_size, Rng& rng,
                                std::vector<std::string>* warnings) {
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (ds.train_indices.empty()) throw ValidationError("empty training split");

    const int k = static_cast<int>(ds.gesture_classes.size());
    const int s = static_cast<int>(ds.train_subjects.size());
    std::vector<size_t> order = ds.train_indices;
    rng.shuffle(order);

    std::vector<Batch> batches;
    const size_t per_window = static_cast<size_t>(ds.window_len) * ds.channels;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
        const size_t n = std::min(static_cast<size_t>(batch_size), order.size() - at);
        if (n < 2) {
            if (warnings)
                warnings->push_back("dropping trailing batch of " + std::to_string(n) +
                                    " window(s); batch statistics need 2");
            break;
        }
        Batch b;
        b.rows.assign(order.begin() + static_cast<long>(at),
                      order.begin() + static_cast<long>(at + n));
        b.x = ad::make_tensor<float>({static_cast<int>(n), ds.window_len, ds.channels}, false,
                                     "batch.x");
        b.y_p = ad::make_tensor<float>({static_cast<int>(n), k}, false, "batch.y_p");
        if (s > 0) b.y_s = ad::make_tensor<float>({static_cast<int>(n), s}, false, "batch.y_s");
        for (size_t i = 0; i < n; ++i) {
            const size_t row = b.rows[i];
            std::copy(ds.data.begin() + static_cast<long>(row * per_window),
                      ds.data.begin() + static_cast<long>((row + 1) * per_window),
                      b.x->v.begin() + static_cast<long>(i * per_window));
            const int gi = ds.gesture_idx[row];
            if (gi < 0)
                throw ContractError("training window " + std::to_string(row) +
                                    " has no gesture label");
            b.y_p->v[i * static_cast<size_t>(k) + static_cast<size_t>(gi)] = 1.0f;
            if (b.y_s) {
                const int si = ds.subject_idx[row];
                if (si < 0)
                    throw ContractError("training window " + std::to_string(row) +
                                        " belongs to a held-out subject");
                b.y_s->v[i * static_cast<size_t>(s) + static_cast<size_t>(si)] = 1.0f;
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<ad::TensorPtr<float>> step1_param_group(DualBranchNet<float>& net,
                                                    bool include_subject_head) {
    std::vector<ad::TensorPtr<float>> group;
    auto add_block = [&group](net::ConvBlock<float>& b) {
        group.push_back(b.w);
        group.push_back(b.b);
        group.push_back(b.gamma);
        group.push_back(b.beta);
    };
    add_block(net.extractor);
    add_block(net.pattern.enc1);
    add_block(net.pattern.enc2);
    group.push_back(net.pattern.bottleneck.w);
    group.push_back(net.pattern.bottleneck.b);
    group.push_back(net.pattern.bottleneck.gamma);
    group.push_back(net.pattern.bottleneck.beta);
    group.push_back(net.pattern.classifier.w);
    group.push_back(net.pattern.classifier.b);
    if (include_subject_head) {
        auto& head = net.subject_head();
        group.push_back(head.w);
        group.push_back(head.b);
    }
    return group;
}

std::vector<ad::TensorPtr<float>> step2_param_group(DualBranchNet<float>& net,
                                                    bool include_pattern_head) {
    if (!net.has_subject_branch())
        throw ContractError("variant '" + to_string(net.variant) + "' has no subject branch");
    std::vector<ad::TensorPtr<float>> group;
    auto add_block = [&group](net::ConvBlock<float>& b) {
        group.push_back(b.w);
        group.push_back(b.b);
        group.push_back(b.gamma);
        group.push_back(b.beta);
    };
    add_block(net.extractor);
    add_block(net.subject->enc1);
    add_block(net.subject->enc2);
    group.push_back(net.subject->bottleneck.w);
    group.push_back(net.subject->bottleneck.b);
    group.push_back(net.subject->bottleneck.gamma);
    group.push_back(net.subject->bottleneck.beta);
    group.push_back(net.subject->classifier.w);
    group.push_back(net.subject->classifier.b);
    if (include_pattern_head) {
        group.push_back(net.pattern.classifier.w);
        group.push_back(net.pattern.classifier.b);
    }
    return group;
}

namespace {

double batch_accuracy(const ad::TensorPtr<float>& probs, const ad::TensorPtr<float>& targets) {
    const int n = probs->dim(0), k = probs->dim(1);
    size_t correct = 0;
    for (int i = 0; i < n; ++i) {
        const float* row = probs->v.data() + static_cast<size_t>(i) * k;
        int pred = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[pred]) pred = j;
        const float* trow = targets->v.data() + static_cast<size_t>(i) * k;
        int truth = 0;
        for (int j = 1; j < k; ++j)
            if (trow[j] > trow[truth]) truth = j;
        if (pred == truth) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

StepResult run_train_step(DualBranchNet<float>& net, const Batch& batch, int step_index,
                          const TrainConfig& cfg, TrainState& state) {
    if (step_index != 1 && step_index != 2)
        throw ContractError("step_index must be 1 or 2, got " + std::to_string(step_index));

    unsigned mask;
    if (step_index == 1) {
        mask = kMainPattern;
        if (net.has_adv_subject_path() && state.lambda_s > 0.0) mask |= kAdvSubject;
    } else {
        if (!net.has_subject_branch())
            throw ContractError("step 2 requested for variant '" + to_string(net.variant) + "'");
        mask = kMainSubject;
        if (net.has_adv_pattern_path() && state.lambda_p > 0.0) mask |= kAdvPattern;
    }

    StepResult result;
    for (int iter = 0; iter < cfg.iterations_per_step; ++iter) {
        ad::Graph<float> g;
        auto out = forward(net, g, batch.x, ad::Mode::Train, static_cast<float>(state.lambda_s),
                           static_cast<float>(state.lambda_p), &state.rng, mask);
        auto bundle = compute_losses(g, out, batch.y_p, batch.y_s);

        ad::TensorPtr<float> total = step_index == 1 ? bundle.p_cls : bundle.s_cls;
        const ad::TensorPtr<float> adv = step_index == 1 ? bundle.s_adv : bundle.p_adv;
        if (adv) total = ad::add(g, total, adv);

        if (!std::isfinite(total->v[0])) {
            const auto lv = bundle.values();
            std::ostringstream os;
            os << "non-finite loss at epoch " << state.epoch << " step " << step_index
               << " (p_cls=" << lv.p_cls << " s_cls=" << lv.s_cls << " s_adv=" << lv.s_adv
               << " p_adv=" << lv.p_adv << ")";
            throw TrainingDiverged(os.str());
        }

        g.backward(total);
        auto group = step_index == 1 ? step1_param_group(net, static_cast<bool>(bundle.s_adv))
                                     : step2_param_group(net, static_cast<bool>(bundle.p_adv));
        ad::sgd_step(group, cfg.learning_rate);
        if (step_index == 1)
            ++state.step1_updates;
        else
            ++state.step2_updates;

        result.losses = bundle.values();
        if (bundle.probs_p) result.pattern_acc = batch_accuracy(bundle.probs_p, batch.y_p);
        if (bundle.probs_s) result.subject_acc = batch_accuracy(bundle.probs_s, batch.y_s);
    }
    return result;
}

EpochStats train_epoch(DualBranchNet<float>& net, const WindowedDataset& ds, TrainState& state,
                       const TrainConfig& cfg) {
    state.lambda_s = lambda_schedule(state.progress, cfg.lambda_s_init, cfg.lambda_s_max,
                                     &state.warnings);
    state.lambda_p = lambda_schedule(state.progress, cfg.lambda_p_init, cfg.lambda_p_max,
                                     &state.warnings);

    const auto batches = make_batches(ds, cfg.batch_size, state.rng, &state.warnings);
    if (batches.empty()) throw ValidationError("training split produced no usable batches");

    const int64_t steps_before = state.step1_updates + state.step2_updates;
    EpochStats stats;
    double wsum = 0.0;
    double p_cls = 0.0, s_cls = 0.0, s_adv = 0.0, p_adv = 0.0, p_acc = 0.0, s_acc = 0.0;
    bool any_s_cls = false, any_s_adv = false, any_p_adv = false;

    for (const auto& batch : batches) {
        const double w = batch.size();
        const auto r1 = run_train_step(net, batch, 1, cfg, state);
        p_cls += w * r1.losses.p_cls;
        p_acc += w * r1.pattern_acc;
        if (!std::isnan(r1.losses.s_adv)) {
            s_adv += w * r1.losses.s_adv;
            any_s_adv = true;
        }
        if (net.has_subject_branch()) {
            const auto r2 = run_train_step(net, batch, 2, cfg, state);
            s_cls += w * r2.losses.s_cls;
            s_acc += w * r2.subject_acc;
            any_s_cls = true;
            if (!std::isnan(r2.losses.p_adv)) {
                p_adv += w * r2.losses.p_adv;
                any_p_adv = true;
            }
        }
        wsum += w;
        stats.windows += batch.rows.size();
    }

    stats.losses.p_cls = p_cls / wsum;
    stats.pattern_acc = p_acc / wsum;
    if (any_s_cls) {
        stats.losses.s_cls = s_cls / wsum;
        stats.subject_acc = s_acc / wsum;
    }
    if (any_s_adv) stats.losses.s_adv = s_adv / wsum;
    if (any_p_adv) stats.losses.p_adv = p_adv / wsum;
    stats.optimizer_steps = state.step1_updates + state.step2_updates - steps_before;
    return stats;
}

TrainResult train(DualBranchNet<float>& net, const WindowedDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (net.variant != cfg.variant)
        throw ContractError("model variant '" + to_string(net.variant) +
                            "' does not match config variant '" + to_string(cfg.variant) + "'");
    if (ds.train_indices.empty()) throw ValidationError("empty training split");
    if (ds.window_len != net.arch.in_len || ds.channels != net.arch.in_channels)
        throw ValidationError("dataset windows " + std::to_string(ds.window_len) + "x" +
                              std::to_string(ds.channels) + " do not match model input " +
                              std::to_string(net.arch.in_len) + "x" +
                              std::to_string(net.arch.in_channels));
    if (static_cast<int>(ds.gesture_classes.size()) != net.arch.n_patterns)
        throw ValidationError("dataset has " + std::to_string(ds.gesture_classes.size()) +
                              " gesture classes, model expects " +
                              std::to_string(net.arch.n_patterns));
    if (net.variant != Variant::Erm &&
        static_cast<int>(ds.train_subjects.size()) != net.arch.n_subjects)
        throw ValidationError("dataset has " + std::to_string(ds.train_subjects.size()) +
                              " training subjects, model expects " +
                              std::to_string(net.arch.n_subjects));

    TrainResult result;
    result.state.rng = Rng(Rng::derive(cfg.seed, 0x7261));
    for (int e = 0; e < cfg.epochs; ++e) {
        result.state.epoch = e;
        result.state.progress =
            cfg.epochs > 1 ? static_cast<double>(e) / static_cast<double>(cfg.epochs - 1) : 1.0;
        const auto stats = train_epoch(net, ds, result.state, cfg);
        TrainLogRow row;
        row.epoch = e;
        row.lambda_s = result.state.lambda_s;
        row.lambda_p = result.state.lambda_p;
        row.losses = stats.losses;
        row.pattern_acc = stats.pattern_acc;
        row.subject_acc = stats.subject_acc;
        result.log.push_back(row);
    }
    return result;
}

}  // namespace emgdis
