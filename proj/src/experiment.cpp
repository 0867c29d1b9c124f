#include "emgdis/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace emgdis {

namespace {

void write_text(const std::string& path, const std::string& text) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("short write to " + path);
}

std::string opt_cell(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

ordered_json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

double require_number(const ordered_json& j, const std::string& key) {
    if (!j.is_number()) throw ValidationError("config field '" + key + "' must be a number");
    return j.get<double>();
}

int require_int(const ordered_json& j, const std::string& key) {
    if (!j.is_number_integer()) throw ValidationError("config field '" + key + "' must be an integer");
    return j.get<int>();
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw IoError("config " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ValidationError("config " + path + " must be a JSON object");

    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "variant") {
            if (!value.is_string()) throw ValidationError("config field 'variant' must be a string");
            cfg.variant = variant_from_string(value.get<std::string>());
        } else if (key == "epochs") {
            cfg.epochs = require_int(value, key);
        } else if (key == "batch_size") {
            cfg.batch_size = require_int(value, key);
        } else if (key == "learning_rate") {
            cfg.learning_rate = require_number(value, key);
        } else if (key == "lambda_s_init") {
            cfg.lambda_s_init = require_number(value, key);
        } else if (key == "lambda_s_max") {
            cfg.lambda_s_max = require_number(value, key);
        } else if (key == "lambda_p_init") {
            cfg.lambda_p_init = require_number(value, key);
        } else if (key == "lambda_p_max") {
            cfg.lambda_p_max = require_number(value, key);
        } else if (key == "seed") {
            if (!value.is_number_integer() || value.get<int64_t>() < 0)
                throw ValidationError("config field 'seed' must be a non-negative integer");
            cfg.seed = value.get<uint64_t>();
        } else if (key == "iterations_per_step") {
            cfg.iterations_per_step = require_int(value, key);
        } else {
            throw ValidationError("config " + path + " has unknown field '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

namespace {

ordered_json config_json(const TrainConfig& cfg) {
    ordered_json j;
    j["variant"] = to_string(cfg.variant);
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["lambda_s_init"] = cfg.lambda_s_init;
    j["lambda_s_max"] = cfg.lambda_s_max;
    j["lambda_p_init"] = cfg.lambda_p_init;
    j["lambda_p_max"] = cfg.lambda_p_max;
    j["seed"] = cfg.seed;
    j["iterations_per_step"] = cfg.iterations_per_step;
    return j;
}

}  // namespace

void save_train_config(const std::string& path, const TrainConfig& cfg) {
    write_text(path, config_json(cfg).dump(2) + "\n");
}

WindowedDataset prepare_fold_dataset(const std::vector<Recording>& recordings,
                                     const FoldPlan& plan, int fold, const WindowSpec& spec,
                                     bool normalize_channels) {
    WindowedDataset ds = assemble_windows(recordings, spec, plan.test_subjects(fold));
    if (normalize_channels) normalize(ds);
    return ds;
}

FoldRun run_fold(const std::vector<Recording>& recordings, const FoldPlan& plan, int fold,
                 const TrainConfig& cfg, const WindowSpec& spec, bool normalize_channels) {
    cfg.validate();
    WindowedDataset ds = prepare_fold_dataset(recordings, plan, fold, spec, normalize_channels);
    if (ds.train_subjects.empty())
        throw ValidationError("fold " + std::to_string(fold) + " leaves no training subjects");

    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<uint64_t>(fold);

    Arch arch;
    arch.in_len = spec.window_samples;
    arch.in_channels = ds.channels;
    auto net = build_model<float>(run_cfg.variant, static_cast<int>(ds.gesture_classes.size()),
                                  static_cast<int>(ds.train_subjects.size()), run_cfg.seed, arch);
    TrainResult tr = train(net, ds, run_cfg);

    FoldRun run;
    run.fold = fold;
    run.net = std::move(net);
    run.log = std::move(tr.log);
    run.warnings = ds.warnings;
    run.warnings.insert(run.warnings.end(), tr.state.warnings.begin(), tr.state.warnings.end());

    CheckpointExtras& x = run.extras;
    x.config = run_cfg;
    x.gesture_classes = ds.gesture_classes;
    x.train_subjects = ds.train_subjects;
    x.test_subjects = plan.test_subjects(fold);
    x.norm_mean = ds.norm_mean;
    x.norm_std = ds.norm_std;
    x.normalized = ds.normalized;
    x.window_samples = spec.window_samples;
    x.step_samples = spec.step_samples;
    x.fold_index = fold;
    x.n_folds = plan.n_folds;
    return run;
}

namespace {

struct SplitRows {
    WindowedDataset ds;
    std::vector<size_t> rows;
};

SplitRows select_split_rows(const DualBranchNet<float>& net, const CheckpointExtras& extras,
                            const std::vector<Recording>& recordings, const std::string& split,
                            int batch_size) {
    if (split != "train" && split != "test" && split != "all")
        throw ValidationError("unknown split '" + split + "' (expected train|test|all)");
    if (batch_size < 1) throw ValidationError("batch_size must be positive");

    const WindowSpec spec{extras.window_samples, extras.step_samples};
    SplitRows out;
    out.ds = assemble_windows(recordings, spec, extras.test_subjects);
    if (out.ds.channels != net.arch.in_channels)
        throw ValidationError("dataset has " + std::to_string(out.ds.channels) +
                              " channels but the checkpoint expects " +
                              std::to_string(net.arch.in_channels));
    if (extras.normalized) apply_normalization(out.ds, extras.norm_mean, extras.norm_std);

    const std::set<int> train_set(extras.train_subjects.begin(), extras.train_subjects.end());
    const std::set<int> test_set(extras.test_subjects.begin(), extras.test_subjects.end());
    for (size_t i = 0; i < out.ds.size(); ++i) {
        const int s = out.ds.subject_ids[i];
        if (split == "all" || (split == "train" && train_set.count(s)) ||
            (split == "test" && test_set.count(s)))
            out.rows.push_back(i);
    }
    if (out.rows.empty())
        throw ValidationError("split '" + split + "' selects no windows from this dataset");
    return out;
}

}  // namespace

EvalOutputs evaluate_model(DualBranchNet<float>& net, const CheckpointExtras& extras,
                           const std::vector<Recording>& recordings, const std::string& split,
                           int batch_size) {
    auto [ds, rows] = select_split_rows(net, extras, recordings, split, batch_size);

    const int n_classes = static_cast<int>(extras.gesture_classes.size());
    auto class_of = [&extras, n_classes](int gesture_id) {
        const auto it = std::lower_bound(extras.gesture_classes.begin(),
                                         extras.gesture_classes.end(), gesture_id);
        if (it == extras.gesture_classes.end() || *it != gesture_id)
            throw ValidationError("gesture id " + std::to_string(gesture_id) +
                                  " is not in the checkpoint's label space");
        return static_cast<int>(it - extras.gesture_classes.begin());
    };

    EvalOutputs out;
    out.predictions.n_classes = n_classes;
    const size_t n = rows.size();
    const size_t wc = static_cast<size_t>(ds.window_len) * ds.channels;
    const int zdim = net.arch.bottleneck_dim;
    out.predictions.labels.reserve(n);
    out.predictions.subject_ids.reserve(n);
    out.predictions.probabilities.reserve(n * n_classes);
    out.pattern_features.reserve(n * static_cast<size_t>(zdim));
    out.feature_subjects.reserve(n);
    out.feature_gestures.reserve(n);

    for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
        const size_t stop = std::min(n, start + static_cast<size_t>(batch_size));
        const int bn = static_cast<int>(stop - start);
        auto x = ad::make_tensor<float>({bn, ds.window_len, ds.channels});
        for (size_t k = start; k < stop; ++k)
            std::copy_n(ds.window(rows[k]), wc, x->v.data() + (k - start) * wc);

        ad::Graph<float> g;
        g.set_recording(false);
        auto fo = forward(net, g, x, ad::Mode::Eval, 0.0f, 0.0f, nullptr, kMainPattern);
        for (size_t k = start; k < stop; ++k) {
            const size_t r = rows[k];
            out.predictions.labels.push_back(class_of(ds.gesture_ids[r]));
            out.predictions.subject_ids.push_back(ds.subject_ids[r]);
            out.feature_subjects.push_back(ds.subject_ids[r]);
            out.feature_gestures.push_back(ds.gesture_ids[r]);
            const float* p = fo.y_p->v.data() + (k - start) * n_classes;
            for (int c = 0; c < n_classes; ++c) out.predictions.probabilities.push_back(p[c]);
            const float* z = fo.z_p->v.data() + (k - start) * static_cast<size_t>(zdim);
            out.pattern_features.insert(out.pattern_features.end(), z, z + zdim);
        }
    }

    out.report = aggregate_per_subject(out.predictions);
    for (const auto& w : ds.warnings) out.report.warnings.push_back(w);

    ClusterSet clusters;
    clusters.dim = zdim;
    clusters.points.assign(out.pattern_features.begin(), out.pattern_features.end());
    clusters.labels.assign(out.feature_gestures.begin(), out.feature_gestures.end());
    try {
        out.report.dbi_pattern = davies_bouldin(clusters);
    } catch (const ValidationError& e) {
        out.report.warnings.push_back(std::string("pattern DBI unavailable: ") + e.what());
    }
    clusters.labels.assign(out.feature_subjects.begin(), out.feature_subjects.end());
    try {
        out.report.dbi_subject = davies_bouldin(clusters);
    } catch (const ValidationError& e) {
        out.report.warnings.push_back(std::string("subject DBI unavailable: ") + e.what());
    }
    return out;
}

EmbedOutputs embed_features(DualBranchNet<float>& net, const CheckpointExtras& extras,
                            const std::vector<Recording>& recordings, FeatureSpace space,
                            const std::string& split, int batch_size) {
    auto [ds, rows] = select_split_rows(net, extras, recordings, split, batch_size);

    EmbedOutputs out;
    out.n = rows.size();
    const size_t wc = static_cast<size_t>(ds.window_len) * ds.channels;
    out.subjects.reserve(out.n);
    out.gestures.reserve(out.n);
    for (size_t start = 0; start < out.n; start += static_cast<size_t>(batch_size)) {
        const size_t stop = std::min(out.n, start + static_cast<size_t>(batch_size));
        auto x = ad::make_tensor<float>({static_cast<int>(stop - start), ds.window_len,
                                         ds.channels});
        for (size_t k = start; k < stop; ++k) {
            std::copy_n(ds.window(rows[k]), wc, x->v.data() + (k - start) * wc);
            out.subjects.push_back(ds.subject_ids[rows[k]]);
            out.gestures.push_back(ds.gesture_ids[rows[k]]);
        }
        auto chunk = export_features(net, x, space, &out.dim);
        out.features.insert(out.features.end(), chunk.begin(), chunk.end());
    }
    return out;
}

void write_training_log(const std::string& path, const std::vector<TrainLogRow>& log) {
    std::string text =
        "epoch,lambda_s,lambda_p,L_p_cls,L_s_cls,L_s_adv,L_p_adv,"
        "train_pattern_acc,train_subject_acc\n";
    for (const auto& row : log) {
        text += std::to_string(row.epoch);
        text += ',';
        text += format_double(row.lambda_s);
        text += ',';
        text += format_double(row.lambda_p);
        for (double v : {row.losses.p_cls, row.losses.s_cls, row.losses.s_adv, row.losses.p_adv,
                         row.pattern_acc, row.subject_acc}) {
            text += ',';
            text += format_double(v);
        }
        text += '\n';
    }
    write_text(path, text);
}

void write_config_snapshot(const std::string& path, const TrainConfig& cfg,
                           const WindowSpec& spec, bool normalize_channels, const FoldPlan& plan,
                           int fold) {
    ordered_json j;
    j["config"] = config_json(cfg);
    j["window"] = {{"window_samples", spec.window_samples}, {"step_samples", spec.step_samples}};
    j["normalize"] = normalize_channels;
    ordered_json jf;
    jf["index"] = fold;
    jf["n_folds"] = plan.n_folds;
    jf["plan_seed"] = plan.seed;
    jf["test_subjects"] = plan.test_subjects(fold);
    jf["train_subjects"] = plan.train_subjects(fold);
    j["fold"] = jf;
    write_text(path, j.dump(2) + "\n");
}

void write_eval_report(const std::string& dir, const std::string& stem, const EvalReport& report) {
    fs::create_directories(dir);
    const fs::path base = fs::path(dir) / stem;

    std::string per = "subject_id,n_windows,accuracy,macro_f1,auroc\n";
    for (const auto& s : report.per_subject) {
        per += std::to_string(s.subject_id);
        per += ',' + std::to_string(s.n_windows);
        per += ',' + format_double(s.accuracy);
        per += ',' + format_double(s.macro_f1);
        per += ',' + opt_cell(s.auroc);
        per += '\n';
    }
    write_text((base.string() + "_per_subject.csv"), per);

    std::string sum = "n_subjects,accuracy,macro_f1,auroc,dbi_pattern,dbi_subject\n";
    sum += std::to_string(report.per_subject.size());
    sum += ',' + format_double(report.accuracy);
    sum += ',' + format_double(report.macro_f1);
    sum += ',' + opt_cell(report.auroc);
    sum += ',' + opt_cell(report.dbi_pattern);
    sum += ',' + opt_cell(report.dbi_subject);
    sum += '\n';
    write_text((base.string() + "_summary.csv"), sum);

    ordered_json j;
    ordered_json per_subject = ordered_json::array();
    for (const auto& s : report.per_subject) {
        ordered_json row;
        row["subject_id"] = s.subject_id;
        row["n_windows"] = s.n_windows;
        row["accuracy"] = s.accuracy;
        row["macro_f1"] = s.macro_f1;
        row["auroc"] = opt_json(s.auroc);
        per_subject.push_back(row);
    }
    j["per_subject"] = per_subject;
    ordered_json summary;
    summary["n_subjects"] = report.per_subject.size();
    summary["accuracy"] = report.accuracy;
    summary["macro_f1"] = report.macro_f1;
    summary["auroc"] = opt_json(report.auroc);
    summary["dbi_pattern"] = opt_json(report.dbi_pattern);
    summary["dbi_subject"] = opt_json(report.dbi_subject);
    j["summary"] = summary;
    j["warnings"] = report.warnings;
    write_text((base.string() + ".json"), j.dump(2) + "\n");
}

void write_feature_csv(const std::string& path, const std::vector<float>& features, size_t n,
                       size_t dim, const std::vector<int>& subjects,
                       const std::vector<int>& gestures) {
    if (features.size() != n * dim || subjects.size() != n || gestures.size() != n)
        throw ContractError("feature export size mismatch");
    std::string text = "subject_id,gesture_id";
    for (size_t f = 0; f < dim; ++f) text += ",f" + std::to_string(f);
    text += '\n';
    for (size_t i = 0; i < n; ++i) {
        text += std::to_string(subjects[i]);
        text += ',' + std::to_string(gestures[i]);
        const float* row = features.data() + i * dim;
        for (size_t f = 0; f < dim; ++f) {
            text += ',';
            text += format_double(row[f]);
        }
        text += '\n';
    }
    write_text(path, text);
}

void write_projection_csv(const std::string& path, const PcaProjection& proj,
                          const std::vector<int>& subjects, const std::vector<int>& gestures) {
    if (subjects.size() != static_cast<size_t>(proj.n) ||
        gestures.size() != static_cast<size_t>(proj.n))
        throw ContractError("projection export size mismatch");
    std::string text = "subject_id,gesture_id";
    for (int d = 0; d < proj.dims; ++d) text += ",pca" + std::to_string(d);
    text += '\n';
    for (int i = 0; i < proj.n; ++i) {
        text += std::to_string(subjects[i]);
        text += ',' + std::to_string(gestures[i]);
        for (int d = 0; d < proj.dims; ++d) {
            text += ',';
            text += format_double(proj.coords[static_cast<size_t>(i) * proj.dims + d]);
        }
        text += '\n';
    }
    write_text(path, text);
}

void write_crossval_summary(const std::string& dir, const std::vector<CrossvalCell>& cells,
                            int n_folds) {
    if (n_folds < 1) throw ValidationError("crossval summary needs at least one fold");
    std::vector<std::string> variants;
    std::map<std::string, std::map<int, CrossvalCell>> grid;
    for (const auto& c : cells) {
        if (c.fold < 0 || c.fold >= n_folds)
            throw ContractError("crossval cell has fold " + std::to_string(c.fold) +
                                " outside 0.." + std::to_string(n_folds - 1));
        if (!grid.count(c.variant)) variants.push_back(c.variant);
        if (!grid[c.variant].emplace(c.fold, c).second)
            throw ContractError("duplicate crossval cell for " + c.variant + " fold " +
                                std::to_string(c.fold));
    }

    std::string text = "variant,metric";
    for (int f = 0; f < n_folds; ++f) text += ",fold" + std::to_string(f);
    text += ",mean\n";

    ordered_json j;
    j["n_folds"] = n_folds;
    ordered_json jv = ordered_json::array();

    struct MetricRow {
        const char* name;
        std::optional<double> (*get)(const CrossvalCell&);
    };
    const MetricRow metric_rows[] = {
        {"accuracy", [](const CrossvalCell& c) { return std::optional<double>(c.accuracy); }},
        {"macro_f1", [](const CrossvalCell& c) { return std::optional<double>(c.macro_f1); }},
        {"auroc", [](const CrossvalCell& c) { return c.auroc; }},
        {"dbi", [](const CrossvalCell& c) { return c.dbi; }},
    };

    for (const auto& name : variants) {
        const auto& folds = grid[name];
        ordered_json jrow;
        jrow["variant"] = name;
        for (const auto& m : metric_rows) {
            text += name;
            text += ',';
            text += m.name;
            double total = 0.0;
            int count = 0;
            ordered_json values = ordered_json::array();
            for (int f = 0; f < n_folds; ++f) {
                text += ',';
                const auto it = folds.find(f);
                bool has = false;
                double v = 0.0;
                if (it != folds.end()) {
                    if (const auto mv = m.get(it->second)) {
                        has = true;
                        v = *mv;
                    }
                }
                if (has) {
                    text += format_double(v);
                    values.push_back(v);
                    total += v;
                    ++count;
                } else {
                    values.push_back(nullptr);
                }
            }
            text += ',';
            if (count > 0) text += format_double(total / count);
            text += '\n';
            ordered_json jm;
            jm["folds"] = values;
            jm["mean"] = count > 0 ? ordered_json(total / count) : ordered_json(nullptr);
            jrow[m.name] = jm;
        }
        jv.push_back(jrow);
    }
    j["variants"] = jv;

    fs::create_directories(dir);
    write_text((fs::path(dir) / "crossval_summary.csv").string(), text);
    write_text((fs::path(dir) / "crossval_summary.json").string(), j.dump(2) + "\n");
}

}  // namespace emgdis
