// Command-line surface: synth | train | eval | embed | crossval.
// Exit codes: 0 success, 2 usage or validation failure, 1 runtime failure.

#include <cstdlib>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "emgdis/checkpoint.hpp"
#include "emgdis/dataset_io.hpp"
#include "emgdis/experiment.hpp"
#include "emgdis/metrics.hpp"
#include "emgdis/synth.hpp"

using namespace emgdis;

namespace {

std::string resolve_out(const std::string& out) {
    if (!out.empty()) return out;
    if (const char* env = std::getenv("EMGDIS_OUT"); env && *env) return env;
    throw ValidationError("no output directory: pass --out or set EMGDIS_OUT");
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

std::vector<Recording> load_data(const std::string& dir) {
    std::vector<std::string> warnings;
    auto recs = load_manifest(dir, &warnings);
    print_warnings(warnings);
    return recs;
}

std::vector<int> dataset_subjects(const std::vector<Recording>& recs) {
    std::set<int> ids;
    for (const auto& r : recs) ids.insert(r.subject_id);
    return {ids.begin(), ids.end()};
}

std::vector<int> parse_fold_selection(const std::string& fold, int n_folds) {
    if (fold == "all") {
        std::vector<int> all(n_folds);
        for (int k = 0; k < n_folds; ++k) all[k] = k;
        return all;
    }
    int k = 0;
    try {
        size_t used = 0;
        k = std::stoi(fold, &used);
        if (used != fold.size()) throw std::invalid_argument(fold);
    } catch (const std::exception&) {
        throw ValidationError("--fold must be an integer or 'all', got '" + fold + "'");
    }
    if (k < 0 || k >= n_folds)
        throw ValidationError("--fold " + std::to_string(k) + " is outside 0.." +
                              std::to_string(n_folds - 1));
    return {k};
}

// Training options shared by train and crossval: defaults, then an optional
// config file, then explicit flags, later layers winning.
struct TrainArgs {
    std::string config_path;
    std::string variant;
    int epochs = 0, batch_size = 0, iterations = 0;
    double lr = 0, ls_init = 0, ls_max = 0, lp_init = 0, lp_max = 0;
    uint64_t seed = 0;
    CLI::Option *o_variant = nullptr, *o_epochs = nullptr, *o_batch = nullptr, *o_lr = nullptr,
                *o_ls_init = nullptr, *o_ls_max = nullptr, *o_lp_init = nullptr,
                *o_lp_max = nullptr, *o_seed = nullptr, *o_iters = nullptr;

    void add_to(CLI::App* cmd, bool with_variant) {
        cmd->add_option("--config", config_path, "Training config JSON (fields may be a subset)");
        if (with_variant)
            o_variant = cmd->add_option("--variant", variant,
                                        "Model variant: proposed|erm|p-only|mtl");
        o_epochs = cmd->add_option("--epochs", epochs, "Training epochs");
        o_batch = cmd->add_option("--batch-size", batch_size, "Windows per batch");
        o_lr = cmd->add_option("--lr", lr, "SGD learning rate");
        o_ls_init = cmd->add_option("--lambda-s-init", ls_init, "Subject-reversal coefficient at epoch 0");
        o_ls_max = cmd->add_option("--lambda-s-max", ls_max, "Subject-reversal coefficient at the last epoch");
        o_lp_init = cmd->add_option("--lambda-p-init", lp_init, "Pattern-reversal coefficient at epoch 0");
        o_lp_max = cmd->add_option("--lambda-p-max", lp_max, "Pattern-reversal coefficient at the last epoch");
        o_seed = cmd->add_option("--seed", seed, "Run seed");
        o_iters = cmd->add_option("--iterations-per-step", iterations,
                                  "Optimizer iterations per training step");
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_path.empty()) cfg = load_train_config(config_path);
        if (o_variant && o_variant->count()) cfg.variant = variant_from_string(variant);
        if (o_epochs->count()) cfg.epochs = epochs;
        if (o_batch->count()) cfg.batch_size = batch_size;
        if (o_lr->count()) cfg.learning_rate = lr;
        if (o_ls_init->count()) cfg.lambda_s_init = ls_init;
        if (o_ls_max->count()) cfg.lambda_s_max = ls_max;
        if (o_lp_init->count()) cfg.lambda_p_init = lp_init;
        if (o_lp_max->count()) cfg.lambda_p_max = lp_max;
        if (o_seed->count()) cfg.seed = seed;
        if (o_iters->count()) cfg.iterations_per_step = iterations;
        cfg.validate();
        return cfg;
    }
};

void save_fold_artifacts(const std::string& fold_dir, FoldRun& run, const WindowSpec& spec,
                         bool normalize_channels, const FoldPlan& plan) {
    save_checkpoint(fold_dir + "/checkpoint.bin", run.net, run.extras);
    write_training_log(fold_dir + "/training_log.csv", run.log);
    write_config_snapshot(fold_dir + "/config.json", run.extras.config, spec, normalize_channels,
                          plan, run.fold);
}

std::string summary_line(const EvalReport& r) {
    std::string s = "accuracy " + format_double(r.accuracy) + ", macro_f1 " +
                    format_double(r.macro_f1);
    if (r.auroc) s += ", auroc " + format_double(*r.auroc);
    if (r.dbi_pattern) s += ", dbi_pattern " + format_double(*r.dbi_pattern);
    if (r.dbi_subject) s += ", dbi_subject " + format_double(*r.dbi_subject);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-subject EMG gesture recognition with a dual-branch adversarial network"};
    app.require_subcommand(1);

    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-subject dataset");
    std::string synth_config, synth_out;
    SynthConfig synth_overrides;
    synth_cmd->add_option("--config", synth_config, "Generator config JSON");
    synth_cmd->add_option("--out", synth_out, "Output dataset directory");
    auto* o_subjects = synth_cmd->add_option("--subjects", synth_overrides.n_subjects, "Number of subjects");
    auto* o_gestures = synth_cmd->add_option("--gestures", synth_overrides.n_gestures, "Number of gestures");
    auto* o_trials = synth_cmd->add_option("--trials", synth_overrides.trials_per_gesture, "Trials per gesture");
    auto* o_duration = synth_cmd->add_option("--duration", synth_overrides.duration_s, "Recording length in seconds");
    auto* o_rate = synth_cmd->add_option("--rate", synth_overrides.sample_rate, "Sample rate in Hz");
    auto* o_channels = synth_cmd->add_option("--channels", synth_overrides.channels, "Channel count");
    auto* o_alpha = synth_cmd->add_option("--alpha", synth_overrides.alpha, "Subject-mixing strength");
    auto* o_noise = synth_cmd->add_option("--noise", synth_overrides.noise, "Additive noise sigma");
    auto* o_synth_seed = synth_cmd->add_option("--seed", synth_overrides.seed, "Generator seed");

    auto* train_cmd = app.add_subcommand("train", "Train one fold or every fold");
    std::string train_data, train_fold = "0", train_out;
    int train_n_folds = 4;
    WindowSpec train_spec;
    bool train_no_norm = false;
    TrainArgs train_args;
    train_cmd->add_option("--data", train_data, "Dataset directory with manifest.json")->required();
    train_args.add_to(train_cmd, true);
    train_cmd->add_option("--fold", train_fold, "Fold index to train, or 'all'");
    train_cmd->add_option("--n-folds", train_n_folds, "Number of subject folds");
    train_cmd->add_option("--window", train_spec.window_samples, "Window length in samples");
    train_cmd->add_option("--step", train_spec.step_samples, "Window step in samples");
    train_cmd->add_flag("--no-normalize", train_no_norm, "Skip per-channel standardization");
    train_cmd->add_option("--out", train_out, "Output directory");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
    int eval_batch = 256;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset directory with manifest.json")->required();
    eval_cmd->add_option("--split", eval_split, "Subjects to evaluate: test|train|all");
    eval_cmd->add_option("--batch-size", eval_batch, "Windows per forward pass");
    eval_cmd->add_option("--out", eval_out, "Output directory");

    auto* embed_cmd = app.add_subcommand("embed", "Export eval-mode features and a 2-D projection");
    std::string embed_ckpt, embed_data, embed_which = "pattern", embed_split = "test", embed_out;
    int embed_batch = 256;
    embed_cmd->add_option("--checkpoint", embed_ckpt, "Checkpoint file")->required();
    embed_cmd->add_option("--data", embed_data, "Dataset directory with manifest.json")->required();
    embed_cmd->add_option("--which", embed_which, "Feature space: original|pattern|subject");
    embed_cmd->add_option("--split", embed_split, "Subjects to export: test|train|all");
    embed_cmd->add_option("--batch-size", embed_batch, "Windows per forward pass");
    embed_cmd->add_option("--out", embed_out, "Output directory");

    auto* cross_cmd = app.add_subcommand("crossval", "Train and evaluate variants across all folds");
    std::string cross_data, cross_out;
    std::vector<std::string> cross_variants = {"proposed", "erm", "p-only", "mtl"};
    int cross_n_folds = 4;
    WindowSpec cross_spec;
    bool cross_no_norm = false;
    TrainArgs cross_args;
    cross_cmd->add_option("--data", cross_data, "Dataset directory with manifest.json")->required();
    cross_args.add_to(cross_cmd, false);
    cross_cmd->add_option("--variants", cross_variants, "Variants to include")
        ->delimiter(',')
        ->capture_default_str();
    cross_cmd->add_option("--n-folds", cross_n_folds, "Number of subject folds");
    cross_cmd->add_option("--window", cross_spec.window_samples, "Window length in samples");
    cross_cmd->add_option("--step", cross_spec.step_samples, "Window step in samples");
    cross_cmd->add_flag("--no-normalize", cross_no_norm, "Skip per-channel standardization");
    cross_cmd->add_option("--out", cross_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(synth_cmd)) {
            SynthConfig cfg;
            if (!synth_config.empty()) cfg = load_synth_config(synth_config);
            if (o_subjects->count()) cfg.n_subjects = synth_overrides.n_subjects;
            if (o_gestures->count()) cfg.n_gestures = synth_overrides.n_gestures;
            if (o_trials->count()) cfg.trials_per_gesture = synth_overrides.trials_per_gesture;
            if (o_duration->count()) cfg.duration_s = synth_overrides.duration_s;
            if (o_rate->count()) cfg.sample_rate = synth_overrides.sample_rate;
            if (o_channels->count()) cfg.channels = synth_overrides.channels;
            if (o_alpha->count()) cfg.alpha = synth_overrides.alpha;
            if (o_noise->count()) cfg.noise = synth_overrides.noise;
            if (o_synth_seed->count()) cfg.seed = synth_overrides.seed;
            cfg.validate();
            const auto recs = synthesize(cfg);
            const std::string out = resolve_out(synth_out);
            save_dataset(out, recs);
            save_synth_config(out + "/synth_config.json", cfg);
            std::cout << "wrote " << recs.size() << " recordings to " << out << "\n";
        } else if (app.got_subcommand(train_cmd)) {
            const auto recs = load_data(train_data);
            const TrainConfig cfg = train_args.resolve();
            train_spec.validate();
            const FoldPlan plan = make_folds(dataset_subjects(recs), train_n_folds, cfg.seed);
            const auto folds = parse_fold_selection(train_fold, train_n_folds);
            const std::string out = resolve_out(train_out);
            for (int k : folds) {
                FoldRun run = run_fold(recs, plan, k, cfg, train_spec, !train_no_norm);
                print_warnings(run.warnings);
                const std::string fold_dir = out + "/fold" + std::to_string(k);
                save_fold_artifacts(fold_dir, run, train_spec, !train_no_norm, plan);
                std::cout << "fold " << k << ": trained " << to_string(cfg.variant) << " for "
                          << cfg.epochs << " epochs -> " << fold_dir << "\n";
            }
        } else if (app.got_subcommand(eval_cmd)) {
            auto loaded = load_checkpoint(eval_ckpt);
            const auto recs = load_data(eval_data);
            EvalOutputs ev = evaluate_model(loaded.net, loaded.extras, recs, eval_split, eval_batch);
            print_warnings(ev.report.warnings);
            const std::string out = resolve_out(eval_out);
            const std::string stem = "eval_" + eval_split;
            write_eval_report(out, stem, ev.report);
            save_train_config(out + "/" + stem + "_config.json", loaded.extras.config);
            std::cout << "split " << eval_split << " (" << ev.predictions.size() << " windows, "
                      << ev.report.per_subject.size() << " subjects): " << summary_line(ev.report)
                      << "\n";
        } else if (app.got_subcommand(embed_cmd)) {
            auto loaded = load_checkpoint(embed_ckpt);
            const auto recs = load_data(embed_data);
            const FeatureSpace space = feature_space_from_string(embed_which);
            EmbedOutputs eo =
                embed_features(loaded.net, loaded.extras, recs, space, embed_split, embed_batch);
            const std::string out = resolve_out(embed_out);
            write_feature_csv(out + "/features_" + embed_which + ".csv", eo.features, eo.n,
                              static_cast<size_t>(eo.dim), eo.subjects, eo.gestures);
            const std::vector<double> fd(eo.features.begin(), eo.features.end());
            PcaProjection proj = pca_project(fd, eo.n, static_cast<size_t>(eo.dim), 2);
            print_warnings(proj.warnings);
            write_projection_csv(out + "/projection_" + embed_which + ".csv", proj, eo.subjects,
                                 eo.gestures);
            std::cout << "wrote " << eo.n << " x " << eo.dim << " " << embed_which
                      << " features and their projection to " << out << "\n";
        } else if (app.got_subcommand(cross_cmd)) {
            const auto recs = load_data(cross_data);
            const TrainConfig base_cfg = cross_args.resolve();
            cross_spec.validate();
            if (cross_variants.empty()) throw ValidationError("--variants must not be empty");
            const FoldPlan plan = make_folds(dataset_subjects(recs), cross_n_folds, base_cfg.seed);
            const std::string out = resolve_out(cross_out);
            std::vector<CrossvalCell> cells;
            for (const auto& vname : cross_variants) {
                TrainConfig cfg = base_cfg;
                cfg.variant = variant_from_string(vname);
                for (int k = 0; k < cross_n_folds; ++k) {
                    try {
                        FoldRun run = run_fold(recs, plan, k, cfg, cross_spec, !cross_no_norm);
                        print_warnings(run.warnings);
                        const std::string fold_dir =
                            out + "/" + vname + "/fold" + std::to_string(k);
                        save_fold_artifacts(fold_dir, run, cross_spec, !cross_no_norm, plan);
                        EvalOutputs ev =
                            evaluate_model(run.net, run.extras, recs, "test", cfg.batch_size);
                        print_warnings(ev.report.warnings);
                        write_eval_report(fold_dir, "eval_test", ev.report);
                        cells.push_back({vname, k, ev.report.accuracy, ev.report.macro_f1,
                                         ev.report.auroc, ev.report.dbi_pattern});
                        std::cout << vname << " fold " << k << ": " << summary_line(ev.report)
                                  << "\n";
                    } catch (const std::exception&) {
                        std::cerr << "crossval failed at variant " << vname << " fold " << k
                                  << "\n";
                        throw;
                    }
                }
            }
            write_crossval_summary(out, cells, cross_n_folds);
            std::cout << "wrote crossval summary for " << cross_variants.size() << " variants x "
                      << cross_n_folds << " folds to " << out << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
