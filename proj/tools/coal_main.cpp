// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "coal/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"COAL referring multi-object tracking pipeline"};
    app.require_subcommand(1);

    coal::RunConfig cfg = coal::RunConfig::defaults();
    std::string config_file;
    std::string dataset_dir, checkpoint_path, out_dir, predictions_dir, expression_filter;
    bool resume = false;

    auto bind_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file with flat dotted keys");
    };

    struct NumFlag {
        std::string flag, key, desc;
    };
    const std::vector<NumFlag> gen_flags = {
        {"--n-sequences", "data.n_sequences", "number of sequences"},
        {"--frames", "data.frames", "frames per sequence"},
        {"--objects", "data.objects", "objects per sequence"},
        {"--expressions", "data.expressions", "expressions per sequence"},
        {"--caption-error-rate", "data.caption_error_rate", "probability of one hallucinated slot"},
        {"--box-jitter", "data.box_jitter", "proposal box jitter"},
        {"--spurious-rate", "data.spurious_rate", "spurious proposal rate"},
        {"--miss-rate", "data.miss_rate", "missed detection rate"},
        {"--seed", "data.seed", "generator seed"},
    };
    const std::vector<NumFlag> model_flags = {
        {"--d", "model.d", "feature dimension"},
        {"--heads", "model.heads", "attention heads"},
        {"--levels", "model.levels", "pyramid levels"},
        {"--deform-points", "model.deform_points", "sampling points per head per level"},
        {"--bifusion-layers", "model.bifusion_layers", "bi-fusion layers"},
        {"--map-h", "encoder.map_h", "feature map height"},
        {"--map-w", "encoder.map_w", "feature map width"},
        {"--noise-sigma", "encoder.noise_sigma", "visual background noise sigma"},
    };
    const std::vector<NumFlag> train_flags = {
        {"--epochs", "train.epochs", "training epochs"},
        {"--lr", "train.lr", "learning rate"},
        {"--n-queries", "train.n_queries", "queries per image (N)"},
        {"--seed", "train.seed", "training seed"},
        {"--weight-decay", "train.weight_decay", "AdamW weight decay"},
        {"--grad-clip", "train.grad_clip", "gradient norm clip (0 disables)"},
        {"--label-iou", "train.label_iou_threshold", "label assignment IoU threshold"},
    };
    const std::vector<NumFlag> track_flags = {
        {"--tau-high", "track.tau_high", "high score threshold"},
        {"--tau-low", "track.tau_low", "low score threshold"},
        {"--epsilon", "track.epsilon", "new track threshold"},
        {"--iou-gate", "track.iou_gate", "association IoU gate"},
        {"--max-lost", "track.max_lost", "frames before a lost track is removed"},
    };

    std::vector<std::pair<std::string, double>> num_overrides;
    std::vector<std::pair<std::string, bool>> flag_overrides;
    std::string precision_override;

    auto add_flags = [&](CLI::App* cmd, const std::vector<NumFlag>& flags) {
        for (const auto& f : flags) {
            cmd->add_option_function<double>(
                f.flag,
                [&num_overrides, key = f.key](double v) { num_overrides.emplace_back(key, v); },
                f.desc + " (default " + cfg.display(f.key) + ")");
        }
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    bind_common(gen);
    add_flags(gen, gen_flags);
    gen->add_option("--out", out_dir, "output dataset directory")->required();

    CLI::App* validate = app.add_subcommand("validate", "validate a dataset directory");
    validate->add_option("--dataset", dataset_dir, "dataset directory")->required();

    CLI::App* train = app.add_subcommand("train", "train the scoring network");
    bind_common(train);
    add_flags(train, model_flags);
    add_flags(train, train_flags);
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--checkpoint", checkpoint_path, "checkpoint output path")->required();
    train->add_option("--precision", precision_override, "f32 or f64 (default f32)");
    train->add_flag("--resume", resume, "resume from an existing checkpoint");
    train->add_flag_function(
        "--no-cfl", [&flag_overrides](std::int64_t) { flag_overrides.emplace_back("train.cf_enabled", false); },
        "disable counterfactual learning (ablation)");
    train->add_flag_function(
        "--no-esi", [&flag_overrides](std::int64_t) { flag_overrides.emplace_back("train.esi_enabled", false); },
        "disable explicit semantic injection (ablation)");

    CLI::App* track = app.add_subcommand("track", "run tracking-by-detection inference");
    bind_common(track);
    add_flags(track, track_flags);
    track->add_flag_function(
        "--combine-detector-score",
        [&flag_overrides](std::int64_t) { flag_overrides.emplace_back("track.combine_detector_score", true); },
        "multiply semantic score by detector confidence");
    track->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    track->add_option("--dataset", dataset_dir, "dataset directory")->required();
    track->add_option("--out", out_dir, "prediction output directory")->required();
    track->add_option("--expression", expression_filter, "restrict to one expression id");

    CLI::App* eval = app.add_subcommand("eval", "evaluate predictions with the HOTA suite");
    bind_common(eval);
    eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval->add_option("--predictions", predictions_dir, "prediction directory")->required();
    eval->add_option("--out", out_dir, "report output directory")->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for every op");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_file.empty()) cfg.merge_file(config_file);
        for (const auto& [k, v] : num_overrides) cfg.set(k, std::to_string(v));
        for (const auto& [k, v] : flag_overrides) cfg.set(k, v ? "true" : "false");
        if (!precision_override.empty()) cfg.set("train.precision", "\"" + precision_override + "\"");

        if (gen->parsed()) return coal::cmd_gen_data(cfg, out_dir);
        if (validate->parsed()) return coal::cmd_validate(dataset_dir);
        if (train->parsed()) return coal::cmd_train(cfg, dataset_dir, checkpoint_path, resume);
        if (track->parsed())
            return coal::cmd_track(cfg, checkpoint_path, dataset_dir, out_dir, expression_filter);
        if (eval->parsed()) return coal::cmd_eval(cfg, dataset_dir, predictions_dir, out_dir);
        if (gradcheck->parsed()) return coal::cmd_gradcheck();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return coal::exit_code_for(e);
    }
    return 1;
}
