// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#include "coal/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "coal/gradcheck.hpp"
#include "coal/metrics.hpp"
#include "coal/priors.hpp"
#include "coal/tracker.hpp"
#include "coal/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coal {

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    auto put = [&cfg](const std::string& k, const json& v) { cfg.values_[k] = v.dump(); };
    put("data.n_sequences", 1);
    put("data.frames", 20);
    put("data.objects", 4);
    put("data.expressions", 10);
    put("data.caption_error_rate", 0.0);
    put("data.box_jitter", 0.0);
    put("data.spurious_rate", 0.0);
    put("data.miss_rate", 0.0);
    put("data.seed", 42);
    put("model.d", 32);
    put("model.heads", 8);
    put("model.levels", 4);
    put("model.deform_points", 4);
    put("model.bifusion_layers", 1);
    put("encoder.map_h", 24);
    put("encoder.map_w", 72);
    put("encoder.noise_sigma", 0.0);
    put("train.epochs", 30);
    put("train.lr", 1e-4);
    put("train.n_queries", 10);
    put("train.seed", 42);
    put("train.precision", "f32");
    put("train.cf_enabled", true);
    put("train.esi_enabled", true);
    put("train.beta1", 0.9);
    put("train.beta2", 0.999);
    put("train.weight_decay", 0.01);
    put("train.grad_clip", 0.0);
    put("train.label_iou_threshold", 0.5);
    put("track.tau_high", 0.4);
    put("track.tau_low", 0.1);
    put("track.epsilon", 0.4);
    put("track.iou_gate", 0.3);
    put("track.max_lost", 30);
    put("track.combine_detector_score", false);
    return cfg;
}

void RunConfig::merge_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config file not found: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ValidationError(path + ": parse error: " + e.what());
    }
    if (!j.is_object()) throw ValidationError(path + ": expected a flat JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!values_.count(k)) throw ValidationError(path + ": unknown config key: " + k);
        values_[k] = v.dump();
    }
}

void RunConfig::set(const std::string& key, const std::string& json_value) {
    values_[key] = json_value;
}

namespace {

json parse_value(const std::string& encoded, const std::string& key) {
    try {
        return json::parse(encoded);
    } catch (const json::exception&) {
        throw ValidationError("config: malformed value for " + key);
    }
}

}  // namespace

double RunConfig::num(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("config: missing key " + key);
    const json v = parse_value(it->second, key);
    if (!v.is_number()) throw ValidationError("config: key " + key + " is not numeric");
    return v.get<double>();
}

int RunConfig::integer(const std::string& key) const { return static_cast<int>(num(key)); }

bool RunConfig::flag(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("config: missing key " + key);
    const json v = parse_value(it->second, key);
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_number()) return v.get<double>() != 0.0;
    throw ValidationError("config: key " + key + " is not boolean");
}

std::string RunConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("config: missing key " + key);
    const json v = parse_value(it->second, key);
    if (!v.is_string()) throw ValidationError("config: key " + key + " is not a string");
    return v.get<std::string>();
}

std::string RunConfig::dump() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = json::parse(v);
    return j.dump(2) + "\n";
}

std::string RunConfig::display(const std::string& key) const {
    auto it = values_.find(key);
    return it != values_.end() ? it->second : "?";
}

void RunConfig::echo(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write config echo: " + path);
    f << dump();
}

namespace {

TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.integer("train.epochs");
    tc.lr = cfg.num("train.lr");
    tc.n_queries = cfg.integer("train.n_queries");
    tc.seed = static_cast<std::uint64_t>(cfg.num("train.seed"));
    tc.precision = cfg.str("train.precision");
    tc.cf_enabled = cfg.flag("train.cf_enabled");
    tc.esi_enabled = cfg.flag("train.esi_enabled");
    tc.beta1 = cfg.num("train.beta1");
    tc.beta2 = cfg.num("train.beta2");
    tc.weight_decay = cfg.num("train.weight_decay");
    tc.grad_clip = cfg.num("train.grad_clip");
    tc.label_iou_threshold = cfg.num("train.label_iou_threshold");
    tc.model.d = cfg.integer("model.d");
    tc.model.heads = cfg.integer("model.heads");
    tc.model.levels = cfg.integer("model.levels");
    tc.model.deform_points = cfg.integer("model.deform_points");
    tc.model.bifusion_layers = cfg.integer("model.bifusion_layers");
    tc.model.esi_enabled = tc.esi_enabled;
    tc.encoder.d = tc.model.d;
    tc.encoder.map_h = cfg.integer("encoder.map_h");
    tc.encoder.map_w = cfg.integer("encoder.map_w");
    tc.encoder.noise_sigma = cfg.num("encoder.noise_sigma");
    tc.encoder.seed = tc.seed;
    return tc;
}

TrackerConfig tracker_config_from(const RunConfig& cfg) {
    TrackerConfig tk;
    tk.tau_high = cfg.num("track.tau_high");
    tk.tau_low = cfg.num("track.tau_low");
    tk.epsilon = cfg.num("track.epsilon");
    tk.iou_gate = cfg.num("track.iou_gate");
    tk.max_lost = cfg.integer("track.max_lost");
    tk.combine_detector_score = cfg.flag("track.combine_detector_score");
    return tk;
}

void require_valid_dataset(const std::string& dataset_dir) {
    const ValidationReport report = validate_dataset(dataset_dir);
    if (!report.ok()) {
        for (const auto& e : report.errors)
            std::cerr << "error: " << e.file << (e.record.empty() ? "" : " [" + e.record + "]") << ": "
                      << e.message << "\n";
        throw ValidationError("dataset validation failed with " +
                              std::to_string(report.errors.size()) + " error(s)");
    }
}

template <typename T>
int run_train(const RunConfig& cfg, const Dataset& dataset, const std::string& checkpoint_path,
              bool resume) {
    const TrainConfig tc = train_config_from(cfg);
    TrainState<T> state = resume ? load_checkpoint<T>(checkpoint_path) : init_train_state<T>(tc);
    if (resume) state.config.epochs = tc.epochs;

    const fs::path parent = fs::path(checkpoint_path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        fs::create_directories(parent, ec);
        if (ec) throw IoError("cannot create checkpoint directory: " + parent.string());
    }
    const std::string log_path = checkpoint_path + ".log.jsonl";
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open loss log: " + log_path);
    train<T>(state, dataset, tc.epochs, [&log](const EpochLog& e) {
        json j{{"epoch", e.epoch}, {"main", e.main},     {"cf", e.cf},
               {"total", e.total}, {"frames", e.frames}, {"skipped", e.skipped}};
        log << j.dump() << "\n";
        log.flush();
        std::cout << "epoch " << e.epoch << "  L_m " << e.main << "  L_cf " << e.cf << "  total "
                  << e.total << "\n";
    });
    save_checkpoint(state, checkpoint_path);
    cfg.echo(checkpoint_path + ".config.json");
    return 0;
}

template <typename T>
int run_track(const RunConfig& cfg, const std::string& checkpoint_path, const Dataset& dataset,
              const std::string& out_dir, const std::string& expression_filter) {
    const TrainState<T> state = load_checkpoint<T>(checkpoint_path);
    const TrackerConfig tk = tracker_config_from(cfg);
    FeatureProvider<T> provider(dataset.grammar, state.config.encoder);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    for (const auto& seq : dataset.sequences) {
        for (const auto& expr : seq.expressions) {
            if (!expression_filter.empty() && expr.id != expression_filter) continue;
            const auto records = run_sequence(state.model, provider, seq, expr, tk);
            write_track_file(records, out_dir + "/" + seq.sequence_id + "__" + expr.id + ".txt");
        }
    }
    cfg.echo(out_dir + "/config_echo.json");
    return 0;
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    DatasetGenParams params;
    params.n_sequences = cfg.integer("data.n_sequences");
    params.sequence.n_frames = cfg.integer("data.frames");
    params.sequence.n_expressions = cfg.integer("data.expressions");
    params.sequence.scene.n_objects = cfg.integer("data.objects");
    params.sequence.scene.caption_error_rate = cfg.num("data.caption_error_rate");
    params.sequence.scene.box_jitter = cfg.num("data.box_jitter");
    params.sequence.scene.spurious_rate = cfg.num("data.spurious_rate");
    params.sequence.scene.miss_rate = cfg.num("data.miss_rate");
    params.seed = static_cast<std::uint64_t>(cfg.num("data.seed"));
    const Dataset dataset = generate_dataset(params, AttributeGrammar::default_grammar());
    save_dataset(dataset, out_dir);
    cfg.echo(out_dir + "/config_echo.json");
    const ValidationReport report = validate_dataset(out_dir);
    if (!report.ok()) throw ValidationError("generated dataset failed self-validation");
    std::cout << "dataset written to " << out_dir << " (" << dataset.sequences.size()
              << " sequence(s))\n";
    return 0;
}

int cmd_validate(const std::string& dataset_dir) {
    const ValidationReport report = validate_dataset(dataset_dir);
    for (const auto& e : report.errors)
        std::cout << "error: " << e.file << (e.record.empty() ? "" : " [" + e.record + "]") << ": "
                  << e.message << "\n";
    for (const auto& w : report.warnings)
        std::cout << "warning: " << w.file << (w.record.empty() ? "" : " [" + w.record + "]") << ": "
                  << w.message << "\n";
    std::cout << report.errors.size() << " error(s), " << report.warnings.size() << " warning(s)\n";
    return report.ok() ? 0 : kExitValidation;
}

int cmd_train(const RunConfig& cfg, const std::string& dataset_dir, const std::string& checkpoint_path,
              bool resume) {
    require_valid_dataset(dataset_dir);
    const Dataset dataset = load_dataset(dataset_dir);
    const std::string precision = cfg.str("train.precision");
    if (precision == "f64") return run_train<double>(cfg, dataset, checkpoint_path, resume);
    if (precision == "f32") return run_train<float>(cfg, dataset, checkpoint_path, resume);
    throw ValidationError("train.precision must be f32 or f64");
}

int cmd_track(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& dataset_dir,
              const std::string& out_dir, const std::string& expression_filter) {
    require_valid_dataset(dataset_dir);
    const Dataset dataset = load_dataset(dataset_dir);
    if (checkpoint_dtype(checkpoint_path) == dtype_code<double>())
        return run_track<double>(cfg, checkpoint_path, dataset, out_dir, expression_filter);
    return run_track<float>(cfg, checkpoint_path, dataset, out_dir, expression_filter);
}

int cmd_eval(const RunConfig& cfg, const std::string& dataset_dir, const std::string& predictions_dir,
             const std::string& out_dir) {
    require_valid_dataset(dataset_dir);
    if (!fs::is_directory(predictions_dir))
        throw IoError("predictions directory not found: " + predictions_dir);
    const Dataset dataset = load_dataset(dataset_dir);
    const BenchmarkReport report = evaluate_benchmark(dataset, predictions_dir);
    const std::string table = format_report_table(report);
    std::cout << table;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    {
        std::ofstream f(out_dir + "/report.txt", std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write report.txt");
        f << table;
    }
    {
        std::ofstream f(out_dir + "/report.jsonl", std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write report.jsonl");
        f << format_report_json(report);
    }
    cfg.echo(out_dir + "/config_echo.json");
    return 0;
}

int cmd_gradcheck() {
    const auto results = run_standard_gradchecks();
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err=" << r.max_rel_err
                  << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "gradient checks passed" : "gradient checks FAILED") << " ("
              << results.size() << " ops)\n";
    return all_pass ? 0 : kExitNumeric;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e)) return kExitValidation;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    return 1;
}

}  // namespace coal
