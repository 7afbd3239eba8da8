// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "coal/cli.hpp"
#include "coal/common.hpp"
#include "coal/metrics.hpp"
#include "coal/priors.hpp"

using namespace coal;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run_config() {
    RunConfig cfg = RunConfig::defaults();
    cfg.set("data.frames", "5");
    cfg.set("data.objects", "3");
    cfg.set("data.expressions", "3");
    cfg.set("model.d", "16");
    cfg.set("model.heads", "2");
    cfg.set("model.deform_points", "2");
    cfg.set("encoder.map_h", "8");
    cfg.set("encoder.map_w", "8");
    cfg.set("train.epochs", "2");
    cfg.set("train.n_queries", "3");
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> dir_contents(const std::string& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), dir).string()] = slurp(entry.path().string());
    return out;
}

struct TmpDir {
    std::string path;
    explicit TmpDir(const std::string& name) : path("cli_tmp_" + name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("run config precedence and validation") {
    RunConfig cfg = RunConfig::defaults();
    CHECK(cfg.integer("train.epochs") == 30);
    CHECK(cfg.num("train.lr") == 1e-4);
    CHECK(cfg.integer("train.n_queries") == 10);
    CHECK(cfg.integer("train.seed") == 42);
    CHECK(cfg.num("track.tau_high") == 0.4);
    CHECK(cfg.num("track.tau_low") == 0.1);
    CHECK(cfg.num("track.epsilon") == 0.4);

    const std::string path = "cli_cfg.json";
    {
        std::ofstream f(path);
        f << R"({"train.epochs": 5, "train.lr": 0.001})";
    }
    cfg.merge_file(path);
    CHECK(cfg.integer("train.epochs") == 5);
    CHECK(cfg.num("train.lr") == 0.001);
    cfg.set("train.epochs", "7");  // flag overrides file
    CHECK(cfg.integer("train.epochs") == 7);

    {
        std::ofstream f(path);
        f << R"({"train.unknown_key": 1})";
    }
    CHECK_THROWS_AS(cfg.merge_file(path), ValidationError);
    fs::remove(path);
}

TEST_CASE("gen-data is deterministic and self-validating") {
    TmpDir tmp("gen");
    RunConfig cfg = tiny_run_config();
    CHECK(cmd_gen_data(cfg, tmp.path + "/d1") == 0);
    CHECK(cmd_gen_data(cfg, tmp.path + "/d2") == 0);
    auto c1 = dir_contents(tmp.path + "/d1");
    auto c2 = dir_contents(tmp.path + "/d2");
    CHECK(c1 == c2);
    CHECK(cmd_validate(tmp.path + "/d1") == 0);
    CHECK(c1.count("config_echo.json") == 1);
}

TEST_CASE("gen-data with zero frames produces an empty but valid dataset") {
    TmpDir tmp("gen0");
    RunConfig cfg = tiny_run_config();
    cfg.set("data.frames", "0");
    CHECK(cmd_gen_data(cfg, tmp.path + "/d") == 0);
    CHECK(cmd_validate(tmp.path + "/d") == 0);
    Dataset ds = load_dataset(tmp.path + "/d");
    REQUIRE(ds.sequences.size() == 1);
    CHECK(ds.sequences[0].frames.empty());
}

TEST_CASE("full pipeline: train, track, eval") {
    TmpDir tmp("pipe");
    RunConfig cfg = tiny_run_config();
    REQUIRE(cmd_gen_data(cfg, tmp.path + "/data") == 0);
    REQUIRE(cmd_train(cfg, tmp.path + "/data", tmp.path + "/ckpt.coal", false) == 0);
    CHECK(fs::exists(tmp.path + "/ckpt.coal"));
    CHECK(fs::exists(tmp.path + "/ckpt.coal.log.jsonl"));
    CHECK(fs::exists(tmp.path + "/ckpt.coal.config.json"));

    // loss log: one JSON object per epoch
    {
        std::ifstream log(tmp.path + "/ckpt.coal.log.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(log, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            CHECK(j.contains("epoch"));
            CHECK(j.contains("main"));
            CHECK(j.contains("cf"));
            CHECK(j.contains("total"));
            ++lines;
        }
        CHECK(lines == 2);
    }

    REQUIRE(cmd_track(cfg, tmp.path + "/ckpt.coal", tmp.path + "/data", tmp.path + "/p1", "") == 0);
    REQUIRE(cmd_track(cfg, tmp.path + "/ckpt.coal", tmp.path + "/data", tmp.path + "/p2", "") == 0);
    auto p1 = dir_contents(tmp.path + "/p1");
    auto p2 = dir_contents(tmp.path + "/p2");
    CHECK(p1 == p2);  // double-run byte equality
    int track_files = 0;
    for (const auto& [name, body] : p1) {
        (void)body;
        if (name.find(".txt") != std::string::npos) ++track_files;
    }
    CHECK(track_files == 3);  // one per (sequence, expression)

    REQUIRE(cmd_eval(cfg, tmp.path + "/data", tmp.path + "/p1", tmp.path + "/report") == 0);
    CHECK(fs::exists(tmp.path + "/report/report.txt"));
    CHECK(fs::exists(tmp.path + "/report/report.jsonl"));

    // text and JSON agree to formatting precision, column order per the table
    const std::string table = slurp(tmp.path + "/report/report.txt");
    CHECK(table.find("HOTA   DetA   AssA  DetRe  DetPr  AssRe  AssPr   LocA") != std::string::npos);
    std::ifstream jf(tmp.path + "/report/report.jsonl");
    std::string line, last;
    std::vector<nlohmann::json> rows;
    while (std::getline(jf, line))
        if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
    REQUIRE(rows.size() == 4);  // 3 expressions + aggregate
    CHECK(rows.back().value("aggregate", false));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.2f", rows.back()["HOTA"].get<double>() * 100.0);
    CHECK(table.find(buf) != std::string::npos);
}

TEST_CASE("expression filter restricts tracking output") {
    TmpDir tmp("filter");
    RunConfig cfg = tiny_run_config();
    REQUIRE(cmd_gen_data(cfg, tmp.path + "/data") == 0);
    REQUIRE(cmd_train(cfg, tmp.path + "/data", tmp.path + "/ckpt.coal", false) == 0);
    REQUIRE(cmd_track(cfg, tmp.path + "/ckpt.coal", tmp.path + "/data", tmp.path + "/preds", "e1") == 0);
    int track_files = 0;
    for (const auto& entry : fs::directory_iterator(tmp.path + "/preds"))
        if (entry.path().extension() == ".txt") ++track_files;
    CHECK(track_files == 1);
}

TEST_CASE("invalid dataset is refused before training") {
    TmpDir tmp("invalid");
    RunConfig cfg = tiny_run_config();
    REQUIRE(cmd_gen_data(cfg, tmp.path + "/data") == 0);
    // corrupt a counterfactual: new_value == original_value
    const std::string cf_path = tmp.path + "/data/seq0000/counterfactuals.json";
    auto j = nlohmann::json::parse(slurp(cf_path));
    j.begin().value()[0]["new_value"] = j.begin().value()[0]["original_value"];
    {
        std::ofstream f(cf_path);
        f << j.dump(2);
    }
    CHECK(cmd_validate(tmp.path + "/data") == kExitValidation);
    CHECK_THROWS_AS(cmd_train(cfg, tmp.path + "/data", tmp.path + "/ckpt.coal", false),
                    ValidationError);
}

TEST_CASE("exit codes map exception classes") {
    CHECK(exit_code_for(ValidationError("x")) == 2);
    CHECK(exit_code_for(IoError("x")) == 3);
    CHECK(exit_code_for(NumericError("x")) == 4);
    CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("--help enumerates flags with defaults") {
    // exercised through the built binary; ctest runs from the build tree
    if (!fs::exists("./coal")) return;  // binary layout differs outside ctest
    auto capture = [](const char* cmd) {
        std::string out;
        FILE* pipe = popen(cmd, "r");
        REQUIRE(pipe != nullptr);
        char buf[256];
        while (fgets(buf, sizeof(buf), pipe)) out += buf;
        pclose(pipe);
        return out;
    };
    const std::string top = capture("./coal --help 2>&1");
    for (const char* sub : {"gen-data", "validate", "train", "track", "eval", "gradcheck"})
        CHECK(top.find(sub) != std::string::npos);
    const std::string train_help = capture("./coal train --help 2>&1");
    CHECK(train_help.find("--epochs") != std::string::npos);
    CHECK(train_help.find("--lr") != std::string::npos);
    CHECK(train_help.find("--n-queries") != std::string::npos);
    CHECK(train_help.find("(default 30)") != std::string::npos);
    CHECK(train_help.find("--no-cfl") != std::string::npos);
    CHECK(train_help.find("--no-esi") != std::string::npos);
    const std::string track_help = capture("./coal track --help 2>&1");
    CHECK(track_help.find("--tau-high") != std::string::npos);
    CHECK(track_help.find("(default 0.4)") != std::string::npos);
}

TEST_CASE("missing checkpoint propagates an I/O error") {
    TmpDir tmp("nockpt");
    RunConfig cfg = tiny_run_config();
    REQUIRE(cmd_gen_data(cfg, tmp.path + "/data") == 0);
    CHECK_THROWS_AS(cmd_track(cfg, tmp.path + "/nope.coal", tmp.path + "/data", tmp.path + "/o", ""),
                    IoError);
}
