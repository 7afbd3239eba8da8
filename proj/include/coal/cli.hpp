// Copyright (c) 2026 COAL contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

namespace coal {

// Flat dotted-key configuration: built-in defaults, overridden by an optional
// JSON file, overridden by command-line flags. The fully resolved map is
// echoed next to every output artifact.
class RunConfig {
public:
    static RunConfig defaults();

    void merge_file(const std::string& path);
    void set(const std::string& key, const std::string& json_value);

    double num(const std::string& key) const;
    int integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::string str(const std::string& key) const;
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void echo(const std::string& path) const;
    std::string dump() const;
    // raw JSON-encoded default, for --help text
    std::string display(const std::string& key) const;

private:
    std::map<std::string, std::string> values_;  // key -> JSON-encoded value
};

// exit codes: 0 ok, 1 unexpected, 2 validation, 3 I/O, 4 numeric
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);
int cmd_validate(const std::string& dataset_dir);
int cmd_train(const RunConfig& cfg, const std::string& dataset_dir, const std::string& checkpoint_path,
              bool resume);
int cmd_track(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& dataset_dir,
              const std::string& out_dir, const std::string& expression_filter);
int cmd_eval(const RunConfig& cfg, const std::string& dataset_dir, const std::string& predictions_dir,
             const std::string& out_dir);
int cmd_gradcheck();

int exit_code_for(const std::exception& e);

}  // namespace coal
