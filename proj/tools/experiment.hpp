#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fimc/data.hpp"
#include "fimc/federation.hpp"

namespace fimc::cli {

struct ExperimentConfig {
    SessionConfig session;
    bool clusters_set = false;
    std::optional<std::filesystem::path> data_dir;  // synthetic blobs when absent
    SynthSpec synth;
    std::vector<double> missing_rates;  // empty: use the data as loaded
    std::optional<double> dirichlet_alpha;
    std::vector<double> gamma1 = {1.0};
    std::vector<double> gamma2 = {0.1};
    std::filesystem::path out = "fimc_out";
    std::size_t repeats = 1;
};

// Sets one key; dashes and underscores are interchangeable. Throws ConfigError
// on unknown keys and malformed values.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

// Flat `key = value` lines; `#` starts a comment, values may be quoted.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& file);

struct Stat {
    double mean = 0.0;
    double std = 0.0;
};

struct SweepRow {
    double missing_rate = 0.0;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    std::size_t repeats = 0;
    Stat acc, nmi, ari;
    bool scored = false;
};

// Sample mean and standard deviation (0 for a single value).
Stat summarize(const std::vector<double>& values);

// Runs every (missing rate, gamma1, gamma2) combination `repeats` times with
// seeds seed, seed+1, ... Writes rounds.jsonl, summary.csv and predictions
// under config.out and one summary line per combination to `report`.
std::vector<SweepRow> run_experiment(const ExperimentConfig& config, std::ostream& report);

std::string format_row(const SweepRow& row, Ablation ablation);

}  // namespace fimc::cli
