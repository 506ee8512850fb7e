#pragma once

// Experiment configuration: a flat-key TOML file, every key overridable
// from the command line.

#include <filesystem>
#include <map>
#include <string>

#include "fedlppa/federation.hpp"

namespace fedlppa {

struct ExperimentConfig {
    uint64_t seed = 0;
    std::string sites = "default4";  // site roster preset
    Method method = Method::FedLPPA;
    Strategy strategy = Strategy::PSA;
    int rounds = 100;
    int local_iters = 10;
    int batch = 12;
    float base_lr = 0.01f;
    float lambda = 0.5f;
    bool tdf_on = true;
    bool pd_on = true;
    bool la_on = true;
    int eval_every = 10;
    int base_channels = 16;
    int depth = 4;
    int n_train = 200;
    int n_test = 50;
    int image_size = 64;
    int workers = 1;
    std::filesystem::path dataset_dir = "dataset";
    std::filesystem::path output_dir = "runs";

    void validate() const;  // throws std::invalid_argument on bad combinations
    RunConfig to_run_config() const;
    std::string to_toml() const;
};

// Parses "key = value" lines; supports quoted strings, booleans, numbers,
// '#' comments. Unknown keys and section headers are rejected.
std::map<std::string, std::string> parse_flat_toml(const std::string& text);

ExperimentConfig load_config(const std::filesystem::path& file);

// Applies key=value overrides (same keys as the TOML file) on top of cfg.
void apply_overrides(ExperimentConfig& cfg,
                     const std::map<std::string, std::string>& kv);

std::vector<SiteSpec> site_specs_for(const ExperimentConfig& cfg);

}  // namespace fedlppa
