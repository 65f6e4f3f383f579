#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kinet/netcore.hpp"

namespace kinet {

// Everything a run needs, mirrored 1:1 by the config file sections and the
// dotted command-line flags. Defaults are sufficient to run the synthetic
// end-to-end demo with zero edits.
struct RunConfig {
    ModelConfig model;

    struct Data {
        int64_t base_h = 64;
        int64_t base_w = 80;
    } data;

    struct Teacher {
        std::string kind = "synthetic";  // "synthetic" or "file"
        uint64_t seed = 17;
        std::string manifest;  // label manifest path for kind=file
    } teacher;

    struct Optim {
        double lr = 0.01;
        double momentum = 0.9;
        double weight_decay = 1e-5;
        int64_t epochs = 200;
        int64_t batch_size = 8;
        // milestone epochs are fractions of the total; mirrors a
        // 20/40/60-of-70 step schedule at any length
        std::vector<double> milestone_fracs = {0.5, 0.75, 0.875};
        double lr_decay = 0.1;
        double lambda_action = 1.0;
        double lambda_human = 0.01;
        double lambda_scene = 0.01;
        // stop once train top-1 reaches this (0 disables early stopping)
        double target_top1 = 0.0;
    } optim;

    struct Eval {
        std::string protocol = "full250";  // "full250" or "fast"
        int64_t n_eval_seg = 25;
        int64_t window = 3;
    } eval;

    void validate() const;
};

// One config field: dotted key plus string get/set. The same table drives the
// file parser (unknown keys rejected), the CLI flags, and serialization.
struct ConfigField {
    std::string key;
    std::string help;
    std::string (*get)(const RunConfig&);
    void (*set)(RunConfig&, const std::string&);
};

const std::vector<ConfigField>& config_schema();

// Throws ConfigError for unknown keys or unparseable values.
void apply_config_kv(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

// INI-style file: [section] headers, key = value lines, # comments.
void merge_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Canonical text form (fixed section and key order); input to config_hash.
std::string serialize_config(const RunConfig& cfg);
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

uint64_t config_hash(const RunConfig& cfg);

}  // namespace kinet
