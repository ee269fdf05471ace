#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rgfs/episodic.hpp"
#include "rgfs/masking.hpp"
#include "rgfs/network.hpp"
#include "rgfs/trainer.hpp"

namespace rgfs {

/// Dataset source: either a procedural synthetic corpus or an image-folder
/// tree (root/<class>/<image>).
struct DataConfig {
    std::string source = "synthetic";
    std::filesystem::path path;
    int height = 64;
    int width = 64;
    int channels = 3;
    int num_classes = 10;
    int samples_per_class = 50;
    int base_classes = -1;                      // -1: half of the classes
    std::vector<std::string> base_class_names;  // explicit split wins over count
};

/// Evaluation grid: every (k_shot, pool) pair gets its own accuracy report.
struct EvalConfig {
    int episodes = 600;
    int n_passes = 1;
    int n_way = 5;
    int q_queries = 15;
    std::vector<int> k_shots = {5};
    std::vector<ClassPool> pools = {ClassPool::All, ClassPool::Novel};
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out;
    DataConfig data;
    MaskingConfig masking;
    ArchitectureConfig arch;
    TrainConfig train;
    EvalConfig eval;
};

/// Parses the INI-style config text. Sections: [run], [data], [masking],
/// [network], [losses], [episode], [train], [eval]. Any unknown section,
/// unknown key or duplicate key is a ConfigError naming the offender.
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::filesystem::path& path);

/// Cross-field checks: referenced paths resolvable, architecture valid
/// against the data shape, split sizes sane. Called by the CLI after flag
/// overrides are applied.
void validate_run_config(const RunConfig& config);

}  // namespace rgfs
