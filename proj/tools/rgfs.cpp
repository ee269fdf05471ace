// rgfs: reconstruction-guided few-shot classification CLI.
//
// Subcommands: train, eval, synth, inspect-mask. All randomness flows from
// the single --seed / [run] seed value; every artifact is reproducible from
// the config file plus that seed.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rgfs/checkpoint.hpp"
#include "rgfs/config.hpp"
#include "rgfs/data.hpp"
#include "rgfs/episodic.hpp"
#include "rgfs/errors.hpp"
#include "rgfs/image_io.hpp"
#include "rgfs/masking.hpp"
#include "rgfs/rng.hpp"
#include "rgfs/trainer.hpp"

namespace fs = std::filesystem;
using namespace rgfs;

namespace {

/// Architecture with the input shape taken from the data section.
ArchitectureConfig resolved_arch(const RunConfig& config) {
    ArchitectureConfig arch = config.arch;
    arch.input_height = config.data.height;
    arch.input_width = config.data.width;
    arch.input_channels = config.data.channels;
    return arch;
}

Dataset build_dataset(const RunConfig& config) {
    if (config.data.source == "folder") {
        LoadReport report;
        Dataset dataset = load_image_folder(config.data.path, config.data.height,
                                            config.data.width, config.data.channels, &report);
        for (const std::string& w : report.warnings) std::cerr << "warning: " << w << '\n';
        return dataset;
    }
    return generate_synthetic_dataset(config.data.num_classes, config.data.samples_per_class,
                                      config.data.height, config.data.width,
                                      config.data.channels, config.seed);
}

DatasetSplit build_split(const RunConfig& config, const Dataset& dataset) {
    if (!config.data.base_class_names.empty())
        return make_split(dataset.manifest, config.data.base_class_names);
    const int count = config.data.base_classes < 0 ? dataset.num_classes() / 2
                                                   : config.data.base_classes;
    return make_split(dataset.manifest, count, config.seed);
}

void require_out_dir(const RunConfig& config) {
    if (config.out.empty())
        throw ConfigError("output directory required (--out or [run] out)");
}

/// Refuses to clobber pre-existing outputs unless --overwrite was given.
void check_clobber(const std::vector<fs::path>& targets, bool overwrite) {
    if (overwrite) return;
    for (const fs::path& p : targets)
        if (fs::exists(p))
            throw ConfigError("output already exists: " + p.string() + " (pass --overwrite)");
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw TrainError("cannot write: " + path.string());
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

int cmd_train(const RunConfig& config, const std::string& resume_path, bool overwrite) {
    require_out_dir(config);
    if (resume_path.empty())
        check_clobber({config.out / "loss.csv", config.out / "manifest.json"}, overwrite);

    Dataset dataset = build_dataset(config);
    const DatasetSplit split = build_split(config, dataset);
    dataset.manifest.split = split;

    TrainState state;
    if (resume_path.empty()) {
        state = make_initial_state(resolved_arch(config), config.seed);
    } else {
        state = resume(fs::path(resume_path));
        if (state.arch.input_height != config.data.height ||
            state.arch.input_width != config.data.width ||
            state.arch.input_channels != config.data.channels)
            throw ConfigError("checkpoint architecture does not match the configured data shape");
    }

    fs::create_directories(config.out);
    write_text_file(config.out / "manifest.json", manifest_to_json(dataset.manifest));

    const TrainResult result = train(dataset, split, config.train, std::move(state), config.out,
                                     &std::cerr);
    std::cout << "trained through episode " << result.state.episode_index << " of "
              << config.train.episodes << "; loss log at " << (config.out / "loss.csv").string()
              << '\n';
    if (!result.log.empty())
        std::cout << "final losses: " << loss_row_to_csv(result.log.back()) << '\n';
    return 0;
}

int cmd_eval(const RunConfig& config, const std::string& checkpoint_path, bool overwrite) {
    require_out_dir(config);
    const TrainState state = load_checkpoint(checkpoint_path);
    if (state.arch.input_height != config.data.height ||
        state.arch.input_width != config.data.width ||
        state.arch.input_channels != config.data.channels)
        throw ConfigError("checkpoint architecture does not match the configured data shape");

    Dataset dataset = build_dataset(config);
    const DatasetSplit split = build_split(config, dataset);

    const auto report_path = [&](ClassPool pool, int k_shot) {
        char name[96];
        std::snprintf(name, sizeof name, "accuracy_%s_%dway_%dshot.json",
                      class_pool_to_string(pool).c_str(), config.eval.n_way, k_shot);
        return config.out / name;
    };

    std::vector<fs::path> targets;
    for (int k : config.eval.k_shots)
        for (ClassPool pool : config.eval.pools) targets.push_back(report_path(pool, k));
    check_clobber(targets, overwrite);
    fs::create_directories(config.out);

    std::size_t setting = 0;
    for (int k : config.eval.k_shots)
        for (ClassPool pool : config.eval.pools) {
            EpisodeSpec spec;
            spec.n_way = config.eval.n_way;
            spec.k_shot = k;
            spec.q_queries = config.eval.q_queries;
            spec.pool = pool;
            const std::uint64_t eval_seed =
                derive_seed(config.seed, Stream::EvalEpisode, setting++);
            const EvalReport report =
                evaluate(state.arch, state.params, dataset, split, spec, config.eval.episodes,
                         config.eval.n_passes, eval_seed);
            write_text_file(report_path(pool, k), eval_report_to_json(report));
            std::printf("%s %d-way %d-shot: acc %.4f +- %.4f over %d episodes\n",
                        report.pool.c_str(), report.n_way, report.k_shot, report.mean_acc,
                        report.ci95, report.episodes);
        }
    return 0;
}

int cmd_synth(const RunConfig& config, bool overwrite) {
    require_out_dir(config);
    if (config.data.source != "synthetic")
        throw ConfigError("synth requires data.source = synthetic");
    if (!overwrite && fs::exists(config.out) && !fs::is_empty(config.out))
        throw ConfigError("output already exists: " + config.out.string() +
                          " (pass --overwrite)");

    for (int c = 0; c < config.data.num_classes; ++c) {
        char dir_name[32];
        std::snprintf(dir_name, sizeof dir_name, "class_%02d", c);
        const fs::path class_dir = config.out / dir_name;
        fs::create_directories(class_dir);
        for (int s = 0; s < config.data.samples_per_class; ++s) {
            const Tensor pixels =
                render_synthetic_sample(c, s, config.data.num_classes, config.data.height,
                                        config.data.width, config.data.channels, config.seed);
            char file_name[32];
            std::snprintf(file_name, sizeof file_name, "sample_%03d.png", s);
            write_png(class_dir / file_name, pixels);
        }
    }
    std::cout << "wrote " << config.data.num_classes * config.data.samples_per_class
              << " images under " << config.out.string() << '\n';
    return 0;
}

int cmd_inspect_mask(const RunConfig& config, bool overwrite) {
    require_out_dir(config);
    const fs::path mask_path = config.out / "mask.pgm";
    const fs::path original_path = config.out / "original.png";
    const fs::path masked_path = config.out / "masked.png";
    check_clobber({mask_path, original_path, masked_path}, overwrite);
    fs::create_directories(config.out);

    const BlockMask mask =
        generate_block_mask(config.data.height, config.data.width, config.masking.block_size,
                            config.masking.mask_ratio, derive_seed(config.seed, Stream::BlockMask, 0));
    write_pgm(mask_path, mask.bits);

    const int classes = std::max(config.data.num_classes, 2);
    const Tensor sample = render_synthetic_sample(0, 0, classes, config.data.height,
                                                  config.data.width, config.data.channels,
                                                  config.seed);
    write_png(original_path, sample);
    write_png(masked_path, apply_mask_tensor(sample, mask));
    std::cout << "mask: " << mask.masked_pixel_count() << " of "
              << config.data.height * config.data.width << " pixels occluded; wrote "
              << mask_path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reconstruction-guided few-shot classification"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool overwrite = false;
    app.add_option("--config", config_path, "Run configuration file");
    app.add_option("--out", out_override, "Output directory (overrides [run] out)");
    auto* seed_opt = app.add_option("--seed", seed_override, "Root seed (overrides [run] seed)");
    app.add_flag("--overwrite", overwrite, "Allow replacing existing outputs");

    auto* train_cmd =
        app.add_subcommand("train", "Episodic training; writes loss.csv and checkpoints");
    std::string resume_path;
    train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint file");
    train_cmd->fallthrough();

    auto* eval_cmd = app.add_subcommand("eval", "Few-shot evaluation of a checkpoint");
    std::string checkpoint_path;
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint to evaluate")->required();
    eval_cmd->fallthrough();

    auto* synth_cmd =
        app.add_subcommand("synth", "Materialize the synthetic dataset as an image-folder tree");
    synth_cmd->fallthrough();

    auto* mask_cmd =
        app.add_subcommand("inspect-mask", "Write a sample occlusion mask and masked image");
    mask_cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (config_path.empty()) throw ConfigError("--config is required");
        RunConfig config = load_run_config(config_path);
        if (seed_opt->count() > 0) config.seed = seed_override;
        if (!out_override.empty()) config.out = out_override;
        validate_run_config(config);

        if (train_cmd->parsed()) return cmd_train(config, resume_path, overwrite);
        if (eval_cmd->parsed()) return cmd_eval(config, checkpoint_path, overwrite);
        if (synth_cmd->parsed()) return cmd_synth(config, overwrite);
        if (mask_cmd->parsed()) return cmd_inspect_mask(config, overwrite);
        throw ConfigError("no command given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
