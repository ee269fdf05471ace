#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <vector>

#include "rgfs/checkpoint.hpp"
#include "rgfs/data.hpp"
#include "rgfs/episodic.hpp"
#include "rgfs/losses.hpp"
#include "rgfs/masking.hpp"
#include "rgfs/network.hpp"

namespace rgfs {

struct TrainConfig {
    int episodes = 1000;           // total target, including resumed ones
    double learning_rate = 1e-3;
    LossWeights weights;
    EpisodeSpec spec;              // pool is forced to base for training
    MaskingConfig masking;
    std::uint64_t seed = 0;
    bool freeze_encoder = false;   // bottleneck, decoder and head stay live
    int checkpoint_every = 100;
    bool baseline_mode = false;    // proto + variance only; decoder never runs
    double grad_clip_norm = 1e4;

    void validate() const;
};

/// One logged training episode, exactly the loss CSV row.
struct LossRow {
    std::uint64_t episode = 0;
    LossReport report;
    double grad_norm = 0.0;   // pre-clip global L2 norm
    bool clipped = false;
};

struct TrainResult {
    TrainState state;
    std::vector<LossRow> log;  // rows produced by this call only
};

/// Fresh state: seeded parameters, zeroed moments, episode counter at 0.
TrainState make_initial_state(const ArchitectureConfig& arch, std::uint64_t seed);

/// Loads a checkpoint for continuation (thin wrapper kept for symmetry).
TrainState resume(const std::filesystem::path& checkpoint_path);

/// Forward + backward of one episode: runs the n stochastic passes, computes
/// the composite loss and accumulates its gradient over every parameter into
/// `grads` (zeroed first). In baseline mode the triplet and reconstruction
/// terms are skipped entirely, so decoder gradients stay zero.
LossReport episode_losses_and_grads(const ArchitectureConfig& arch,
                                    const NetworkParameters& params, const Dataset& dataset,
                                    const Episode& episode, const LossWeights& weights,
                                    const MaskingConfig& masking, bool baseline_mode,
                                    std::uint64_t pass_base_seed, EpisodeWorkspace& ws,
                                    NetworkParameters& grads);

/// Episodic optimization from state.episode_index up to config.episodes:
/// sample a base-pool episode, compute gradients, clip above
/// config.grad_clip_norm (with a warning to `warnings`), take one
/// adaptive-moment step and log the loss row. When out_dir is non-empty,
/// appends to out_dir/loss.csv (header written only at episode 0) and writes
/// checkpoints every checkpoint_every episodes and at the end. Throws
/// TrainError on any non-finite loss or parameter, leaving the last written
/// checkpoint in place.
TrainResult train(const Dataset& dataset, const DatasetSplit& split, const TrainConfig& config,
                  TrainState state, const std::filesystem::path& out_dir,
                  std::ostream* warnings = nullptr);

struct EvalReport {
    std::string pool;
    int n_way = 0;
    int k_shot = 0;
    int episodes = 0;
    double mean_acc = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(episodes); 0 when episodes < 2
};

/// Deterministic evaluation: `episodes` eval-mode episodes drawn from
/// `spec.pool`, predictions from the cross-pass mean probability.
EvalReport evaluate(const ArchitectureConfig& arch, const NetworkParameters& params,
                    const Dataset& dataset, const DatasetSplit& split, const EpisodeSpec& spec,
                    int episodes, int n_passes, std::uint64_t seed);

std::string eval_report_to_json(const EvalReport& report);

/// Formats one CSV row with round-trip-exact doubles ("%.17g").
std::string loss_row_to_csv(const LossRow& row);
inline constexpr const char* kLossCsvHeader = "episode,proto,triplet,recon,variance,total,grad_norm";

}  // namespace rgfs
