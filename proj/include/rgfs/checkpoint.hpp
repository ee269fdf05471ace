#pragma once

#include <cstdint>
#include <filesystem>

#include "rgfs/network.hpp"

namespace rgfs {

/// Adaptive-moment accumulators, one per parameter tensor, plus the update
/// count driving bias correction.
struct AdamState {
    NetworkParameters m;
    NetworkParameters v;
    std::uint64_t step = 0;
};

/// Everything needed to continue a run exactly where it stopped. The seed
/// schedule is keyed by (root_seed, episode_index), so no generator state
/// beyond these two values has to survive serialization.
struct TrainState {
    ArchitectureConfig arch;
    NetworkParameters params;
    AdamState adam;
    std::uint64_t episode_index = 0;  // episodes completed so far
    std::uint64_t root_seed = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary archive: magic, version, architecture JSON, counters,
/// then each named tensor as (name, shape, row-major doubles) for the
/// parameters and both moment collections. Writes to a temporary file and
/// renames, so an interrupted save never corrupts the previous checkpoint.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);

/// Round-trips bit-exactly. Throws TrainError on version mismatch (naming
/// both versions), on any truncation/corruption, and on any tensor whose
/// name or shape disagrees with the archived architecture.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace rgfs
