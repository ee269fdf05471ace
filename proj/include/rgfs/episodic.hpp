#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgfs/data.hpp"
#include "rgfs/losses.hpp"
#include "rgfs/masking.hpp"
#include "rgfs/network.hpp"

namespace rgfs {

enum class ClassPool { Base, Novel, All };

ClassPool class_pool_from_string(const std::string& name);
std::string class_pool_to_string(ClassPool pool);

/// Shape of one N-way K-shot episode. recon_batch < 0 means the default of
/// N*K reconstruction images.
struct EpisodeSpec {
    int n_way = 5;
    int k_shot = 5;
    int q_queries = 15;
    int recon_batch = -1;
    ClassPool pool = ClassPool::Base;

    int resolved_recon_batch() const { return recon_batch < 0 ? n_way * k_shot : recon_batch; }
    void validate() const;
};

/// Concrete sampled episode; all members index into dataset.samples. The
/// episode-local label of a query equals its class slot in class_ids.
struct Episode {
    std::vector<int> class_ids;              // N dataset class ids, draw order
    std::vector<std::vector<int>> support;   // [N][K] sample indices
    std::vector<std::vector<int>> query;     // [N][q] sample indices
    std::vector<int> recon;                  // R sample indices
    std::uint64_t seed = 0;

    int n_way() const { return static_cast<int>(class_ids.size()); }
};

/// Class ids belonging to a pool, ascending.
std::vector<int> pool_class_ids(const DatasetSplit& split, ClassPool pool);

/// Draws N classes uniformly without replacement from the pool, then K+q
/// distinct samples per class (first K to support) and R reconstruction
/// images uniformly from the pool's samples. Pure function of seed.
Episode sample_episode(const Dataset& dataset, const DatasetSplit& split, const EpisodeSpec& spec,
                       std::uint64_t seed);

/// Per-episode buffers the trainer keeps alive for the backward sweep. All
/// tensors resize in place, so one workspace instance amortizes allocation
/// across the whole run.
struct EpisodeWorkspace {
    std::vector<DropMasks> pass_masks;                 // [n]
    std::vector<std::vector<ForwardCtx>> support_ctx;  // [n][N*K]
    std::vector<std::vector<ForwardCtx>> query_ctx;    // [n][N*q]
    std::vector<std::vector<ForwardCtx>> recon_ctx;    // [n][R]
    std::vector<Tensor> masked_recon;                  // [R] occluded inputs
    std::vector<BlockMask> recon_masks;                // [R]
};

/// Runs the n stochastic passes of one episode: every pass encodes+embeds
/// all support and query images unmasked under one shared DropBlock
/// realization (seeded from base_seed and the pass index), and — when
/// with_recon — encodes the occluded reconstruction batch and decodes it.
/// Occlusion masks depend on the episode seed and image slot only, so all
/// passes reconstruct the same masked inputs.
///
/// With a workspace, every forward context is retained for backprop and the
/// reconstructions live at ws->recon_ctx[pass][b].reconstruction(). Without
/// one, scratch contexts are reused and with_recon must be false.
PassBundle run_passes(const ArchitectureConfig& arch, const NetworkParameters& params,
                      const Dataset& dataset, const Episode& episode, int n_passes, Mode mode,
                      std::uint64_t base_seed, const MaskingConfig& masking, bool with_recon,
                      EpisodeWorkspace* ws);

/// Argmax of the cross-pass mean probability per query; ties break toward
/// the lowest class index.
std::vector<int> predict(const PassBundle& bundle);

/// Debug dump: sample source_ids per role.
std::string episode_to_json(const Dataset& dataset, const Episode& episode);

}  // namespace rgfs
