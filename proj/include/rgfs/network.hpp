#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rgfs/layers.hpp"
#include "rgfs/tensor.hpp"

namespace rgfs {

/// Hyperparameters that fully determine the model: every parameter tensor's
/// name and shape is a pure function of this struct.
struct ArchitectureConfig {
    int input_height = 64;
    int input_width = 64;
    int input_channels = 3;
    std::vector<int> stage_channels = {32, 64, 128, 128};
    int bottleneck_channels = 64;
    int embedding_dim = 128;
    int dropblock_block_size = 3;
    double dropblock_drop_prob = 0.1;

    int num_stages() const { return static_cast<int>(stage_channels.size()); }
    int latent_height() const { return input_height >> num_stages(); }
    int latent_width() const { return input_width >> num_stages(); }

    /// Spatial size entering stage s (conv stride 1 preserves it; each stage
    /// ends with a 2x downsample).
    int stage_height(int s) const { return input_height >> s; }
    int stage_width(int s) const { return input_width >> s; }
    int stage_in_channels(int s) const {
        return s == 0 ? input_channels : stage_channels[static_cast<std::size_t>(s) - 1];
    }

    /// DropBlock regularizes the two deepest encoder stages only.
    bool dropblock_applies(int stage) const {
        return dropblock_drop_prob > 0.0 && stage >= num_stages() - 2;
    }

    /// Output channels of decoder stage t (t = 0 reads z); the last stage
    /// restores the image channel count.
    int decoder_out_channels(int t) const {
        const int n = num_stages();
        return t == n - 1 ? input_channels : stage_channels[static_cast<std::size_t>(n - 2 - t)];
    }
    int decoder_in_channels(int t) const {
        return t == 0 ? bottleneck_channels : decoder_out_channels(t - 1);
    }

    /// Throws ConfigError with the offending field on any violation.
    void validate() const;

    std::string to_json() const;
    static ArchitectureConfig from_json(const std::string& text);
};

/// Ordered collection of named parameter tensors. Insertion order is the
/// canonical serialization and update order.
class NetworkParameters {
public:
    Tensor& add(const std::string& name, std::vector<int> shape);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t tensor_count() const { return entries_.size(); }
    std::size_t param_count() const;
    bool all_finite() const;

    /// Same names and shapes, all values zero — gradient/optimizer buffers.
    NetworkParameters zeros_like() const;

    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Builds all parameter tensors in canonical order, seeded per tensor so any
/// one tensor's draw is independent of the others.
NetworkParameters init_parameters(const ArchitectureConfig& arch, std::uint64_t seed);

/// The same canonical layout with every value zero (gradient and optimizer
/// buffers, checkpoint validation reference).
NetworkParameters zero_parameters(const ArchitectureConfig& arch);

/// Total scalar parameter count implied by the config, without allocating.
std::size_t parameter_count(const ArchitectureConfig& arch);

/// One DropBlock realization per regularized stage. A single DropMasks is
/// shared by every image of one stochastic pass, so the pass is one network
/// realization.
struct DropMasks {
    std::vector<DropBlockMask> stage_masks;  // indexed by stage; empty where unused
};

DropMasks sample_drop_masks(const ArchitectureConfig& arch, std::uint64_t pass_seed);

/// Saved activations one backward pass needs. Tensors are resized in place,
/// so a long-lived ctx re-uses its allocations across episodes.
struct StageCtx {
    Tensor xhat;               // normalized pre-scale map
    Tensor norm_out;           // post-norm, pre-activation
    Tensor pooled;             // stage output after 2x downsample
    std::vector<double> inv_std;
};

struct EncodeCtx {
    Tensor input;              // copy of the network input
    std::vector<StageCtx> stages;
    const DropMasks* drop = nullptr;  // non-owning; null outside train mode
    Tensor bottleneck_pre;     // 1x1-conv output before the nonlinearity
    Tensor z;                  // shared latent (bottleneck_channels, h, w)
};

struct DecodeCtx {
    std::vector<Tensor> pre;   // transposed-conv outputs before nonlinearity
    std::vector<Tensor> act;   // after nonlinearity; act.back() is the image
};

struct EmbedCtx {
    Tensor pooled;             // global spatial mean of z, length d
};

/// Encoder: per stage conv3x3 -> per-channel norm -> smooth activation ->
/// (DropBlock in the last two stages, train only) -> 2x average pool; then
/// the learnable 1x1 bottleneck + activation produces ctx.z.
/// In train mode with drop_prob > 0, `drop_masks` must be non-null.
void encode(const ArchitectureConfig& arch, const NetworkParameters& params, const Tensor& image,
            Mode mode, const DropMasks* drop_masks, EncodeCtx& ctx);

/// Convenience form sampling its own masks from pass_seed; returns z.
Tensor encode(const ArchitectureConfig& arch, const NetworkParameters& params, const Tensor& image,
              Mode mode, std::uint64_t pass_seed);

/// Accumulates parameter gradients (+=) into `grads`; d_image optional.
void encode_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                     const EncodeCtx& ctx, const Tensor& dz, NetworkParameters& grads,
                     Tensor* d_image = nullptr);

/// Decoder: one transposed-conv 2x upsample per encoder stage, smooth
/// activations between, bounded into [0,1] at the end. Returns a reference
/// to the reconstruction stored in ctx.
const Tensor& decode(const ArchitectureConfig& arch, const NetworkParameters& params,
                     const Tensor& z, DecodeCtx& ctx);

void decode_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                     const Tensor& z, const DecodeCtx& ctx, const Tensor& d_recon,
                     NetworkParameters& grads, Tensor& dz_accum);

/// Embedding head: global average pool over z, then an affine map to D.
Tensor embed(const ArchitectureConfig& arch, const NetworkParameters& params, const Tensor& z,
             EmbedCtx& ctx);

void embed_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                    const Tensor& z, const EmbedCtx& ctx, const Tensor& d_embedding,
                    NetworkParameters& grads, Tensor& dz_accum);

/// One full pass: encode once, then both heads read the same z (and hence
/// the same DropBlock realization).
struct ForwardCtx {
    EncodeCtx enc;
    DecodeCtx dec;
    EmbedCtx emb;
    Tensor embedding;          // (D)

    const Tensor& reconstruction() const { return dec.act.back(); }
};

void forward_full(const ArchitectureConfig& arch, const NetworkParameters& params,
                  const Tensor& image, Mode mode, const DropMasks* drop_masks, ForwardCtx& ctx);

/// Convenience form returning (embedding, reconstruction).
std::pair<Tensor, Tensor> forward_full(const ArchitectureConfig& arch,
                                       const NetworkParameters& params, const Tensor& image,
                                       Mode mode, std::uint64_t pass_seed);

/// Backpropagates both heads' gradients through the shared latent into the
/// encoder. Either head's gradient may be null when that pathway carries no
/// loss for this image.
void forward_full_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                           const ForwardCtx& ctx, const Tensor* d_embedding,
                           const Tensor* d_recon, NetworkParameters& grads,
                           Tensor* d_image = nullptr);

}  // namespace rgfs
