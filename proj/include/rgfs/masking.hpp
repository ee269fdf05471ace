#pragma once

#include <cstdint>

#include "rgfs/data.hpp"
#include "rgfs/tensor.hpp"

namespace rgfs {

/// Structured block-wise occlusion mask: the (H, W) grid is partitioned into
/// block_size x block_size cells and round(ratio * num_blocks) of them are set
/// to 1 (= occluded), drawn uniformly without replacement.
struct BlockMask {
    Tensor bits;  // (H, W), values 0 or 1
    int block_size = 0;
    double mask_ratio = 0.0;
    std::uint64_t seed = 0;

    int masked_pixel_count() const;
};

struct MaskedImage {
    Tensor pixels;        // (C, H, W); masked positions exactly 0
    const ImageSample* source = nullptr;
    BlockMask mask;
};

struct MaskingConfig {
    int block_size = 8;
    double mask_ratio = 0.25;
};

/// block_size must divide both height and width; ratio in [0, 1].
BlockMask generate_block_mask(int height, int width, int block_size, double mask_ratio,
                              std::uint64_t seed);

/// x_masked = x * (1 - M), mask broadcast over channels. Unmasked pixels are
/// copied bit-identically.
MaskedImage apply_mask(const ImageSample& image, const BlockMask& mask);

/// Same Hadamard product on a bare (C, H, W) tensor.
Tensor apply_mask_tensor(const Tensor& pixels, const BlockMask& mask);

}  // namespace rgfs
