#include "rgfs/masking.hpp"

#include <cmath>

#include "rgfs/errors.hpp"
#include "rgfs/rng.hpp"

namespace rgfs {

int BlockMask::masked_pixel_count() const {
    int n = 0;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i] > 0.5) ++n;
    return n;
}

BlockMask generate_block_mask(int height, int width, int block_size, double mask_ratio,
                              std::uint64_t seed) {
    if (block_size <= 0 || height % block_size != 0 || width % block_size != 0)
        throw ConfigError("mask block_size " + std::to_string(block_size) +
                          " does not divide image size " + std::to_string(height) + "x" +
                          std::to_string(width));
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
        throw ConfigError("mask_ratio must be in [0, 1]");

    const int by = height / block_size;
    const int bx = width / block_size;
    const int num_blocks = by * bx;
    const int num_masked = static_cast<int>(std::lround(mask_ratio * num_blocks));

    BlockMask mask;
    mask.bits = Tensor({height, width});
    mask.block_size = block_size;
    mask.mask_ratio = mask_ratio;
    mask.seed = seed;

    Rng rng(seed);
    const std::vector<int> chosen = rng.sample_without_replacement(num_blocks, num_masked);
    for (int b : chosen) {
        const int y0 = (b / bx) * block_size;
        const int x0 = (b % bx) * block_size;
        for (int y = y0; y < y0 + block_size; ++y)
            for (int x = x0; x < x0 + block_size; ++x)
                mask.bits.at(y, x) = 1.0;
    }
    return mask;
}

Tensor apply_mask_tensor(const Tensor& pixels, const BlockMask& mask) {
    if (pixels.rank() != 3 || pixels.dim(1) != mask.bits.dim(0) || pixels.dim(2) != mask.bits.dim(1))
        throw ConfigError("mask shape does not match image: mask " + mask.bits.shape_string() +
                          " vs image " + pixels.shape_string());
    Tensor out = pixels;
    const int c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.bits.at(y, x) > 0.5)
                for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = 0.0;
    return out;
}

MaskedImage apply_mask(const ImageSample& image, const BlockMask& mask) {
    MaskedImage out;
    out.pixels = apply_mask_tensor(image.pixels, mask);
    out.source = &image;
    out.mask = mask;
    return out;
}

}  // namespace rgfs
