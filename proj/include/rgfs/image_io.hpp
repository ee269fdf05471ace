#pragma once

#include <filesystem>
#include <optional>

#include "rgfs/tensor.hpp"

namespace rgfs {

/// Decodes an image file to a (C, H, W) tensor in [0, 1]. RGB channel order
/// for C=3, single luminance plane for C=1. Returns nullopt when the file
/// cannot be decoded. When the decoded size differs from (height, width) the
/// image is resized with bilinear interpolation; an exact-size image is
/// passed through untouched.
std::optional<Tensor> decode_image(const std::filesystem::path& path, int height, int width,
                                   int channels);

/// Writes a (C, H, W) tensor in [0, 1] as an 8-bit PNG (values rounded to 0..255).
void write_png(const std::filesystem::path& path, const Tensor& pixels);

/// Writes a binary (H, W) 0/1 mask as a P5 PGM with values {0, 255}.
void write_pgm(const std::filesystem::path& path, const Tensor& bits);

/// Reads a P5 PGM back into an (H, W) tensor with values in [0, 1] (v / 255).
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace rgfs
