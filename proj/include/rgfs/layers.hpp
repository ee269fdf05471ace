#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rgfs/tensor.hpp"

namespace rgfs {

enum class Mode { Train, Eval };

/// Convolution over a (C, H, W) tensor. Weight layout (out_c, in_c, k, k),
/// bias (out_c). Parameter gradients accumulate (+=) into dw/db; dx is
/// overwritten. Pass dx = nullptr to skip input gradients.
void conv2d_forward(const Tensor& w, const Tensor& b, int stride, int pad, const Tensor& x,
                    Tensor& y);
void conv2d_backward(const Tensor& w, const Tensor& x, int stride, int pad, const Tensor& dy,
                     Tensor* dw, Tensor* db, Tensor* dx);

/// Transposed convolution (2x upsampling uses k=4, stride=2, pad=1). Weight
/// layout (in_c, out_c, k, k), bias (out_c).
void convt2d_forward(const Tensor& w, const Tensor& b, int stride, int pad, const Tensor& x,
                     Tensor& y);
void convt2d_backward(const Tensor& w, const Tensor& x, int stride, int pad, const Tensor& dy,
                      Tensor* dw, Tensor* db, Tensor* dx);

/// Per-sample, per-channel normalization over the spatial extent (no batch or
/// running state, so every pass is reproducible from its inputs alone).
/// Stores the normalized map and inverse std-dev for the backward pass.
void instance_norm_forward(const Tensor& gamma, const Tensor& beta, const Tensor& x, Tensor& y,
                           Tensor& xhat, std::vector<double>& inv_std);
void instance_norm_backward(const Tensor& gamma, const Tensor& xhat,
                            const std::vector<double>& inv_std, const Tensor& dy, Tensor* dgamma,
                            Tensor* dbeta, Tensor& dx);

/// Smooth activation (Gaussian-error linear unit); smoothness keeps
/// finite-difference gradient checks clean.
void gelu_forward(const Tensor& x, Tensor& y);
void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

/// Bounded output nonlinearity for the reconstruction head.
void sigmoid_forward(const Tensor& x, Tensor& y);
void sigmoid_backward(const Tensor& y_out, const Tensor& dy, Tensor& dx);

/// 2x2 average pooling, stride 2.
void avgpool2_forward(const Tensor& x, Tensor& y);
void avgpool2_backward(int in_h, int in_w, const Tensor& dy, Tensor& dx);

/// Global spatial mean: (C, H, W) -> (C).
void global_avgpool_forward(const Tensor& x, Tensor& y);
void global_avgpool_backward(int in_h, int in_w, const Tensor& dy, Tensor& dx);

/// Fully connected map: w (out, in), b (out); x and y rank-1.
void linear_forward(const Tensor& w, const Tensor& b, const Tensor& x, Tensor& y);
void linear_backward(const Tensor& w, const Tensor& x, const Tensor& dy, Tensor* dw, Tensor* db,
                     Tensor* dx);

/// One DropBlock realization for a (C, H, W) feature map. Each channel draws
/// block centers at rate gamma = drop_prob * area / (block^2 * valid_area)
/// over positions whose block fits the map, zeroes the block, and rescales
/// survivors by total/kept. `multiplier` folds the rescale in: entries are 0
/// (dropped) or the channel's keep-scale.
struct DropBlockMask {
    Tensor multiplier;  // (C, H, W)
    std::vector<std::vector<std::pair<int, int>>> block_origins;  // per channel, top-left corners
    int block_size = 0;
};

DropBlockMask sample_dropblock_mask(int channels, int height, int width, int block_size,
                                    double drop_prob, std::uint64_t seed);

/// Full DropBlock op (sample + apply + rescale): identity in eval mode or
/// when drop_prob == 0.
Tensor dropblock(const Tensor& feature_map, int block_size, double drop_prob, std::uint64_t seed,
                 Mode mode);

}  // namespace rgfs
