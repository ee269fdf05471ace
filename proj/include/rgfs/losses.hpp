#pragma once

#include <vector>

#include "rgfs/tensor.hpp"

namespace rgfs {

/// Weights of the composite objective
///   total = proto + alpha * variance + beta * triplet + lambda * recon
/// plus the triplet margin and the stochastic pass count n.
struct LossWeights {
    double alpha = 0.01;
    double beta = 1.0;
    double lambda = 5.0;
    double margin = 1.5;
    int n_passes = 4;
    // L1 terms reduce by element mean (image-size-invariant lambda) unless
    // the literal raw-sum reading is requested.
    bool recon_sum_reduction = false;
};

/// Embeddings and class probabilities of one stochastic pass.
struct PassData {
    Tensor support;     // (N, K, D) support embeddings, class-major
    Tensor query;       // (Q, D) query embeddings
    Tensor prototypes;  // (N, D) per-class support means
    Tensor probs;       // (Q, N) softmax over exp(-squared distance)
};

/// All n passes of one episode plus the cross-pass mean probabilities.
struct PassBundle {
    int n_way = 0;
    int k_shot = 0;
    std::vector<int> query_labels;  // (Q), values in [0, n_way)
    std::vector<PassData> passes;
    Tensor mean_probs;              // (Q, N), exact mean of per-pass probs

    int n_passes() const { return static_cast<int>(passes.size()); }
    int num_queries() const { return static_cast<int>(query_labels.size()); }
};

struct LossReport {
    double proto = 0.0;
    double triplet = 0.0;
    double recon = 0.0;
    double variance = 0.0;
    double total = 0.0;
};

/// Gradients of the composite loss w.r.t. every pass's embeddings.
struct BundleGrads {
    std::vector<Tensor> d_support;  // per pass (N, K, D)
    std::vector<Tensor> d_query;    // per pass (Q, D)
};

double sq_euclidean(const Tensor& a, const Tensor& b);

/// Per-class arithmetic mean over the K support embeddings: (N,K,D) -> (N,D).
Tensor compute_prototypes(const Tensor& support);

/// Computes prototypes, per-pass softmax probabilities and their cross-pass
/// mean from raw embeddings. Validates shapes and label ranges.
PassBundle build_pass_bundle(std::vector<Tensor> support_per_pass,
                             std::vector<Tensor> query_per_pass, std::vector<int> query_labels,
                             int n_way, int k_shot);

/// Prototypical classification loss: per pass, per query, negative log softmax
/// probability of the true class; mean over queries, then mean over passes.
double proto_loss(const PassBundle& bundle);

/// Hinge against the hardest incorrect prototype:
/// max(0, margin + d_pos - d_hardneg); mean over queries, mean over passes.
double triplet_loss(const PassBundle& bundle, double margin);

/// Masked-plus-global L1: per pass and image, element-mean |M (x - xhat)| +
/// element-mean |x - xhat| (raw sums instead when sum_reduction); mean over
/// the batch, then mean over passes. `mask_bits` are (H, W) 0/1 maps
/// broadcast across channels.
double recon_loss(const std::vector<const Tensor*>& originals,
                  const std::vector<std::vector<const Tensor*>>& recons_per_pass,
                  const std::vector<const Tensor*>& mask_bits, bool sum_reduction = false);

/// Cross-pass stability penalty: per query, the population standard
/// deviation of its true-class probability across passes, summed over
/// queries.
double variance_loss(const PassBundle& bundle);

/// Weighted combination; throws TrainError naming any non-finite component.
LossReport total_loss(double proto, double triplet, double recon, double variance,
                      const LossWeights& weights);

BundleGrads zero_bundle_grads(const PassBundle& bundle);

/// Each backward accumulates weight * dLoss/dEmbedding into `grads`.
void proto_loss_backward(const PassBundle& bundle, double weight, BundleGrads& grads);
void triplet_loss_backward(const PassBundle& bundle, double margin, double weight,
                           BundleGrads& grads);
void variance_loss_backward(const PassBundle& bundle, double weight, BundleGrads& grads);

/// Accumulates weight * dLoss/dReconstruction into d_recons[pass][image].
void recon_loss_backward(const std::vector<const Tensor*>& originals,
                         const std::vector<std::vector<const Tensor*>>& recons_per_pass,
                         const std::vector<const Tensor*>& mask_bits, double weight,
                         std::vector<std::vector<Tensor>>& d_recons, bool sum_reduction = false);

}  // namespace rgfs
