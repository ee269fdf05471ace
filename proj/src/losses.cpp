#include "rgfs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rgfs/errors.hpp"

namespace rgfs {

double sq_euclidean(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw TrainError("sq_euclidean: dimension mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Tensor compute_prototypes(const Tensor& support) {
    if (support.rank() != 3) throw TrainError("compute_prototypes: expected (N, K, D) tensor");
    const int n = support.dim(0), k = support.dim(1), d = support.dim(2);
    Tensor proto({n, d});
    for (int c = 0; c < n; ++c)
        for (int s = 0; s < k; ++s)
            for (int j = 0; j < d; ++j) proto.at(c, j) += support.at(c, s, j) / k;
    return proto;
}

namespace {

/// Squared distances from every query row to every prototype row: (Q, N).
Tensor query_prototype_distances(const Tensor& query, const Tensor& prototypes) {
    const int q = query.dim(0), d = query.dim(1), n = prototypes.dim(0);
    Tensor dist({q, n});
    for (int i = 0; i < q; ++i) {
        const double* qi = query.data() + static_cast<std::size_t>(i) * d;
        for (int k = 0; k < n; ++k) {
            const double* ck = prototypes.data() + static_cast<std::size_t>(k) * d;
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = qi[j] - ck[j];
                s += diff * diff;
            }
            if (!std::isfinite(s)) throw TrainError("non-finite query-prototype distance");
            dist.at(i, k) = s;
        }
    }
    return dist;
}

/// Row-wise softmax of exp(-dist); max-shift keeps the exponentials tame.
Tensor softmax_neg_distances(const Tensor& dist) {
    const int q = dist.dim(0), n = dist.dim(1);
    Tensor probs({q, n});
    for (int i = 0; i < q; ++i) {
        double best = dist.at(i, 0);
        for (int k = 1; k < n; ++k) best = std::min(best, dist.at(i, k));
        double z = 0.0;
        for (int k = 0; k < n; ++k) {
            const double e = std::exp(best - dist.at(i, k));
            probs.at(i, k) = e;
            z += e;
        }
        for (int k = 0; k < n; ++k) probs.at(i, k) /= z;
    }
    return probs;
}

}  // namespace

PassBundle build_pass_bundle(std::vector<Tensor> support_per_pass,
                             std::vector<Tensor> query_per_pass, std::vector<int> query_labels,
                             int n_way, int k_shot) {
    if (support_per_pass.empty() || support_per_pass.size() != query_per_pass.size())
        throw TrainError("pass bundle: need equal, nonzero support/query pass counts");
    PassBundle bundle;
    bundle.n_way = n_way;
    bundle.k_shot = k_shot;
    bundle.query_labels = std::move(query_labels);
    const int q = static_cast<int>(bundle.query_labels.size());
    for (int label : bundle.query_labels)
        if (label < 0 || label >= n_way)
            throw TrainError("pass bundle: query label out of range: " + std::to_string(label));

    const std::size_t n_passes = support_per_pass.size();
    bundle.passes.resize(n_passes);
    bundle.mean_probs = Tensor({q, n_way});
    for (std::size_t j = 0; j < n_passes; ++j) {
        PassData& pass = bundle.passes[j];
        pass.support = std::move(support_per_pass[j]);
        pass.query = std::move(query_per_pass[j]);
        if (pass.support.rank() != 3 || pass.support.dim(0) != n_way ||
            pass.support.dim(1) != k_shot)
            throw TrainError("pass bundle: support shape " + pass.support.shape_string() +
                             " does not match episode");
        if (pass.query.rank() != 2 || pass.query.dim(0) != q ||
            pass.query.dim(1) != pass.support.dim(2))
            throw TrainError("pass bundle: query shape " + pass.query.shape_string() +
                             " does not match episode");
        pass.prototypes = compute_prototypes(pass.support);
        pass.probs = softmax_neg_distances(query_prototype_distances(pass.query, pass.prototypes));
        for (std::size_t e = 0; e < pass.probs.size(); ++e) bundle.mean_probs[e] += pass.probs[e];
    }
    for (std::size_t e = 0; e < bundle.mean_probs.size(); ++e)
        bundle.mean_probs[e] /= static_cast<double>(n_passes);
    return bundle;
}

double proto_loss(const PassBundle& bundle) {
    const int q = bundle.num_queries();
    if (q == 0 || bundle.n_passes() == 0) return 0.0;
    double over_passes = 0.0;
    for (const PassData& pass : bundle.passes) {
        double over_queries = 0.0;
        for (int i = 0; i < q; ++i) {
            const double p = pass.probs.at(i, bundle.query_labels[static_cast<std::size_t>(i)]);
            over_queries += -std::log(p);
        }
        over_passes += over_queries / q;
    }
    return over_passes / bundle.n_passes();
}

double triplet_loss(const PassBundle& bundle, double margin) {
    const int q = bundle.num_queries();
    const int n = bundle.n_way;
    if (q == 0 || bundle.n_passes() == 0 || n < 2) return 0.0;
    double over_passes = 0.0;
    for (const PassData& pass : bundle.passes) {
        const Tensor dist = query_prototype_distances(pass.query, pass.prototypes);
        double over_queries = 0.0;
        for (int i = 0; i < q; ++i) {
            const int y = bundle.query_labels[static_cast<std::size_t>(i)];
            double d_hard = 0.0;
            bool first = true;
            for (int k = 0; k < n; ++k) {
                if (k == y) continue;
                if (first || dist.at(i, k) < d_hard) d_hard = dist.at(i, k);
                first = false;
            }
            over_queries += std::max(0.0, margin + dist.at(i, y) - d_hard);
        }
        over_passes += over_queries / q;
    }
    return over_passes / bundle.n_passes();
}

double recon_loss(const std::vector<const Tensor*>& originals,
                  const std::vector<std::vector<const Tensor*>>& recons_per_pass,
                  const std::vector<const Tensor*>& mask_bits, bool sum_reduction) {
    const std::size_t batch = originals.size();
    if (batch == 0 || recons_per_pass.empty()) return 0.0;
    if (mask_bits.size() != batch)
        throw TrainError("recon loss: mask count does not match image count");
    double over_passes = 0.0;
    for (const auto& recons : recons_per_pass) {
        if (recons.size() != batch)
            throw TrainError("recon loss: reconstruction count does not match image count");
        double over_batch = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const Tensor& x = *originals[b];
            const Tensor& xh = *recons[b];
            const Tensor& mask = *mask_bits[b];
            if (!x.same_shape(xh))
                throw TrainError("recon loss: image " + x.shape_string() +
                                 " vs reconstruction " + xh.shape_string());
            const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
            if (mask.dim(0) != h || mask.dim(1) != w)
                throw TrainError("recon loss: mask shape " + mask.shape_string() +
                                 " does not match image");
            double masked = 0.0, global = 0.0;
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int xpos = 0; xpos < w; ++xpos) {
                        const double diff = std::abs(x.at(ci, y, xpos) - xh.at(ci, y, xpos));
                        global += diff;
                        masked += mask.at(y, xpos) * diff;
                    }
            const double elems = sum_reduction ? 1.0 : static_cast<double>(x.size());
            over_batch += masked / elems + global / elems;
        }
        over_passes += over_batch / static_cast<double>(batch);
    }
    return over_passes / static_cast<double>(recons_per_pass.size());
}

double variance_loss(const PassBundle& bundle) {
    const int q = bundle.num_queries();
    const int n_passes = bundle.n_passes();
    if (q == 0 || n_passes <= 1) return 0.0;
    double total = 0.0;
    for (int i = 0; i < q; ++i) {
        const int y = bundle.query_labels[static_cast<std::size_t>(i)];
        const double mean = bundle.mean_probs.at(i, y);
        double var = 0.0;
        for (const PassData& pass : bundle.passes) {
            const double d = pass.probs.at(i, y) - mean;
            var += d * d;
        }
        total += std::sqrt(var / n_passes);
    }
    return total;
}

LossReport total_loss(double proto, double triplet, double recon, double variance,
                      const LossWeights& weights) {
    const auto check = [](double v, const char* name) {
        if (!std::isfinite(v))
            throw TrainError(std::string("non-finite loss component: ") + name);
    };
    check(proto, "proto");
    check(triplet, "triplet");
    check(recon, "recon");
    check(variance, "variance");
    LossReport report;
    report.proto = proto;
    report.triplet = triplet;
    report.recon = recon;
    report.variance = variance;
    report.total =
        proto + weights.alpha * variance + weights.beta * triplet + weights.lambda * recon;
    check(report.total, "total");
    return report;
}

BundleGrads zero_bundle_grads(const PassBundle& bundle) {
    BundleGrads grads;
    grads.d_support.reserve(bundle.passes.size());
    grads.d_query.reserve(bundle.passes.size());
    for (const PassData& pass : bundle.passes) {
        grads.d_support.emplace_back(pass.support.shape());
        grads.d_query.emplace_back(pass.query.shape());
    }
    return grads;
}

namespace {

/// Adds g * dD/dEmbeddings for the squared distance D between query row i
/// and prototype k, routing the prototype part to the K support embeddings.
void add_distance_grad(const PassData& pass, int i, int k, double g, Tensor& d_query,
                       Tensor& d_support) {
    const int d = pass.query.dim(1);
    const int k_shot = pass.support.dim(1);
    const double* qi = pass.query.data() + static_cast<std::size_t>(i) * d;
    const double* ck = pass.prototypes.data() + static_cast<std::size_t>(k) * d;
    double* dq = d_query.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
        const double diff = 2.0 * (qi[j] - ck[j]);
        dq[j] += g * diff;
        const double dproto = -g * diff / k_shot;
        for (int s = 0; s < k_shot; ++s) d_support.at(k, s, j) += dproto;
    }
}

}  // namespace

void proto_loss_backward(const PassBundle& bundle, double weight, BundleGrads& grads) {
    const int q = bundle.num_queries();
    const int n = bundle.n_way;
    const int n_passes = bundle.n_passes();
    if (q == 0 || n_passes == 0) return;
    const double scale = weight / (static_cast<double>(n_passes) * q);
    for (int j = 0; j < n_passes; ++j) {
        const PassData& pass = bundle.passes[static_cast<std::size_t>(j)];
        for (int i = 0; i < q; ++i) {
            const int y = bundle.query_labels[static_cast<std::size_t>(i)];
            for (int k = 0; k < n; ++k) {
                // Logits are negative distances, so the usual softmax
                // gradient p_k - [k=y] picks up a sign:
                // d(-log p_y)/d d_k = [k=y] - p_k.
                const double g = scale * ((k == y ? 1.0 : 0.0) - pass.probs.at(i, k));
                add_distance_grad(pass, i, k, g, grads.d_query[static_cast<std::size_t>(j)],
                                  grads.d_support[static_cast<std::size_t>(j)]);
            }
        }
    }
}

void triplet_loss_backward(const PassBundle& bundle, double margin, double weight,
                           BundleGrads& grads) {
    const int q = bundle.num_queries();
    const int n = bundle.n_way;
    const int n_passes = bundle.n_passes();
    if (q == 0 || n_passes == 0 || n < 2) return;
    const double scale = weight / (static_cast<double>(n_passes) * q);
    for (int j = 0; j < n_passes; ++j) {
        const PassData& pass = bundle.passes[static_cast<std::size_t>(j)];
        const Tensor dist = query_prototype_distances(pass.query, pass.prototypes);
        for (int i = 0; i < q; ++i) {
            const int y = bundle.query_labels[static_cast<std::size_t>(i)];
            int hard = -1;
            for (int k = 0; k < n; ++k) {
                if (k == y) continue;
                if (hard < 0 || dist.at(i, k) < dist.at(i, hard)) hard = k;
            }
            if (margin + dist.at(i, y) - dist.at(i, hard) <= 0.0) continue;
            add_distance_grad(pass, i, y, scale, grads.d_query[static_cast<std::size_t>(j)],
                              grads.d_support[static_cast<std::size_t>(j)]);
            add_distance_grad(pass, i, hard, -scale, grads.d_query[static_cast<std::size_t>(j)],
                              grads.d_support[static_cast<std::size_t>(j)]);
        }
    }
}

void variance_loss_backward(const PassBundle& bundle, double weight, BundleGrads& grads) {
    const int q = bundle.num_queries();
    const int n = bundle.n_way;
    const int n_passes = bundle.n_passes();
    if (q == 0 || n_passes <= 1) return;
    for (int i = 0; i < q; ++i) {
        const int y = bundle.query_labels[static_cast<std::size_t>(i)];
        const double mean = bundle.mean_probs.at(i, y);
        double var = 0.0;
        for (const PassData& pass : bundle.passes) {
            const double d = pass.probs.at(i, y) - mean;
            var += d * d;
        }
        const double sigma = std::sqrt(var / n_passes);
        if (sigma <= 0.0) continue;  // flat point: zero subgradient
        for (int j = 0; j < n_passes; ++j) {
            const PassData& pass = bundle.passes[static_cast<std::size_t>(j)];
            const double p_y = pass.probs.at(i, y);
            const double dsigma_dp = (p_y - mean) / (n_passes * sigma);
            for (int k = 0; k < n; ++k) {
                // dp_y/d d_k = -p_y([k=y] - p_k); softmax Jacobian in
                // distance space (logits are negated distances).
                const double dp_dd = -p_y * ((k == y ? 1.0 : 0.0) - pass.probs.at(i, k));
                add_distance_grad(pass, i, k, weight * dsigma_dp * dp_dd,
                                  grads.d_query[static_cast<std::size_t>(j)],
                                  grads.d_support[static_cast<std::size_t>(j)]);
            }
        }
    }
}

void recon_loss_backward(const std::vector<const Tensor*>& originals,
                         const std::vector<std::vector<const Tensor*>>& recons_per_pass,
                         const std::vector<const Tensor*>& mask_bits, double weight,
                         std::vector<std::vector<Tensor>>& d_recons, bool sum_reduction) {
    const std::size_t batch = originals.size();
    const std::size_t n_passes = recons_per_pass.size();
    if (batch == 0 || n_passes == 0) return;
    for (std::size_t j = 0; j < n_passes; ++j) {
        for (std::size_t b = 0; b < batch; ++b) {
            const Tensor& x = *originals[b];
            const Tensor& xh = *recons_per_pass[j][b];
            const Tensor& mask = *mask_bits[b];
            Tensor& out = d_recons[j][b];
            const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
            const double elems = sum_reduction ? 1.0 : static_cast<double>(x.size());
            const double scale = weight / (static_cast<double>(n_passes) * batch * elems);
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int xpos = 0; xpos < w; ++xpos) {
                        const double diff = x.at(ci, y, xpos) - xh.at(ci, y, xpos);
                        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                        out.at(ci, y, xpos) += -scale * sign * (1.0 + mask.at(y, xpos));
                    }
        }
    }
}

}  // namespace rgfs
