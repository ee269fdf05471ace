#pragma once

// Independent brute-force references for the loss suite plus the
// finite-difference helpers the gradient checks share. Everything here is
// written with plain explicit loops and no shared code with src/, so a bug
// would have to appear twice to cancel out.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rgfs/losses.hpp"
#include "rgfs/rng.hpp"
#include "rgfs/tensor.hpp"

namespace oracles {

inline double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// Mean of the K support rows of class k; support is (N, K, D).
inline std::vector<double> prototype(const rgfs::Tensor& support, int k) {
    const int K = support.dim(1), D = support.dim(2);
    std::vector<double> c(static_cast<std::size_t>(D), 0.0);
    for (int s = 0; s < K; ++s)
        for (int j = 0; j < D; ++j)
            c[static_cast<std::size_t>(j)] +=
                support[(static_cast<std::size_t>(k) * K + s) * D + j] / K;
    return c;
}

// Softmax over exp(-d(query, c_k)) for one query of one pass, no shift trick.
inline std::vector<double> query_probs(const rgfs::PassData& pass, int qi) {
    const int N = pass.support.dim(0), D = pass.query.dim(1);
    const double* q = pass.query.data() + static_cast<std::size_t>(qi) * D;
    std::vector<double> e(static_cast<std::size_t>(N));
    double z = 0.0;
    for (int k = 0; k < N; ++k) {
        const std::vector<double> c = prototype(pass.support, k);
        e[static_cast<std::size_t>(k)] = std::exp(-sq_dist(q, c.data(), D));
        z += e[static_cast<std::size_t>(k)];
    }
    for (double& v : e) v /= z;
    return e;
}

inline double proto_loss(const rgfs::PassBundle& b) {
    double over_passes = 0.0;
    for (const rgfs::PassData& pass : b.passes) {
        double over_queries = 0.0;
        for (int i = 0; i < b.num_queries(); ++i) {
            const std::vector<double> p = query_probs(pass, i);
            over_queries += -std::log(p[static_cast<std::size_t>(b.query_labels[i])]);
        }
        over_passes += over_queries / b.num_queries();
    }
    return over_passes / b.n_passes();
}

inline double triplet_loss(const rgfs::PassBundle& b, double margin) {
    double over_passes = 0.0;
    for (const rgfs::PassData& pass : b.passes) {
        const int D = pass.query.dim(1);
        double over_queries = 0.0;
        for (int i = 0; i < b.num_queries(); ++i) {
            const double* q = pass.query.data() + static_cast<std::size_t>(i) * D;
            const int y = b.query_labels[static_cast<std::size_t>(i)];
            double d_pos = 0.0, d_neg = 0.0;
            bool have_neg = false;
            for (int k = 0; k < b.n_way; ++k) {
                const std::vector<double> c = prototype(pass.support, k);
                const double d = sq_dist(q, c.data(), D);
                if (k == y) {
                    d_pos = d;
                } else if (!have_neg || d < d_neg) {
                    d_neg = d;
                    have_neg = true;
                }
            }
            over_queries += std::max(0.0, margin + d_pos - d_neg);
        }
        over_passes += over_queries / b.num_queries();
    }
    return over_passes / b.n_passes();
}

inline double variance_loss(const rgfs::PassBundle& b) {
    const int n = b.n_passes();
    double total = 0.0;
    for (int i = 0; i < b.num_queries(); ++i) {
        const int y = b.query_labels[static_cast<std::size_t>(i)];
        double mean = 0.0;
        for (const rgfs::PassData& pass : b.passes) mean += pass.probs.at(i, y) / n;
        double var = 0.0;
        for (const rgfs::PassData& pass : b.passes) {
            const double d = pass.probs.at(i, y) - mean;
            var += d * d / n;
        }
        total += std::sqrt(var);
    }
    return total;
}

inline double recon_loss(const std::vector<const rgfs::Tensor*>& originals,
                         const std::vector<std::vector<const rgfs::Tensor*>>& recons,
                         const std::vector<const rgfs::Tensor*>& masks) {
    double over_passes = 0.0;
    for (const std::vector<const rgfs::Tensor*>& pass : recons) {
        double over_batch = 0.0;
        for (std::size_t b = 0; b < originals.size(); ++b) {
            const rgfs::Tensor& x = *originals[b];
            const rgfs::Tensor& xh = *pass[b];
            const rgfs::Tensor& m = *masks[b];
            const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
            double masked = 0.0, global = 0.0;
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        const double diff = std::fabs(x.at(c, y, xx) - xh.at(c, y, xx));
                        masked += m.at(y, xx) * diff;
                        global += diff;
                    }
            over_batch += masked / static_cast<double>(x.size()) +
                          global / static_cast<double>(x.size());
        }
        over_passes += over_batch / static_cast<double>(originals.size());
    }
    return over_passes / static_cast<double>(recons.size());
}

// ------------------------------------------------------------------ FD ----

inline double rel_err(double got, double want) {
    const double scale = std::max({std::fabs(got), std::fabs(want), 1e-6});
    return std::fabs(got - want) / scale;
}

// Central difference d f / d *x with the perturbed value restored after.
template <typename F>
double fd_central(double* x, double step, F&& eval) {
    const double x0 = *x;
    *x = x0 + step;
    const double up = eval();
    *x = x0 - step;
    const double down = eval();
    *x = x0;
    return (up - down) / (2.0 * step);
}

// Random embedding bundle inputs; build_pass_bundle derives the rest.
struct RandomInstance {
    std::vector<rgfs::Tensor> support;  // per pass (N, K, D)
    std::vector<rgfs::Tensor> query;    // per pass (Q, D)
    std::vector<int> labels;
    int n_way = 0;
    int k_shot = 0;

    rgfs::PassBundle bundle() const {
        return rgfs::build_pass_bundle(support, query, labels, n_way, k_shot);
    }
};

inline RandomInstance random_instance(std::uint64_t seed, int n_way = 3, int k_shot = 2,
                                      int queries = 4, int dim = 4, int passes = 2,
                                      double spread = 1.0) {
    rgfs::Rng rng(seed);
    RandomInstance inst;
    inst.n_way = n_way;
    inst.k_shot = k_shot;
    for (int j = 0; j < passes; ++j) {
        rgfs::Tensor s({n_way, k_shot, dim});
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.uniform(-spread, spread);
        inst.support.push_back(std::move(s));
        rgfs::Tensor q({queries, dim});
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-spread, spread);
        inst.query.push_back(std::move(q));
    }
    for (int i = 0; i < queries; ++i) inst.labels.push_back(rng.uniform_int(n_way));
    return inst;
}

}  // namespace oracles
