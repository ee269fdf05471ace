#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "rgfs/errors.hpp"
#include "rgfs/losses.hpp"
#include "rgfs/rng.hpp"

using namespace rgfs;

TEST_SUITE_BEGIN("losses");

namespace {

// D=1 bundle builder: one support embedding per class at the given positions,
// one pass, queries at the origin.
PassBundle point_bundle(const std::vector<double>& proto_positions, int label) {
    const int n = static_cast<int>(proto_positions.size());
    Tensor support({n, 1, 1});
    for (int k = 0; k < n; ++k) support[static_cast<std::size_t>(k)] = proto_positions[k];
    Tensor query({1, 1});
    return build_pass_bundle({support}, {query}, {label}, n, 1);
}

// Bundle with hand-set probabilities; only probs/labels are populated, which
// is all the variance loss reads.
PassBundle prob_bundle(const std::vector<std::vector<double>>& per_pass_probs,
                       const std::vector<int>& labels) {
    PassBundle b;
    const int q = static_cast<int>(labels.size());
    const int n = static_cast<int>(per_pass_probs[0].size()) / q;
    b.n_way = n;
    b.k_shot = 1;
    b.query_labels = labels;
    b.mean_probs = Tensor({q, n});
    for (const std::vector<double>& flat : per_pass_probs) {
        PassData pass;
        pass.probs = Tensor({q, n});
        for (std::size_t i = 0; i < flat.size(); ++i) {
            pass.probs[i] = flat[i];
            b.mean_probs[i] += flat[i];
        }
        b.passes.push_back(std::move(pass));
    }
    for (std::size_t i = 0; i < b.mean_probs.size(); ++i)
        b.mean_probs[i] /= static_cast<double>(b.passes.size());
    return b;
}

}  // namespace

TEST_CASE("sq_euclidean basics") {
    Tensor a({2}), b({2});
    a[0] = 3.0;
    a[1] = 4.0;
    CHECK(sq_euclidean(a, a) == 0.0);
    CHECK(sq_euclidean(b, a) == 25.0);

    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        Tensor x({5}), y({5});
        for (int i = 0; i < 5; ++i) {
            x[static_cast<std::size_t>(i)] = rng.uniform(-2, 2);
            y[static_cast<std::size_t>(i)] = rng.uniform(-2, 2);
        }
        CHECK(sq_euclidean(x, y) == sq_euclidean(y, x));
    }
}

TEST_CASE("prototypes are per-class support means") {
    // K=1: prototype equals the lone embedding.
    Tensor lone({2, 1, 3});
    for (std::size_t i = 0; i < lone.size(); ++i) lone[i] = static_cast<double>(i);
    const Tensor p1 = compute_prototypes(lone);
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 3; ++j) CHECK(p1.at(k, j) == lone.at(k, 0, j));

    // Supports [0,2] and [2,0] average to [1,1].
    Tensor pair({1, 2, 2});
    pair.at(0, 0, 1) = 2.0;
    pair.at(0, 1, 0) = 2.0;
    const Tensor p2 = compute_prototypes(pair);
    CHECK(p2.at(0, 0) == doctest::Approx(1.0));
    CHECK(p2.at(0, 1) == doctest::Approx(1.0));

    // Random case against the explicit-loop mean.
    Rng rng(7);
    Tensor s({5, 5, 8});
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.uniform(-1, 1);
    const Tensor protos = compute_prototypes(s);
    for (int k = 0; k < 5; ++k) {
        const std::vector<double> want = oracles::prototype(s, k);
        for (int j = 0; j < 8; ++j)
            CHECK(protos.at(k, j) ==
                  doctest::Approx(want[static_cast<std::size_t>(j)]).epsilon(1e-6));
    }
}

TEST_CASE("proto loss hand cases") {
    // Two equidistant prototypes force the uniform softmax.
    CHECK(proto_loss(point_bundle({1.0, -1.0}, 0)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Query on its prototype, the other 30 away in squared distance.
    CHECK(proto_loss(point_bundle({0.0, std::sqrt(30.0)}, 0)) < 1e-12);

    // Squared distances {1, 4, 9} with the nearest class correct.
    const double want =
        -std::log(std::exp(-1.0) / (std::exp(-1.0) + std::exp(-4.0) + std::exp(-9.0)));
    const double got = proto_loss(point_bundle({1.0, 2.0, 3.0}, 0));
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.0489).epsilon(1e-3));
}

TEST_CASE("triplet loss hand cases") {
    const double margin = 1.5;

    // d_pos = 1, nearest incorrect at 2: hinge = 1.5 + 1 - 2 = 0.5.
    CHECK(triplet_loss(point_bundle({1.0, -std::sqrt(2.0)}, 0), margin) ==
          doctest::Approx(0.5).epsilon(1e-12));

    // Satisfied margin: query sits on its prototype, incorrect far away.
    CHECK(triplet_loss(point_bundle({0.0, std::sqrt(2.0)}, 0), margin) == 0.0);

    // Hard negative is the nearer incorrect prototype (1.2, not 2.0).
    const double got = triplet_loss(point_bundle({1.0, -std::sqrt(2.0), std::sqrt(1.2)}, 0), margin);
    CHECK(got == doctest::Approx(margin + 1.0 - 1.2).epsilon(1e-12));
}

TEST_CASE("variance loss hand cases") {
    // Single pass: no spread to penalize.
    CHECK(variance_loss(prob_bundle({{0.2, 0.8}}, {0})) == 0.0);

    // Identical probabilities across passes.
    CHECK(variance_loss(prob_bundle({{0.3, 0.7}, {0.3, 0.7}}, {1})) == 0.0);

    // True-class probabilities {0.4, 0.6}: population std 0.1.
    CHECK(variance_loss(prob_bundle({{0.4, 0.6}, {0.6, 0.4}}, {0})) ==
          doctest::Approx(0.1).epsilon(1e-12));

    // Two queries: the per-query stds (0.1 each) add up, not average.
    CHECK(variance_loss(prob_bundle({{0.4, 0.6, 0.4, 0.6}, {0.6, 0.4, 0.6, 0.4}}, {0, 0})) ==
          doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("recon loss hand cases") {
    // x = [[1,0],[0,1]], xhat = 0.5 everywhere, top row masked.
    Tensor x({1, 2, 2});
    x.at(0, 0, 0) = 1.0;
    x.at(0, 1, 1) = 1.0;
    Tensor xh({1, 2, 2});
    xh.fill(0.5);
    Tensor m({2, 2});
    m.at(0, 0) = 1.0;
    m.at(0, 1) = 1.0;

    const std::vector<const Tensor*> originals{&x};
    const std::vector<std::vector<const Tensor*>> recons{{&xh}};
    const std::vector<const Tensor*> masks{&m};

    CHECK(recon_loss(originals, recons, masks) == doctest::Approx(0.75).epsilon(1e-12));

    // Raw-sum reduction of the same case: masked 1.0 + global 2.0.
    CHECK(recon_loss(originals, recons, masks, true) == doctest::Approx(3.0).epsilon(1e-12));

    // Exact reconstruction is free.
    const std::vector<std::vector<const Tensor*>> exact{{&x}};
    CHECK(recon_loss(originals, exact, masks) == 0.0);

    // All-zero mask leaves only the global term.
    Tensor no_mask({2, 2});
    const std::vector<const Tensor*> zero_masks{&no_mask};
    CHECK(recon_loss(originals, recons, zero_masks) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("total loss weighting and the 4.2999 hand case") {
    LossWeights w;  // alpha 0.01, beta 1, lambda 5
    const LossReport r = total_loss(0.0489, 0.5, 0.75, 0.1, w);
    CHECK(r.total == doctest::Approx(4.2999).epsilon(1e-9));
    CHECK(r.total == doctest::Approx(r.proto + w.alpha * r.variance + w.beta * r.triplet +
                                     w.lambda * r.recon)
                         .epsilon(1e-12));

    LossWeights zero;
    zero.alpha = zero.beta = zero.lambda = 0.0;
    CHECK(total_loss(0.33, 9.0, 9.0, 9.0, zero).total == doctest::Approx(0.33).epsilon(1e-12));

    // Doubling lambda moves the total by exactly lambda * recon.
    LossWeights twice = w;
    twice.lambda = 2.0 * w.lambda;
    const double delta = total_loss(0.0489, 0.5, 0.75, 0.1, twice).total - r.total;
    CHECK(delta == doctest::Approx(w.lambda * 0.75).epsilon(1e-12));
}

TEST_CASE("non-finite components are fatal and named") {
    LossWeights w;
    const double inf = std::numeric_limits<double>::infinity();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(total_loss(inf, 0, 0, 0, w), doctest::Contains("proto"), TrainError);
    CHECK_THROWS_WITH_AS(total_loss(0, nan, 0, 0, w), doctest::Contains("triplet"), TrainError);
    CHECK_THROWS_WITH_AS(total_loss(0, 0, inf, 0, w), doctest::Contains("recon"), TrainError);
    CHECK_THROWS_WITH_AS(total_loss(0, 0, 0, nan, w), doctest::Contains("variance"), TrainError);
}

TEST_CASE("oracle suite: 100 random instances match brute force") {
    for (int t = 0; t < 100; ++t) {
        const oracles::RandomInstance inst = oracles::random_instance(1000 + t);
        const PassBundle b = inst.bundle();
        CHECK(oracles::rel_err(proto_loss(b), oracles::proto_loss(b)) < 1e-6);
        CHECK(oracles::rel_err(triplet_loss(b, 1.5), oracles::triplet_loss(b, 1.5)) < 1e-6);
        CHECK(oracles::rel_err(variance_loss(b), oracles::variance_loss(b)) < 1e-6);
    }
}

TEST_CASE("recon loss matches brute force on random batches") {
    Rng rng(555);
    for (int t = 0; t < 20; ++t) {
        std::vector<Tensor> xs(3), m(3);
        std::vector<std::vector<Tensor>> xh(2, std::vector<Tensor>(3));
        for (int b = 0; b < 3; ++b) {
            xs[static_cast<std::size_t>(b)].resize({1, 8, 8});
            m[static_cast<std::size_t>(b)].resize({8, 8});
            for (std::size_t i = 0; i < 64; ++i) {
                xs[static_cast<std::size_t>(b)][i] = rng.uniform();
                m[static_cast<std::size_t>(b)][i] = rng.bernoulli(0.25) ? 1.0 : 0.0;
            }
            for (int j = 0; j < 2; ++j) {
                xh[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)].resize({1, 8, 8});
                for (std::size_t i = 0; i < 64; ++i)
                    xh[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)][i] = rng.uniform();
            }
        }
        std::vector<const Tensor*> originals, masks;
        std::vector<std::vector<const Tensor*>> recons(2);
        for (int b = 0; b < 3; ++b) {
            originals.push_back(&xs[static_cast<std::size_t>(b)]);
            masks.push_back(&m[static_cast<std::size_t>(b)]);
            for (int j = 0; j < 2; ++j)
                recons[static_cast<std::size_t>(j)].push_back(
                    &xh[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)]);
        }
        CHECK(oracles::rel_err(recon_loss(originals, recons, masks),
                               oracles::recon_loss(originals, recons, masks)) < 1e-6);
    }
}

TEST_CASE("bundle probabilities are a valid distribution with exact mean") {
    for (int t = 0; t < 20; ++t) {
        const PassBundle b = oracles::random_instance(2000 + t).bundle();
        for (const PassData& pass : b.passes)
            for (int i = 0; i < b.num_queries(); ++i) {
                double sum = 0.0;
                for (int k = 0; k < b.n_way; ++k) {
                    const double p = pass.probs.at(i, k);
                    CHECK(p > 0.0);
                    CHECK(p < 1.0);
                    sum += p;
                }
                CHECK(std::fabs(sum - 1.0) < 1e-6);
            }
        // Exact mean: same sum-then-divide arithmetic as the contract.
        for (std::size_t e = 0; e < b.mean_probs.size(); ++e) {
            double sum = 0.0;
            for (const PassData& pass : b.passes) sum += pass.probs[e];
            CHECK(b.mean_probs[e] == sum / static_cast<double>(b.n_passes()));
        }
    }
}

TEST_CASE("loss invariants on random instances") {
    for (int t = 0; t < 30; ++t) {
        oracles::RandomInstance inst = oracles::random_instance(3000 + t);
        const PassBundle b = inst.bundle();
        CHECK(proto_loss(b) >= 0.0);
        CHECK(triplet_loss(b, 1.5) >= 0.0);
        CHECK(variance_loss(b) >= 0.0);

        // Pass-permutation invariance of the variance penalty.
        oracles::RandomInstance swapped = inst;
        std::swap(swapped.support[0], swapped.support[1]);
        std::swap(swapped.query[0], swapped.query[1]);
        CHECK(variance_loss(swapped.bundle()) ==
              doctest::Approx(variance_loss(b)).epsilon(1e-12));

        // Translating every embedding preserves all distances, hence probs.
        oracles::RandomInstance shifted = inst;
        for (Tensor& s : shifted.support)
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += 0.7;
        for (Tensor& qt : shifted.query)
            for (std::size_t i = 0; i < qt.size(); ++i) qt[i] += 0.7;
        const PassBundle bs = shifted.bundle();
        for (std::size_t j = 0; j < b.passes.size(); ++j)
            for (std::size_t e = 0; e < b.passes[j].probs.size(); ++e)
                CHECK(bs.passes[j].probs[e] ==
                      doctest::Approx(b.passes[j].probs[e]).epsilon(1e-9));
    }
}

TEST_CASE("bundle construction rejects malformed inputs") {
    oracles::RandomInstance inst = oracles::random_instance(1);
    CHECK_THROWS_AS(build_pass_bundle({}, {}, inst.labels, 3, 2), TrainError);

    std::vector<int> bad_labels = inst.labels;
    bad_labels[0] = 3;  // out of range for n_way = 3
    CHECK_THROWS_AS(build_pass_bundle(inst.support, inst.query, bad_labels, 3, 2), TrainError);

    std::vector<Tensor> bad_support = inst.support;
    bad_support[0] = Tensor({2, 2, 4});
    CHECK_THROWS_AS(build_pass_bundle(bad_support, inst.query, inst.labels, 3, 2), TrainError);
}

// ------------------------------------------------------------ gradients ----

namespace {

// Runs FD over every support/query element of a random instance against the
// analytic backward of one loss. `loss` must be a pure function of the
// rebuilt bundle.
template <typename LossFn, typename BackwardFn>
void check_embedding_grads(std::uint64_t seed, LossFn&& loss, BackwardFn&& backward,
                           double tolerance = 1e-3) {
    oracles::RandomInstance inst = oracles::random_instance(seed);
    const PassBundle b = inst.bundle();
    BundleGrads grads = zero_bundle_grads(b);
    backward(b, grads);

    const auto eval = [&]() { return loss(inst.bundle()); };
    for (std::size_t j = 0; j < inst.support.size(); ++j) {
        for (std::size_t i = 0; i < inst.support[j].size(); ++i) {
            const double fd = oracles::fd_central(&inst.support[j][i], 1e-4, eval);
            CHECK(oracles::rel_err(grads.d_support[j][i], fd) < tolerance);
        }
        for (std::size_t i = 0; i < inst.query[j].size(); ++i) {
            const double fd = oracles::fd_central(&inst.query[j][i], 1e-4, eval);
            CHECK(oracles::rel_err(grads.d_query[j][i], fd) < tolerance);
        }
    }
}

// Distance of every triplet hinge from its kink; FD needs a smooth
// neighbourhood, so the seeds used below keep clear of zero.
double min_hinge_margin(const PassBundle& b, double margin) {
    double closest = std::numeric_limits<double>::infinity();
    for (const PassData& pass : b.passes) {
        for (int i = 0; i < b.num_queries(); ++i) {
            const int y = b.query_labels[static_cast<std::size_t>(i)];
            const double* q = pass.query.data() + static_cast<std::size_t>(i) * pass.query.dim(1);
            double d_pos = 0.0;
            std::vector<double> negs;
            for (int k = 0; k < b.n_way; ++k) {
                const std::vector<double> c = oracles::prototype(pass.support, k);
                const double d = oracles::sq_dist(q, c.data(), pass.query.dim(1));
                if (k == y)
                    d_pos = d;
                else
                    negs.push_back(d);
            }
            std::sort(negs.begin(), negs.end());
            closest = std::min(closest, std::fabs(margin + d_pos - negs[0]));
            if (negs.size() > 1) closest = std::min(closest, negs[1] - negs[0]);
        }
    }
    return closest;
}

}  // namespace

TEST_CASE("proto loss gradient matches finite differences") {
    for (std::uint64_t seed : {10ULL, 11ULL, 12ULL})
        check_embedding_grads(
            seed, [](const PassBundle& b) { return proto_loss(b); },
            [](const PassBundle& b, BundleGrads& g) { proto_loss_backward(b, 1.0, g); });
}

TEST_CASE("triplet loss gradient matches finite differences") {
    const double margin = 1.5;
    for (std::uint64_t seed : {20ULL, 21ULL, 22ULL}) {
        // The hinge and the argmin must sit clear of their kinks for FD.
        REQUIRE(min_hinge_margin(oracles::random_instance(seed).bundle(), margin) > 1e-2);
        check_embedding_grads(
            seed, [&](const PassBundle& b) { return triplet_loss(b, margin); },
            [&](const PassBundle& b, BundleGrads& g) { triplet_loss_backward(b, margin, 1.0, g); });
    }
}

TEST_CASE("variance loss gradient matches finite differences") {
    for (std::uint64_t seed : {30ULL, 31ULL, 32ULL})
        check_embedding_grads(
            seed, [](const PassBundle& b) { return variance_loss(b); },
            [](const PassBundle& b, BundleGrads& g) { variance_loss_backward(b, 1.0, g); });
}

TEST_CASE("backward weight parameter scales gradients linearly") {
    const PassBundle b = oracles::random_instance(40).bundle();
    BundleGrads unit = zero_bundle_grads(b), scaled = zero_bundle_grads(b);
    proto_loss_backward(b, 1.0, unit);
    proto_loss_backward(b, 2.5, scaled);
    for (std::size_t j = 0; j < unit.d_query.size(); ++j)
        for (std::size_t i = 0; i < unit.d_query[j].size(); ++i)
            CHECK(scaled.d_query[j][i] == doctest::Approx(2.5 * unit.d_query[j][i]).epsilon(1e-12));
}

TEST_CASE("recon loss gradient matches finite differences") {
    Rng rng(50);
    Tensor x({1, 8, 8}), m({8, 8});
    std::vector<std::vector<Tensor>> xh(2, std::vector<Tensor>(1));
    for (std::size_t i = 0; i < 64; ++i) {
        x[i] = rng.uniform(0.55, 0.95);  // keep |x - xhat| >> FD step
        m[i] = rng.bernoulli(0.25) ? 1.0 : 0.0;
    }
    for (int j = 0; j < 2; ++j) {
        xh[static_cast<std::size_t>(j)][0].resize({1, 8, 8});
        for (std::size_t i = 0; i < 64; ++i)
            xh[static_cast<std::size_t>(j)][0][i] = rng.uniform(0.05, 0.45);
    }

    const std::vector<const Tensor*> originals{&x};
    const std::vector<const Tensor*> masks{&m};
    const auto recon_view = [&]() {
        std::vector<std::vector<const Tensor*>> v(2);
        v[0].push_back(&xh[0][0]);
        v[1].push_back(&xh[1][0]);
        return v;
    };

    std::vector<std::vector<Tensor>> d(2, std::vector<Tensor>(1, Tensor({1, 8, 8})));
    recon_loss_backward(originals, recon_view(), masks, 1.0, d);

    const auto eval = [&]() { return recon_loss(originals, recon_view(), masks); };
    for (int j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 64; ++i) {
            const double fd =
                oracles::fd_central(&xh[static_cast<std::size_t>(j)][0][i], 1e-4, eval);
            CHECK(oracles::rel_err(d[static_cast<std::size_t>(j)][0][i], fd) < 1e-3);
        }
}

TEST_SUITE_END();
