#include "rgfs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rgfs/errors.hpp"
#include "rgfs/rng.hpp"

namespace rgfs {

void TrainConfig::validate() const {
    if (episodes < 1) throw ConfigError("train: episodes must be at least 1");
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be at least 1");
    if (grad_clip_norm <= 0.0) throw ConfigError("train: grad_clip_norm must be positive");
    if (weights.alpha < 0.0 || weights.beta < 0.0 || weights.lambda < 0.0)
        throw ConfigError("train: loss weights must be non-negative");
    if (weights.margin <= 0.0) throw ConfigError("train: margin must be positive");
    if (weights.n_passes < 1) throw ConfigError("train: n_passes must be at least 1");
    spec.validate();
}

TrainState make_initial_state(const ArchitectureConfig& arch, std::uint64_t seed) {
    TrainState state;
    state.arch = arch;
    state.params = init_parameters(arch, seed);
    state.adam.m = zero_parameters(arch);
    state.adam.v = zero_parameters(arch);
    state.adam.step = 0;
    state.episode_index = 0;
    state.root_seed = seed;
    return state;
}

TrainState resume(const std::filesystem::path& checkpoint_path) {
    return load_checkpoint(checkpoint_path);
}

namespace {

/// Copies one embedding row out of a bundle-gradient tensor.
void copy_row(const double* src, int d, Tensor& out) {
    out.resize({d});
    for (int e = 0; e < d; ++e) out[static_cast<std::size_t>(e)] = src[e];
}

}  // namespace

LossReport episode_losses_and_grads(const ArchitectureConfig& arch,
                                    const NetworkParameters& params, const Dataset& dataset,
                                    const Episode& episode, const LossWeights& weights,
                                    const MaskingConfig& masking, bool baseline_mode,
                                    std::uint64_t pass_base_seed, EpisodeWorkspace& ws,
                                    NetworkParameters& grads) {
    const bool with_recon = !baseline_mode;
    const PassBundle bundle = run_passes(arch, params, dataset, episode, weights.n_passes,
                                         Mode::Train, pass_base_seed, masking, with_recon, &ws);

    const int n_passes = bundle.n_passes();
    const int r = static_cast<int>(episode.recon.size());
    std::vector<const Tensor*> originals;
    std::vector<const Tensor*> mask_bits;
    std::vector<std::vector<const Tensor*>> recons(static_cast<std::size_t>(n_passes));
    if (with_recon) {
        for (int b = 0; b < r; ++b) {
            originals.push_back(
                &dataset.samples[static_cast<std::size_t>(episode.recon[static_cast<std::size_t>(b)])]
                     .pixels);
            mask_bits.push_back(&ws.recon_masks[static_cast<std::size_t>(b)].bits);
        }
        for (int j = 0; j < n_passes; ++j)
            for (int b = 0; b < r; ++b)
                recons[static_cast<std::size_t>(j)].push_back(
                    &ws.recon_ctx[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)]
                         .reconstruction());
    }

    const double proto = proto_loss(bundle);
    const double triplet = baseline_mode ? 0.0 : triplet_loss(bundle, weights.margin);
    const double recon = baseline_mode
                             ? 0.0
                             : recon_loss(originals, recons, mask_bits, weights.recon_sum_reduction);
    const double variance = variance_loss(bundle);
    LossWeights effective = weights;
    if (baseline_mode) {
        effective.beta = 0.0;
        effective.lambda = 0.0;
    }
    const LossReport report = total_loss(proto, triplet, recon, variance, effective);

    // Loss gradients w.r.t. embeddings and reconstructions.
    BundleGrads bg = zero_bundle_grads(bundle);
    proto_loss_backward(bundle, 1.0, bg);
    variance_loss_backward(bundle, effective.alpha, bg);
    if (!baseline_mode) triplet_loss_backward(bundle, weights.margin, effective.beta, bg);

    std::vector<std::vector<Tensor>> d_recons;
    if (!baseline_mode) {
        d_recons.resize(static_cast<std::size_t>(n_passes));
        for (int j = 0; j < n_passes; ++j) {
            d_recons[static_cast<std::size_t>(j)].reserve(static_cast<std::size_t>(r));
            for (int b = 0; b < r; ++b)
                d_recons[static_cast<std::size_t>(j)].emplace_back(originals[static_cast<std::size_t>(b)]->shape());
        }
        recon_loss_backward(originals, recons, mask_bits, effective.lambda, d_recons,
                            weights.recon_sum_reduction);
    }

    // Backpropagate through the network in a fixed serial order (pass-major,
    // then support, query, reconstruction image order) so floating-point
    // accumulation is reproducible.
    for (auto& [name, g] : grads.entries()) g.zero();
    const int d = arch.embedding_dim;
    Tensor d_emb;
    for (int j = 0; j < n_passes; ++j) {
        const auto& sup_ctx = ws.support_ctx[static_cast<std::size_t>(j)];
        const auto& qry_ctx = ws.query_ctx[static_cast<std::size_t>(j)];
        const Tensor& d_sup = bg.d_support[static_cast<std::size_t>(j)];
        const Tensor& d_qry = bg.d_query[static_cast<std::size_t>(j)];
        for (std::size_t flat = 0; flat < sup_ctx.size(); ++flat) {
            copy_row(d_sup.data() + flat * static_cast<std::size_t>(d), d, d_emb);
            forward_full_backward(arch, params, sup_ctx[flat], &d_emb, nullptr, grads);
        }
        for (std::size_t flat = 0; flat < qry_ctx.size(); ++flat) {
            copy_row(d_qry.data() + flat * static_cast<std::size_t>(d), d, d_emb);
            forward_full_backward(arch, params, qry_ctx[flat], &d_emb, nullptr, grads);
        }
        if (!baseline_mode)
            for (int b = 0; b < r; ++b)
                forward_full_backward(
                    arch, params, ws.recon_ctx[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)],
                    nullptr, &d_recons[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)],
                    grads);
    }
    return report;
}

namespace {

double global_grad_norm(const NetworkParameters& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads.entries())
        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    return std::sqrt(sq);
}

void scale_grads(NetworkParameters& grads, double factor) {
    for (auto& [name, g] : grads.entries())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= factor;
}

bool is_encoder_param(const std::string& name) { return name.rfind("enc", 0) == 0; }

void adam_step(TrainState& state, const NetworkParameters& grads, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.adam.step += 1;
    const double t = static_cast<double>(state.adam.step);
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < grads.entries().size(); ++i) {
        const Tensor& g = grads.entries()[i].second;
        Tensor& p = state.params.entries()[i].second;
        Tensor& m = state.adam.m.entries()[i].second;
        Tensor& v = state.adam.v.entries()[i].second;
        for (std::size_t e = 0; e < g.size(); ++e) {
            m[e] = b1 * m[e] + (1.0 - b1) * g[e];
            v[e] = b2 * v[e] + (1.0 - b2) * g[e] * g[e];
            p[e] -= lr * (m[e] / bc1) / (std::sqrt(v[e] / bc2) + eps);
        }
    }
}

}  // namespace

std::string loss_row_to_csv(const LossRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(row.episode), row.report.proto,
                  row.report.triplet, row.report.recon, row.report.variance, row.report.total,
                  row.grad_norm);
    return buf;
}

TrainResult train(const Dataset& dataset, const DatasetSplit& split, const TrainConfig& config,
                  TrainState state, const std::filesystem::path& out_dir,
                  std::ostream* warnings) {
    config.validate();
    state.arch.validate();
    EpisodeSpec spec = config.spec;
    spec.pool = ClassPool::Base;
    validate_episode_capacity(dataset, pool_class_ids(split, ClassPool::Base), spec.k_shot,
                              spec.q_queries);

    std::ofstream csv;
    const bool writing = !out_dir.empty();
    if (writing) {
        std::filesystem::create_directories(out_dir);
        const auto csv_path = out_dir / "loss.csv";
        if (state.episode_index == 0) {
            csv.open(csv_path, std::ios::trunc);
            csv << kLossCsvHeader << '\n';
        } else {
            csv.open(csv_path, std::ios::app);
        }
        if (!csv) throw TrainError("cannot write loss log: " + csv_path.string());
    }

    const auto checkpoint_path = [&](std::uint64_t episode) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%06llu.bin",
                      static_cast<unsigned long long>(episode));
        return out_dir / name;
    };

    TrainResult result;
    EpisodeWorkspace ws;
    NetworkParameters grads = zero_parameters(state.arch);

    while (state.episode_index < static_cast<std::uint64_t>(config.episodes)) {
        const std::uint64_t e = state.episode_index;
        const std::uint64_t episode_seed = derive_seed(state.root_seed, Stream::EpisodeSample, e);
        const std::uint64_t pass_seed = derive_seed(state.root_seed, Stream::PassBase, e);
        const Episode episode = sample_episode(dataset, split, spec, episode_seed);

        LossRow row;
        row.episode = e;
        row.report = episode_losses_and_grads(state.arch, state.params, dataset, episode,
                                              config.weights, config.masking,
                                              config.baseline_mode, pass_seed, ws, grads);

        if (config.freeze_encoder)
            for (auto& [name, g] : grads.entries())
                if (is_encoder_param(name)) g.zero();

        row.grad_norm = global_grad_norm(grads);
        if (!std::isfinite(row.grad_norm))
            throw TrainError("non-finite gradient at episode " + std::to_string(e) +
                             "; last checkpoint retained");
        if (row.grad_norm > config.grad_clip_norm) {
            scale_grads(grads, config.grad_clip_norm / row.grad_norm);
            row.clipped = true;
            if (warnings)
                (*warnings) << "warning: episode " << e << " gradient norm " << row.grad_norm
                            << " clipped to " << config.grad_clip_norm << '\n';
        }

        adam_step(state, grads, config.learning_rate);
        if (!state.params.all_finite())
            throw TrainError("non-finite parameters after episode " + std::to_string(e) +
                             "; last checkpoint retained");

        state.episode_index = e + 1;
        result.log.push_back(row);
        if (writing) {
            csv << loss_row_to_csv(row) << '\n';
            csv.flush();
            if (state.episode_index % static_cast<std::uint64_t>(config.checkpoint_every) == 0 ||
                state.episode_index == static_cast<std::uint64_t>(config.episodes))
                save_checkpoint(checkpoint_path(state.episode_index), state);
        }
    }

    result.state = std::move(state);
    return result;
}

EvalReport evaluate(const ArchitectureConfig& arch, const NetworkParameters& params,
                    const Dataset& dataset, const DatasetSplit& split, const EpisodeSpec& spec,
                    int episodes, int n_passes, std::uint64_t seed) {
    spec.validate();
    if (episodes < 1) throw ConfigError("eval: episodes must be at least 1");
    const std::vector<int> pool = pool_class_ids(split, spec.pool);
    if (static_cast<int>(pool.size()) < spec.n_way)
        throw ConfigError("pool too small: " + std::to_string(pool.size()) + " classes in pool '" +
                          class_pool_to_string(spec.pool) + "' for " + std::to_string(spec.n_way) +
                          "-way evaluation");
    validate_episode_capacity(dataset, pool, spec.k_shot, spec.q_queries);

    MaskingConfig masking;  // unused: evaluation never reconstructs
    std::vector<double> accs;
    accs.reserve(static_cast<std::size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t episode_seed =
            derive_seed(seed, Stream::EvalEpisode, static_cast<std::uint64_t>(e));
        const Episode episode = sample_episode(dataset, split, spec, episode_seed);
        const PassBundle bundle = run_passes(arch, params, dataset, episode, n_passes, Mode::Eval,
                                             episode_seed, masking, false, nullptr);
        const std::vector<int> pred = predict(bundle);
        int correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == bundle.query_labels[i]) ++correct;
        accs.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
    }

    EvalReport report;
    report.pool = class_pool_to_string(spec.pool);
    report.n_way = spec.n_way;
    report.k_shot = spec.k_shot;
    report.episodes = episodes;
    double sum = 0.0;
    for (double a : accs) sum += a;
    report.mean_acc = sum / static_cast<double>(episodes);
    if (episodes > 1) {
        double sq = 0.0;
        for (double a : accs) sq += (a - report.mean_acc) * (a - report.mean_acc);
        const double sample_std = std::sqrt(sq / static_cast<double>(episodes - 1));
        report.ci95 = 1.96 * sample_std / std::sqrt(static_cast<double>(episodes));
    }
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["pool"] = report.pool;
    j["n_way"] = report.n_way;
    j["k_shot"] = report.k_shot;
    j["episodes"] = report.episodes;
    j["mean_acc"] = report.mean_acc;
    j["ci95"] = report.ci95;
    return j.dump(2);
}

}  // namespace rgfs
