#include "rgfs/episodic.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "rgfs/errors.hpp"
#include "rgfs/rng.hpp"

namespace rgfs {

ClassPool class_pool_from_string(const std::string& name) {
    if (name == "base") return ClassPool::Base;
    if (name == "novel") return ClassPool::Novel;
    if (name == "all") return ClassPool::All;
    throw ConfigError("unknown class pool: " + name + " (expected base, novel or all)");
}

std::string class_pool_to_string(ClassPool pool) {
    switch (pool) {
        case ClassPool::Base: return "base";
        case ClassPool::Novel: return "novel";
        case ClassPool::All: return "all";
    }
    return "all";
}

void EpisodeSpec::validate() const {
    if (n_way < 2) throw ConfigError("episode: n_way must be at least 2");
    if (k_shot < 1) throw ConfigError("episode: k_shot must be at least 1");
    if (q_queries < 1) throw ConfigError("episode: q_queries must be at least 1");
    if (resolved_recon_batch() < 1) throw ConfigError("episode: recon_batch must be at least 1");
}

std::vector<int> pool_class_ids(const DatasetSplit& split, ClassPool pool) {
    std::vector<int> ids;
    if (pool == ClassPool::Base || pool == ClassPool::All)
        ids.insert(ids.end(), split.base_classes.begin(), split.base_classes.end());
    if (pool == ClassPool::Novel || pool == ClassPool::All)
        ids.insert(ids.end(), split.novel_classes.begin(), split.novel_classes.end());
    std::sort(ids.begin(), ids.end());
    return ids;
}

Episode sample_episode(const Dataset& dataset, const DatasetSplit& split, const EpisodeSpec& spec,
                       std::uint64_t seed) {
    spec.validate();
    const std::vector<int> pool = pool_class_ids(split, spec.pool);
    if (static_cast<int>(pool.size()) < spec.n_way)
        throw ConfigError("pool too small: " + std::to_string(pool.size()) + " classes for " +
                          std::to_string(spec.n_way) + "-way episodes");

    Episode ep;
    ep.seed = seed;
    Rng rng(derive_seed(seed, Stream::EpisodeSample));

    const std::vector<int> chosen =
        rng.sample_without_replacement(static_cast<int>(pool.size()), spec.n_way);
    ep.class_ids.reserve(static_cast<std::size_t>(spec.n_way));
    for (int slot : chosen) ep.class_ids.push_back(pool[static_cast<std::size_t>(slot)]);

    const int per_class = spec.k_shot + spec.q_queries;
    ep.support.resize(static_cast<std::size_t>(spec.n_way));
    ep.query.resize(static_cast<std::size_t>(spec.n_way));
    for (int i = 0; i < spec.n_way; ++i) {
        const int cid = ep.class_ids[static_cast<std::size_t>(i)];
        const auto& members = dataset.samples_by_class[static_cast<std::size_t>(cid)];
        if (static_cast<int>(members.size()) < per_class)
            throw TrainError("class " + dataset.manifest.classes[static_cast<std::size_t>(cid)].name +
                             " has " + std::to_string(members.size()) + " samples, episode needs " +
                             std::to_string(per_class));
        const std::vector<int> picks =
            rng.sample_without_replacement(static_cast<int>(members.size()), per_class);
        for (int p = 0; p < per_class; ++p) {
            const int sample_idx = members[static_cast<std::size_t>(picks[static_cast<std::size_t>(p)])];
            if (p < spec.k_shot)
                ep.support[static_cast<std::size_t>(i)].push_back(sample_idx);
            else
                ep.query[static_cast<std::size_t>(i)].push_back(sample_idx);
        }
    }

    std::vector<int> pool_samples;
    for (int cid : pool)
        for (int idx : dataset.samples_by_class[static_cast<std::size_t>(cid)])
            pool_samples.push_back(idx);
    const int r = spec.resolved_recon_batch();
    if (static_cast<int>(pool_samples.size()) < r)
        throw TrainError("reconstruction batch of " + std::to_string(r) + " exceeds the pool's " +
                         std::to_string(pool_samples.size()) + " samples");
    const std::vector<int> rpicks =
        rng.sample_without_replacement(static_cast<int>(pool_samples.size()), r);
    for (int p : rpicks) ep.recon.push_back(pool_samples[static_cast<std::size_t>(p)]);
    return ep;
}

namespace {

/// Encode + embed only; the classification pathway never runs the decoder.
void forward_embedding(const ArchitectureConfig& arch, const NetworkParameters& params,
                       const Tensor& image, Mode mode, const DropMasks* masks, ForwardCtx& ctx) {
    encode(arch, params, image, mode, masks, ctx.enc);
    ctx.embedding = embed(arch, params, ctx.enc.z, ctx.emb);
}

}  // namespace

PassBundle run_passes(const ArchitectureConfig& arch, const NetworkParameters& params,
                      const Dataset& dataset, const Episode& episode, int n_passes, Mode mode,
                      std::uint64_t base_seed, const MaskingConfig& masking, bool with_recon,
                      EpisodeWorkspace* ws) {
    if (n_passes < 1) throw TrainError("run_passes: n_passes must be at least 1");
    if (with_recon && ws == nullptr)
        throw TrainError("run_passes: reconstruction requires a workspace");

    const int n_way = episode.n_way();
    const int k_shot = static_cast<int>(episode.support.front().size());
    const int q_per_class = static_cast<int>(episode.query.front().size());
    const int num_queries = n_way * q_per_class;
    const int r = static_cast<int>(episode.recon.size());
    const int d = arch.embedding_dim;
    const bool dropping = mode == Mode::Train && arch.dropblock_drop_prob > 0.0;

    if (ws) {
        ws->pass_masks.resize(static_cast<std::size_t>(n_passes));
        ws->support_ctx.resize(static_cast<std::size_t>(n_passes));
        ws->query_ctx.resize(static_cast<std::size_t>(n_passes));
        ws->recon_ctx.resize(static_cast<std::size_t>(n_passes));
        for (int j = 0; j < n_passes; ++j) {
            ws->support_ctx[static_cast<std::size_t>(j)].resize(
                static_cast<std::size_t>(n_way * k_shot));
            ws->query_ctx[static_cast<std::size_t>(j)].resize(
                static_cast<std::size_t>(num_queries));
            ws->recon_ctx[static_cast<std::size_t>(j)].resize(
                with_recon ? static_cast<std::size_t>(r) : 0);
        }
    }

    // Occlusion is a property of the episode, not the pass: mask b is drawn
    // from (episode seed, slot b) and every pass reconstructs the same
    // occluded input.
    if (with_recon) {
        ws->masked_recon.resize(static_cast<std::size_t>(r));
        ws->recon_masks.resize(static_cast<std::size_t>(r));
        for (int b = 0; b < r; ++b) {
            const ImageSample& sample =
                dataset.samples[static_cast<std::size_t>(episode.recon[static_cast<std::size_t>(b)])];
            ws->recon_masks[static_cast<std::size_t>(b)] = generate_block_mask(
                arch.input_height, arch.input_width, masking.block_size, masking.mask_ratio,
                derive_seed(episode.seed, Stream::BlockMask, static_cast<std::uint64_t>(b)));
            ws->masked_recon[static_cast<std::size_t>(b)] =
                apply_mask_tensor(sample.pixels, ws->recon_masks[static_cast<std::size_t>(b)]);
        }
    }

    thread_local ForwardCtx scratch_ctx;
    std::vector<Tensor> support_per_pass;
    std::vector<Tensor> query_per_pass;
    support_per_pass.reserve(static_cast<std::size_t>(n_passes));
    query_per_pass.reserve(static_cast<std::size_t>(n_passes));

    for (int j = 0; j < n_passes; ++j) {
        const std::uint64_t pass_seed =
            derive_seed(base_seed, Stream::PassBase, static_cast<std::uint64_t>(j));
        DropMasks local_masks;
        const DropMasks* masks = nullptr;
        if (dropping) {
            if (ws) {
                ws->pass_masks[static_cast<std::size_t>(j)] = sample_drop_masks(arch, pass_seed);
                masks = &ws->pass_masks[static_cast<std::size_t>(j)];
            } else {
                local_masks = sample_drop_masks(arch, pass_seed);
                masks = &local_masks;
            }
        }

        Tensor support_emb({n_way, k_shot, d});
        for (int i = 0; i < n_way; ++i)
            for (int s = 0; s < k_shot; ++s) {
                const int flat = i * k_shot + s;
                ForwardCtx& ctx =
                    ws ? ws->support_ctx[static_cast<std::size_t>(j)][static_cast<std::size_t>(flat)]
                       : scratch_ctx;
                const int idx = episode.support[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
                forward_embedding(arch, params, dataset.samples[static_cast<std::size_t>(idx)].pixels,
                                  mode, masks, ctx);
                for (int e = 0; e < d; ++e) support_emb.at(i, s, e) = ctx.embedding[static_cast<std::size_t>(e)];
            }

        Tensor query_emb({num_queries, d});
        for (int i = 0; i < n_way; ++i)
            for (int s = 0; s < q_per_class; ++s) {
                const int flat = i * q_per_class + s;
                ForwardCtx& ctx =
                    ws ? ws->query_ctx[static_cast<std::size_t>(j)][static_cast<std::size_t>(flat)]
                       : scratch_ctx;
                const int idx = episode.query[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
                forward_embedding(arch, params, dataset.samples[static_cast<std::size_t>(idx)].pixels,
                                  mode, masks, ctx);
                for (int e = 0; e < d; ++e) query_emb.at(flat, e) = ctx.embedding[static_cast<std::size_t>(e)];
            }

        if (with_recon)
            for (int b = 0; b < r; ++b) {
                ForwardCtx& ctx =
                    ws->recon_ctx[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)];
                encode(arch, params, ws->masked_recon[static_cast<std::size_t>(b)], mode, masks,
                       ctx.enc);
                decode(arch, params, ctx.enc.z, ctx.dec);
            }

        support_per_pass.push_back(std::move(support_emb));
        query_per_pass.push_back(std::move(query_emb));
    }

    std::vector<int> labels(static_cast<std::size_t>(num_queries));
    for (int i = 0; i < n_way; ++i)
        for (int s = 0; s < q_per_class; ++s)
            labels[static_cast<std::size_t>(i * q_per_class + s)] = i;

    return build_pass_bundle(std::move(support_per_pass), std::move(query_per_pass),
                             std::move(labels), n_way, k_shot);
}

std::vector<int> predict(const PassBundle& bundle) {
    const int q = bundle.num_queries();
    const int n = bundle.n_way;
    std::vector<int> out(static_cast<std::size_t>(q), 0);
    for (int i = 0; i < q; ++i) {
        int best = 0;
        for (int k = 1; k < n; ++k)
            if (bundle.mean_probs.at(i, k) > bundle.mean_probs.at(i, best)) best = k;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

std::string episode_to_json(const Dataset& dataset, const Episode& episode) {
    nlohmann::json j;
    j["seed"] = episode.seed;
    j["class_ids"] = episode.class_ids;
    const auto ids_of = [&](const std::vector<int>& idxs) {
        std::vector<std::string> out;
        for (int i : idxs) out.push_back(dataset.samples[static_cast<std::size_t>(i)].source_id);
        return out;
    };
    for (std::size_t c = 0; c < episode.support.size(); ++c) {
        j["support"].push_back(ids_of(episode.support[c]));
        j["query"].push_back(ids_of(episode.query[c]));
    }
    j["recon"] = ids_of(episode.recon);
    return j.dump(2);
}

}  // namespace rgfs
