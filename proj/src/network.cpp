#include "rgfs/network.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "rgfs/errors.hpp"
#include "rgfs/rng.hpp"

namespace rgfs {

void ArchitectureConfig::validate() const {
    if (input_height <= 0 || input_width <= 0)
        throw ConfigError("architecture: non-positive input size");
    if (input_channels != 1 && input_channels != 3)
        throw ConfigError("architecture: input_channels must be 1 or 3");
    if (stage_channels.size() < 2)
        throw ConfigError("architecture: at least two encoder stages required");
    for (int c : stage_channels)
        if (c <= 0) throw ConfigError("architecture: non-positive stage channel count");
    if (bottleneck_channels <= 0)
        throw ConfigError("architecture: non-positive bottleneck_channels");
    if (embedding_dim <= 0) throw ConfigError("architecture: non-positive embedding_dim");
    const int n = num_stages();
    if (input_height % (1 << n) != 0 || input_width % (1 << n) != 0)
        throw ConfigError("architecture: input size must be divisible by 2^num_stages");
    if (dropblock_drop_prob < 0.0 || dropblock_drop_prob >= 1.0)
        throw ConfigError("architecture: dropblock_drop_prob must lie in [0,1)");
    if (dropblock_block_size <= 0)
        throw ConfigError("architecture: non-positive dropblock_block_size");
    if (dropblock_drop_prob > 0.0) {
        // The mask is drawn at each regularized stage's pre-pool resolution;
        // the deepest such stage has the smallest map.
        const int smallest = std::min(stage_height(n - 1), stage_width(n - 1));
        if (dropblock_block_size > smallest)
            throw ConfigError("architecture: dropblock_block_size exceeds deepest feature map");
    }
}

std::string ArchitectureConfig::to_json() const {
    nlohmann::json j;
    j["input_height"] = input_height;
    j["input_width"] = input_width;
    j["input_channels"] = input_channels;
    j["stage_channels"] = stage_channels;
    j["bottleneck_channels"] = bottleneck_channels;
    j["embedding_dim"] = embedding_dim;
    j["dropblock_block_size"] = dropblock_block_size;
    j["dropblock_drop_prob"] = dropblock_drop_prob;
    return j.dump();
}

ArchitectureConfig ArchitectureConfig::from_json(const std::string& text) {
    ArchitectureConfig a;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        a.input_height = j.at("input_height").get<int>();
        a.input_width = j.at("input_width").get<int>();
        a.input_channels = j.at("input_channels").get<int>();
        a.stage_channels = j.at("stage_channels").get<std::vector<int>>();
        a.bottleneck_channels = j.at("bottleneck_channels").get<int>();
        a.embedding_dim = j.at("embedding_dim").get<int>();
        a.dropblock_block_size = j.at("dropblock_block_size").get<int>();
        a.dropblock_drop_prob = j.at("dropblock_drop_prob").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("architecture json: ") + e.what());
    }
    a.validate();
    return a;
}

Tensor& NetworkParameters::add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor(std::move(shape)));
    return entries_.back().second;
}

Tensor& NetworkParameters::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
    return entries_[it->second].second;
}

const Tensor& NetworkParameters::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
    return entries_[it->second].second;
}

std::size_t NetworkParameters::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

bool NetworkParameters::all_finite() const {
    for (const auto& [name, t] : entries_)
        if (!t.all_finite()) return false;
    return true;
}

NetworkParameters NetworkParameters::zeros_like() const {
    NetworkParameters out;
    for (const auto& [name, t] : entries_) out.add(name, t.shape());
    return out;
}

namespace {

enum class InitKind { HeNormal, Zero, One };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    InitKind kind;
    int fan_in;
};

std::vector<ParamSpec> parameter_specs(const ArchitectureConfig& arch) {
    std::vector<ParamSpec> specs;
    const int n = arch.num_stages();
    for (int s = 0; s < n; ++s) {
        const std::string p = "enc" + std::to_string(s);
        const int in_c = arch.stage_in_channels(s);
        const int out_c = arch.stage_channels[static_cast<std::size_t>(s)];
        specs.push_back({p + ".conv.w", {out_c, in_c, 3, 3}, InitKind::HeNormal, in_c * 9});
        specs.push_back({p + ".conv.b", {out_c}, InitKind::Zero, 0});
        specs.push_back({p + ".norm.gamma", {out_c}, InitKind::One, 0});
        specs.push_back({p + ".norm.beta", {out_c}, InitKind::Zero, 0});
    }
    specs.push_back({"bottleneck.conv.w",
                     {arch.bottleneck_channels, arch.stage_channels.back(), 1, 1},
                     InitKind::HeNormal,
                     arch.stage_channels.back()});
    specs.push_back({"bottleneck.conv.b", {arch.bottleneck_channels}, InitKind::Zero, 0});
    for (int t = 0; t < n; ++t) {
        const std::string p = "dec" + std::to_string(t);
        const int in_c = arch.decoder_in_channels(t);
        const int out_c = arch.decoder_out_channels(t);
        specs.push_back({p + ".convt.w", {in_c, out_c, 4, 4}, InitKind::HeNormal, in_c * 16});
        specs.push_back({p + ".convt.b", {out_c}, InitKind::Zero, 0});
    }
    specs.push_back({"embed.fc.w",
                     {arch.embedding_dim, arch.bottleneck_channels},
                     InitKind::HeNormal,
                     arch.bottleneck_channels});
    specs.push_back({"embed.fc.b", {arch.embedding_dim}, InitKind::Zero, 0});
    return specs;
}

}  // namespace

NetworkParameters init_parameters(const ArchitectureConfig& arch, std::uint64_t seed) {
    arch.validate();
    NetworkParameters params;
    const auto specs = parameter_specs(arch);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        Tensor& t = params.add(specs[i].name, specs[i].shape);
        switch (specs[i].kind) {
            case InitKind::Zero:
                break;
            case InitKind::One:
                t.fill(1.0);
                break;
            case InitKind::HeNormal: {
                Rng rng(derive_seed(seed, Stream::ParamInit, i));
                const double std_dev = std::sqrt(2.0 / specs[i].fan_in);
                for (std::size_t k = 0; k < t.size(); ++k) t[k] = std_dev * rng.normal();
                break;
            }
        }
    }
    return params;
}

NetworkParameters zero_parameters(const ArchitectureConfig& arch) {
    arch.validate();
    NetworkParameters params;
    for (const auto& spec : parameter_specs(arch)) params.add(spec.name, spec.shape);
    return params;
}

std::size_t parameter_count(const ArchitectureConfig& arch) {
    std::size_t n = 0;
    for (const auto& spec : parameter_specs(arch)) n += shape_numel(spec.shape);
    return n;
}

DropMasks sample_drop_masks(const ArchitectureConfig& arch, std::uint64_t pass_seed) {
    DropMasks masks;
    masks.stage_masks.resize(static_cast<std::size_t>(arch.num_stages()));
    for (int s = 0; s < arch.num_stages(); ++s) {
        if (!arch.dropblock_applies(s)) continue;
        masks.stage_masks[static_cast<std::size_t>(s)] = sample_dropblock_mask(
            arch.stage_channels[static_cast<std::size_t>(s)], arch.stage_height(s),
            arch.stage_width(s), arch.dropblock_block_size, arch.dropblock_drop_prob,
            derive_seed(pass_seed, Stream::DropBlock, static_cast<std::uint64_t>(s)));
    }
    return masks;
}

namespace {

// Scratch tensors for intermediate activations/gradients that no backward
// pass needs to revisit; thread_local so concurrent eval passes stay safe.
thread_local Tensor tl_a;
thread_local Tensor tl_b;

void apply_multiplier(Tensor& t, const Tensor& mult) {
    if (!t.same_shape(mult))
        throw TrainError("dropblock mask shape " + mult.shape_string() + " does not match " +
                         t.shape_string());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= mult[i];
}

}  // namespace

void encode(const ArchitectureConfig& arch, const NetworkParameters& params, const Tensor& image,
            Mode mode, const DropMasks* drop_masks, EncodeCtx& ctx) {
    if (image.rank() != 3 || image.dim(0) != arch.input_channels ||
        image.dim(1) != arch.input_height || image.dim(2) != arch.input_width)
        throw TrainError("encoder input shape " + image.shape_string() + " does not match config");

    const bool dropping = mode == Mode::Train && arch.dropblock_drop_prob > 0.0;
    if (dropping && drop_masks == nullptr)
        throw TrainError("train-mode encode requires sampled dropblock masks");
    ctx.drop = dropping ? drop_masks : nullptr;

    const int n = arch.num_stages();
    ctx.input = image;
    ctx.stages.resize(static_cast<std::size_t>(n));
    const Tensor* cur = &ctx.input;
    for (int s = 0; s < n; ++s) {
        StageCtx& sc = ctx.stages[static_cast<std::size_t>(s)];
        const std::string p = "enc" + std::to_string(s);
        conv2d_forward(params.at(p + ".conv.w"), params.at(p + ".conv.b"), 1, 1, *cur, tl_a);
        instance_norm_forward(params.at(p + ".norm.gamma"), params.at(p + ".norm.beta"), tl_a,
                              sc.norm_out, sc.xhat, sc.inv_std);
        gelu_forward(sc.norm_out, tl_b);
        if (ctx.drop && arch.dropblock_applies(s))
            apply_multiplier(tl_b, ctx.drop->stage_masks[static_cast<std::size_t>(s)].multiplier);
        avgpool2_forward(tl_b, sc.pooled);
        cur = &sc.pooled;
    }
    conv2d_forward(params.at("bottleneck.conv.w"), params.at("bottleneck.conv.b"), 1, 0, *cur,
                   ctx.bottleneck_pre);
    gelu_forward(ctx.bottleneck_pre, ctx.z);
}

Tensor encode(const ArchitectureConfig& arch, const NetworkParameters& params, const Tensor& image,
              Mode mode, std::uint64_t pass_seed) {
    EncodeCtx ctx;
    if (mode == Mode::Train && arch.dropblock_drop_prob > 0.0) {
        const DropMasks masks = sample_drop_masks(arch, pass_seed);
        encode(arch, params, image, mode, &masks, ctx);
    } else {
        encode(arch, params, image, mode, nullptr, ctx);
    }
    return std::move(ctx.z);
}

void encode_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                     const EncodeCtx& ctx, const Tensor& dz, NetworkParameters& grads,
                     Tensor* d_image) {
    const int n = arch.num_stages();
    gelu_backward(ctx.bottleneck_pre, dz, tl_a);
    const Tensor& last_pooled = ctx.stages[static_cast<std::size_t>(n - 1)].pooled;
    conv2d_backward(params.at("bottleneck.conv.w"), last_pooled, 1, 0, tl_a,
                    &grads.at("bottleneck.conv.w"), &grads.at("bottleneck.conv.b"), &tl_b);
    // tl_b now holds the gradient at the deepest stage's pooled output.
    for (int s = n - 1; s >= 0; --s) {
        const StageCtx& sc = ctx.stages[static_cast<std::size_t>(s)];
        const std::string p = "enc" + std::to_string(s);
        avgpool2_backward(arch.stage_height(s), arch.stage_width(s), tl_b, tl_a);
        if (ctx.drop && arch.dropblock_applies(s))
            apply_multiplier(tl_a, ctx.drop->stage_masks[static_cast<std::size_t>(s)].multiplier);
        gelu_backward(sc.norm_out, tl_a, tl_b);
        instance_norm_backward(params.at(p + ".norm.gamma"), sc.xhat, sc.inv_std, tl_b,
                               &grads.at(p + ".norm.gamma"), &grads.at(p + ".norm.beta"), tl_a);
        const Tensor& stage_in =
            s == 0 ? ctx.input : ctx.stages[static_cast<std::size_t>(s) - 1].pooled;
        conv2d_backward(params.at(p + ".conv.w"), stage_in, 1, 1, tl_a,
                        &grads.at(p + ".conv.w"), &grads.at(p + ".conv.b"),
                        s > 0 ? &tl_b : d_image);
    }
}

const Tensor& decode(const ArchitectureConfig& arch, const NetworkParameters& params,
                     const Tensor& z, DecodeCtx& ctx) {
    if (z.rank() != 3 || z.dim(0) != arch.bottleneck_channels ||
        z.dim(1) != arch.latent_height() || z.dim(2) != arch.latent_width())
        throw TrainError("decoder input shape " + z.shape_string() + " does not match config");
    const int n = arch.num_stages();
    ctx.pre.resize(static_cast<std::size_t>(n));
    ctx.act.resize(static_cast<std::size_t>(n));
    const Tensor* cur = &z;
    for (int t = 0; t < n; ++t) {
        const std::string p = "dec" + std::to_string(t);
        convt2d_forward(params.at(p + ".convt.w"), params.at(p + ".convt.b"), 2, 1, *cur,
                        ctx.pre[static_cast<std::size_t>(t)]);
        if (t < n - 1)
            gelu_forward(ctx.pre[static_cast<std::size_t>(t)], ctx.act[static_cast<std::size_t>(t)]);
        else
            sigmoid_forward(ctx.pre[static_cast<std::size_t>(t)],
                            ctx.act[static_cast<std::size_t>(t)]);
        cur = &ctx.act[static_cast<std::size_t>(t)];
    }
    return ctx.act.back();
}

void decode_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                     const Tensor& z, const DecodeCtx& ctx, const Tensor& d_recon,
                     NetworkParameters& grads, Tensor& dz_accum) {
    const int n = arch.num_stages();
    sigmoid_backward(ctx.act[static_cast<std::size_t>(n - 1)], d_recon, tl_a);
    for (int t = n - 1; t >= 0; --t) {
        const std::string p = "dec" + std::to_string(t);
        const Tensor& stage_in = t == 0 ? z : ctx.act[static_cast<std::size_t>(t) - 1];
        convt2d_backward(params.at(p + ".convt.w"), stage_in, 2, 1, tl_a,
                         &grads.at(p + ".convt.w"), &grads.at(p + ".convt.b"), &tl_b);
        if (t > 0) {
            gelu_backward(ctx.pre[static_cast<std::size_t>(t) - 1], tl_b, tl_a);
        } else {
            for (std::size_t i = 0; i < dz_accum.size(); ++i) dz_accum[i] += tl_b[i];
        }
    }
}

Tensor embed(const ArchitectureConfig& arch, const NetworkParameters& params, const Tensor& z,
             EmbedCtx& ctx) {
    if (z.dim(0) != arch.bottleneck_channels)
        throw TrainError("embedding input has " + std::to_string(z.dim(0)) +
                         " channels, expected " + std::to_string(arch.bottleneck_channels));
    global_avgpool_forward(z, ctx.pooled);
    Tensor e;
    linear_forward(params.at("embed.fc.w"), params.at("embed.fc.b"), ctx.pooled, e);
    return e;
}

void embed_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                    const Tensor& z, const EmbedCtx& ctx, const Tensor& d_embedding,
                    NetworkParameters& grads, Tensor& dz_accum) {
    linear_backward(params.at("embed.fc.w"), ctx.pooled, d_embedding, &grads.at("embed.fc.w"),
                    &grads.at("embed.fc.b"), &tl_a);
    global_avgpool_backward(z.dim(1), z.dim(2), tl_a, tl_b);
    for (std::size_t i = 0; i < dz_accum.size(); ++i) dz_accum[i] += tl_b[i];
}

void forward_full(const ArchitectureConfig& arch, const NetworkParameters& params,
                  const Tensor& image, Mode mode, const DropMasks* drop_masks, ForwardCtx& ctx) {
    encode(arch, params, image, mode, drop_masks, ctx.enc);
    decode(arch, params, ctx.enc.z, ctx.dec);
    ctx.embedding = embed(arch, params, ctx.enc.z, ctx.emb);
}

std::pair<Tensor, Tensor> forward_full(const ArchitectureConfig& arch,
                                       const NetworkParameters& params, const Tensor& image,
                                       Mode mode, std::uint64_t pass_seed) {
    ForwardCtx ctx;
    if (mode == Mode::Train && arch.dropblock_drop_prob > 0.0) {
        const DropMasks masks = sample_drop_masks(arch, pass_seed);
        forward_full(arch, params, image, mode, &masks, ctx);
    } else {
        forward_full(arch, params, image, mode, nullptr, ctx);
    }
    return {std::move(ctx.embedding), ctx.dec.act.back()};
}

void forward_full_backward(const ArchitectureConfig& arch, const NetworkParameters& params,
                           const ForwardCtx& ctx, const Tensor* d_embedding,
                           const Tensor* d_recon, NetworkParameters& grads, Tensor* d_image) {
    Tensor dz(ctx.enc.z.shape());
    if (d_embedding) embed_backward(arch, params, ctx.enc.z, ctx.emb, *d_embedding, grads, dz);
    if (d_recon) decode_backward(arch, params, ctx.enc.z, ctx.dec, *d_recon, grads, dz);
    encode_backward(arch, params, ctx.enc, dz, grads, d_image);
}

}  // namespace rgfs
