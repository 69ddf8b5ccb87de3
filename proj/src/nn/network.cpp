#include "lodseg/nn/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "lodseg/errors.hpp"
#include "lodseg/rng.hpp"

namespace lodseg::nn {

using nlohmann::json;

void LODConfig::validate() const {
    if (levels < 1) throw ConfigError("LODConfig: levels must be >= 1");
    if (down_factor < 2 && levels > 1)
        throw ConfigError("LODConfig: down_factor must be >= 2 when levels > 1");
    if (input_side < 1) throw ConfigError("LODConfig: input_side must be >= 1");
    if (num_classes < 2) throw ConfigError("LODConfig: num_classes must be >= 2");
    if (convs_per_block < 1) throw ConfigError("LODConfig: convs_per_block must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("LODConfig: dropout_rate must be in [0,1)");
    if (norm_group_size < 1) throw ConfigError("LODConfig: norm_group_size must be >= 1");
    if (kernel_side % 2 != 1) throw ConfigError("LODConfig: kernel_side must be odd");
    if (static_cast<int>(channels_per_level.size()) != levels)
        throw ConfigError("LODConfig: channels_per_level must list " + std::to_string(levels) +
                          " levels, got " + std::to_string(channels_per_level.size()));
    int64_t side = input_side;
    for (int l = 1; l <= levels; ++l) {
        if (l > 1) {
            if (side % down_factor != 0)
                throw ConfigError("LODConfig: input_side " + std::to_string(input_side) +
                                  " not divisible by down_factor^" + std::to_string(l - 1));
            side /= down_factor;
        }
        const auto& widths = channels_per_level[static_cast<size_t>(l - 1)];
        if (widths.empty())
            throw ConfigError("LODConfig: level " + std::to_string(l) + " has no channel widths");
        int64_t s = side;
        for (size_t st = 0; st + 1 < widths.size(); ++st) {
            if (s % 2 != 0)
                throw ConfigError("LODConfig: level " + std::to_string(l) + " side " +
                                  std::to_string(s) + " not divisible by internal stride 2 at stage " +
                                  std::to_string(st));
            s /= 2;
            if (s < 1)
                throw ConfigError("LODConfig: level " + std::to_string(l) +
                                  " U-net too deep for its grid");
        }
        for (int w : widths) {
            if (w < 1) throw ConfigError("LODConfig: channel width must be >= 1");
            if (w % norm_group_size != 0)
                throw ConfigError("LODConfig: width " + std::to_string(w) +
                                  " not divisible by norm_group_size " +
                                  std::to_string(norm_group_size));
        }
    }
}

int64_t LODConfig::level_side(int level) const {
    if (level < 1 || level > levels)
        throw ConfigError("level index " + std::to_string(level) + " out of [1," +
                          std::to_string(levels) + "]");
    int64_t side = input_side;
    for (int l = 1; l < level; ++l) side /= down_factor;
    return side;
}

int LODConfig::stages(int level) const {
    return static_cast<int>(channels_per_level[static_cast<size_t>(level - 1)].size()) - 1;
}

json LODConfig::to_json() const {
    json j;
    j["levels"] = levels;
    j["down_factor"] = down_factor;
    j["input_side"] = input_side;
    j["num_classes"] = num_classes;
    j["channels_per_level"] = channels_per_level;
    j["convs_per_block"] = convs_per_block;
    j["dropout_rate"] = dropout_rate;
    j["norm_group_size"] = norm_group_size;
    j["kernel_side"] = kernel_side;
    return j;
}

LODConfig LODConfig::from_json(const json& j) {
    LODConfig c;
    c.levels = j.at("levels").get<int>();
    c.down_factor = j.at("down_factor").get<int>();
    c.input_side = j.at("input_side").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.channels_per_level = j.at("channels_per_level").get<std::vector<std::vector<int>>>();
    c.convs_per_block = j.value("convs_per_block", 2);
    c.dropout_rate = j.value("dropout_rate", 0.05);
    c.norm_group_size = j.value("norm_group_size", 4);
    c.kernel_side = j.value("kernel_side", 3);
    c.validate();
    return c;
}

LODConfig default_full_scale_config() {
    LODConfig c;
    c.levels = 2;
    c.down_factor = 4;
    c.input_side = 256;
    c.num_classes = 8;
    // Tuned to land the total trainable parameter count at 337,720, the
    // closest total to the target 337,719 that the group-norm width
    // constraint permits (widths divisible by 4 force a multiple-of-4 total).
    c.channels_per_level = {{16, 24, 36}, {8, 24, 36}};
    c.convs_per_block = 2;
    c.dropout_rate = 0.05;
    c.norm_group_size = 4;
    c.kernel_side = 3;
    c.validate();
    return c;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> LodNetwork::parameter_shapes(
    const LODConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    const int64_t k = cfg.kernel_side;
    auto block = [&](const std::string& prefix, int64_t cin, int64_t w) {
        for (int i = 0; i < cfg.convs_per_block; ++i) {
            const int64_t ci = i == 0 ? cin : w;
            out.emplace_back(prefix + "/conv" + std::to_string(i) + "/w",
                             std::vector<int64_t>{w, ci, k, k, k});
            out.emplace_back(prefix + "/conv" + std::to_string(i) + "/b",
                             std::vector<int64_t>{w});
            out.emplace_back(prefix + "/norm" + std::to_string(i) + "/gamma",
                             std::vector<int64_t>{w});
            out.emplace_back(prefix + "/norm" + std::to_string(i) + "/beta",
                             std::vector<int64_t>{w});
        }
    };
    for (int l = 1; l <= cfg.levels; ++l) {
        const std::string lp = "level" + std::to_string(l);
        const auto& widths = cfg.channels_per_level[static_cast<size_t>(l - 1)];
        const int S = cfg.stages(l);
        block(lp + "/stem", 1, widths[0]);
        if (l < cfg.levels) {
            const int64_t wc = cfg.channels_per_level[static_cast<size_t>(l)][0];
            const int64_t d = cfg.down_factor;
            // Transposed-conv weight kept in forward-conv convention:
            // (coarse channels, fine channels, d, d, d).
            out.emplace_back(lp + "/fuse/w", std::vector<int64_t>{wc, widths[0], d, d, d});
            out.emplace_back(lp + "/fuse/b", std::vector<int64_t>{widths[0]});
        }
        for (int s = 0; s < S; ++s) {
            const int64_t wi = widths[static_cast<size_t>(s)];
            const int64_t wo = widths[static_cast<size_t>(s + 1)];
            out.emplace_back(lp + "/down" + std::to_string(s) + "/w",
                             std::vector<int64_t>{wo, wi, 2, 2, 2});
            out.emplace_back(lp + "/down" + std::to_string(s) + "/b", std::vector<int64_t>{wo});
            block(lp + "/enc" + std::to_string(s), wo, wo);
        }
        for (int s = S - 1; s >= 0; --s) {
            const int64_t wi = widths[static_cast<size_t>(s + 1)];
            const int64_t wo = widths[static_cast<size_t>(s)];
            out.emplace_back(lp + "/up" + std::to_string(s) + "/w",
                             std::vector<int64_t>{wi, wo, 2, 2, 2});
            out.emplace_back(lp + "/up" + std::to_string(s) + "/b", std::vector<int64_t>{wo});
            block(lp + "/dec" + std::to_string(s), wo, wo);
        }
        out.emplace_back(lp + "/head/w",
                         std::vector<int64_t>{cfg.num_classes, widths[0], 1, 1, 1});
        out.emplace_back(lp + "/head/b", std::vector<int64_t>{cfg.num_classes});
    }
    return out;
}

int64_t LodNetwork::parameter_count(const LODConfig& cfg) {
    int64_t n = 0;
    for (const auto& [name, shape] : parameter_shapes(cfg)) n += Tensor::numel_of(shape);
    return n;
}

int LodNetwork::add_param(const std::string& name, int level, std::vector<int64_t> shape) {
    ParamTensor p;
    p.name = name;
    p.level = level;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size() - 1);
}

LodNetwork::LodNetwork(const LODConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    level_params_.resize(static_cast<size_t>(cfg_.levels));
    const int64_t k = cfg_.kernel_side;
    auto make_block = [&](const std::string& prefix, int level, int64_t cin, int64_t w) {
        BlockParams bp;
        for (int i = 0; i < cfg_.convs_per_block; ++i) {
            const int64_t ci = i == 0 ? cin : w;
            bp.conv_w.push_back(add_param(prefix + "/conv" + std::to_string(i) + "/w", level,
                                          {w, ci, k, k, k}));
            bp.conv_b.push_back(add_param(prefix + "/conv" + std::to_string(i) + "/b", level, {w}));
            bp.gn_g.push_back(
                add_param(prefix + "/norm" + std::to_string(i) + "/gamma", level, {w}));
            bp.gn_b.push_back(
                add_param(prefix + "/norm" + std::to_string(i) + "/beta", level, {w}));
        }
        return bp;
    };
    for (int l = 1; l <= cfg_.levels; ++l) {
        const std::string lp = "level" + std::to_string(l);
        LevelParams& L = level_params_[static_cast<size_t>(l - 1)];
        const auto& widths = cfg_.channels_per_level[static_cast<size_t>(l - 1)];
        const int S = cfg_.stages(l);
        L.stem = make_block(lp + "/stem", l, 1, widths[0]);
        if (l < cfg_.levels) {
            const int64_t wc = cfg_.channels_per_level[static_cast<size_t>(l)][0];
            const int64_t d = cfg_.down_factor;
            L.fuse_w = add_param(lp + "/fuse/w", l, {wc, widths[0], d, d, d});
            L.fuse_b = add_param(lp + "/fuse/b", l, {widths[0]});
        }
        for (int s = 0; s < S; ++s) {
            const int64_t wi = widths[static_cast<size_t>(s)];
            const int64_t wo = widths[static_cast<size_t>(s + 1)];
            L.down_w.push_back(add_param(lp + "/down" + std::to_string(s) + "/w", l, {wo, wi, 2, 2, 2}));
            L.down_b.push_back(add_param(lp + "/down" + std::to_string(s) + "/b", l, {wo}));
            L.enc.push_back(make_block(lp + "/enc" + std::to_string(s), l, wo, wo));
        }
        L.up_w.resize(static_cast<size_t>(S));
        L.up_b.resize(static_cast<size_t>(S));
        L.dec.resize(static_cast<size_t>(S));
        for (int s = S - 1; s >= 0; --s) {
            const int64_t wi = widths[static_cast<size_t>(s + 1)];
            const int64_t wo = widths[static_cast<size_t>(s)];
            L.up_w[static_cast<size_t>(s)] =
                add_param(lp + "/up" + std::to_string(s) + "/w", l, {wi, wo, 2, 2, 2});
            L.up_b[static_cast<size_t>(s)] =
                add_param(lp + "/up" + std::to_string(s) + "/b", l, {wo});
            L.dec[static_cast<size_t>(s)] = make_block(lp + "/dec" + std::to_string(s), l, wo, wo);
        }
        L.head_w = add_param(lp + "/head/w", l, {cfg_.num_classes, widths[0], 1, 1, 1});
        L.head_b = add_param(lp + "/head/b", l, {cfg_.num_classes});
    }
    init_params(init_seed);
}

void LodNetwork::init_params(uint64_t seed) {
    for (size_t i = 0; i < params_.size(); ++i) {
        ParamTensor& p = params_[i];
        Rng rng(Rng::derive_seed(seed, i));
        const bool is_weight = p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, "/w") == 0;
        const bool is_head = p.name.find("/head/") != std::string::npos;
        const bool is_gamma = p.name.find("/gamma") != std::string::npos;
        if (is_head) {
            p.value.fill(0.0f);  // zero head => uniform 1/C before training
        } else if (is_weight) {
            // Variance-scaling fan-in. For transposed-conv weights with
            // kernel == stride each output voxel sees exactly cin inputs.
            const bool transposed =
                p.name.find("/up") != std::string::npos || p.name.find("/fuse/") != std::string::npos;
            double fan_in;
            if (transposed) {
                fan_in = static_cast<double>(p.value.shape()[0]);
            } else {
                const auto& s = p.value.shape();
                fan_in = static_cast<double>(s[1] * s[2] * s[3] * s[4]);
            }
            const double std = std::sqrt(2.0 / fan_in);
            for (int64_t j = 0; j < p.value.numel(); ++j)
                p.value[j] = static_cast<float>(rng.normal(0.0, std));
        } else if (is_gamma) {
            p.value.fill(1.0f);
        } else {
            p.value.fill(0.0f);  // biases and GN betas
        }
    }
}

ParamTensor* LodNetwork::find_param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

void LodNetwork::freeze_level(int level) {
    if (level < 1 || level > cfg_.levels)
        throw ConfigError("freeze_level: invalid level " + std::to_string(level));
    frozen_.insert(level);
}

void LodNetwork::unfreeze_level(int level) { frozen_.erase(level); }

void LodNetwork::zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0f);
}

Tensor LodNetwork::block_forward(const BlockParams& bp, const Tensor& x, bool training,
                                 uint64_t seed, BlockCache* cache) {
    const int pad = cfg_.kernel_side / 2;
    Tensor cur = x;
    if (cache) {
        cache->conv_in.clear();
        cache->gn.clear();
        cache->act.clear();
        cache->has_mask = false;
    }
    for (size_t i = 0; i < bp.conv_w.size(); ++i) {
        if (cache) cache->conv_in.push_back(cur);
        cur = conv3d(cur, params_[static_cast<size_t>(bp.conv_w[i])].value,
                     params_[static_cast<size_t>(bp.conv_b[i])].value, 1, pad);
        GroupNormCache gn;
        cur = group_norm(cur, params_[static_cast<size_t>(bp.gn_g[i])].value,
                         params_[static_cast<size_t>(bp.gn_b[i])].value, cfg_.norm_group_size,
                         1e-5, cache ? &gn : nullptr);
        if (cache) cache->gn.push_back(std::move(gn));
        relu_inplace(cur);
        if (cache) cache->act.push_back(cur);
    }
    if (training && cfg_.dropout_rate > 0.0) {
        Tensor mask = dropout_mask(cur.shape(), cfg_.dropout_rate, seed);
        for (int64_t j = 0; j < cur.numel(); ++j) cur[j] *= mask[j];
        if (cache) {
            cache->mask = std::move(mask);
            cache->has_mask = true;
        }
    }
    return cur;
}

Tensor LodNetwork::block_backward(const BlockParams& bp, const Tensor& dy,
                                  const BlockCache& cache) {
    const int pad = cfg_.kernel_side / 2;
    Tensor g = dy;
    if (cache.has_mask)
        for (int64_t j = 0; j < g.numel(); ++j) g[j] *= cache.mask[j];
    for (int i = static_cast<int>(bp.conv_w.size()) - 1; i >= 0; --i) {
        const size_t ui = static_cast<size_t>(i);
        relu_backward_inplace(g, cache.act[ui]);
        g = group_norm_backward(g, params_[static_cast<size_t>(bp.gn_g[ui])].value,
                                cfg_.norm_group_size, cache.gn[ui],
                                params_[static_cast<size_t>(bp.gn_g[ui])].grad,
                                params_[static_cast<size_t>(bp.gn_b[ui])].grad);
        conv3d_backward_weights(cache.conv_in[ui], g, 1, pad,
                                params_[static_cast<size_t>(bp.conv_w[ui])].grad,
                                params_[static_cast<size_t>(bp.conv_b[ui])].grad);
        const auto& xs = cache.conv_in[ui].shape();
        g = conv3d_backward_data(g, params_[static_cast<size_t>(bp.conv_w[ui])].value, 1, pad,
                                 {xs[1], xs[2], xs[3]});
    }
    return g;
}

LodNetwork::LevelResult LodNetwork::run_level(int level, const Tensor& level_input,
                                              const Tensor* coarse_features, bool training,
                                              uint64_t dropout_seed, LevelCache* cache) {
    const LevelParams& L = level_params_[static_cast<size_t>(level - 1)];
    const int S = cfg_.stages(level);
    uint64_t seq = 0;
    auto next_seed = [&] { return Rng::derive_seed(dropout_seed, seq++); };

    Tensor x = block_forward(L.stem, level_input, training, next_seed(),
                             cache ? &cache->stem : nullptr);
    if (L.fuse_w >= 0) {
        if (!coarse_features) throw ContractError("run_level: missing coarse features");
        const int d = cfg_.down_factor;
        const auto& cs = coarse_features->shape();
        Tensor u = conv3d_backward_data(*coarse_features, params_[static_cast<size_t>(L.fuse_w)].value,
                                        d, 0, {cs[1] * d, cs[2] * d, cs[3] * d});
        const Tensor& fb = params_[static_cast<size_t>(L.fuse_b)].value;
        const int64_t vox = u.dim(1) * u.dim(2) * u.dim(3);
        for (int64_t c = 0; c < u.dim(0); ++c) {
            float* p = u.data() + c * vox;
            for (int64_t j = 0; j < vox; ++j) p[j] += fb[c];
        }
        relu_inplace(u);
        if (cache) {
            cache->fuse_in = *coarse_features;
            cache->fuse_act = u;
        }
        for (int64_t j = 0; j < x.numel(); ++j) x[j] += u[j];
    }
    if (cache) cache->fused = x;

    std::vector<Tensor> skip(static_cast<size_t>(S));
    if (S > 0) skip[0] = x;
    if (cache) {
        cache->down_act.resize(static_cast<size_t>(S));
        cache->enc.resize(static_cast<size_t>(S));
        cache->up_in.resize(static_cast<size_t>(S));
        cache->up_act.resize(static_cast<size_t>(S));
        cache->skip.resize(static_cast<size_t>(S));
        cache->dec.resize(static_cast<size_t>(S));
        if (S > 0) cache->skip[0] = x;
    }
    for (int s = 0; s < S; ++s) {
        const size_t us = static_cast<size_t>(s);
        x = conv3d(x, params_[static_cast<size_t>(L.down_w[us])].value,
                   params_[static_cast<size_t>(L.down_b[us])].value, 2, 0);
        relu_inplace(x);
        if (cache) cache->down_act[us] = x;
        x = block_forward(L.enc[us], x, training, next_seed(), cache ? &cache->enc[us] : nullptr);
        if (s + 1 < S) {
            skip[us + 1] = x;
            if (cache) cache->skip[us + 1] = x;
        }
    }
    for (int s = S - 1; s >= 0; --s) {
        const size_t us = static_cast<size_t>(s);
        if (cache) cache->up_in[us] = x;
        const auto& xs = x.shape();
        Tensor u = conv3d_backward_data(x, params_[static_cast<size_t>(L.up_w[us])].value, 2, 0,
                                        {xs[1] * 2, xs[2] * 2, xs[3] * 2});
        const Tensor& ub = params_[static_cast<size_t>(L.up_b[us])].value;
        const int64_t vox = u.dim(1) * u.dim(2) * u.dim(3);
        for (int64_t c = 0; c < u.dim(0); ++c) {
            float* p = u.data() + c * vox;
            for (int64_t j = 0; j < vox; ++j) p[j] += ub[c];
        }
        relu_inplace(u);
        if (cache) cache->up_act[us] = u;
        for (int64_t j = 0; j < u.numel(); ++j) u[j] += skip[us][j];
        x = block_forward(L.dec[us], u, training, next_seed(), cache ? &cache->dec[us] : nullptr);
    }

    LevelResult res;
    res.features = x;
    if (cache) cache->head_in = x;
    Tensor logits = conv3d(x, params_[static_cast<size_t>(L.head_w)].value,
                           params_[static_cast<size_t>(L.head_b)].value, 1, 0);
    res.probs = softmax_channels(logits);
    if (cache) cache->probs = res.probs;
    return res;
}

LodNetwork::LevelResult LodNetwork::run_to_level(const Tensor& input, int target, bool training,
                                                 uint64_t dropout_seed, LevelCache* cache) {
    if (target < 1 || target > cfg_.levels)
        throw ConfigError("level index " + std::to_string(target) + " out of [1," +
                          std::to_string(cfg_.levels) + "]");
    if (input.ndim() != 4 || input.dim(0) != 1 || input.dim(1) != cfg_.input_side ||
        input.dim(2) != cfg_.input_side || input.dim(3) != cfg_.input_side)
        throw ShapeError("network input must be (1," + std::to_string(cfg_.input_side) + "^3), got " +
                         input.shape_str());
    LevelResult res;
    for (int l = cfg_.levels; l >= target; --l) {
        int64_t factor = 1;
        for (int i = 1; i < l; ++i) factor *= cfg_.down_factor;
        Tensor level_input = mean_pool(input, static_cast<int>(factor));
        const bool is_target = l == target;
        res = run_level(l, level_input, l == cfg_.levels ? nullptr : &res.features,
                        is_target && training, dropout_seed, is_target ? cache : nullptr);
    }
    return res;
}

Tensor LodNetwork::forward(const Tensor& input) {
    return run_to_level(input, 1, false, 0, nullptr).probs;
}

Tensor LodNetwork::level_output(const Tensor& input, int level) {
    return run_to_level(input, level, false, 0, nullptr).probs;
}

Tensor LodNetwork::train_forward(const Tensor& input, int level, uint64_t dropout_seed) {
    train_cache_ = LevelCache{};
    train_level_ = level;
    return run_to_level(input, level, true, dropout_seed, &train_cache_).probs;
}

void LodNetwork::backward(const Tensor& dprobs) {
    if (train_level_ < 1) throw ContractError("backward() without a prior train_forward()");
    const LevelParams& L = level_params_[static_cast<size_t>(train_level_ - 1)];
    LevelCache& C = train_cache_;
    const int S = cfg_.stages(train_level_);

    Tensor g = softmax_backward(dprobs, C.probs);
    conv3d_backward_weights(C.head_in, g, 1, 0, params_[static_cast<size_t>(L.head_w)].grad,
                            params_[static_cast<size_t>(L.head_b)].grad);
    const auto& hs = C.head_in.shape();
    g = conv3d_backward_data(g, params_[static_cast<size_t>(L.head_w)].value, 1, 0,
                             {hs[1], hs[2], hs[3]});

    // Decoder backward (forward ran s = S-1 .. 0, so reverse is 0 .. S-1).
    std::vector<Tensor> dskip(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) {
        const size_t us = static_cast<size_t>(s);
        g = block_backward(L.dec[us], g, C.dec[us]);
        dskip[us] = g;  // grad flows into the skip branch unchanged
        Tensor gu = g;
        relu_backward_inplace(gu, C.up_act[us]);
        // bias grad of the transposed conv
        {
            Tensor& db = params_[static_cast<size_t>(L.up_b[us])].grad;
            const int64_t vox = gu.dim(1) * gu.dim(2) * gu.dim(3);
            for (int64_t c = 0; c < gu.dim(0); ++c) {
                double acc = 0.0;
                const float* p = gu.data() + c * vox;
                for (int64_t j = 0; j < vox; ++j) acc += p[j];
                db[c] += static_cast<float>(acc);
            }
        }
        Tensor& dw = params_[static_cast<size_t>(L.up_w[us])].grad;
        Tensor db_unused({dw.dim(0)}, 0.0f);
        // transposed conv: roles of x and dy swap relative to a conv
        conv3d_backward_weights(gu, C.up_in[us], 2, 0, dw, db_unused);
        g = conv3d(gu, params_[static_cast<size_t>(L.up_w[us])].value,
                   Tensor({params_[static_cast<size_t>(L.up_w[us])].value.dim(0)}, 0.0f), 2, 0);
    }

    // Encoder backward.
    for (int s = S - 1; s >= 0; --s) {
        const size_t us = static_cast<size_t>(s);
        g = block_backward(L.enc[us], g, C.enc[us]);
        relu_backward_inplace(g, C.down_act[us]);
        const Tensor& xin = C.skip[us];  // skip[0] holds the fused stem output
        conv3d_backward_weights(xin, g, 2, 0,
                                params_[static_cast<size_t>(L.down_w[us])].grad,
                                params_[static_cast<size_t>(L.down_b[us])].grad);
        const auto& xs = xin.shape();
        g = conv3d_backward_data(g, params_[static_cast<size_t>(L.down_w[us])].value, 2, 0,
                                 {xs[1], xs[2], xs[3]});
        for (int64_t j = 0; j < g.numel(); ++j) g[j] += dskip[us][j];
    }

    // Inter-level fusion backward: weights only, the coarse features come
    // from a frozen level and receive no gradient.
    if (L.fuse_w >= 0) {
        Tensor gf = g;
        relu_backward_inplace(gf, C.fuse_act);
        {
            Tensor& db = params_[static_cast<size_t>(L.fuse_b)].grad;
            const int64_t vox = gf.dim(1) * gf.dim(2) * gf.dim(3);
            for (int64_t c = 0; c < gf.dim(0); ++c) {
                double acc = 0.0;
                const float* p = gf.data() + c * vox;
                for (int64_t j = 0; j < vox; ++j) acc += p[j];
                db[c] += static_cast<float>(acc);
            }
        }
        Tensor& dwf = params_[static_cast<size_t>(L.fuse_w)].grad;
        Tensor db_unused({dwf.dim(0)}, 0.0f);
        conv3d_backward_weights(gf, C.fuse_in, cfg_.down_factor, 0, dwf, db_unused);
    }
    block_backward(L.stem, g, C.stem);
    train_level_ = -1;
}

// ---- checkpoint container ------------------------------------------------

namespace {
constexpr char kMagic[8] = {'L', 'O', 'D', 'S', 'E', 'G', '0', '1'};
}

void LodNetwork::save_checkpoint(const std::string& path, const json& extra) const {
    json meta;
    meta["config"] = cfg_.to_json();
    meta["frozen_levels"] = std::vector<int>(frozen_.begin(), frozen_.end());
    json tensors = json::array();
    for (const auto& p : params_)
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    meta["tensors"] = tensors;
    meta["extra"] = extra;
    const std::string meta_str = meta.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "' for writing");
    f.write(kMagic, sizeof(kMagic));
    uint64_t len = meta_str.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(meta_str.data(), static_cast<std::streamsize>(len));
    for (const auto& p : params_)
        f.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.numel() * sizeof(float)));
    if (!f) throw IoError("write error on checkpoint '" + path + "'");
}

namespace {

json read_checkpoint_meta(std::ifstream& f, const std::string& path) {
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("'" + path + "': not a lodseg checkpoint (bad magic)");
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f || len > (1ull << 30)) throw FormatError("'" + path + "': corrupt metadata length");
    std::string meta_str(len, '\0');
    f.read(meta_str.data(), static_cast<std::streamsize>(len));
    if (!f) throw FormatError("'" + path + "': truncated metadata");
    return json::parse(meta_str);
}

}  // namespace

LodNetwork LodNetwork::load_checkpoint(const std::string& path, json* extra) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    json meta = read_checkpoint_meta(f, path);
    LodNetwork net(LODConfig::from_json(meta.at("config")), 0);
    size_t idx = 0;
    for (const auto& t : meta.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        if (idx >= net.params_.size() || net.params_[idx].name != name)
            throw FormatError("'" + path + "': tensor order mismatch at '" + name + "'");
        ParamTensor& p = net.params_[idx++];
        f.read(reinterpret_cast<char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.numel() * sizeof(float)));
        if (!f) throw FormatError("'" + path + "': truncated tensor data at '" + name + "'");
    }
    for (int l : meta.at("frozen_levels").get<std::vector<int>>()) net.frozen_.insert(l);
    if (extra) *extra = meta.at("extra");
    return net;
}

void LodNetwork::load_matching_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    json meta = read_checkpoint_meta(f, path);
    for (const auto& t : meta.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        auto shape = t.at("shape").get<std::vector<int64_t>>();
        const int64_t n = Tensor::numel_of(shape);
        ParamTensor* p = find_param(name);
        if (p && p->value.shape() == shape) {
            f.read(reinterpret_cast<char*>(p->value.data()),
                   static_cast<std::streamsize>(n * sizeof(float)));
        } else {
            f.seekg(static_cast<std::streamoff>(n * sizeof(float)), std::ios::cur);
        }
        if (!f) throw FormatError("'" + path + "': truncated tensor data at '" + name + "'");
    }
}

}  // namespace lodseg::nn
