#pragma once

#include <memory>
#include <vector>

#include "misr/encoder.hpp"

namespace misr {

// One fusion block: per-image message-token attention followed by joint
// attention over all images' tokens.
template <typename T>
struct MisabParams {
    Tensor<T> msg_w, msg_b;  // patch tokens -> message tokens
    LnLayer<T> msg_ln;
    AttnLayer<T> msg_attn;
    LnLayer<T> misa_ln1, misa_ln2;
    AttnLayer<T> misa_attn;
    MlpLayer<T> misa_mlp;
};

template <typename T>
struct FusionParams {
    std::vector<MisabParams<T>> blocks;

    static FusionParams build(ParamStore<T>& store, const ModelConfig& cfg, const Rng& init) {
        FusionParams p;
        if (cfg.fusion_block == FusionBlock::mean_pool) return p;
        const bool with_msg = cfg.fusion_block == FusionBlock::misab;
        const int frame_slots = cfg.bias_mode == BiasMode::full_sequence ? cfg.k : 0;
        for (int b = 0; b < cfg.n_misab; ++b) {
            const std::string prefix = "mist.b" + std::to_string(b);
            MisabParams<T> blk;
            if (with_msg) {
                blk.msg_w = store.create(
                    prefix + ".msg.w",
                    Shape{static_cast<std::size_t>(cfg.patch_n) * static_cast<std::size_t>(cfg.c),
                          static_cast<std::size_t>(cfg.c)},
                    Init::xavier, init);
                blk.msg_b = store.create(prefix + ".msg.b", Shape{static_cast<std::size_t>(cfg.c)},
                                         Init::zeros, init);
                blk.msg_ln = modeldetail::make_ln(store, prefix + ".msg.ln", cfg.c, init);
                blk.msg_attn = modeldetail::make_attn(store, prefix + ".msg.attn", cfg.c,
                                                      cfg.misa_heads, cfg.input_h, cfg.input_w,
                                                      cfg.qkv_bias, false, 0, init);
            }
            blk.misa_ln1 = modeldetail::make_ln(store, prefix + ".misa.ln1", cfg.c, init);
            blk.misa_attn = modeldetail::make_attn(store, prefix + ".misa.attn", cfg.c,
                                                   cfg.misa_heads, cfg.input_h, cfg.input_w,
                                                   cfg.qkv_bias, with_msg, frame_slots, init);
            blk.misa_ln2 = modeldetail::make_ln(store, prefix + ".misa.ln2", cfg.c, init);
            blk.misa_mlp = modeldetail::make_mlp(store, prefix + ".misa.mlp", cfg.c,
                                                 cfg.c * cfg.mlp_ratio, init);
            p.blocks.push_back(std::move(blk));
        }
        return p;
    }
};

namespace fusiondetail {

// Anchor position of each patch: the first pixel of the contiguous row-major
// pixel group.
inline void patch_anchor(std::size_t patch, std::size_t n, std::size_t w, std::int32_t& y,
                         std::int32_t& x) {
    const std::size_t first = patch * n;
    y = static_cast<std::int32_t>(first / w);
    x = static_cast<std::int32_t>(first % w);
}

// Metadata for one image's N message tokens.
inline std::shared_ptr<TokenMeta> message_meta(std::size_t h, std::size_t w, std::size_t n,
                                               const ModelConfig& cfg) {
    auto meta = std::make_shared<TokenMeta>();
    meta->table_h = cfg.input_h;
    meta->table_w = cfg.input_w;
    meta->slots = 1;
    const std::size_t count = h * w / n;
    meta->y.resize(count);
    meta->x.resize(count);
    meta->slot.assign(count, 0);
    meta->type.assign(count, 1);
    for (std::size_t p = 0; p < count; ++p) patch_anchor(p, n, w, meta->y[p], meta->x[p]);
    return meta;
}

// Metadata for the joint MISA sequence: per frame, H*W image tokens followed
// by N message tokens. Slot stride is cfg.k so a model built for K slots can
// run any stack with K' <= K frames.
inline std::shared_ptr<TokenMeta> misa_meta(std::size_t k, std::size_t h, std::size_t w,
                                            std::size_t n_msg, std::size_t patch_n,
                                            const ModelConfig& cfg) {
    auto meta = std::make_shared<TokenMeta>();
    meta->table_h = cfg.input_h;
    meta->table_w = cfg.input_w;
    meta->slots = cfg.bias_mode == BiasMode::full_sequence ? cfg.k : static_cast<int>(k);
    const std::size_t per_frame = h * w + n_msg;
    meta->y.resize(k * per_frame);
    meta->x.resize(k * per_frame);
    meta->slot.resize(k * per_frame);
    meta->type.resize(k * per_frame);
    std::size_t idx = 0;
    for (std::size_t f = 0; f < k; ++f) {
        for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t xx = 0; xx < w; ++xx) {
                meta->y[idx] = static_cast<std::int32_t>(yy);
                meta->x[idx] = static_cast<std::int32_t>(xx);
                meta->slot[idx] = static_cast<std::int32_t>(f);
                meta->type[idx] = 0;
                ++idx;
            }
        for (std::size_t p = 0; p < n_msg; ++p) {
            patch_anchor(p, patch_n, w, meta->y[idx], meta->x[idx]);
            meta->slot[idx] = static_cast<std::int32_t>(f);
            meta->type[idx] = 1;
            ++idx;
        }
    }
    return meta;
}

}  // namespace fusiondetail

// Message tokens of one image: linear projection of the N = H*W/n patch
// tokens. n pixels per patch, contiguous row-major groups.
template <typename T>
Tensor<T> make_message_tokens(const Tensor<T>& f_e, int n, const Tensor<T>& msg_w,
                              const Tensor<T>& msg_b) {
    require_dims(f_e.rank() == 3, "make_message_tokens: [C,H,W] input required");
    const std::size_t hw = f_e.dim(1) * f_e.dim(2);
    require_dims(n >= 1 && hw % static_cast<std::size_t>(n) == 0,
                 "make_message_tokens: patch size " + std::to_string(n) +
                     " does not divide pixel count " + std::to_string(hw));
    Tensor<T> patches = patch_group(chw_to_tokens(f_e), static_cast<std::size_t>(n));
    return linear(patches, msg_w, msg_b);
}

// Per-image stage: no cross-frame mixing here.
template <typename T>
Tensor<T> per_image_message_attention(const Tensor<T>& m, const MisabParams<T>& blk,
                                      std::shared_ptr<TokenMeta> meta) {
    return add(m, blk.msg_attn.forward(blk.msg_ln.forward(m), std::move(meta)));
}

// One MISAB pass over the K per-image token matrices [H*W, C]; returns the
// updated image tokens (message tokens are recomputed every block and
// stripped on output).
template <typename T>
std::vector<Tensor<T>> misab_forward(const std::vector<Tensor<T>>& img_tokens,
                                     const MisabParams<T>& blk, const ModelConfig& cfg,
                                     std::size_t h, std::size_t w) {
    const std::size_t k = img_tokens.size();
    require(k >= 1, "misab_forward: empty image stack");
    const std::size_t hw = h * w;
    for (const auto& t : img_tokens)
        require_dims(t.rank() == 2 && t.dim(0) == hw && t.dim(1) == img_tokens[0].dim(1),
                     "misab_forward: inconsistent token shapes across images");
    const std::size_t n_msg = hw / static_cast<std::size_t>(cfg.patch_n);

    auto msg_meta = fusiondetail::message_meta(h, w, static_cast<std::size_t>(cfg.patch_n), cfg);
    std::vector<Tensor<T>> fused;
    fused.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        Tensor<T> map = tokens_to_chw(img_tokens[i], h, w);
        Tensor<T> m = make_message_tokens(map, cfg.patch_n, blk.msg_w, blk.msg_b);
        Tensor<T> m_attn = per_image_message_attention(m, blk, msg_meta);
        fused.push_back(concat_rows<T>({img_tokens[i], m_attn}));  // [F_E^i, M_I^i]
    }
    Tensor<T> all = concat_rows(fused);
    auto meta = fusiondetail::misa_meta(k, h, w, n_msg, static_cast<std::size_t>(cfg.patch_n), cfg);
    if (cfg.bias_mode == BiasMode::full_sequence)
        require(static_cast<int>(k) <= cfg.k,
                "misab_forward: stack has more frames than the configured K slots");
    Tensor<T> y = add(all, blk.misa_attn.forward(blk.misa_ln1.forward(all), meta));
    Tensor<T> out = add(y, blk.misa_mlp.forward(blk.misa_ln2.forward(y)));

    std::vector<Tensor<T>> result;
    result.reserve(k);
    const std::size_t per_frame = hw + n_msg;
    for (std::size_t i = 0; i < k; ++i)
        result.push_back(slice_rows(out, i * per_frame, i * per_frame + hw));
    return result;
}

// A plain joint transformer block over image tokens only (the
// "self-attention" fusion ablation).
template <typename T>
std::vector<Tensor<T>> joint_attention_forward(const std::vector<Tensor<T>>& img_tokens,
                                               const MisabParams<T>& blk, const ModelConfig& cfg,
                                               std::size_t h, std::size_t w) {
    const std::size_t k = img_tokens.size();
    const std::size_t hw = h * w;
    Tensor<T> all = concat_rows(img_tokens);
    auto meta = fusiondetail::misa_meta(k, h, w, 0, 1, cfg);
    Tensor<T> y = add(all, blk.misa_attn.forward(blk.misa_ln1.forward(all), meta));
    Tensor<T> out = add(y, blk.misa_mlp.forward(blk.misa_ln2.forward(y)));
    std::vector<Tensor<T>> result;
    result.reserve(k);
    for (std::size_t i = 0; i < k; ++i) result.push_back(slice_rows(out, i * hw, (i + 1) * hw));
    return result;
}

// Runs the configured fusion over per-frame encoder features and averages the
// K per-image maps into F_SE.
template <typename T>
Tensor<T> mist_fuse(const std::vector<Tensor<T>>& f_e, FusionParams<T>& params,
                    const ModelConfig& cfg) {
    require(!f_e.empty(), "mist_fuse: empty feature stack");
    const std::size_t h = f_e[0].dim(1), w = f_e[0].dim(2);
    if (cfg.fusion_block == FusionBlock::mean_pool) return mean_stack(f_e);

    std::vector<Tensor<T>> tokens;
    tokens.reserve(f_e.size());
    for (const auto& f : f_e) tokens.push_back(chw_to_tokens(f));
    for (auto& blk : params.blocks) {
        if (cfg.fusion_block == FusionBlock::misab) {
            tokens = misab_forward(tokens, blk, cfg, h, w);
        } else {
            tokens = joint_attention_forward(tokens, blk, cfg, h, w);
        }
    }
    return tokens_to_chw(mean_stack(tokens), h, w);
}

}  // namespace misr
