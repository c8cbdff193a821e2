#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include "misr/attention.hpp"
#include "misr/config.hpp"
#include "misr/conv.hpp"
#include "misr/norm.hpp"
#include "misr/ops.hpp"
#include "misr/params.hpp"

namespace misr {

// A scene's frames brought to exactly K entries, with clarity scores and
// flags marking replicated padding frames.
template <typename T>
struct FrameStack {
    Tensor<T> frames;  // [K, C_in, H, W]
    std::vector<T> clearance;
    std::vector<std::uint8_t> pad_flags;
    std::vector<std::vector<std::uint8_t>> masks;  // per-frame quality masks (may be empty)

    std::size_t k() const { return frames.dim(0); }
    std::size_t height() const { return frames.dim(2); }
    std::size_t width() const { return frames.dim(3); }
};

// Fixes the frame count at K. With too many frames the K clearest are kept
// (original relative order preserved, ties to the lower index); with too few,
// copies of the single clearest frame are appended and flagged.
template <typename T>
FrameStack<T> pad_scene(const Tensor<T>& frames, const std::vector<T>& clearance, int k,
                        const std::vector<std::vector<std::uint8_t>>& masks = {}) {
    require_dims(frames.rank() == 4, "pad_scene: frames must be [N,C,H,W]");
    const std::size_t n = frames.dim(0);
    require(n >= 1, "pad_scene: empty frame list");
    require(k >= 1, "pad_scene: K must be >= 1");
    require(clearance.size() == n, "pad_scene: clearance length != frame count");
    require(masks.empty() || masks.size() == n, "pad_scene: mask count != frame count");
    const std::size_t frame_len = frames.size() / n;
    const std::size_t kk = static_cast<std::size_t>(k);

    std::vector<std::size_t> chosen;
    std::size_t n_pad = 0;
    if (n >= kk) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return clearance[a] > clearance[b];  // stable: ties keep the lower index
        });
        order.resize(kk);
        std::sort(order.begin(), order.end());
        chosen = std::move(order);
    } else {
        chosen.resize(n);
        std::iota(chosen.begin(), chosen.end(), 0);
        // Max(LR_clr^1..N): pad with the clearest frame, lowest index on ties
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (clearance[i] > clearance[best]) best = i;
        n_pad = kk - n;
        for (std::size_t i = 0; i < n_pad; ++i) chosen.push_back(best);
    }

    FrameStack<T> out;
    Shape shape = frames.shape();
    shape[0] = kk;
    out.frames = Tensor<T>(shape);
    out.clearance.resize(kk);
    out.pad_flags.assign(kk, 0);
    if (!masks.empty()) out.masks.resize(kk);
    for (std::size_t i = 0; i < kk; ++i) {
        const std::size_t src = chosen[i];
        std::copy(frames.data() + src * frame_len, frames.data() + (src + 1) * frame_len,
                  out.frames.data() + i * frame_len);
        out.clearance[i] = clearance[src];
        if (i >= kk - n_pad) out.pad_flags[i] = 1;
        if (!masks.empty()) out.masks[i] = masks[src];
    }
    return out;
}

template <typename T>
struct ConvBnLayer {
    Tensor<T> w;  // bias-free: batch norm follows
    Tensor<T> gamma, beta;
    BnStats<T> stats;
};

template <typename T>
struct AttnLayer {
    Tensor<T> wq, wk, wv, wo;
    std::optional<Tensor<T>> bq, bk, bv, bo;
    Tensor<T> rel;  // [heads, (2h-1)*(2w-1)]
    std::optional<Tensor<T>> type_pair;
    std::optional<Tensor<T>> frame_pair;
    int heads = 1;

    Tensor<T> forward(const Tensor<T>& x, std::shared_ptr<TokenMeta> meta) const {
        AttnBias<T> bias;
        bias.rel = rel;
        bias.type_pair = type_pair;
        bias.frame_pair = frame_pair;
        bias.meta = std::move(meta);
        return mhsa(x, wq, wk, wv, wo, bq, bk, bv, bo, heads, bias);
    }
};

template <typename T>
struct MlpLayer {
    Tensor<T> w1, b1, w2, b2;

    Tensor<T> forward(const Tensor<T>& x) const { return mlp(x, w1, b1, w2, b2); }
};

template <typename T>
struct LnLayer {
    Tensor<T> gamma, beta;

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

namespace modeldetail {

template <typename T>
AttnLayer<T> make_attn(ParamStore<T>& store, const std::string& prefix, int width, int heads,
                       int table_h, int table_w, bool qkv_bias, bool with_type, int frame_slots,
                       const Rng& init) {
    AttnLayer<T> a;
    a.heads = heads;
    const Shape wshape{static_cast<std::size_t>(width), static_cast<std::size_t>(width)};
    a.wq = store.create(prefix + ".wq", wshape, Init::xavier, init);
    a.wk = store.create(prefix + ".wk", wshape, Init::xavier, init);
    a.wv = store.create(prefix + ".wv", wshape, Init::xavier, init);
    a.wo = store.create(prefix + ".wo", wshape, Init::xavier, init);
    if (qkv_bias) {
        const Shape bshape{static_cast<std::size_t>(width)};
        a.bq = store.create(prefix + ".bq", bshape, Init::zeros, init);
        a.bk = store.create(prefix + ".bk", bshape, Init::zeros, init);
        a.bv = store.create(prefix + ".bv", bshape, Init::zeros, init);
        a.bo = store.create(prefix + ".bo", bshape, Init::zeros, init);
    }
    const std::size_t entries =
        static_cast<std::size_t>(2 * table_h - 1) * static_cast<std::size_t>(2 * table_w - 1);
    a.rel = store.create(prefix + ".rel_bias", Shape{static_cast<std::size_t>(heads), entries},
                         Init::normal02, init);
    if (with_type)
        a.type_pair = store.create(prefix + ".type_bias", Shape{static_cast<std::size_t>(heads), 4},
                                   Init::normal02, init);
    if (frame_slots > 0)
        a.frame_pair = store.create(
            prefix + ".frame_bias",
            Shape{static_cast<std::size_t>(heads),
                  static_cast<std::size_t>(frame_slots) * static_cast<std::size_t>(frame_slots)},
            Init::normal02, init);
    return a;
}

template <typename T>
ConvBnLayer<T> make_conv_bn(ParamStore<T>& store, const std::string& prefix, int c_in, int c_out,
                            const Rng& init) {
    ConvBnLayer<T> l;
    l.w = store.create(prefix + ".w",
                       Shape{static_cast<std::size_t>(c_out), static_cast<std::size_t>(c_in), 3, 3},
                       Init::kaiming, init);
    l.gamma = store.create(prefix + ".bn_gamma", Shape{static_cast<std::size_t>(c_out)}, Init::ones, init);
    l.beta = store.create(prefix + ".bn_beta", Shape{static_cast<std::size_t>(c_out)}, Init::zeros, init);
    l.stats = BnStats<T>(static_cast<std::size_t>(c_out));
    store.register_buffer(prefix + ".bn_mean", l.stats.mean);
    store.register_buffer(prefix + ".bn_var", l.stats.var);
    return l;
}

template <typename T>
MlpLayer<T> make_mlp(ParamStore<T>& store, const std::string& prefix, int width, int hidden,
                     const Rng& init) {
    MlpLayer<T> m;
    m.w1 = store.create(prefix + ".w1",
                        Shape{static_cast<std::size_t>(width), static_cast<std::size_t>(hidden)},
                        Init::xavier, init);
    m.b1 = store.create(prefix + ".b1", Shape{static_cast<std::size_t>(hidden)}, Init::zeros, init);
    m.w2 = store.create(prefix + ".w2",
                        Shape{static_cast<std::size_t>(hidden), static_cast<std::size_t>(width)},
                        Init::xavier, init);
    m.b2 = store.create(prefix + ".b2", Shape{static_cast<std::size_t>(width)}, Init::zeros, init);
    return m;
}

template <typename T>
LnLayer<T> make_ln(ParamStore<T>& store, const std::string& prefix, int width, const Rng& init) {
    LnLayer<T> l;
    l.gamma = store.create(prefix + ".gamma", Shape{static_cast<std::size_t>(width)}, Init::ones, init);
    l.beta = store.create(prefix + ".beta", Shape{static_cast<std::size_t>(width)}, Init::zeros, init);
    return l;
}

// Image-token metadata of one frame's H x W grid.
inline std::shared_ptr<TokenMeta> grid_meta(int h, int w, int table_h, int table_w) {
    auto meta = std::make_shared<TokenMeta>();
    meta->table_h = table_h;
    meta->table_w = table_w;
    meta->slots = 1;
    const std::size_t t = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    meta->y.resize(t);
    meta->x.resize(t);
    meta->slot.assign(t, 0);
    meta->type.assign(t, 0);
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
            meta->y[static_cast<std::size_t>(yy) * w + xx] = yy;
            meta->x[static_cast<std::size_t>(yy) * w + xx] = xx;
        }
    return meta;
}

}  // namespace modeldetail

// Weights of the per-frame encoder: three-layer convolutional stem, one CMT
// block, output convolution.
template <typename T>
struct EncoderParams {
    std::vector<ConvBnLayer<T>> stem;  // 3 conv+BN+GELU layers
    Tensor<T> lp_w, lp_b;              // local perception conv inside the block
    LnLayer<T> ln1, ln2;
    AttnLayer<T> attn;
    MlpLayer<T> mlp;
    Tensor<T> out_w, out_b;  // final 3x3 conv to C

    static EncoderParams build(ParamStore<T>& store, const ModelConfig& cfg, const Rng& init) {
        EncoderParams p;
        p.stem.push_back(modeldetail::make_conv_bn(store, "enc.stem0", cfg.c_in, cfg.c_embed, init));
        p.stem.push_back(modeldetail::make_conv_bn(store, "enc.stem1", cfg.c_embed, cfg.c_embed, init));
        p.stem.push_back(modeldetail::make_conv_bn(store, "enc.stem2", cfg.c_embed, cfg.c_embed, init));
        p.lp_w = store.create("enc.cmtb.lp.w",
                              Shape{static_cast<std::size_t>(cfg.c_embed),
                                    static_cast<std::size_t>(cfg.c_embed), 3, 3},
                              Init::kaiming, init);
        p.lp_b = store.create("enc.cmtb.lp.b", Shape{static_cast<std::size_t>(cfg.c_embed)},
                              Init::zeros, init);
        p.ln1 = modeldetail::make_ln(store, "enc.cmtb.ln1", cfg.c_embed, init);
        p.attn = modeldetail::make_attn(store, "enc.cmtb.attn", cfg.c_embed, cfg.cmt_heads,
                                        cfg.input_h, cfg.input_w, cfg.qkv_bias, false, 0, init);
        p.ln2 = modeldetail::make_ln(store, "enc.cmtb.ln2", cfg.c_embed, init);
        p.mlp = modeldetail::make_mlp(store, "enc.cmtb.mlp", cfg.c_embed,
                                      cfg.c_embed * cfg.mlp_ratio, init);
        p.out_w = store.create("enc.out.w",
                               Shape{static_cast<std::size_t>(cfg.c),
                                     static_cast<std::size_t>(cfg.c_embed), 3, 3},
                               Init::kaiming, init);
        p.out_b = store.create("enc.out.b", Shape{static_cast<std::size_t>(cfg.c)}, Init::zeros, init);
        return p;
    }
};

// X_C = BN(GELU(Conv(x))) applied three times, stride 1, dims preserved.
template <typename T>
Tensor<T> cmt_stem(const Tensor<T>& x, EncoderParams<T>& p, bool training) {
    require_dims(x.rank() == 3, "cmt_stem: [C,H,W] input required");
    require(x.dim(1) >= 3 && x.dim(2) >= 3, "cmt_stem: spatial dims must be >= 3");
    Tensor<T> h = x;
    for (auto& layer : p.stem)
        h = batch_norm(gelu(conv2d(h, layer.w, 1, 1)), layer.gamma, layer.beta, layer.stats, training);
    return h;
}

// Local perception conv, token attention, MLP; all three residual.
template <typename T>
Tensor<T> cmtb_forward(const Tensor<T>& x_c, EncoderParams<T>& p, const ModelConfig& cfg) {
    const std::size_t h = x_c.dim(1), w = x_c.dim(2);
    require(static_cast<int>(h) <= cfg.input_h && static_cast<int>(w) <= cfg.input_w,
            "cmtb_forward: input exceeds the configured bias-table extent");
    Tensor<T> x_cp = add(x_c, conv2d(x_c, p.lp_w, 1, 1, p.lp_b));
    Tensor<T> tokens = chw_to_tokens(x_cp);
    auto meta = modeldetail::grid_meta(static_cast<int>(h), static_cast<int>(w), cfg.input_h,
                                       cfg.input_w);
    Tensor<T> x_a = add(tokens, p.attn.forward(p.ln1.forward(tokens), meta));
    Tensor<T> x_m = add(x_a, p.mlp.forward(p.ln2.forward(x_a)));
    return tokens_to_chw(x_m, h, w);
}

// Shared-weight per-frame encoding: Conv(CMTB(stem(frame))).
template <typename T>
std::vector<Tensor<T>> encode(const FrameStack<T>& stack, EncoderParams<T>& p,
                              const ModelConfig& cfg, bool training) {
    std::vector<Tensor<T>> features;
    features.reserve(stack.k());
    for (std::size_t i = 0; i < stack.k(); ++i) {
        Tensor<T> frame = select0(stack.frames, i);
        Tensor<T> x_c = cmt_stem(frame, p, training);
        Tensor<T> x_m = cmtb_forward(x_c, p, cfg);
        features.push_back(conv2d(x_m, p.out_w, 1, 1, p.out_b));
    }
    return features;
}

}  // namespace misr
