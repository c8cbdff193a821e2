#pragma once

#include <vector>

#include "misr/encoder.hpp"
#include "misr/fft.hpp"

namespace misr {

// One fast-Fourier-convolution block: channel split into local/global parts,
// four cross paths, spectral transform on the global residual.
template <typename T>
struct FfcBlock {
    Tensor<T> ll_w, lg_w, gl_w;     // 3x3 cross-path convs (bias-free, BN follows)
    Tensor<T> spec1_w, spec1_b;     // 1x1 frequency-domain convs on stacked re/im
    Tensor<T> spec2_w, spec2_b;
    Tensor<T> bn_l_gamma, bn_l_beta, bn_g_gamma, bn_g_beta;
    BnStats<T> bn_l, bn_g;
    Tensor<T> out_w, out_b;         // Conv([X_l, X_g])
};

template <typename T>
struct DecoderParams {
    std::vector<FfcBlock<T>> blocks;
    Tensor<T> tail_w, tail_b;    // C -> r^2 * C_img channels
    Tensor<T> final_w, final_b;  // 3x3 conv after pixel shuffle

    static DecoderParams build(ParamStore<T>& store, const ModelConfig& cfg, const Rng& init) {
        DecoderParams p;
        const std::size_t cl = static_cast<std::size_t>(cfg.local_channels());
        const std::size_t cg = static_cast<std::size_t>(cfg.global_channels());
        const std::size_t c = static_cast<std::size_t>(cfg.c);
        for (int b = 0; b < cfg.n_ffc; ++b) {
            const std::string prefix = "ffc.b" + std::to_string(b);
            FfcBlock<T> blk;
            blk.ll_w = store.create(prefix + ".ll.w", Shape{cl, cl, 3, 3}, Init::kaiming, init);
            blk.lg_w = store.create(prefix + ".lg.w", Shape{cg, cl, 3, 3}, Init::kaiming, init);
            blk.gl_w = store.create(prefix + ".gl.w", Shape{cl, cg, 3, 3}, Init::kaiming, init);
            blk.spec1_w = store.create(prefix + ".spec1.w", Shape{2 * cg, 2 * cg, 1, 1},
                                       Init::kaiming, init);
            blk.spec1_b = store.create(prefix + ".spec1.b", Shape{2 * cg}, Init::zeros, init);
            blk.spec2_w = store.create(prefix + ".spec2.w", Shape{2 * cg, 2 * cg, 1, 1},
                                       Init::kaiming, init);
            blk.spec2_b = store.create(prefix + ".spec2.b", Shape{2 * cg}, Init::zeros, init);
            blk.bn_l_gamma = store.create(prefix + ".bn_l.gamma", Shape{cl}, Init::ones, init);
            blk.bn_l_beta = store.create(prefix + ".bn_l.beta", Shape{cl}, Init::zeros, init);
            blk.bn_g_gamma = store.create(prefix + ".bn_g.gamma", Shape{cg}, Init::ones, init);
            blk.bn_g_beta = store.create(prefix + ".bn_g.beta", Shape{cg}, Init::zeros, init);
            blk.bn_l = BnStats<T>(cl);
            blk.bn_g = BnStats<T>(cg);
            store.register_buffer(prefix + ".bn_l.mean", blk.bn_l.mean);
            store.register_buffer(prefix + ".bn_l.var", blk.bn_l.var);
            store.register_buffer(prefix + ".bn_g.mean", blk.bn_g.mean);
            store.register_buffer(prefix + ".bn_g.var", blk.bn_g.var);
            blk.out_w = store.create(prefix + ".out.w", Shape{c, c, 3, 3}, Init::kaiming, init);
            blk.out_b = store.create(prefix + ".out.b", Shape{c}, Init::zeros, init);
            p.blocks.push_back(std::move(blk));
        }
        const std::size_t r2 = static_cast<std::size_t>(cfg.upscale) *
                               static_cast<std::size_t>(cfg.upscale);
        p.tail_w = store.create("dec.tail.w", Shape{r2, c, 3, 3}, Init::kaiming, init);
        p.tail_b = store.create("dec.tail.b", Shape{r2}, Init::zeros, init);
        p.final_w = store.create("dec.final.w", Shape{1, 1, 3, 3}, Init::kaiming, init);
        p.final_b = store.create("dec.final.b", Shape{1}, Init::zeros, init);
        return p;
    }
};

// f_g + IFFT(Conv(ReLU(Conv(FFT(f_g))))): the frequency-domain convs are 1x1
// over the stacked real/imaginary channels, and the inverse transform's real
// part is taken. Identity when the conv weights are zero.
template <typename T>
Tensor<T> spectral_transform(const Tensor<T>& f_g, const Tensor<T>& w1, const Tensor<T>& b1,
                             const Tensor<T>& w2, const Tensor<T>& b2) {
    Tensor<T> z = fft2_stack(f_g);
    z = conv2d(z, w1, 1, 0, b1);
    z = relu(z);
    z = conv2d(z, w2, 1, 0, b2);
    return add(f_g, ifft2_real(z));
}

// X_l = ReLU(BN(f_ll + f_gl)); X_g = ReLU(BN(f_lg + f_gg)); Conv([X_l, X_g]).
template <typename T>
Tensor<T> ffc_forward(const Tensor<T>& f_se, FfcBlock<T>& blk, const ModelConfig& cfg,
                      bool training) {
    require_dims(f_se.rank() == 3 && f_se.dim(0) == static_cast<std::size_t>(cfg.c),
                 "ffc_forward: channel count mismatch");
    const std::size_t cl = static_cast<std::size_t>(cfg.local_channels());
    Tensor<T> f_l = slice_channels(f_se, 0, cl);
    Tensor<T> f_g = slice_channels(f_se, cl, f_se.dim(0));
    Tensor<T> f_ll = conv2d(f_l, blk.ll_w, 1, 1);
    Tensor<T> f_lg = conv2d(f_l, blk.lg_w, 1, 1);
    Tensor<T> f_gl = conv2d(f_g, blk.gl_w, 1, 1);
    Tensor<T> f_gg = spectral_transform(f_g, blk.spec1_w, blk.spec1_b, blk.spec2_w, blk.spec2_b);
    Tensor<T> x_l = relu(batch_norm(add(f_ll, f_gl), blk.bn_l_gamma, blk.bn_l_beta, blk.bn_l, training));
    Tensor<T> x_g = relu(batch_norm(add(f_lg, f_gg), blk.bn_g_gamma, blk.bn_g_beta, blk.bn_g, training));
    Tensor<T> cat = concat_channels<T>({x_l, x_g});
    return conv2d(cat, blk.out_w, 1, 1, blk.out_b);
}

// Pixel shuffle then a final 3x3 conv down to one band. No clamping here;
// values are clamped at image export.
template <typename T>
Tensor<T> upsample_sr(const Tensor<T>& f_d, int r, const Tensor<T>& final_w,
                      const Tensor<T>& final_b) {
    Tensor<T> shuffled = pixel_shuffle(f_d, static_cast<std::size_t>(r));
    return conv2d(shuffled, final_w, 1, 1, final_b);
}

// FFC blocks, tail conv to r^2 channels, pixel-shuffle upsampling.
template <typename T>
Tensor<T> decode(const Tensor<T>& f_se, DecoderParams<T>& p, const ModelConfig& cfg,
                 bool training) {
    Tensor<T> h = f_se;
    for (auto& blk : p.blocks) h = ffc_forward(h, blk, cfg, training);
    Tensor<T> tail = conv2d(h, p.tail_w, 1, 1, p.tail_b);
    return upsample_sr(tail, cfg.upscale, p.final_w, p.final_b);
}

}  // namespace misr
