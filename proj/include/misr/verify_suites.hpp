#pragma once

// Implementation of the gradient-check and oracle suites declared in
// verify.hpp. Included at the end of that header.

namespace misr::verify {

namespace suitedetail {

// ---- per-op finite-difference checks --------------------------------------

inline double check_elementwise(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        Shape shape{2 + r.next_below(4), 2 + r.next_below(4)};
        auto a = rand_tensor(shape, r);
        auto b = rand_tensor(shape, r);
        const double sc = r.uniform(-2.0, 2.0);
        const int which = s % 5;
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            switch (which) {
                case 0: return weighted_sum(add(a, b), wr);
                case 1: return weighted_sum(sub(a, b), wr);
                case 2: return weighted_sum(mul(a, b), wr);
                case 3: return weighted_sum(add_scalar(a, sc), wr);
                default: return weighted_sum(mul_scalar(a, sc), wr);
            }
        };
        worst = std::max(worst, max_fd_error(loss, {a, b}, 4, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_activations(Rng rng, int shapes, bool break_hook) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        Shape shape{1 + r.next_below(4), 2 + r.next_below(5)};
        auto a = rand_tensor(shape, r, true, -2.0, 2.0);
        nudge_from_zero(a);
        const bool use_gelu = s % 2 == 0;
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            return weighted_sum(use_gelu ? gelu(a) : relu(a), wr);
        };
        double err = max_fd_error(loss, {a}, 4, rng.derive("probe", s));
        if (break_hook && use_gelu) err += 1e-2;  // negative-control hook: fake a wrong gradient
        worst = std::max(worst, err);
    }
    return worst;
}

inline double check_reductions(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        Shape shape{2 + r.next_below(3), 2 + r.next_below(4)};
        auto a = rand_tensor(shape, r);
        std::vector<std::uint8_t> mask(a.size());
        bool any = false;
        for (auto& m : mask) {
            m = r.bernoulli(0.6) ? 1 : 0;
            any |= m != 0;
        }
        if (!any) mask[0] = 1;
        const int which = s % 3;
        auto loss = [&]() -> Tensor<double> {
            switch (which) {
                case 0: return sum(a);
                case 1: return mean(a);
                default: return masked_mean(a, mask);
            }
        };
        worst = std::max(worst, max_fd_error(loss, {a}, 4, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_matmul_family(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const std::size_t m = 1 + r.next_below(4), k = 1 + r.next_below(4), n = 1 + r.next_below(4);
        auto x = rand_tensor({m, k}, r);
        auto w = rand_tensor({k, n}, r);
        auto b = rand_tensor({n}, r);
        auto w2 = rand_tensor({n, k}, r);
        auto b2 = rand_tensor({k}, r);
        const int which = s % 4;
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            switch (which) {
                case 0: return weighted_sum(matmul(x, w), wr);
                case 1: return weighted_sum(linear(x, w, b), wr);
                case 2: return weighted_sum(transpose2d(x), wr);
                default: return weighted_sum(mlp(x, w, b, w2, b2), wr);
            }
        };
        worst = std::max(worst, max_fd_error(loss, {x, w, b, w2, b2}, 3, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_softmax(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        auto a = rand_tensor({1 + r.next_below(4), 2 + r.next_below(5)}, r, true, -3.0, 3.0);
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            return weighted_sum(softmax_rows(a), wr);
        };
        worst = std::max(worst, max_fd_error(loss, {a}, 4, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_layout_ops(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const std::size_t c = 1 + r.next_below(3), h = 2 + r.next_below(3), w = 2 + r.next_below(3);
        auto x = rand_tensor({c, h, w}, r);
        auto t0 = rand_tensor({4, 3}, r);
        auto t1 = rand_tensor({2, 3}, r);
        auto k0 = rand_tensor({2, c, h, w}, r);
        const int which = s % 8;
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            switch (which) {
                case 0: return weighted_sum(reshape(x, Shape{x.size()}), wr);
                case 1: return weighted_sum(chw_to_tokens(x), wr);
                case 2: return weighted_sum(tokens_to_chw(chw_to_tokens(x), h, w), wr);
                case 3: return weighted_sum(slice_rows(t0, 1, 3), wr);
                case 4: return weighted_sum(concat_rows<double>({t0, t1}), wr);
                case 5: return weighted_sum(slice_channels(x, 0, c), wr);
                case 6: return weighted_sum(select0(k0, 1), wr);
                default: return weighted_sum(patch_group(t0, 2), wr);
            }
        };
        worst = std::max(worst, max_fd_error(loss, {x, t0, t1, k0}, 3, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_stack_ops(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        Shape shape{1 + r.next_below(2), 2 + r.next_below(3), 2 + r.next_below(3)};
        auto a = rand_tensor(shape, r);
        auto b = rand_tensor(shape, r);
        auto c = rand_tensor(shape, r);
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            if (s % 2 == 0) return weighted_sum(mean_stack<double>({a, b, c}), wr);
            return weighted_sum(concat_channels<double>({a, b}), wr);
        };
        worst = std::max(worst, max_fd_error(loss, {a, b, c}, 3, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_pixel_shuffle_grad(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const std::size_t rr = 1 + r.next_below(3);
        const std::size_t c = 1 + r.next_below(2), h = 1 + r.next_below(3), w = 1 + r.next_below(3);
        auto x = rand_tensor({c * rr * rr, h, w}, r);
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            if (s % 2 == 0) return weighted_sum(pixel_shuffle(x, rr), wr);
            return weighted_sum(pixel_unshuffle(pixel_shuffle(x, rr), rr), wr);
        };
        worst = std::max(worst, max_fd_error(loss, {x}, 4, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_conv2d_grad(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const std::size_t ci = 1 + r.next_below(3), co = 1 + r.next_below(3);
        const std::size_t kh = 1 + 2 * r.next_below(2), kw = 1 + 2 * r.next_below(2);
        const int stride = 1 + static_cast<int>(r.next_below(2));
        const int pad = static_cast<int>(r.next_below(2));
        const std::size_t h = kh + 2 + r.next_below(3), w = kw + 2 + r.next_below(3);
        auto x = rand_tensor({ci, h, w}, r);
        auto k = rand_tensor({co, ci, kh, kw}, r);
        auto b = rand_tensor({co}, r);
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            return weighted_sum(conv2d(x, k, stride, pad, b), wr);
        };
        worst = std::max(worst, max_fd_error(loss, {x, k, b}, 3, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_norm_grads(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const std::size_t m = 2 + r.next_below(4), c = 2 + r.next_below(4);
        auto x = rand_tensor({m, c}, r);
        auto gamma = rand_tensor({c}, r, true, 0.5, 1.5);
        auto beta = rand_tensor({c}, r);
        auto xc = rand_tensor({c, m, 2}, r);
        BnStats<double> stats(c);
        for (std::size_t i = 0; i < c; ++i) {
            (*stats.mean)[i] = r.uniform(-0.3, 0.3);
            (*stats.var)[i] = r.uniform(0.5, 1.5);
        }
        const int which = s % 3;
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            BnStats<double> scratch(c);
            *scratch.mean = *stats.mean;
            *scratch.var = *stats.var;
            switch (which) {
                case 0: return weighted_sum(layer_norm(x, gamma, beta), wr);
                case 1: return weighted_sum(batch_norm(xc, gamma, beta, scratch, true), wr);
                default: return weighted_sum(batch_norm(xc, gamma, beta, scratch, false), wr);
            }
        };
        worst = std::max(worst, max_fd_error(loss, {x, xc, gamma, beta}, 3, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_fft_grads(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const std::size_t c = 1 + r.next_below(2), h = 2 + r.next_below(5), w = 2 + r.next_below(5);
        auto x = rand_tensor({c, h, w}, r);
        auto z = rand_tensor({2 * c, h, w}, r);
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            if (s % 2 == 0) return weighted_sum(fft2_stack(x), wr);
            return weighted_sum(ifft2_real(z), wr);
        };
        worst = std::max(worst, max_fd_error(loss, {x, z}, 4, rng.derive("probe", s)));
    }
    return worst;
}

inline double check_attention_grads(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        const int heads = 1 + static_cast<int>(r.next_below(2));
        const std::size_t gh = 2 + r.next_below(2), gw = 2 + r.next_below(2);
        const std::size_t t = gh * gw;
        const std::size_t c = static_cast<std::size_t>(heads) * (2 + r.next_below(3));
        auto x = rand_tensor({t, c}, r);
        auto wq = rand_tensor({c, c}, r);
        auto wk = rand_tensor({c, c}, r);
        auto wv = rand_tensor({c, c}, r);
        auto wo = rand_tensor({c, c}, r);
        auto dense = rand_tensor({static_cast<std::size_t>(heads), t, t}, r);
        auto meta = modeldetail::grid_meta(static_cast<int>(gh), static_cast<int>(gw),
                                           static_cast<int>(gh), static_cast<int>(gw));
        // vary slots/types so the structured tables are exercised
        for (std::size_t i = 0; i < t; ++i) {
            meta->slot[i] = static_cast<std::int32_t>(r.next_below(2));
            meta->type[i] = static_cast<std::int32_t>(r.next_below(2));
        }
        meta->slots = 2;
        auto rel = rand_tensor({static_cast<std::size_t>(heads), meta->rel_entries()}, r);
        auto type_pair = rand_tensor({static_cast<std::size_t>(heads), 4}, r);
        auto frame_pair = rand_tensor({static_cast<std::size_t>(heads), 4}, r);
        const int which = s % 3;
        auto loss = [&]() -> Tensor<double> {
            Rng wr = rng.derive("w", s);
            if (which == 0) {
                return weighted_sum(mhsa(x, wq, wk, wv, wo, dense, heads), wr);
            }
            AttnBias<double> bias;
            if (which == 1) {
                bias = AttnBias<double>::make_dense(dense);
            } else {
                bias.rel = rel;
                bias.type_pair = type_pair;
                bias.frame_pair = frame_pair;
                bias.meta = meta;
            }
            return weighted_sum(attention_core(x, x, x, heads, bias), wr);
        };
        worst = std::max(
            worst, max_fd_error(loss, {x, wq, wk, wv, wo, dense, rel, type_pair, frame_pair}, 3,
                                rng.derive("probe", s)));
    }
    return worst;
}

// The composed chain named in the operator contract:
// conv2d -> layer_norm -> mhsa -> sum.
inline double check_composite_chain(Rng rng, int shapes) {
    double worst = 0.0;
    for (int s = 0; s < shapes; ++s) {
        Rng r = rng.derive("shape", s);
        // 8 channels keeps the layer-norm rows well conditioned at h = 1e-3
        const std::size_t c = 8, h = 3, w = 3;
        auto x = rand_tensor({1, h + 2, w + 2}, r);
        auto k = rand_tensor({c, 1, 3, 3}, r);
        auto gamma = rand_tensor({c}, r, true, 0.5, 1.5);
        auto beta = rand_tensor({c}, r);
        auto wq = rand_tensor({c, c}, r);
        auto wk = rand_tensor({c, c}, r);
        auto wv = rand_tensor({c, c}, r);
        auto wo = rand_tensor({c, c}, r);
        auto dense = rand_tensor({2, h * w, h * w}, r);
        auto loss = [&]() -> Tensor<double> {
            Tensor<double> conv = conv2d(x, k, 1, 0);
            Tensor<double> tokens = layer_norm(chw_to_tokens(conv), gamma, beta);
            return sum(mhsa(tokens, wq, wk, wv, wo, dense, 2));
        };
        worst = std::max(worst,
                         max_fd_error(loss, {x, k, gamma, beta, wq, wk, wv, wo, dense}, 3,
                                      rng.derive("probe", s)));
    }
    return worst;
}

// Finite differences through the whole model at the small verification
// configuration (K=4, 16x16 crops, width 8, one fusion block).
inline double check_model_end_to_end(Rng rng, int probes_per_leaf) {
    ModelConfig cfg;
    cfg.c_in = 1;
    cfg.c_embed = 8;
    cfg.c = 8;
    cfg.cmt_heads = 2;
    cfg.misa_heads = 2;
    cfg.n_misab = 1;
    cfg.patch_n = 1;
    cfg.k = 4;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.mlp_ratio = 2;
    cfg.bias_mode = BiasMode::full_sequence;
    auto model = SrModel<double>::init(cfg, 97);
    Rng r = rng.derive("data");
    Tensor<double> frames({4, 1, 16, 16});
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = r.uniform(0.0, 1.0);
    frames.set_requires_grad(true);
    std::vector<double> clearance{0.9, 0.8, 0.7, 0.6};
    Tensor<double> target({1, 48, 48});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = r.uniform(0.0, 1.0);

    std::vector<Tensor<double>> leaves{frames};
    for (auto& [name, p] : model.store.params()) leaves.push_back(p);
    auto loss = [&]() -> Tensor<double> {
        FrameStack<double> stack;
        stack.frames = frames;
        stack.clearance = {clearance.begin(), clearance.end()};
        stack.pad_flags.assign(4, 0);
        return mse(model.forward(stack), target);
    };
    return max_fd_error(loss, leaves, probes_per_leaf, rng.derive("probe"));
}

// ---- oracle comparisons ----------------------------------------------------

inline double oracle_conv2d(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        const int ci = 1 + static_cast<int>(r.next_below(3));
        const int co = 1 + static_cast<int>(r.next_below(4));
        const int kh = 1 + 2 * static_cast<int>(r.next_below(2));
        const int kw = 1 + 2 * static_cast<int>(r.next_below(2));
        const int stride = 1 + static_cast<int>(r.next_below(2));
        const int pad = static_cast<int>(r.next_below(3));
        const int h = kh + 3 + static_cast<int>(r.next_below(5));
        const int w = kw + 3 + static_cast<int>(r.next_below(5));
        Tensor<float> x = Tensor<float>::from_fn(
            Shape{(std::size_t)ci, (std::size_t)h, (std::size_t)w},
            [&](std::size_t) { return static_cast<float>(r.uniform(-1, 1)); });
        Tensor<float> k = Tensor<float>::from_fn(
            Shape{(std::size_t)co, (std::size_t)ci, (std::size_t)kh, (std::size_t)kw},
            [&](std::size_t) { return static_cast<float>(r.uniform(-1, 1)); });
        Tensor<float> out = conv2d(x, k, stride, pad);
        auto ref = oracle::conv2d_direct(to_d(x), ci, h, w, to_d(k), co, kh, kw, stride, pad, {});
        worst = std::max(worst, max_abs_diff(out, ref));
    }
    return worst;
}

inline double oracle_mhsa(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        const int heads = 1 + static_cast<int>(r.next_below(2));
        const int t = 1 + static_cast<int>(r.next_below(6));
        const int c = heads * (2 + static_cast<int>(r.next_below(3)));
        auto mk = [&](Shape shape) {
            return Tensor<float>::from_fn(shape,
                                          [&](std::size_t) { return (float)r.uniform(-1, 1); });
        };
        Tensor<float> x = mk({(std::size_t)t, (std::size_t)c});
        Tensor<float> wq = mk({(std::size_t)c, (std::size_t)c});
        Tensor<float> wk = mk({(std::size_t)c, (std::size_t)c});
        Tensor<float> wv = mk({(std::size_t)c, (std::size_t)c});
        Tensor<float> wo = mk({(std::size_t)c, (std::size_t)c});
        Tensor<float> bias = mk({(std::size_t)heads, (std::size_t)t, (std::size_t)t});
        Tensor<float> out = mhsa(x, wq, wk, wv, wo, bias, heads);
        auto ref = oracle::mhsa_direct(to_d(x), t, c, to_d(wq), {}, to_d(wk), {}, to_d(wv), {},
                                       to_d(wo), {}, to_d(bias), heads);
        worst = std::max(worst, max_abs_diff(out, ref));
    }
    return worst;
}

inline double oracle_fft2(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        const int h = 2 + static_cast<int>(r.next_below(11));
        const int w = 2 + static_cast<int>(r.next_below(11));
        Tensor<double> x = Tensor<double>::from_fn(
            Shape{1, (std::size_t)h, (std::size_t)w}, [&](std::size_t) { return r.uniform(-1, 1); });
        ComplexTensor<double> f = fft2(x);
        std::vector<double> rr, ri;
        oracle::dft2_direct(to_d(x), {}, h, w, -1, rr, ri);
        for (std::size_t i = 0; i < f.size(); ++i) {
            worst = std::max(worst, std::abs(f.re[i] - rr[i]));
            worst = std::max(worst, std::abs(f.im[i] - ri[i]));
        }
    }
    return worst;
}

inline double fft_roundtrip_sweep() {
    double worst = 0.0;
    Rng r(424242);
    for (int h = 2; h <= 16; ++h)
        for (int w = 2; w <= 16; ++w) {
            Tensor<double> x = Tensor<double>::from_fn(
                Shape{1, (std::size_t)h, (std::size_t)w},
                [&](std::size_t) { return r.uniform(-1, 1); });
            ComplexTensor<double> back = ifft2c(fft2(x));
            for (std::size_t i = 0; i < x.size(); ++i) {
                worst = std::max(worst, std::abs(back.re[i] - x[i]));
                worst = std::max(worst, std::abs(back.im[i]));
            }
        }
    return worst;
}

inline double fft_linearity(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        const int h = 2 + static_cast<int>(r.next_below(9));
        const int w = 2 + static_cast<int>(r.next_below(9));
        const double a = r.uniform(-2, 2), b = r.uniform(-2, 2);
        auto mk = [&] {
            return Tensor<double>::from_fn(Shape{1, (std::size_t)h, (std::size_t)w},
                                           [&](std::size_t) { return r.uniform(-1, 1); });
        };
        Tensor<double> x = mk(), y = mk();
        Tensor<double> combo(Shape{1, (std::size_t)h, (std::size_t)w});
        for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * x[i] + b * y[i];
        ComplexTensor<double> fc = fft2(combo), fx = fft2(x), fy = fft2(y);
        for (std::size_t i = 0; i < fc.size(); ++i) {
            worst = std::max(worst, std::abs(fc.re[i] - (a * fx.re[i] + b * fy.re[i])));
            worst = std::max(worst, std::abs(fc.im[i] - (a * fx.im[i] + b * fy.im[i])));
        }
    }
    return worst;
}

inline double pixel_shuffle_identity(Rng rng) {
    double worst = 0.0;
    for (int s = 0; s < 8; ++s) {
        Rng r = rng.derive("inst", s);
        const std::size_t rr = 1 + r.next_below(3);
        const std::size_t c = 1 + r.next_below(3), h = 1 + r.next_below(4), w = 1 + r.next_below(4);
        Tensor<float> x = Tensor<float>::from_fn(Shape{c * rr * rr, h, w},
                                                 [&](std::size_t) { return (float)r.uniform(-1, 1); });
        Tensor<float> back = pixel_unshuffle(pixel_shuffle(x, rr), rr);
        for (std::size_t i = 0; i < x.size(); ++i)
            worst = std::max(worst, (double)std::abs(back[i] - x[i]));
    }
    return worst;
}

inline double gelu_vs_quadrature() {
    double worst = 0.0;
    for (double x = -6.0; x <= 6.0; x += 0.37) {
        const double ref = x * oracle::gauss_cdf_quadrature(x);
        worst = std::max(worst, std::abs(oracle::gelu_direct(x) - ref));
    }
    return worst;
}

template <typename T>
void randomize_params(ParamStore<T>& store, Rng rng, double lo = -0.5, double hi = 0.5) {
    for (auto& [name, p] : store.params()) {
        Rng r = rng.derive(name);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(r.uniform(lo, hi));
    }
}

// MISAB vs a flat-concatenation oracle composed from the direct-loop pieces.
inline double oracle_misab(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        ModelConfig cfg;
        cfg.c_in = 1;
        cfg.c = static_cast<int>(2 * (1 + r.next_below(2)));  // 2 or 4
        cfg.c_embed = cfg.c;
        cfg.misa_heads = 1 + static_cast<int>(r.next_below(2));
        if (cfg.c % cfg.misa_heads) cfg.misa_heads = 1;
        cfg.cmt_heads = 1;
        cfg.n_misab = 1;
        cfg.patch_n = 1;
        cfg.k = 1 + static_cast<int>(r.next_below(3));
        cfg.input_h = 2 + static_cast<int>(r.next_below(2));
        cfg.input_w = 2 + static_cast<int>(r.next_below(2));
        cfg.mlp_ratio = 2;
        cfg.bias_mode = s % 2 ? BiasMode::full_sequence : BiasMode::frame_agnostic;
        ParamStore<float> store;
        auto fusion = FusionParams<float>::build(store, cfg, Rng(5).derive("init"));
        randomize_params(store, r.derive("params"));
        const std::size_t h = cfg.input_h, w = cfg.input_w, hw = h * w;
        const std::size_t k = cfg.k, c = cfg.c;

        std::vector<Tensor<float>> tokens;
        for (std::size_t f = 0; f < k; ++f)
            tokens.push_back(Tensor<float>::from_fn(
                Shape{hw, c}, [&](std::size_t) { return (float)r.uniform(-1, 1); }));
        NoGradGuard ng;
        auto out = misab_forward(tokens, fusion.blocks[0], cfg, h, w);

        // oracle: message stage per frame, then joint attention over the
        // concatenated sequence, then the MLP; all with direct-loop pieces
        const auto& blk = fusion.blocks[0];
        auto msg_meta = fusiondetail::message_meta(h, w, 1, cfg);
        auto msg_bias =
            structured_bias_dense(*msg_meta, blk.msg_attn.rel, (const Tensor<float>*)nullptr,
                                  (const Tensor<float>*)nullptr, cfg.misa_heads);
        std::vector<std::vector<double>> fm(k);
        for (std::size_t f = 0; f < k; ++f) {
            auto m = oracle::linear_direct(to_d(tokens[f]), hw, c, to_d(blk.msg_w), c, to_d(blk.msg_b));
            auto ln = oracle::layer_norm_direct(m, hw, c, to_d(blk.msg_ln.gamma), to_d(blk.msg_ln.beta));
            auto att = oracle::mhsa_direct(
                ln, hw, c, to_d(blk.msg_attn.wq), to_d(*blk.msg_attn.bq), to_d(blk.msg_attn.wk),
                to_d(*blk.msg_attn.bk), to_d(blk.msg_attn.wv), to_d(*blk.msg_attn.bv),
                to_d(blk.msg_attn.wo), to_d(*blk.msg_attn.bo), msg_bias, cfg.misa_heads);
            fm[f] = to_d(tokens[f]);
            for (std::size_t i = 0; i < hw * c; ++i) fm[f].push_back(m[i] + att[i]);
        }
        std::vector<double> all;
        for (auto& f : fm) all.insert(all.end(), f.begin(), f.end());
        const std::size_t per_frame = 2 * hw;
        const std::size_t t_all = k * per_frame;
        auto meta = fusiondetail::misa_meta(k, h, w, hw, 1, cfg);
        auto misa_bias = structured_bias_dense(
            *meta, blk.misa_attn.rel,
            blk.misa_attn.type_pair ? &*blk.misa_attn.type_pair : nullptr,
            blk.misa_attn.frame_pair ? &*blk.misa_attn.frame_pair : nullptr, cfg.misa_heads);
        auto ln1 = oracle::layer_norm_direct(all, t_all, c, to_d(blk.misa_ln1.gamma),
                                             to_d(blk.misa_ln1.beta));
        auto att = oracle::mhsa_direct(ln1, t_all, c, to_d(blk.misa_attn.wq), to_d(*blk.misa_attn.bq),
                                       to_d(blk.misa_attn.wk), to_d(*blk.misa_attn.bk),
                                       to_d(blk.misa_attn.wv), to_d(*blk.misa_attn.bv),
                                       to_d(blk.misa_attn.wo), to_d(*blk.misa_attn.bo), misa_bias,
                                       cfg.misa_heads);
        std::vector<double> y(t_all * c);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = all[i] + att[i];
        auto ln2 = oracle::layer_norm_direct(y, t_all, c, to_d(blk.misa_ln2.gamma),
                                             to_d(blk.misa_ln2.beta));
        auto hid = oracle::gelu_vec(oracle::linear_direct(ln2, t_all, c, to_d(blk.misa_mlp.w1),
                                                          cfg.c * cfg.mlp_ratio,
                                                          to_d(blk.misa_mlp.b1)));
        auto mout = oracle::linear_direct(hid, t_all, cfg.c * cfg.mlp_ratio, to_d(blk.misa_mlp.w2),
                                          c, to_d(blk.misa_mlp.b2));
        for (std::size_t f = 0; f < k; ++f)
            for (std::size_t i = 0; i < hw * c; ++i) {
                const std::size_t src = f * per_frame * c + i;
                const double ref = y[src] + mout[src];
                worst = std::max(worst, std::abs((double)out[f][i] - ref));
            }
    }
    return worst;
}

// Spectral transform and full FFC vs step-by-step composition oracles.
inline double oracle_ffc(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        ModelConfig cfg;
        cfg.c = 4 + 2 * static_cast<int>(r.next_below(2));
        cfg.c_embed = cfg.c;
        cfg.input_h = 4 + static_cast<int>(r.next_below(4));
        cfg.input_w = 4 + static_cast<int>(r.next_below(4));
        cfg.n_misab = 1;
        cfg.k = 1;
        cfg.upscale = 1;
        ParamStore<float> store;
        auto dec = DecoderParams<float>::build(store, cfg, Rng(7).derive("init"));
        randomize_params(store, r.derive("params"));
        auto& blk = dec.blocks[0];
        const int h = cfg.input_h, w = cfg.input_w, hw = h * w;
        const int cl = cfg.local_channels(), cg = cfg.global_channels();
        Tensor<float> x = Tensor<float>::from_fn(
            Shape{(std::size_t)cfg.c, (std::size_t)h, (std::size_t)w},
            [&](std::size_t) { return (float)r.uniform(-1, 1); });
        NoGradGuard ng;
        Tensor<float> got = ffc_forward(x, blk, cfg, true);

        // oracle composition
        auto xd = to_d(x);
        std::vector<double> fl(xd.begin(), xd.begin() + (std::size_t)cl * hw);
        std::vector<double> fg(xd.begin() + (std::size_t)cl * hw, xd.end());
        auto f_ll = oracle::conv2d_direct(fl, cl, h, w, to_d(blk.ll_w), cl, 3, 3, 1, 1, {});
        auto f_lg = oracle::conv2d_direct(fl, cl, h, w, to_d(blk.lg_w), cg, 3, 3, 1, 1, {});
        auto f_gl = oracle::conv2d_direct(fg, cg, h, w, to_d(blk.gl_w), cl, 3, 3, 1, 1, {});
        // spectral: FFT -> 1x1 conv -> relu -> 1x1 conv -> IFFT real + residual
        std::vector<double> spec_in(2 * (std::size_t)cg * hw);
        for (int ch = 0; ch < cg; ++ch) {
            std::vector<double> plane(fg.begin() + (std::size_t)ch * hw,
                                      fg.begin() + (std::size_t)(ch + 1) * hw);
            std::vector<double> fre, fim;
            oracle::dft2_direct(plane, {}, h, w, -1, fre, fim);
            std::copy(fre.begin(), fre.end(), spec_in.begin() + (std::size_t)ch * hw);
            std::copy(fim.begin(), fim.end(), spec_in.begin() + (std::size_t)(cg + ch) * hw);
        }
        auto z1 = oracle::conv2d_direct(spec_in, 2 * cg, h, w, to_d(blk.spec1_w), 2 * cg, 1, 1, 1, 0,
                                        to_d(blk.spec1_b));
        z1 = oracle::relu_vec(z1);
        auto z2 = oracle::conv2d_direct(z1, 2 * cg, h, w, to_d(blk.spec2_w), 2 * cg, 1, 1, 1, 0,
                                        to_d(blk.spec2_b));
        std::vector<double> f_gg(fg);
        for (int ch = 0; ch < cg; ++ch) {
            std::vector<double> re(z2.begin() + (std::size_t)ch * hw,
                                   z2.begin() + (std::size_t)(ch + 1) * hw);
            std::vector<double> im(z2.begin() + (std::size_t)(cg + ch) * hw,
                                   z2.begin() + (std::size_t)(cg + ch + 1) * hw);
            std::vector<double> ire, iim;
            oracle::dft2_direct(re, im, h, w, +1, ire, iim);
            for (int i = 0; i < hw; ++i) f_gg[(std::size_t)ch * hw + i] += ire[i] / hw;
        }
        std::vector<double> suml((std::size_t)cl * hw), sumg((std::size_t)cg * hw);
        for (std::size_t i = 0; i < suml.size(); ++i) suml[i] = f_ll[i] + f_gl[i];
        for (std::size_t i = 0; i < sumg.size(); ++i) sumg[i] = f_lg[i] + f_gg[i];
        auto xl = oracle::relu_vec(oracle::bn_train_direct(suml, cl, hw, to_d(blk.bn_l_gamma),
                                                           to_d(blk.bn_l_beta)));
        auto xg = oracle::relu_vec(oracle::bn_train_direct(sumg, cg, hw, to_d(blk.bn_g_gamma),
                                                           to_d(blk.bn_g_beta)));
        std::vector<double> cat;
        cat.insert(cat.end(), xl.begin(), xl.end());
        cat.insert(cat.end(), xg.begin(), xg.end());
        auto ref = oracle::conv2d_direct(cat, cfg.c, h, w, to_d(blk.out_w), cfg.c, 3, 3, 1, 1,
                                         to_d(blk.out_b));
        worst = std::max(worst, max_abs_diff(got, ref));
    }
    return worst;
}

// CMT block vs the equation-by-equation oracle.
inline double oracle_cmtb(Rng rng, int instances) {
    double worst = 0.0;
    for (int s = 0; s < instances; ++s) {
        Rng r = rng.derive("inst", s);
        ModelConfig cfg;
        cfg.c_embed = 4 + 2 * static_cast<int>(r.next_below(2));
        cfg.c = cfg.c_embed;
        cfg.cmt_heads = 2;
        cfg.input_h = 3 + static_cast<int>(r.next_below(3));
        cfg.input_w = 3 + static_cast<int>(r.next_below(3));
        cfg.mlp_ratio = 2;
        cfg.k = 1;
        ParamStore<float> store;
        auto enc = EncoderParams<float>::build(store, cfg, Rng(11).derive("init"));
        randomize_params(store, r.derive("params"));
        const int h = cfg.input_h, w = cfg.input_w, hw = h * w;
        const int c = cfg.c_embed;
        Tensor<float> x = Tensor<float>::from_fn(
            Shape{(std::size_t)c, (std::size_t)h, (std::size_t)w},
            [&](std::size_t) { return (float)r.uniform(-1, 1); });
        NoGradGuard ng;
        Tensor<float> got = cmtb_forward(x, enc, cfg);

        auto xd = to_d(x);
        auto lp = oracle::conv2d_direct(xd, c, h, w, to_d(enc.lp_w), c, 3, 3, 1, 1, to_d(enc.lp_b));
        std::vector<double> xcp(xd.size());
        for (std::size_t i = 0; i < xd.size(); ++i) xcp[i] = xd[i] + lp[i];
        // tokens: [C,H,W] -> [HW,C]
        std::vector<double> tokens((std::size_t)hw * c);
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p)
                tokens[(std::size_t)p * c + ch] = xcp[(std::size_t)ch * hw + p];
        auto meta = modeldetail::grid_meta(h, w, cfg.input_h, cfg.input_w);
        auto bias = structured_bias_dense(*meta, enc.attn.rel, (const Tensor<float>*)nullptr,
                                          (const Tensor<float>*)nullptr, cfg.cmt_heads);
        auto ln1 = oracle::layer_norm_direct(tokens, hw, c, to_d(enc.ln1.gamma), to_d(enc.ln1.beta));
        auto att = oracle::mhsa_direct(ln1, hw, c, to_d(enc.attn.wq), to_d(*enc.attn.bq),
                                       to_d(enc.attn.wk), to_d(*enc.attn.bk), to_d(enc.attn.wv),
                                       to_d(*enc.attn.bv), to_d(enc.attn.wo), to_d(*enc.attn.bo),
                                       bias, cfg.cmt_heads);
        std::vector<double> xa(tokens.size());
        for (std::size_t i = 0; i < xa.size(); ++i) xa[i] = tokens[i] + att[i];
        auto ln2 = oracle::layer_norm_direct(xa, hw, c, to_d(enc.ln2.gamma), to_d(enc.ln2.beta));
        auto hid = oracle::gelu_vec(oracle::linear_direct(ln2, hw, c, to_d(enc.mlp.w1),
                                                          c * cfg.mlp_ratio, to_d(enc.mlp.b1)));
        auto mo = oracle::linear_direct(hid, hw, c * cfg.mlp_ratio, to_d(enc.mlp.w2), c,
                                        to_d(enc.mlp.b2));
        std::vector<double> xm(xa.size());
        for (std::size_t i = 0; i < xm.size(); ++i) xm[i] = xa[i] + mo[i];
        // back to [C,H,W]
        std::vector<double> ref(xm.size());
        for (int p = 0; p < hw; ++p)
            for (int ch = 0; ch < c; ++ch)
                ref[(std::size_t)ch * hw + p] = xm[(std::size_t)p * c + ch];
        worst = std::max(worst, max_abs_diff(got, ref));
    }
    return worst;
}

}  // namespace suitedetail

inline std::vector<CheckResult> gradient_suite(const Options& opts) {
    using namespace suitedetail;
    Rng rng(opts.seed);
    const int n = opts.shapes_per_op;
    std::vector<CheckResult> out;
    out.push_back(timed_check("grad/elementwise", 1e-4,
                              [&] { return check_elementwise(rng.derive("elem"), n); }));
    out.push_back(timed_check("grad/activations", 1e-4, [&] {
        return check_activations(rng.derive("act"), n, opts.break_gradient_hook);
    }));
    out.push_back(timed_check("grad/reductions", 1e-4,
                              [&] { return check_reductions(rng.derive("red"), n); }));
    out.push_back(timed_check("grad/matmul_linear_mlp", 1e-4,
                              [&] { return check_matmul_family(rng.derive("mm"), n); }));
    out.push_back(timed_check("grad/softmax", 1e-4,
                              [&] { return check_softmax(rng.derive("sm"), n); }));
    out.push_back(timed_check("grad/layout_ops", 1e-4,
                              [&] { return check_layout_ops(rng.derive("layout"), n); }));
    out.push_back(timed_check("grad/stack_ops", 1e-4,
                              [&] { return check_stack_ops(rng.derive("stack"), n); }));
    out.push_back(timed_check("grad/pixel_shuffle", 1e-4,
                              [&] { return check_pixel_shuffle_grad(rng.derive("ps"), n); }));
    out.push_back(timed_check("grad/conv2d", 1e-4,
                              [&] { return check_conv2d_grad(rng.derive("conv"), n); }));
    out.push_back(timed_check("grad/norms", 1e-4,
                              [&] { return check_norm_grads(rng.derive("norm"), n); }));
    out.push_back(timed_check("grad/fft", 1e-4,
                              [&] { return check_fft_grads(rng.derive("fft"), n); }));
    out.push_back(timed_check("grad/attention", 1e-4,
                              [&] { return check_attention_grads(rng.derive("attn"), n); }));
    out.push_back(timed_check("grad/conv_ln_mhsa_chain", 1e-4,
                              [&] { return check_composite_chain(rng.derive("chain"), 6); }));
    out.push_back(timed_check("grad/model_end_to_end", 1e-4, [&] {
        return check_model_end_to_end(rng.derive("model"), 2);
    }));
    return out;
}

inline std::vector<CheckResult> oracle_suite(const Options& opts) {
    using namespace suitedetail;
    Rng rng(opts.seed + 1);
    const int n = opts.shapes_per_op;
    std::vector<CheckResult> out;
    out.push_back(timed_check("oracle/conv2d_direct_loops", 1e-5,
                              [&] { return oracle_conv2d(rng.derive("conv"), n); }));
    out.push_back(timed_check("oracle/mhsa_explicit_loops", 1e-5,
                              [&] { return oracle_mhsa(rng.derive("mhsa"), n); }));
    out.push_back(timed_check("oracle/fft2_direct_dft", 1e-7,
                              [&] { return oracle_fft2(rng.derive("fft"), n); }));
    out.push_back(timed_check("oracle/fft_roundtrip_2_16", 1e-9, [&] { return fft_roundtrip_sweep(); }));
    out.push_back(timed_check("oracle/fft_linearity", 1e-9,
                              [&] { return fft_linearity(rng.derive("lin"), n); }));
    out.push_back(timed_check("oracle/pixel_shuffle_inverse", 1e-12,
                              [&] { return pixel_shuffle_identity(rng.derive("ps")); }));
    out.push_back(timed_check("oracle/gelu_quadrature", 1e-4, [&] { return gelu_vs_quadrature(); }));
    out.push_back(timed_check("oracle/misab_flat_concat", 1e-5,
                              [&] { return oracle_misab(rng.derive("misab"), n); }));
    out.push_back(timed_check("oracle/ffc_composition", 1e-5,
                              [&] { return oracle_ffc(rng.derive("ffc"), n); }));
    out.push_back(timed_check("oracle/cmtb_composition", 1e-5,
                              [&] { return oracle_cmtb(rng.derive("cmtb"), n); }));
    return out;
}

}  // namespace misr::verify
