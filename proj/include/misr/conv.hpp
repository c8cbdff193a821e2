#pragma once

#include <optional>
#include <vector>

#include "misr/ops.hpp"
#include "misr/tensor.hpp"

namespace misr {

// 2D cross-correlation (no kernel flip), zero padding.
// input [C_in,H,W], kernel [C_out,C_in,kh,kw] -> [C_out,H',W'],
// H' = (H + 2*padding - kh)/stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int padding = 0,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt) {
    require_dims(input.rank() == 3 && kernel.rank() == 4, "conv2d: input [C,H,W], kernel [Co,Ci,kh,kw]");
    require_dims(input.dim(0) == kernel.dim(1),
                 "conv2d: input channels " + std::to_string(input.dim(0)) + " != kernel C_in " +
                     std::to_string(kernel.dim(1)));
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    const std::size_t ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: odd kernel dims required");
    require_dims(h + 2 * static_cast<std::size_t>(padding) >= kh &&
                     w + 2 * static_cast<std::size_t>(padding) >= kw,
                 "conv2d: kernel larger than padded input");
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
    if (bias) require_dims(bias->rank() == 1 && bias->dim(0) == co, "conv2d: bias shape mismatch");

    std::vector<T> v(co * oh * ow);
    const T* in = input.data();
    const T* kn = kernel.data();
    auto forward_rows = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const std::size_t o = idx / oh;   // output channel
            const std::size_t oy = idx % oh;  // output row
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
                const long y0 = static_cast<long>(oy) * stride - padding;
                const long x0 = static_cast<long>(ox) * stride - padding;
                for (std::size_t c = 0; c < ci; ++c) {
                    const T* plane = in + c * h * w;
                    const T* kplane = kn + (o * ci + c) * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const long y = y0 + static_cast<long>(ky);
                        if (y < 0 || y >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long x = x0 + static_cast<long>(kx);
                            if (x < 0 || x >= static_cast<long>(w)) continue;
                            acc += static_cast<double>(plane[y * w + x]) *
                                   static_cast<double>(kplane[ky * kw + kx]);
                        }
                    }
                }
                v[(o * oh + oy) * ow + ox] = static_cast<T>(acc);
            }
        }
    };
    if (co * oh * ow * ci * kh * kw >= detail::kParallelCutoff) {
        parallel_for(co * oh, forward_rows);
    } else {
        forward_rows(0, co * oh);
    }

    const bool rec = bias ? detail::recording(input, kernel, *bias) : detail::recording(input, kernel);
    if (!rec) return Tensor<T>(Shape{co, oh, ow}, std::move(v));

    std::vector<std::shared_ptr<Node<T>>> parents{input.node(), kernel.node()};
    if (bias) parents.push_back(bias->node());
    return detail::make_node<T>(
        Shape{co, oh, ow}, std::move(v), std::move(parents),
        [ci, h, w, co, kh, kw, oh, ow, stride, padding](Node<T>& node) {
            auto& pin = *node.parents[0];
            auto& pker = *node.parents[1];
            const T* in = pin.value.data();
            const T* kn = pker.value.data();
            const T* g = node.grad.data();
            if (pin.wants_grad()) {
                pin.ensure_grad();
                T* ig = pin.grad.data();
                auto input_rows = [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t idx = lo; idx < hi; ++idx) {
                        const std::size_t c = idx / h;
                        const std::size_t iy = idx % h;
                        for (std::size_t ix = 0; ix < w; ++ix) {
                            double acc = 0.0;
                            // gather over output positions whose window covers (iy,ix)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const long num_y = static_cast<long>(iy) + padding - static_cast<long>(ky);
                                if (num_y < 0 || num_y % stride) continue;
                                const std::size_t oy = static_cast<std::size_t>(num_y) / stride;
                                if (oy >= oh) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const long num_x = static_cast<long>(ix) + padding - static_cast<long>(kx);
                                    if (num_x < 0 || num_x % stride) continue;
                                    const std::size_t ox = static_cast<std::size_t>(num_x) / stride;
                                    if (ox >= ow) continue;
                                    for (std::size_t o = 0; o < co; ++o)
                                        acc += static_cast<double>(g[(o * oh + oy) * ow + ox]) *
                                               static_cast<double>(kn[((o * ci + c) * kh + ky) * kw + kx]);
                                }
                            }
                            ig[(c * h + iy) * w + ix] += static_cast<T>(acc);
                        }
                    }
                };
                if (ci * h * w * kh * kw * co >= detail::kParallelCutoff) {
                    parallel_for(ci * h, input_rows);
                } else {
                    input_rows(0, ci * h);
                }
            }
            if (pker.wants_grad()) {
                pker.ensure_grad();
                T* kg = pker.grad.data();
                auto kernel_slices = [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t oc = lo; oc < hi; ++oc) {
                        const std::size_t o = oc / ci;
                        const std::size_t c = oc % ci;
                        for (std::size_t ky = 0; ky < kh; ++ky)
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                double acc = 0.0;
                                for (std::size_t oy = 0; oy < oh; ++oy) {
                                    const long y = static_cast<long>(oy) * stride - padding +
                                                   static_cast<long>(ky);
                                    if (y < 0 || y >= static_cast<long>(h)) continue;
                                    for (std::size_t ox = 0; ox < ow; ++ox) {
                                        const long x = static_cast<long>(ox) * stride - padding +
                                                       static_cast<long>(kx);
                                        if (x < 0 || x >= static_cast<long>(w)) continue;
                                        acc += static_cast<double>(g[(o * oh + oy) * ow + ox]) *
                                               static_cast<double>(in[(c * h + y) * w + x]);
                                    }
                                }
                                kg[((o * ci + c) * kh + ky) * kw + kx] += static_cast<T>(acc);
                            }
                    }
                };
                if (co * ci * kh * kw * oh * ow >= detail::kParallelCutoff) {
                    parallel_for(co * ci, kernel_slices);
                } else {
                    kernel_slices(0, co * ci);
                }
            }
            if (node.parents.size() == 3 && node.parents[2]->wants_grad()) {
                auto& pb = *node.parents[2];
                pb.ensure_grad();
                for (std::size_t o = 0; o < co; ++o) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < oh * ow; ++i)
                        acc += static_cast<double>(g[o * oh * ow + i]);
                    pb.grad[o] += static_cast<T>(acc);
                }
            }
        });
}

}  // namespace misr
