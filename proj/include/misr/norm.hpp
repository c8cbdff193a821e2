#pragma once

#include <memory>
#include <vector>

#include "misr/ops.hpp"
#include "misr/tensor.hpp"

namespace misr {

// Layer norm over the channel axis of a [T,C] token matrix, one mean/variance
// per token row, learnable scale/shift. Epsilon keeps zero-variance rows
// finite (constant row -> zeros before scale/shift).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    require_dims(x.rank() == 2, "layer_norm: rank-2 [tokens, channels] required");
    const std::size_t m = x.dim(0), c = x.dim(1);
    require_dims(gamma.size() == c && beta.size() == c, "layer_norm: affine shape mismatch");
    std::vector<T> v(m * c);
    std::vector<T> inv_std(m), mu(m);
    const T* px = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += static_cast<double>(px[i * c + j]);
        const double mean = s / c;
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = static_cast<double>(px[i * c + j]) - mean;
            var += d * d;
        }
        var /= c;
        const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
        mu[i] = static_cast<T>(mean);
        inv_std[i] = static_cast<T>(istd);
        for (std::size_t j = 0; j < c; ++j)
            v[i * c + j] = static_cast<T>((static_cast<double>(px[i * c + j]) - mean) * istd *
                                              static_cast<double>(gamma[j]) +
                                          static_cast<double>(beta[j]));
    }
    if (!detail::recording(x, gamma, beta)) return Tensor<T>(x.shape(), std::move(v));
    return detail::make_node<T>(
        x.shape(), std::move(v), {x.node(), gamma.node(), beta.node()},
        [m, c, mu, inv_std](Node<T>& node) {
            auto& px = *node.parents[0];
            auto& pg = *node.parents[1];
            auto& pb = *node.parents[2];
            const T* xv = px.value.data();
            const T* gv = pg.value.data();
            const T* g = node.grad.data();
            if (pg.wants_grad() || pb.wants_grad()) {
                if (pg.wants_grad()) pg.ensure_grad();
                if (pb.wants_grad()) pb.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) {
                    double dg = 0.0, db = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double xhat = (static_cast<double>(xv[i * c + j]) -
                                             static_cast<double>(mu[i])) *
                                            static_cast<double>(inv_std[i]);
                        dg += static_cast<double>(g[i * c + j]) * xhat;
                        db += static_cast<double>(g[i * c + j]);
                    }
                    if (pg.wants_grad()) pg.grad[j] += static_cast<T>(dg);
                    if (pb.wants_grad()) pb.grad[j] += static_cast<T>(db);
                }
            }
            if (px.wants_grad()) {
                px.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const double istd = static_cast<double>(inv_std[i]);
                    const double mean = static_cast<double>(mu[i]);
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dy = static_cast<double>(g[i * c + j]) * static_cast<double>(gv[j]);
                        const double xhat = (static_cast<double>(xv[i * c + j]) - mean) * istd;
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                    }
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dy = static_cast<double>(g[i * c + j]) * static_cast<double>(gv[j]);
                        const double xhat = (static_cast<double>(xv[i * c + j]) - mean) * istd;
                        px.grad[i * c + j] += static_cast<T>(
                            istd * (dy - sum_dy / c - xhat * sum_dy_xhat / c));
                    }
                }
            }
        });
}

// Running statistics for batch norm; owned by the layer, serialized as
// checkpoint buffers.
template <typename T>
struct BnStats {
    std::shared_ptr<std::vector<T>> mean;
    std::shared_ptr<std::vector<T>> var;

    explicit BnStats(std::size_t channels = 0)
        : mean(std::make_shared<std::vector<T>>(channels, T(0))),
          var(std::make_shared<std::vector<T>>(channels, T(1))) {}
};

// Batch norm over a [C,H,W] map: per-channel statistics over the H*W samples.
// Training mode normalizes with the current statistics and updates the running
// buffers (unbiased variance, momentum 0.1 by default); eval mode uses the
// stored running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BnStats<T>& stats, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    require_dims(x.rank() == 3, "batch_norm: rank-3 [C,H,W] required");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    require_dims(gamma.size() == c && beta.size() == c, "batch_norm: affine shape mismatch");
    require_dims(stats.mean->size() == c && stats.var->size() == c,
                 "batch_norm: running stats channel mismatch");
    std::vector<T> v(x.size());
    std::vector<T> mu(c), inv_std(c);
    const T* px = x.data();
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(px[ch * hw + i]);
            const double mean = s / hw;
            double var = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = static_cast<double>(px[ch * hw + i]) - mean;
                var += d * d;
            }
            var /= hw;  // biased, used for normalization
            mu[ch] = static_cast<T>(mean);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            const double unbiased = hw > 1 ? var * hw / (hw - 1) : var;
            (*stats.mean)[ch] = static_cast<T>((1.0 - momentum) * (*stats.mean)[ch] + momentum * mean);
            (*stats.var)[ch] = static_cast<T>((1.0 - momentum) * (*stats.var)[ch] + momentum * unbiased);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = (*stats.mean)[ch];
            inv_std[ch] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>((*stats.var)[ch]) + static_cast<double>(eps)));
        }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mean = mu[ch];
        const double istd = inv_std[ch];
        const double gch = gamma[ch], bch = beta[ch];
        for (std::size_t i = 0; i < hw; ++i)
            v[ch * hw + i] = static_cast<T>(
                (static_cast<double>(px[ch * hw + i]) - mean) * istd * gch + bch);
    }
    if (!detail::recording(x, gamma, beta)) return Tensor<T>(x.shape(), std::move(v));
    return detail::make_node<T>(
        x.shape(), std::move(v), {x.node(), gamma.node(), beta.node()},
        [c, hw, mu, inv_std, training](Node<T>& node) {
            auto& px = *node.parents[0];
            auto& pg = *node.parents[1];
            auto& pb = *node.parents[2];
            const T* xv = px.value.data();
            const T* g = node.grad.data();
            if (pg.wants_grad()) pg.ensure_grad();
            if (pb.wants_grad()) pb.ensure_grad();
            if (px.wants_grad()) px.ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double mean = static_cast<double>(mu[ch]);
                const double istd = static_cast<double>(inv_std[ch]);
                const double gch = static_cast<double>(pg.value[ch]);
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double dy = static_cast<double>(g[ch * hw + i]);
                    const double xhat = (static_cast<double>(xv[ch * hw + i]) - mean) * istd;
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                }
                if (pg.wants_grad()) pg.grad[ch] += static_cast<T>(sum_dy_xhat);
                if (pb.wants_grad()) pb.grad[ch] += static_cast<T>(sum_dy);
                if (px.wants_grad()) {
                    if (training) {
                        // batch statistics depend on x
                        for (std::size_t i = 0; i < hw; ++i) {
                            const double dy = static_cast<double>(g[ch * hw + i]);
                            const double xhat = (static_cast<double>(xv[ch * hw + i]) - mean) * istd;
                            px.grad[ch * hw + i] += static_cast<T>(
                                gch * istd * (dy - sum_dy / hw - xhat * sum_dy_xhat / hw));
                        }
                    } else {
                        for (std::size_t i = 0; i < hw; ++i)
                            px.grad[ch * hw + i] +=
                                static_cast<T>(static_cast<double>(g[ch * hw + i]) * gch * istd);
                    }
                }
            }
        });
}

}  // namespace misr
