#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "misr/ops.hpp"
#include "misr/tensor.hpp"

namespace misr {

// Per-token position metadata for structured attention bias. Every token has
// a spatial anchor (for the relative-offset table), a frame slot, and a type
// (image or message token).
struct TokenMeta {
    std::vector<std::int32_t> y, x;
    std::vector<std::int32_t> slot;
    std::vector<std::int32_t> type;  // 0 image, 1 message
    std::int32_t table_h = 0;        // spatial extent the relative table covers
    std::int32_t table_w = 0;
    std::int32_t slots = 1;

    std::size_t tokens() const { return y.size(); }
    std::size_t rel_entries() const {
        return static_cast<std::size_t>(2 * table_h - 1) * static_cast<std::size_t>(2 * table_w - 1);
    }
    std::size_t rel_index(std::size_t i, std::size_t j) const {
        const std::int32_t dy = y[i] - y[j] + table_h - 1;
        const std::int32_t dx = x[i] - x[j] + table_w - 1;
        return static_cast<std::size_t>(dy) * static_cast<std::size_t>(2 * table_w - 1) +
               static_cast<std::size_t>(dx);
    }
};

// Additive attention bias. Exactly one flavor is active:
//  - none: all logits unbiased
//  - dense: a full [heads, T, T] tensor (the small-scale form)
//  - structured: per-head lookup tables evaluated on the fly from TokenMeta,
//    B(i,j) = rel[off(i,j)] + type_pair[type_i,type_j] + frame_pair[slot_i,slot_j],
//    with the last two terms optional. Avoids materializing T x T matrices.
template <typename T>
struct AttnBias {
    std::optional<Tensor<T>> dense;       // [heads, T, T]
    std::optional<Tensor<T>> rel;         // [heads, (2h-1)*(2w-1)]
    std::optional<Tensor<T>> type_pair;   // [heads, 4]
    std::optional<Tensor<T>> frame_pair;  // [heads, slots*slots]
    std::shared_ptr<TokenMeta> meta;

    static AttnBias none() { return {}; }
    static AttnBias make_dense(Tensor<T> b) {
        AttnBias out;
        out.dense = std::move(b);
        return out;
    }
    bool is_structured() const { return rel.has_value(); }
    bool is_dense() const { return dense.has_value(); }
};

namespace attdetail {

struct NoBiasEval {
    double operator()(std::size_t, std::size_t, std::size_t) const { return 0.0; }
};

template <typename T>
struct DenseBiasEval {
    const T* b;
    std::size_t t;
    double operator()(std::size_t h, std::size_t i, std::size_t j) const {
        return static_cast<double>(b[(h * t + i) * t + j]);
    }
};

template <typename T>
struct StructuredBiasEval {
    const TokenMeta* meta;
    const T* rel;         // [heads, rel_entries]
    const T* type_pair;   // nullable
    const T* frame_pair;  // nullable
    std::size_t rel_n = 0;
    std::size_t slots = 1;

    double operator()(std::size_t h, std::size_t i, std::size_t j) const {
        double b = static_cast<double>(rel[h * rel_n + meta->rel_index(i, j)]);
        if (type_pair)
            b += static_cast<double>(
                type_pair[h * 4 + static_cast<std::size_t>(meta->type[i]) * 2 +
                          static_cast<std::size_t>(meta->type[j])]);
        if (frame_pair)
            b += static_cast<double>(
                frame_pair[(h * slots + static_cast<std::size_t>(meta->slot[i])) * slots +
                           static_cast<std::size_t>(meta->slot[j])]);
        return b;
    }
};

// Scaled-dot-product attention core over already-projected Q,K,V.
// Writes softmax rows into attn (size heads*T*T) when attn != nullptr.
template <typename T, typename BiasEval>
void attn_forward(const T* q, const T* k, const T* v, T* out, T* attn, std::size_t t,
                  std::size_t c, std::size_t heads, const BiasEval& bias) {
    const std::size_t d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t h = 0; h < heads; ++h) {
        // contiguous per-head copies
        std::vector<T> qh(t * d), kh(t * d), vh(t * d);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t e = 0; e < d; ++e) {
                qh[i * d + e] = q[i * c + h * d + e];
                kh[i * d + e] = k[i * c + h * d + e];
                vh[i * d + e] = v[i * c + h * d + e];
            }
        T* ah = attn ? attn + h * t * t : nullptr;
        parallel_for(t, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> row(t);
            std::vector<double> ctx(d);
            for (std::size_t i = lo; i < hi; ++i) {
                const T* qi = qh.data() + i * d;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < t; ++j) {
                    const T* kj = kh.data() + j * d;
                    double s = 0.0;
                    for (std::size_t e = 0; e < d; ++e)
                        s += static_cast<double>(qi[e]) * static_cast<double>(kj[e]);
                    s = s * scale + bias(h, i, j);
                    row[j] = s;
                    if (s > mx) mx = s;
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < t; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    denom += row[j];
                }
                const double inv = 1.0 / denom;
                std::fill(ctx.begin(), ctx.end(), 0.0);
                for (std::size_t j = 0; j < t; ++j) {
                    const double a = row[j] * inv;
                    if (ah) ah[i * t + j] = static_cast<T>(a);
                    const T* vj = vh.data() + j * d;
                    for (std::size_t e = 0; e < d; ++e) ctx[e] += a * static_cast<double>(vj[e]);
                }
                for (std::size_t e = 0; e < d; ++e) out[i * c + h * d + e] = static_cast<T>(ctx[e]);
            }
        });
    }
}

// Backward of the attention core. attn holds the stored softmax rows.
// dlogits is scattered into the bias gradient by the caller-provided sink.
template <typename T, typename BiasGradSink>
void attn_backward(const T* q, const T* k, const T* v, const T* attn, const T* dout, T* dq,
                   T* dk, T* dv, std::size_t t, std::size_t c, std::size_t heads,
                   BiasGradSink&& bias_sink) {
    const std::size_t d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t h = 0; h < heads; ++h) {
        std::vector<T> qh(t * d), kh(t * d), vh(t * d), gh(t * d);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t e = 0; e < d; ++e) {
                qh[i * d + e] = q[i * c + h * d + e];
                kh[i * d + e] = k[i * c + h * d + e];
                vh[i * d + e] = v[i * c + h * d + e];
                gh[i * d + e] = dout[i * c + h * d + e];
            }
        const T* ah = attn + h * t * t;
        std::vector<T> dlogits(t * t);
        std::vector<T> dqh(t * d, T(0)), dkh(t * d, T(0)), dvh(t * d, T(0));
        // rows: dA -> dlogits -> dQ
        parallel_for(t, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> da(t);
            std::vector<double> dq_acc(d);
            for (std::size_t i = lo; i < hi; ++i) {
                const T* gi = gh.data() + i * d;
                const T* arow = ah + i * t;
                double inner = 0.0;  // sum_k dA_ik * A_ik
                for (std::size_t j = 0; j < t; ++j) {
                    const T* vj = vh.data() + j * d;
                    double s = 0.0;
                    for (std::size_t e = 0; e < d; ++e)
                        s += static_cast<double>(gi[e]) * static_cast<double>(vj[e]);
                    da[j] = s;
                    inner += s * static_cast<double>(arow[j]);
                }
                std::fill(dq_acc.begin(), dq_acc.end(), 0.0);
                for (std::size_t j = 0; j < t; ++j) {
                    const double dl = static_cast<double>(arow[j]) * (da[j] - inner);
                    dlogits[i * t + j] = static_cast<T>(dl);
                    const T* kj = kh.data() + j * d;
                    const double dls = dl * scale;
                    for (std::size_t e = 0; e < d; ++e)
                        dq_acc[e] += dls * static_cast<double>(kj[e]);
                }
                T* dqi = dqh.data() + i * d;
                for (std::size_t e = 0; e < d; ++e) dqi[e] = static_cast<T>(dq_acc[e]);
            }
        });
        // columns: dK and dV, parallel over key chunks with i-outer walks
        parallel_for(t, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> acc((hi - lo) * d, 0.0);
            std::vector<double> accv((hi - lo) * d, 0.0);
            for (std::size_t i = 0; i < t; ++i) {
                const T* qi = qh.data() + i * d;
                const T* gi = gh.data() + i * d;
                const T* dlrow = dlogits.data() + i * t;
                const T* arow = ah + i * t;
                for (std::size_t j = lo; j < hi; ++j) {
                    const double dls = static_cast<double>(dlrow[j]) * scale;
                    const double a = static_cast<double>(arow[j]);
                    double* accj = acc.data() + (j - lo) * d;
                    double* accvj = accv.data() + (j - lo) * d;
                    for (std::size_t e = 0; e < d; ++e) {
                        accj[e] += dls * static_cast<double>(qi[e]);
                        accvj[e] += a * static_cast<double>(gi[e]);
                    }
                }
            }
            for (std::size_t j = lo; j < hi; ++j)
                for (std::size_t e = 0; e < d; ++e) {
                    dkh[j * d + e] = static_cast<T>(acc[(j - lo) * d + e]);
                    dvh[j * d + e] = static_cast<T>(accv[(j - lo) * d + e]);
                }
        });
        bias_sink(h, dlogits);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t e = 0; e < d; ++e) {
                dq[i * c + h * d + e] += dqh[i * d + e];
                dk[i * c + h * d + e] += dkh[i * d + e];
                dv[i * c + h * d + e] += dvh[i * d + e];
            }
    }
}

}  // namespace attdetail

// Attention core: softmax(Q Kh^T / sqrt(d) + B) Vh per head, heads
// concatenated. Q,K,V are [T,C] with C divisible by heads.
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                         const AttnBias<T>& bias) {
    require_dims(q.rank() == 2 && k.shape() == q.shape() && v.shape() == q.shape(),
                 "attention_core: Q,K,V must share shape [T,C]");
    const std::size_t t = q.dim(0), c = q.dim(1);
    require_dims(heads >= 1 && c % static_cast<std::size_t>(heads) == 0,
                 "attention_core: heads must divide channel width");
    const std::size_t h = static_cast<std::size_t>(heads);
    if (bias.is_dense()) {
        require_dims(bias.dense->rank() == 3 && bias.dense->dim(0) == h &&
                         bias.dense->dim(1) == t && bias.dense->dim(2) == t,
                     "attention_core: bias shape " + shape_str(bias.dense->shape()) +
                         " does not match [heads," + std::to_string(t) + "," + std::to_string(t) + "]");
    }
    if (bias.is_structured()) {
        require_dims(bias.meta && bias.meta->tokens() == t,
                     "attention_core: token metadata does not match token count");
        require_dims(bias.rel->rank() == 2 && bias.rel->dim(0) == h &&
                         bias.rel->dim(1) == bias.meta->rel_entries(),
                     "attention_core: relative table shape mismatch");
    }

    const bool rec = [&] {
        if (!GradMode::enabled()) return false;
        if (q.tracked() || k.tracked() || v.tracked()) return true;
        if (bias.is_dense() && bias.dense->tracked()) return true;
        if (bias.is_structured()) {
            if (bias.rel->tracked()) return true;
            if (bias.type_pair && bias.type_pair->tracked()) return true;
            if (bias.frame_pair && bias.frame_pair->tracked()) return true;
        }
        return false;
    }();

    std::vector<T> out(t * c);
    auto attn = rec ? std::make_shared<std::vector<T>>(h * t * t) : nullptr;
    T* attn_ptr = attn ? attn->data() : nullptr;
    if (bias.is_dense()) {
        attdetail::DenseBiasEval<T> be{bias.dense->data(), t};
        attdetail::attn_forward(q.data(), k.data(), v.data(), out.data(), attn_ptr, t, c, h, be);
    } else if (bias.is_structured()) {
        attdetail::StructuredBiasEval<T> be{bias.meta.get(), bias.rel->data(),
                                            bias.type_pair ? bias.type_pair->data() : nullptr,
                                            bias.frame_pair ? bias.frame_pair->data() : nullptr,
                                            bias.meta->rel_entries(),
                                            static_cast<std::size_t>(bias.meta->slots)};
        attdetail::attn_forward(q.data(), k.data(), v.data(), out.data(), attn_ptr, t, c, h, be);
    } else {
        attdetail::attn_forward(q.data(), k.data(), v.data(), out.data(), attn_ptr, t, c, h,
                                attdetail::NoBiasEval{});
    }
    if (!rec) return Tensor<T>(Shape{t, c}, std::move(out));

    std::vector<std::shared_ptr<Node<T>>> parents{q.node(), k.node(), v.node()};
    // parent slots 3+: dense | rel [, type_pair][, frame_pair]
    int dense_at = -1, rel_at = -1, type_at = -1, frame_at = -1;
    if (bias.is_dense()) {
        dense_at = static_cast<int>(parents.size());
        parents.push_back(bias.dense->node());
    } else if (bias.is_structured()) {
        rel_at = static_cast<int>(parents.size());
        parents.push_back(bias.rel->node());
        if (bias.type_pair) {
            type_at = static_cast<int>(parents.size());
            parents.push_back(bias.type_pair->node());
        }
        if (bias.frame_pair) {
            frame_at = static_cast<int>(parents.size());
            parents.push_back(bias.frame_pair->node());
        }
    }
    auto meta = bias.meta;
    return detail::make_node<T>(
        Shape{t, c}, std::move(out), std::move(parents),
        [t, c, h, attn, meta, dense_at, rel_at, type_at, frame_at](Node<T>& node) {
            auto& pq = *node.parents[0];
            auto& pk = *node.parents[1];
            auto& pv = *node.parents[2];
            pq.ensure_grad();
            pk.ensure_grad();
            pv.ensure_grad();
            Node<T>* dense_n = dense_at >= 0 ? node.parents[dense_at].get() : nullptr;
            Node<T>* rel_n = rel_at >= 0 ? node.parents[rel_at].get() : nullptr;
            Node<T>* type_n = type_at >= 0 ? node.parents[type_at].get() : nullptr;
            Node<T>* frame_n = frame_at >= 0 ? node.parents[frame_at].get() : nullptr;
            if (dense_n && dense_n->wants_grad()) dense_n->ensure_grad();
            if (rel_n && rel_n->wants_grad()) rel_n->ensure_grad();
            if (type_n && type_n->wants_grad()) type_n->ensure_grad();
            if (frame_n && frame_n->wants_grad()) frame_n->ensure_grad();

            auto sink = [&](std::size_t head, const std::vector<T>& dlogits) {
                if (dense_n && dense_n->wants_grad()) {
                    T* dst = dense_n->grad.data() + head * t * t;
                    for (std::size_t i = 0; i < t * t; ++i) dst[i] += dlogits[i];
                }
                if (!rel_n || !meta) return;
                const std::size_t rel_n_entries = meta->rel_entries();
                const std::size_t slots = static_cast<std::size_t>(meta->slots);
                const std::size_t n_chunks = kParallelChunks;
                std::vector<std::vector<double>> rel_part(n_chunks);
                std::vector<std::vector<double>> type_part(n_chunks);
                std::vector<std::vector<double>> frame_part(n_chunks);
                parallel_for_indexed(t, [&](std::size_t chunk, std::size_t lo, std::size_t hi) {
                    auto& rp = rel_part[chunk];
                    rp.assign(rel_n_entries, 0.0);
                    auto& tp = type_part[chunk];
                    auto& fp = frame_part[chunk];
                    if (type_n) tp.assign(4, 0.0);
                    if (frame_n) fp.assign(slots * slots, 0.0);
                    for (std::size_t i = lo; i < hi; ++i)
                        for (std::size_t j = 0; j < t; ++j) {
                            const double dl = static_cast<double>(dlogits[i * t + j]);
                            rp[meta->rel_index(i, j)] += dl;
                            if (type_n)
                                tp[static_cast<std::size_t>(meta->type[i]) * 2 +
                                   static_cast<std::size_t>(meta->type[j])] += dl;
                            if (frame_n)
                                fp[static_cast<std::size_t>(meta->slot[i]) * slots +
                                   static_cast<std::size_t>(meta->slot[j])] += dl;
                        }
                });
                for (std::size_t ck = 0; ck < n_chunks; ++ck) {
                    if (rel_n->wants_grad() && !rel_part[ck].empty())
                        for (std::size_t e = 0; e < rel_n_entries; ++e)
                            rel_n->grad[head * rel_n_entries + e] += static_cast<T>(rel_part[ck][e]);
                    if (type_n && type_n->wants_grad() && !type_part[ck].empty())
                        for (std::size_t e = 0; e < 4; ++e)
                            type_n->grad[head * 4 + e] += static_cast<T>(type_part[ck][e]);
                    if (frame_n && frame_n->wants_grad() && !frame_part[ck].empty())
                        for (std::size_t e = 0; e < slots * slots; ++e)
                            frame_n->grad[head * slots * slots + e] += static_cast<T>(frame_part[ck][e]);
                }
            };
            attdetail::attn_backward(pq.value.data(), pk.value.data(), pv.value.data(),
                                     attn->data(), node.grad.data(), pq.grad.data(),
                                     pk.grad.data(), pv.grad.data(), t, c, h, sink);
        });
}

// Full multi-head self-attention: projections, biased softmax attention, and
// output projection.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
               const Tensor<T>& wo, const std::optional<Tensor<T>>& bq,
               const std::optional<Tensor<T>>& bk, const std::optional<Tensor<T>>& bv,
               const std::optional<Tensor<T>>& bo, int heads, const AttnBias<T>& bias) {
    require_dims(x.rank() == 2, "mhsa: rank-2 [T,C] input required");
    Tensor<T> q = linear(x, wq, bq);
    Tensor<T> k = linear(x, wk, bk);
    Tensor<T> v = linear(x, wv, bv);
    Tensor<T> ctx = attention_core(q, k, v, heads, bias);
    return linear(ctx, wo, bo);
}

// Bias-projection-free form matching the operator contract:
// mhsa(x, w_q, w_k, w_v, w_o, bias[heads,T,T], heads).
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
               const Tensor<T>& wo, const Tensor<T>& bias, int heads) {
    return mhsa(x, wq, wk, wv, wo, std::optional<Tensor<T>>{}, std::optional<Tensor<T>>{},
                std::optional<Tensor<T>>{}, std::optional<Tensor<T>>{}, heads,
                AttnBias<T>::make_dense(bias));
}

}  // namespace misr
