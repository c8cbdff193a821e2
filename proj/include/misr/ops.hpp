#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "misr/parallel.hpp"
#include "misr/tensor.hpp"

namespace misr {

namespace detail {

template <typename T>
Tensor<T> make_node(Shape shape, std::vector<T> value,
                    std::vector<std::shared_ptr<Node<T>>> parents,
                    std::function<void(Node<T>&)> bw) {
    Tensor<T> out(std::move(shape), std::move(value));
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(bw);
    return out;
}

inline constexpr std::size_t kParallelCutoff = std::size_t{1} << 17;

template <typename Fn>
void maybe_parallel(std::size_t n, Fn&& fn) {
    if (n >= kParallelCutoff) {
        parallel_for(n, fn);
    } else {
        fn(0, n);
    }
}

// C[m,n] = A[m,k] * B[k,n], double accumulation per output row.
template <typename T>
void mm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const T* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = static_cast<double>(arow[kk]);
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
    }
}

// C[m,n] = A[m,k] * B[n,k]^T.
template <typename T>
void mm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk)
                s += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
            c[i * n + j] = static_cast<T>(s);
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]; double scratch, i-outer for locality.
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> acc(k * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = static_cast<double>(arow[kk]);
            double* crow = acc.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
        }
    }
    for (std::size_t i = 0; i < k * n; ++i) c[i] += static_cast<T>(acc[i]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_dims(a.shape() == b.shape(),
                 "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    detail::maybe_parallel(a.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) v[i] = pa[i] + pb[i];
    });
    if (!detail::recording(a, b)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(
        a.shape(), std::move(v), {a.node(), b.node()}, [](Node<T>& n) {
            for (auto& p : n.parents)
                if (p->wants_grad()) p->accumulate(n.grad);
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_dims(a.shape() == b.shape(),
                 "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] - b[i];
    if (!detail::recording(a, b)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(
        a.shape(), std::move(v), {a.node(), b.node()}, [](Node<T>& n) {
            if (n.parents[0]->wants_grad()) n.parents[0]->accumulate(n.grad);
            if (n.parents[1]->wants_grad()) {
                auto& p = *n.parents[1];
                p.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] -= n.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_dims(a.shape() == b.shape(),
                 "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] * b[i];
    if (!detail::recording(a, b)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(
        a.shape(), std::move(v), {a.node(), b.node()}, [](Node<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.wants_grad()) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
            }
            if (pb.wants_grad()) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
            }
        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] + s;
    if (!detail::recording(a)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(a.shape(), std::move(v), {a.node()}, [](Node<T>& n) {
        if (n.parents[0]->wants_grad()) n.parents[0]->accumulate(n.grad);
    });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] * s;
    if (!detail::recording(a)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(a.shape(), std::move(v), {a.node()}, [s](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.wants_grad()) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * s;
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]);
    std::vector<T> v{static_cast<T>(s)};
    if (!detail::recording(a)) return Tensor<T>(Shape{1}, std::move(v));
    return detail::make_node<T>(Shape{1}, std::move(v), {a.node()}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.wants_grad()) return;
        p.ensure_grad();
        const T g = n.grad[0];
        for (auto& pg : p.grad) pg += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    require(a.size() > 0, "mean of empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]);
    std::vector<T> v{static_cast<T>(s / static_cast<double>(a.size()))};
    if (!detail::recording(a)) return Tensor<T>(Shape{1}, std::move(v));
    return detail::make_node<T>(Shape{1}, std::move(v), {a.node()}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.wants_grad()) return;
        p.ensure_grad();
        const T g = n.grad[0] / static_cast<T>(p.value.size());
        for (auto& pg : p.grad) pg += g;
    });
}

// Mean over elements where mask is nonzero. Caller guarantees the mask selects
// at least one element.
template <typename T>
Tensor<T> masked_mean(const Tensor<T>& a, const std::vector<std::uint8_t>& mask) {
    require_dims(mask.size() == a.size(), "masked_mean: mask length mismatch");
    std::size_t count = 0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (mask[i]) {
            s += static_cast<double>(a[i]);
            ++count;
        }
    }
    require(count > 0, "masked_mean: mask selects no elements");
    std::vector<T> v{static_cast<T>(s / static_cast<double>(count))};
    if (!detail::recording(a)) return Tensor<T>(Shape{1}, std::move(v));
    return detail::make_node<T>(
        Shape{1}, std::move(v), {a.node()}, [mask, count](Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            const T g = n.grad[0] / static_cast<T>(count);
            for (std::size_t i = 0; i < p.grad.size(); ++i)
                if (mask[i]) p.grad[i] += g;
        });
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_dims(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                 "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> v(m * n);
    detail::mm(a.data(), b.data(), v.data(), m, k, n);
    if (!detail::recording(a, b)) return Tensor<T>(Shape{m, n}, std::move(v));
    return detail::make_node<T>(
        Shape{m, n}, std::move(v), {a.node(), b.node()}, [m, k, n](Node<T>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            if (pa.wants_grad()) {  // dA = g * B^T
                pa.ensure_grad();
                std::vector<T> da(m * k);
                detail::mm_nt(node.grad.data(), pb.value.data(), da.data(), m, n, k);
                for (std::size_t i = 0; i < da.size(); ++i) pa.grad[i] += da[i];
            }
            if (pb.wants_grad()) {  // dB = A^T * g
                pb.ensure_grad();
                detail::mm_tn_acc(pa.value.data(), node.grad.data(), pb.grad.data(), m, k, n);
            }
        });
}

// x[m,k] * w[k,n] + b[n]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                 const std::optional<std::type_identity_t<Tensor<T>>>& b = std::nullopt) {
    require_dims(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
                 "linear: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (b) require_dims(b->rank() == 1 && b->dim(0) == n, "linear: bias shape mismatch");
    std::vector<T> v(m * n);
    detail::mm(x.data(), w.data(), v.data(), m, k, n);
    if (b) {
        const T* pb = b->data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] += pb[j];
    }
    const bool rec = b ? detail::recording(x, w, *b) : detail::recording(x, w);
    if (!rec) return Tensor<T>(Shape{m, n}, std::move(v));
    std::vector<std::shared_ptr<Node<T>>> parents{x.node(), w.node()};
    if (b) parents.push_back(b->node());
    return detail::make_node<T>(
        Shape{m, n}, std::move(v), std::move(parents), [m, k, n](Node<T>& node) {
            auto& px = *node.parents[0];
            auto& pw = *node.parents[1];
            if (px.wants_grad()) {
                px.ensure_grad();
                std::vector<T> dx(m * k);
                detail::mm_nt(node.grad.data(), pw.value.data(), dx.data(), m, n, k);
                for (std::size_t i = 0; i < dx.size(); ++i) px.grad[i] += dx[i];
            }
            if (pw.wants_grad()) {
                pw.ensure_grad();
                detail::mm_tn_acc(px.value.data(), node.grad.data(), pw.grad.data(), m, k, n);
            }
            if (node.parents.size() == 3 && node.parents[2]->wants_grad()) {
                auto& pbias = *node.parents[2];
                pbias.ensure_grad();
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(node.grad[i * n + j]);
                    pbias.grad[j] += static_cast<T>(s);
                }
            }
        });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    require_dims(a.rank() == 2, "transpose2d: rank-2 tensor required");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a[i * n + j];
    if (!detail::recording(a)) return Tensor<T>(Shape{n, m}, std::move(v));
    return detail::make_node<T>(
        Shape{n, m}, std::move(v), {a.node()}, [m, n](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += node.grad[j * m + i];
        });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] > T(0) ? a[i] : T(0);
    if (!detail::recording(a)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(a.shape(), std::move(v), {a.node()}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.wants_grad()) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (p.value[i] > T(0)) p.grad[i] += n.grad[i];
    });
}

namespace detail {

inline double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }

inline double gelu_bwd(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
    const double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

}  // namespace detail

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    detail::maybe_parallel(a.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            v[i] = static_cast<T>(detail::gelu_fwd(static_cast<double>(pa[i])));
    });
    if (!detail::recording(a)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(a.shape(), std::move(v), {a.node()}, [](Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.wants_grad()) return;
        p.ensure_grad();
        const T* pv = p.value.data();
        T* pg = p.grad.data();
        const T* ng = n.grad.data();
        detail::maybe_parallel(n.grad.size(), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i)
                pg[i] += ng[i] * static_cast<T>(detail::gelu_bwd(static_cast<double>(pv[i])));
        });
    });
}

// Row softmax with max subtraction; logits in, probabilities out.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    require_dims(a.rank() == 2, "softmax_rows: rank-2 tensor required");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> v(m * n);
    const T* pa = a.data();
    auto rows = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(pa[i * n + j]));
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double e = std::exp(static_cast<double>(pa[i * n + j]) - mx);
                v[i * n + j] = static_cast<T>(e);
                s += e;
            }
            const double inv = 1.0 / s;
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] = static_cast<T>(static_cast<double>(v[i * n + j]) * inv);
        }
    };
    if (m * n >= detail::kParallelCutoff) {
        parallel_for(m, rows);
    } else {
        rows(0, m);
    }
    if (!detail::recording(a)) return Tensor<T>(a.shape(), std::move(v));
    return detail::make_node<T>(
        a.shape(), std::move(v), {a.node()}, [m, n](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = node.value.data() + i * n;
                const T* g = node.grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
                T* pg = p.grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j)
                    pg[j] += static_cast<T>(static_cast<double>(y[j]) * (static_cast<double>(g[j]) - dot));
            }
        });
}

// ---------------------------------------------------------------------------
// Layout / indexing ops (pure element permutations)

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require_dims(numel(shape) == a.size(),
                 "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<T> v = a.values();
    if (!detail::recording(a)) return Tensor<T>(std::move(shape), std::move(v));
    return detail::make_node<T>(std::move(shape), std::move(v), {a.node()}, [](Node<T>& n) {
        if (n.parents[0]->wants_grad()) n.parents[0]->accumulate(n.grad);
    });
}

// [C,H,W] -> [H*W, C] row-major token matrix.
template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& a) {
    require_dims(a.rank() == 3, "chw_to_tokens: rank-3 tensor required");
    const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2), t = h * w;
    std::vector<T> v(t * c);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < t; ++p) v[p * c + ch] = a[ch * t + p];
    if (!detail::recording(a)) return Tensor<T>(Shape{t, c}, std::move(v));
    return detail::make_node<T>(
        Shape{t, c}, std::move(v), {a.node()}, [c, t](Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t q = 0; q < t; ++q) p.grad[ch * t + q] += n.grad[q * c + ch];
        });
}

// [H*W, C] -> [C,H,W]
template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& a, std::size_t h, std::size_t w) {
    require_dims(a.rank() == 2 && a.dim(0) == h * w, "tokens_to_chw: token count mismatch");
    const std::size_t c = a.dim(1), t = h * w;
    std::vector<T> v(c * t);
    for (std::size_t p = 0; p < t; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) v[ch * t + p] = a[p * c + ch];
    if (!detail::recording(a)) return Tensor<T>(Shape{c, h, w}, std::move(v));
    return detail::make_node<T>(
        Shape{c, h, w}, std::move(v), {a.node()}, [c, t](Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t q = 0; q < t; ++q)
                for (std::size_t ch = 0; ch < c; ++ch) p.grad[q * c + ch] += n.grad[ch * t + q];
        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
    require_dims(a.rank() == 2 && r0 < r1 && r1 <= a.dim(0), "slice_rows: bad range");
    const std::size_t n = a.dim(1);
    std::vector<T> v(a.data() + r0 * n, a.data() + r1 * n);
    if (!detail::recording(a)) return Tensor<T>(Shape{r1 - r0, n}, std::move(v));
    return detail::make_node<T>(
        Shape{r1 - r0, n}, std::move(v), {a.node()}, [r0, n](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) p.grad[r0 * n + i] += node.grad[i];
        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& xs) {
    require(!xs.empty(), "concat_rows: empty input list");
    const std::size_t n = xs[0].dim(1);
    std::size_t rows = 0;
    for (const auto& x : xs) {
        require_dims(x.rank() == 2 && x.dim(1) == n, "concat_rows: column mismatch");
        rows += x.dim(0);
    }
    std::vector<T> v(rows * n);
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::memcpy(v.data() + off, x.data(), x.size() * sizeof(T));
        off += x.size();
    }
    if (!detail::recording_any(xs)) return Tensor<T>(Shape{rows, n}, std::move(v));
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    return detail::make_node<T>(
        Shape{rows, n}, std::move(v), std::move(parents), [](Node<T>& node) {
            std::size_t off = 0;
            for (auto& p : node.parents) {
                const std::size_t len = p->value.size();
                if (p->wants_grad()) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < len; ++i) p->grad[i] += node.grad[off + i];
                }
                off += len;
            }
        });
}

// Channel slice of a [C,H,W] map.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    require_dims(a.rank() == 3 && c0 < c1 && c1 <= a.dim(0), "slice_channels: bad range");
    const std::size_t hw = a.dim(1) * a.dim(2);
    std::vector<T> v(a.data() + c0 * hw, a.data() + c1 * hw);
    if (!detail::recording(a)) return Tensor<T>(Shape{c1 - c0, a.dim(1), a.dim(2)}, std::move(v));
    return detail::make_node<T>(
        Shape{c1 - c0, a.dim(1), a.dim(2)}, std::move(v), {a.node()}, [c0, hw](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) p.grad[c0 * hw + i] += node.grad[i];
        });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    const std::size_t h = xs[0].dim(1), w = xs[0].dim(2);
    std::size_t c = 0;
    for (const auto& x : xs) {
        require_dims(x.rank() == 3 && x.dim(1) == h && x.dim(2) == w, "concat_channels: spatial mismatch");
        c += x.dim(0);
    }
    std::vector<T> v(c * h * w);
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::memcpy(v.data() + off, x.data(), x.size() * sizeof(T));
        off += x.size();
    }
    if (!detail::recording_any(xs)) return Tensor<T>(Shape{c, h, w}, std::move(v));
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    return detail::make_node<T>(
        Shape{c, h, w}, std::move(v), std::move(parents), [](Node<T>& node) {
            std::size_t off = 0;
            for (auto& p : node.parents) {
                const std::size_t len = p->value.size();
                if (p->wants_grad()) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < len; ++i) p->grad[i] += node.grad[off + i];
                }
                off += len;
            }
        });
}

// One index of the leading axis: [K, ...] -> [...]
template <typename T>
Tensor<T> select0(const Tensor<T>& a, std::size_t idx) {
    require_dims(a.rank() >= 2 && idx < a.dim(0), "select0: index out of range");
    Shape out_shape(a.shape().begin() + 1, a.shape().end());
    const std::size_t len = numel(out_shape);
    std::vector<T> v(a.data() + idx * len, a.data() + (idx + 1) * len);
    if (!detail::recording(a)) return Tensor<T>(std::move(out_shape), std::move(v));
    return detail::make_node<T>(
        std::move(out_shape), std::move(v), {a.node()}, [idx, len](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < len; ++i) p.grad[idx * len + i] += node.grad[i];
        });
}

// Groups of n consecutive token rows concatenated along channels:
// [T, C] -> [T/n, n*C].
template <typename T>
Tensor<T> patch_group(const Tensor<T>& a, std::size_t n) {
    require_dims(a.rank() == 2, "patch_group: rank-2 tensor required");
    require_dims(n >= 1 && a.dim(0) % n == 0,
                 "patch_group: patch size " + std::to_string(n) + " does not divide token count " +
                     std::to_string(a.dim(0)));
    Shape shape{a.dim(0) / n, n * a.dim(1)};
    std::vector<T> v = a.values();  // row-major regrouping is a no-op on storage
    if (!detail::recording(a)) return Tensor<T>(std::move(shape), std::move(v));
    return detail::make_node<T>(std::move(shape), std::move(v), {a.node()}, [](Node<T>& node) {
        if (node.parents[0]->wants_grad()) node.parents[0]->accumulate(node.grad);
    });
}

// Elementwise mean of K same-shape tensors.
template <typename T>
Tensor<T> mean_stack(const std::vector<Tensor<T>>& xs) {
    require(!xs.empty(), "mean_stack: empty input list");
    const Shape& shape = xs[0].shape();
    for (const auto& x : xs)
        require_dims(x.shape() == shape, "mean_stack: shape mismatch");
    const double inv = 1.0 / static_cast<double>(xs.size());
    std::vector<T> v(xs[0].size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double s = 0.0;
        for (const auto& x : xs) s += static_cast<double>(x[i]);
        v[i] = static_cast<T>(s * inv);
    }
    if (!detail::recording_any(xs)) return Tensor<T>(shape, std::move(v));
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    return detail::make_node<T>(
        shape, std::move(v), std::move(parents), [inv](Node<T>& node) {
            for (auto& p : node.parents) {
                if (!p->wants_grad()) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < node.grad.size(); ++i)
                    p->grad[i] += static_cast<T>(static_cast<double>(node.grad[i]) * inv);
            }
        });
}

// ---------------------------------------------------------------------------
// Pixel shuffle

// out[c, r*h+a, r*w+b] = in[c*r*r + a*r + b, h, w]
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    require_dims(x.rank() == 3, "pixel_shuffle: rank-3 tensor required");
    require(r >= 1, "pixel_shuffle: factor must be >= 1");
    require_dims(x.dim(0) % (r * r) == 0,
                 "pixel_shuffle: channel count " + std::to_string(x.dim(0)) +
                     " not divisible by r^2=" + std::to_string(r * r));
    const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
    std::vector<T> v(x.size());
    const std::size_t oh = r * h, ow = r * w;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < r; ++a)
            for (std::size_t b = 0; b < r; ++b) {
                const T* src = x.data() + ((ch * r * r + a * r + b) * h) * w;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        v[(ch * oh + (r * y + a)) * ow + (r * xx + b)] = src[y * w + xx];
            }
    if (!detail::recording(x)) return Tensor<T>(Shape{c, oh, ow}, std::move(v));
    return detail::make_node<T>(
        Shape{c, oh, ow}, std::move(v), {x.node()}, [c, h, w, r](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            const std::size_t oh = r * h, ow = r * w;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t a = 0; a < r; ++a)
                    for (std::size_t b = 0; b < r; ++b) {
                        T* dst = p.grad.data() + ((ch * r * r + a * r + b) * h) * w;
                        for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t xx = 0; xx < w; ++xx)
                                dst[y * w + xx] += node.grad[(ch * oh + (r * y + a)) * ow + (r * xx + b)];
                    }
        });
}

// Inverse rearrangement of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
    require_dims(x.rank() == 3, "pixel_unshuffle: rank-3 tensor required");
    require(r >= 1, "pixel_unshuffle: factor must be >= 1");
    require_dims(x.dim(1) % r == 0 && x.dim(2) % r == 0, "pixel_unshuffle: spatial dims not divisible by r");
    const std::size_t c = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r;
    std::vector<T> v(x.size());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < r; ++a)
            for (std::size_t b = 0; b < r; ++b)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        v[((ch * r * r + a * r + b) * h + y) * w + xx] =
                            x[(ch * (h * r) + (r * y + a)) * (w * r) + (r * xx + b)];
    if (!detail::recording(x)) return Tensor<T>(Shape{c * r * r, h, w}, std::move(v));
    return detail::make_node<T>(
        Shape{c * r * r, h, w}, std::move(v), {x.node()}, [c, h, w, r](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t a = 0; a < r; ++a)
                    for (std::size_t b = 0; b < r; ++b)
                        for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t xx = 0; xx < w; ++xx)
                                p.grad[(ch * (h * r) + (r * y + a)) * (w * r) + (r * xx + b)] +=
                                    node.grad[((ch * r * r + a * r + b) * h + y) * w + xx];
        });
}

// ---------------------------------------------------------------------------
// Composites

// Two linear layers with GELU between.
template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
              const Tensor<T>& b2) {
    return linear(gelu(linear(x, w1, b1)), w2, b2);
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> d = sub(a, b);
    return mean(mul(d, d));
}

}  // namespace misr
