#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "misr/model.hpp"

namespace misr::verify {

// Independent reference implementations (plain double loops, no autodiff, no
// shared kernels) used to cross-check the tensor operators and the composed
// model blocks, plus the finite-difference gradient machinery.

namespace oracle {

inline std::vector<double> conv2d_direct(const std::vector<double>& in, int ci, int h, int w,
                                         const std::vector<double>& k, int co, int kh, int kw,
                                         int stride, int pad, const std::vector<double>& bias) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(co) * oh * ow, 0.0);
    for (int o = 0; o < co; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (int c = 0; c < ci; ++c)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int y = oy * stride - pad + ky;
                            const int x = ox * stride - pad + kx;
                            if (y < 0 || y >= h || x < 0 || x >= w) continue;
                            acc += in[(static_cast<std::size_t>(c) * h + y) * w + x] *
                                   k[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw + kx];
                        }
                out[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] = acc;
            }
    return out;
}

// Direct O(N^2) 2D DFT, unnormalized forward (sign=-1) or unnormalized
// inverse kernel (sign=+1).
inline void dft2_direct(const std::vector<double>& re, const std::vector<double>& im, int h, int w,
                        int sign, std::vector<double>& out_re, std::vector<double>& out_im) {
    out_re.assign(static_cast<std::size_t>(h) * w, 0.0);
    out_im.assign(static_cast<std::size_t>(h) * w, 0.0);
    const double tau = 2.0 * 3.14159265358979323846;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            double sr = 0.0, si = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double ang = sign * tau * (static_cast<double>(u) * y / h +
                                                     static_cast<double>(v) * x / w);
                    const double c = std::cos(ang), s = std::sin(ang);
                    const double a = re[static_cast<std::size_t>(y) * w + x];
                    const double b = im.empty() ? 0.0 : im[static_cast<std::size_t>(y) * w + x];
                    sr += a * c - b * s;
                    si += a * s + b * c;
                }
            out_re[static_cast<std::size_t>(u) * w + v] = sr;
            out_im[static_cast<std::size_t>(u) * w + v] = si;
        }
}

inline std::vector<double> linear_direct(const std::vector<double>& x, int m, int k,
                                         const std::vector<double>& w, int n,
                                         const std::vector<double>& b) {
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = b.empty() ? 0.0 : b[j];
            for (int kk = 0; kk < k; ++kk)
                s += x[static_cast<std::size_t>(i) * k + kk] * w[static_cast<std::size_t>(kk) * n + j];
            out[static_cast<std::size_t>(i) * n + j] = s;
        }
    return out;
}

inline std::vector<double> layer_norm_direct(const std::vector<double>& x, int m, int c,
                                             const std::vector<double>& gamma,
                                             const std::vector<double>& beta, double eps = 1e-5) {
    std::vector<double> out(x.size());
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x[static_cast<std::size_t>(i) * c + j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = x[static_cast<std::size_t>(i) * c + j] - mean;
            var += d * d;
        }
        var /= c;
        const double istd = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i) * c + j] =
                (x[static_cast<std::size_t>(i) * c + j] - mean) * istd * gamma[j] + beta[j];
    }
    return out;
}

inline std::vector<double> bn_train_direct(const std::vector<double>& x, int c, int hw,
                                           const std::vector<double>& gamma,
                                           const std::vector<double>& beta, double eps = 1e-5) {
    std::vector<double> out(x.size());
    for (int ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (int i = 0; i < hw; ++i) mean += x[static_cast<std::size_t>(ch) * hw + i];
        mean /= hw;
        double var = 0.0;
        for (int i = 0; i < hw; ++i) {
            const double d = x[static_cast<std::size_t>(ch) * hw + i] - mean;
            var += d * d;
        }
        var /= hw;
        const double istd = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < hw; ++i)
            out[static_cast<std::size_t>(ch) * hw + i] =
                (x[static_cast<std::size_t>(ch) * hw + i] - mean) * istd * gamma[ch] + beta[ch];
    }
    return out;
}

inline double gelu_direct(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }

inline std::vector<double> gelu_vec(std::vector<double> x) {
    for (auto& v : x) v = gelu_direct(v);
    return x;
}

inline std::vector<double> relu_vec(std::vector<double> x) {
    for (auto& v : x) v = v > 0.0 ? v : 0.0;
    return x;
}

// Gaussian CDF by Simpson quadrature of the density; the independent route
// for checking the erf-based GELU.
inline double gauss_cdf_quadrature(double x) {
    const int steps = 4000;  // even
    const double lo = 0.0, hi = std::abs(x);
    const double hstep = (hi - lo) / steps;
    auto pdf = [](double t) { return 0.3989422804014327 * std::exp(-0.5 * t * t); };
    double s = pdf(lo) + pdf(hi);
    for (int i = 1; i < steps; ++i) s += pdf(lo + i * hstep) * (i % 2 ? 4.0 : 2.0);
    const double integral = s * hstep / 3.0;
    return x >= 0.0 ? 0.5 + integral : 0.5 - integral;
}

// Explicit per-head attention: Softmax(Q K^T / sqrt(d) + B) V, heads
// concatenated, then the output projection.
inline std::vector<double> mhsa_direct(const std::vector<double>& x, int t, int c,
                                       const std::vector<double>& wq, const std::vector<double>& bq,
                                       const std::vector<double>& wk, const std::vector<double>& bk,
                                       const std::vector<double>& wv, const std::vector<double>& bv,
                                       const std::vector<double>& wo, const std::vector<double>& bo,
                                       const std::vector<double>& bias, int heads) {
    const int d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    auto q = linear_direct(x, t, c, wq, c, bq);
    auto k = linear_direct(x, t, c, wk, c, bk);
    auto v = linear_direct(x, t, c, wv, c, bv);
    std::vector<double> ctx(static_cast<std::size_t>(t) * c, 0.0);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < t; ++i) {
            std::vector<double> logits(t);
            double mx = -1e300;
            for (int j = 0; j < t; ++j) {
                double s = 0.0;
                for (int e = 0; e < d; ++e)
                    s += q[static_cast<std::size_t>(i) * c + h * d + e] *
                         k[static_cast<std::size_t>(j) * c + h * d + e];
                s *= scale;
                if (!bias.empty())
                    s += bias[(static_cast<std::size_t>(h) * t + i) * t + j];
                logits[j] = s;
                mx = std::max(mx, s);
            }
            double denom = 0.0;
            for (int j = 0; j < t; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                denom += logits[j];
            }
            for (int j = 0; j < t; ++j) {
                const double a = logits[j] / denom;
                for (int e = 0; e < d; ++e)
                    ctx[static_cast<std::size_t>(i) * c + h * d + e] +=
                        a * v[static_cast<std::size_t>(j) * c + h * d + e];
            }
        }
    }
    return linear_direct(ctx, t, c, wo, c, bo);
}

}  // namespace oracle

// --------------------------------------------------------------------------
// Helpers bridging Tensor and raw vectors

template <typename T>
std::vector<double> to_d(const Tensor<T>& t) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t[i]);
    return v;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

// Expands structured bias tables into a dense [heads,T,T] buffer; lets the
// oracles treat both bias flavors uniformly.
template <typename T>
std::vector<double> structured_bias_dense(const TokenMeta& meta, const Tensor<T>& rel,
                                          const Tensor<T>* type_pair, const Tensor<T>* frame_pair,
                                          int heads) {
    const std::size_t t = meta.tokens();
    const std::size_t rn = meta.rel_entries();
    const std::size_t slots = static_cast<std::size_t>(meta.slots);
    std::vector<double> b(static_cast<std::size_t>(heads) * t * t, 0.0);
    for (int h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                double v = static_cast<double>(rel[h * rn + meta.rel_index(i, j)]);
                if (type_pair)
                    v += static_cast<double>(
                        (*type_pair)[h * 4 + static_cast<std::size_t>(meta.type[i]) * 2 +
                                     static_cast<std::size_t>(meta.type[j])]);
                if (frame_pair)
                    v += static_cast<double>(
                        (*frame_pair)[(h * slots + static_cast<std::size_t>(meta.slot[i])) * slots +
                                      static_cast<std::size_t>(meta.slot[j])]);
                b[(static_cast<std::size_t>(h) * t + i) * t + j] = v;
            }
    return b;
}

// --------------------------------------------------------------------------
// Finite differences

// Max discrepancy between analytic gradients and central finite differences
// over sampled coordinates of every leaf. Error metric:
// |analytic - fd| / max(1, |analytic|, |fd|).
inline double max_fd_error(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<Tensor<double>>& leaves, int probes_per_leaf,
                           Rng rng, double h = 1e-3) {
    Tensor<double> loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0));

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor<double> leaf = leaves[li];
        const int probes = std::min<std::size_t>(probes_per_leaf, leaf.size());
        for (int p = 0; p < probes; ++p) {
            const std::size_t idx = static_cast<std::size_t>(rng.next_below(leaf.size()));
            const double orig = leaf[idx];
            double lp, lm;
            {
                NoGradGuard ng;
                leaf[idx] = orig + h;
                lp = loss_fn()[0];
                leaf[idx] = orig - h;
                lm = loss_fn()[0];
                leaf[idx] = orig;
            }
            const double fd = (lp - lm) / (2.0 * h);
            const double a = analytic[li][idx];
            const double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// --------------------------------------------------------------------------
// Check suite

struct CheckResult {
    std::string name;
    double value = 0.0;      // measured max error
    double threshold = 0.0;  // pass iff value < threshold
    double seconds = 0.0;
    bool pass = false;
};

struct Options {
    std::uint64_t seed = 20240811;
    int shapes_per_op = 20;
    int probes_per_leaf = 4;
    bool break_gradient_hook = false;  // negative control: corrupt one analytic grad
};

namespace suitedetail {

template <typename Fn>
CheckResult timed_check(const std::string& name, double threshold, Fn&& fn) {
    CheckResult r;
    r.name = name;
    r.threshold = threshold;
    const auto t0 = std::chrono::steady_clock::now();
    r.value = fn();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.pass = r.value < threshold;
    return r;
}

inline Tensor<double> rand_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -1.0,
                                  double hi = 1.0) {
    Tensor<double> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    t.set_requires_grad(grad);
    return t;
}

// Random weighting makes the scalarized loss sensitive to every output.
inline Tensor<double> weighted_sum(const Tensor<double>& out, Rng& rng) {
    Tensor<double> w(out.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
    return sum(mul(out, w));
}

// Keeps ReLU preactivations away from the kink so central differences stay
// valid at h = 1e-3.
inline void nudge_from_zero(Tensor<double>& t, double margin = 0.05) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? t[i] - margin : t[i] + margin;
}

}  // namespace suitedetail

std::vector<CheckResult> gradient_suite(const Options& opts);
std::vector<CheckResult> oracle_suite(const Options& opts);

inline std::vector<CheckResult> run_all(const Options& opts) {
    std::vector<CheckResult> all = gradient_suite(opts);
    std::vector<CheckResult> o = oracle_suite(opts);
    all.insert(all.end(), o.begin(), o.end());
    return all;
}

inline bool all_pass(const std::vector<CheckResult>& rs) {
    for (const auto& r : rs)
        if (!r.pass) return false;
    return true;
}

inline void print_results(const std::vector<CheckResult>& rs, std::FILE* out = stdout) {
    for (const auto& r : rs)
        std::fprintf(out, "%-38s max_err=%.3e thr=%.1e time=%5.2fs %s\n", r.name.c_str(), r.value,
                     r.threshold, r.seconds, r.pass ? "PASS" : "FAIL");
}

}  // namespace misr::verify

#include "misr/verify_suites.hpp"
