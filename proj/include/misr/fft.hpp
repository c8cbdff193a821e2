#pragma once

#include <complex>
#include <vector>

#include "misr/ops.hpp"
#include "misr/tensor.hpp"

namespace misr {

template <typename T>
struct ComplexTensor {
    Shape shape;
    std::vector<T> re;
    std::vector<T> im;

    ComplexTensor() = default;
    explicit ComplexTensor(Shape s) : shape(std::move(s)) {
        re.assign(numel(shape), T(0));
        im.assign(numel(shape), T(0));
    }
    std::size_t size() const { return re.size(); }
};

namespace fftdetail {

using cd = std::complex<double>;

inline std::size_t smallest_factor(std::size_t n) {
    if (n % 2 == 0) return 2;
    for (std::size_t p = 3; p * p <= n; p += 2)
        if (n % p == 0) return p;
    return n;
}

// Mixed-radix Cooley-Tukey with a direct O(p^2) DFT at prime base cases, so
// arbitrary lengths work (desk-scale sizes are small enough for prime
// fallback). sign = -1 forward, +1 inverse; no normalization here.
inline void fft_rec(std::vector<cd>& a, int sign) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    const std::size_t p = smallest_factor(n);
    // twiddle table for this length
    std::vector<cd> tw(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double ang = sign * 2.0 * 3.14159265358979323846 * static_cast<double>(k) /
                           static_cast<double>(n);
        tw[k] = cd(std::cos(ang), std::sin(ang));
    }
    if (p == n) {  // prime length: direct DFT
        std::vector<cd> out(n);
        for (std::size_t k = 0; k < n; ++k) {
            cd s(0.0, 0.0);
            for (std::size_t j = 0; j < n; ++j) s += a[j] * tw[(j * k) % n];
            out[k] = s;
        }
        a = std::move(out);
        return;
    }
    const std::size_t m = n / p;
    std::vector<std::vector<cd>> sub(p, std::vector<cd>(m));
    for (std::size_t j = 0; j < n; ++j) sub[j % p][j / p] = a[j];
    for (auto& s : sub) fft_rec(s, sign);
    // X[q + s*m] = sum_r tw[r*(q+s*m) mod n] * Sub_r[q]
    for (std::size_t k = 0; k < n; ++k) {
        cd acc(0.0, 0.0);
        const std::size_t q = k % m;
        for (std::size_t r = 0; r < p; ++r) acc += tw[(r * k) % n] * sub[r][q];
        a[k] = acc;
    }
}

// In-place 2D transform of one H x W plane held as row-major complex values.
inline void fft2_plane(std::vector<cd>& plane, std::size_t h, std::size_t w, int sign) {
    std::vector<cd> line;
    for (std::size_t y = 0; y < h; ++y) {
        line.assign(plane.begin() + y * w, plane.begin() + (y + 1) * w);
        fft_rec(line, sign);
        std::copy(line.begin(), line.end(), plane.begin() + y * w);
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) line[y] = plane[y * w + x];
        fft_rec(line, sign);
        for (std::size_t y = 0; y < h; ++y) plane[y * w + x] = line[y];
    }
}

}  // namespace fftdetail

// Unnormalized forward 2D DFT per channel of a [C,H,W] tensor. Internals run
// in double regardless of T.
template <typename T>
ComplexTensor<T> fft2(const Tensor<T>& x) {
    require_dims(x.rank() == 3, "fft2: rank-3 [C,H,W] required");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
    ComplexTensor<T> out(x.shape());
    std::vector<fftdetail::cd> plane(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i)
            plane[i] = fftdetail::cd(static_cast<double>(x[ch * hw + i]), 0.0);
        fftdetail::fft2_plane(plane, h, w, -1);
        for (std::size_t i = 0; i < hw; ++i) {
            out.re[ch * hw + i] = static_cast<T>(plane[i].real());
            out.im[ch * hw + i] = static_cast<T>(plane[i].imag());
        }
    }
    return out;
}

// Full complex inverse (normalized by 1/(H*W)); ifft2c(fft2(x)) == x with the
// imaginary part vanishing for real x.
template <typename T>
ComplexTensor<T> ifft2c(const ComplexTensor<T>& f) {
    require_dims(f.shape.size() == 3, "ifft2c: rank-3 [C,H,W] required");
    const std::size_t c = f.shape[0], h = f.shape[1], w = f.shape[2], hw = h * w;
    ComplexTensor<T> out(f.shape);
    const double norm = 1.0 / static_cast<double>(hw);
    std::vector<fftdetail::cd> plane(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i)
            plane[i] = fftdetail::cd(static_cast<double>(f.re[ch * hw + i]),
                                     static_cast<double>(f.im[ch * hw + i]));
        fftdetail::fft2_plane(plane, h, w, +1);
        for (std::size_t i = 0; i < hw; ++i) {
            out.re[ch * hw + i] = static_cast<T>(plane[i].real() * norm);
            out.im[ch * hw + i] = static_cast<T>(plane[i].imag() * norm);
        }
    }
    return out;
}

// Real part of the normalized inverse transform.
template <typename T>
Tensor<T> ifft2(const ComplexTensor<T>& f) {
    ComplexTensor<T> full = ifft2c(f);
    return Tensor<T>(full.shape, std::move(full.re));
}

namespace fftdetail {

// Shared kernel for the autodiff wrappers: transform [C,H,W] real/imag pairs.
template <typename T>
void transform_stacked(const T* re, const T* im, T* out_re, T* out_im, std::size_t c,
                       std::size_t h, std::size_t w, int sign, double scale) {
    const std::size_t hw = h * w;
    std::vector<cd> plane(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i)
            plane[i] = cd(static_cast<double>(re[ch * hw + i]),
                          im ? static_cast<double>(im[ch * hw + i]) : 0.0);
        fft2_plane(plane, h, w, sign);
        for (std::size_t i = 0; i < hw; ++i) {
            out_re[ch * hw + i] = static_cast<T>(plane[i].real() * scale);
            if (out_im) out_im[ch * hw + i] = static_cast<T>(plane[i].imag() * scale);
        }
    }
}

}  // namespace fftdetail

// Tape-recorded forward transform producing stacked channels: [C,H,W] ->
// [2C,H,W] with real parts first, imaginary parts after. The frequency-domain
// convolutions of the spectral transform operate on this stacking.
template <typename T>
Tensor<T> fft2_stack(const Tensor<T>& x) {
    require_dims(x.rank() == 3, "fft2_stack: rank-3 [C,H,W] required");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
    std::vector<T> v(2 * c * hw);
    fftdetail::transform_stacked(x.data(), static_cast<const T*>(nullptr), v.data(),
                                 v.data() + c * hw, c, h, w, -1, 1.0);
    if (!detail::recording(x)) return Tensor<T>(Shape{2 * c, h, w}, std::move(v));
    return detail::make_node<T>(
        Shape{2 * c, h, w}, std::move(v), {x.node()}, [c, h, w, hw](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            // adjoint of the unnormalized DFT on a real input: real part of the
            // unnormalized inverse transform of the cotangent
            std::vector<T> gre(c * hw), gim(c * hw);
            fftdetail::transform_stacked(node.grad.data(), node.grad.data() + c * hw, gre.data(),
                                         gim.data(), c, h, w, +1, 1.0);
            for (std::size_t i = 0; i < c * hw; ++i) p.grad[i] += gre[i];
        });
}

// Tape-recorded inverse: [2C,H,W] stacked spectrum -> real part of the
// normalized inverse transform, [C,H,W].
template <typename T>
Tensor<T> ifft2_real(const Tensor<T>& x) {
    require_dims(x.rank() == 3 && x.dim(0) % 2 == 0, "ifft2_real: [2C,H,W] stacked input required");
    const std::size_t c = x.dim(0) / 2, h = x.dim(1), w = x.dim(2), hw = h * w;
    std::vector<T> v(c * hw), im(c * hw);
    fftdetail::transform_stacked(x.data(), x.data() + c * hw, v.data(), im.data(), c, h, w, +1,
                                 1.0 / static_cast<double>(hw));
    if (!detail::recording(x)) return Tensor<T>(Shape{c, h, w}, std::move(v));
    return detail::make_node<T>(
        Shape{c, h, w}, std::move(v), {x.node()}, [c, h, w, hw](Node<T>& node) {
            auto& p = *node.parents[0];
            if (!p.wants_grad()) return;
            p.ensure_grad();
            // adjoint: forward unnormalized transform of the (real) cotangent,
            // scaled by 1/(H*W); imaginary rows carry the imag part
            std::vector<T> gre(c * hw), gim(c * hw);
            fftdetail::transform_stacked(node.grad.data(), static_cast<const T*>(nullptr),
                                         gre.data(), gim.data(), c, h, w, -1,
                                         1.0 / static_cast<double>(hw));
            for (std::size_t i = 0; i < c * hw; ++i) {
                p.grad[i] += gre[i];
                p.grad[c * hw + i] += gim[i];
            }
        });
}

}  // namespace misr
