#pragma once

#include <cmath>
#include <vector>

#include "misr/tensor.hpp"

namespace misr {

// Plain image resampling on tensor values (data path, no autodiff).

namespace resizedetail {

// Catmull-Rom cubic kernel (a = -0.5).
inline double cubic(double x) {
    x = std::abs(x);
    if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
    if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
    return 0.0;
}

inline long clamp_idx(long v, long n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

}  // namespace resizedetail

// Bicubic resampling of a [C,H,W] map to the given output size, edge clamp.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    require_dims(x.rank() == 3, "bicubic_resize: [C,H,W] input required");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out(Shape{c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = x.data() + ch * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const double fy = (oy + 0.5) * sy - 0.5;
            const long y0 = static_cast<long>(std::floor(fy));
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const double fx = (ox + 0.5) * sx - 0.5;
                const long x0 = static_cast<long>(std::floor(fx));
                double acc = 0.0, wsum = 0.0;
                for (long dy = -1; dy <= 2; ++dy) {
                    const double wy = resizedetail::cubic(fy - (y0 + dy));
                    if (wy == 0.0) continue;
                    const long yy = resizedetail::clamp_idx(y0 + dy, static_cast<long>(h));
                    for (long dx = -1; dx <= 2; ++dx) {
                        const double wx = resizedetail::cubic(fx - (x0 + dx));
                        if (wx == 0.0) continue;
                        const long xx = resizedetail::clamp_idx(x0 + dx, static_cast<long>(w));
                        acc += wy * wx * static_cast<double>(plane[yy * w + xx]);
                        wsum += wy * wx;
                    }
                }
                out[(ch * out_h + oy) * out_w + ox] = static_cast<T>(acc / wsum);
            }
        }
    }
    return out;
}

// Exact r x r block average; H,W must be divisible by r.
template <typename T>
Tensor<T> area_downsample(const Tensor<T>& x, std::size_t r) {
    require_dims(x.rank() == 3 && x.dim(1) % r == 0 && x.dim(2) % r == 0,
                 "area_downsample: dims not divisible by factor");
    const std::size_t c = x.dim(0), oh = x.dim(1) / r, ow = x.dim(2) / r, w = x.dim(2);
    Tensor<T> out(Shape{c, oh, ow});
    const double inv = 1.0 / static_cast<double>(r * r);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < r; ++dy)
                    for (std::size_t dx = 0; dx < r; ++dx)
                        s += static_cast<double>(
                            x[(ch * x.dim(1) + oy * r + dy) * w + ox * r + dx]);
                out[(ch * oh + oy) * ow + ox] = static_cast<T>(s * inv);
            }
    return out;
}

// Separable Gaussian blur with clamped edges; near-zero sigma is a no-op.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
    if (sigma < 1e-6) return x.detach();
    require_dims(x.rank() == 3, "gaussian_blur: [C,H,W] input required");
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= ksum;
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> tmp(x.shape()), out(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = x.data() + ch * h * w;
        T* mid = tmp.data() + ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    const long sx = resizedetail::clamp_idx(static_cast<long>(xx) + i,
                                                            static_cast<long>(w));
                    s += kernel[i + radius] * static_cast<double>(src[y * w + sx]);
                }
                mid[y * w + xx] = static_cast<T>(s);
            }
        T* dst = out.data() + ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    const long sy = resizedetail::clamp_idx(static_cast<long>(y) + i,
                                                            static_cast<long>(h));
                    s += kernel[i + radius] * static_cast<double>(mid[sy * w + xx]);
                }
                dst[y * w + xx] = static_cast<T>(s);
            }
    }
    return out;
}

// Bilinear sub-pixel translation with clamped edges.
template <typename T>
Tensor<T> subpixel_shift(const Tensor<T>& x, double dy, double dx) {
    require_dims(x.rank() == 3, "subpixel_shift: [C,H,W] input required");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = x.data() + ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double fy = static_cast<double>(y) + dy;
                const double fx = static_cast<double>(xx) + dx;
                const long y0 = static_cast<long>(std::floor(fy));
                const long x0 = static_cast<long>(std::floor(fx));
                const double wy = fy - y0, wx = fx - x0;
                const long y0c = resizedetail::clamp_idx(y0, static_cast<long>(h));
                const long y1c = resizedetail::clamp_idx(y0 + 1, static_cast<long>(h));
                const long x0c = resizedetail::clamp_idx(x0, static_cast<long>(w));
                const long x1c = resizedetail::clamp_idx(x0 + 1, static_cast<long>(w));
                const double v = (1 - wy) * ((1 - wx) * plane[y0c * w + x0c] +
                                             wx * plane[y0c * w + x1c]) +
                                 wy * ((1 - wx) * plane[y1c * w + x0c] +
                                       wx * plane[y1c * w + x1c]);
                out[(ch * h + y) * w + xx] = static_cast<T>(v);
            }
    }
    return out;
}

}  // namespace misr
