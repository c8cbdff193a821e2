#pragma once

#include <cmath>
#include <string>

#include "misr/resize.hpp"
#include "misr/rng.hpp"
#include "misr/scene.hpp"

namespace misr {

// Degradation pipeline for generating scenes with known ground truth:
// sub-pixel shift -> Gaussian blur -> 3x area-average downsample -> additive
// noise -> random cloud mask. Deterministic under the seed.
struct SynthParams {
    int frames = 9;
    double shift_px = 0.75;   // max |dx|,|dy| in HR pixels
    double blur_sigma = 0.6;
    double noise_sigma = 0.02;
    double coverage = 0.1;    // expected masked fraction per frame, in [0,1)
    int downscale = 3;
    std::uint64_t seed = 1;
};

namespace synthdetail {

// Snap to the 16-bit PNG grid so written scenes reload bit-equal.
template <typename T>
void quantize16(Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = static_cast<double>(t[i]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        t[i] = static_cast<T>(std::lround(v * 65535.0) / 65535.0);
    }
}

}  // namespace synthdetail

template <typename T>
Scene<T> synthesize_scene(const Tensor<T>& hr_in, const SynthParams& p, const std::string& id,
                          Band band = Band::nir) {
    require_dims(hr_in.rank() == 3 && hr_in.dim(0) == 1, "synthesize_scene: [1,H,W] HR required");
    const std::size_t r = static_cast<std::size_t>(p.downscale);
    require_dims(hr_in.dim(1) % r == 0 && hr_in.dim(2) % r == 0,
                 "synthesize_scene: HR dims must be divisible by the downscale factor");
    require(p.frames >= 1, "synthesize_scene: frame count must be >= 1");
    require(p.coverage >= 0.0 && p.coverage < 1.0, "synthesize_scene: coverage must lie in [0,1)");

    Scene<T> scene;
    scene.id = id;
    scene.band = band;
    Tensor<T> hr = hr_in.detach();
    synthdetail::quantize16(hr);
    scene.hr = hr;
    scene.sm = std::vector<std::uint8_t>(hr.size(), 1);

    Rng root(p.seed);
    const std::size_t lh = hr.dim(1) / r, lw = hr.dim(2) / r;
    for (int f = 0; f < p.frames; ++f) {
        Rng fr = root.derive("frame", static_cast<std::uint64_t>(f));
        const double dy = p.shift_px > 0 ? fr.uniform(-p.shift_px, p.shift_px) : 0.0;
        const double dx = p.shift_px > 0 ? fr.uniform(-p.shift_px, p.shift_px) : 0.0;
        Tensor<T> frame = subpixel_shift(hr, dy, dx);
        frame = gaussian_blur(frame, p.blur_sigma);
        frame = area_downsample(frame, r);
        if (p.noise_sigma > 0)
            for (std::size_t i = 0; i < frame.size(); ++i)
                frame[i] = static_cast<T>(frame[i] + fr.normal(0.0, p.noise_sigma));
        std::vector<std::uint8_t> qm(lh * lw, 1);
        if (p.coverage > 0)
            for (std::size_t i = 0; i < qm.size(); ++i)
                if (fr.bernoulli(p.coverage)) {
                    qm[i] = 0;
                    frame[i] = T(0);  // masked pixels are zero-filled
                }
        synthdetail::quantize16(frame);
        for (std::size_t i = 0; i < qm.size(); ++i)
            if (!qm[i]) frame[i] = T(0);
        scene.lr.push_back(std::move(frame));
        scene.qm.push_back(std::move(qm));
        scene.clearance.push_back(static_cast<T>(compute_clearance(scene.qm.back())));
    }
    return scene;
}

// Procedurally generated structured raster in [0.05, 0.95]: plaid waves,
// Gaussian blobs, a gradient, and smoothed noise. Stands in for real HR
// imagery in desk-scale datasets.
template <typename T>
Tensor<T> make_texture(std::size_t h, std::size_t w, Rng rng) {
    Tensor<double> img(Shape{1, h, w});
    const int waves = 2 + static_cast<int>(rng.next_below(3));
    for (int k = 0; k < waves; ++k) {
        const double fy = rng.uniform(0.5, 6.0) * 2.0 * 3.14159265358979323846 / h;
        const double fx = rng.uniform(0.5, 6.0) * 2.0 * 3.14159265358979323846 / w;
        const double phase = rng.uniform(0.0, 6.283185307179586);
        const double amp = rng.uniform(0.1, 0.35);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                img[y * w + x] += amp * std::sin(fy * y + fx * x + phase);
    }
    const int blobs = 3 + static_cast<int>(rng.next_below(4));
    for (int k = 0; k < blobs; ++k) {
        const double cy = rng.uniform(0.0, static_cast<double>(h));
        const double cx = rng.uniform(0.0, static_cast<double>(w));
        const double sigma = rng.uniform(0.03, 0.15) * h;
        const double amp = rng.uniform(-0.5, 0.5);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                img[y * w + x] += amp * std::exp(-0.5 * d2 / (sigma * sigma));
            }
    }
    const double gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            img[y * w + x] += gy * (static_cast<double>(y) / h) + gx * (static_cast<double>(x) / w);
    Tensor<double> noise(Shape{1, h, w});
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal(0.0, 1.0);
    noise = gaussian_blur(noise, 1.2);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] += 0.15 * noise[i];

    double lo = img[0], hi = img[0];
    for (std::size_t i = 0; i < img.size(); ++i) {
        lo = std::min(lo, img[i]);
        hi = std::max(hi, img[i]);
    }
    const double span = hi - lo < 1e-9 ? 1.0 : hi - lo;
    Tensor<T> out(Shape{1, h, w});
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = static_cast<T>(0.05 + 0.9 * (img[i] - lo) / span);
    return out;
}

}  // namespace misr
