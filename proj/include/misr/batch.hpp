#pragma once

#include <optional>
#include <string>
#include <vector>

#include "misr/encoder.hpp"
#include "misr/scene.hpp"

namespace misr {

// One model-ready training/eval item: a K-padded frame stack plus the aligned
// HR target window.
template <typename T>
struct Sample {
    FrameStack<T> stack;
    std::optional<Tensor<T>> hr;
    std::optional<std::vector<std::uint8_t>> sm;
    std::string scene_id;
};

namespace batchdetail {

template <typename T>
Tensor<T> crop3(const Tensor<T>& x, std::size_t oy, std::size_t ox, std::size_t size) {
    const std::size_t c = x.dim(0), w = x.dim(2);
    Tensor<T> out(Shape{c, size, size});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t xx = 0; xx < size; ++xx)
                out[(ch * size + y) * size + xx] = x[(ch * x.dim(1) + oy + y) * w + ox + xx];
    return out;
}

inline std::vector<std::uint8_t> crop_mask(const std::vector<std::uint8_t>& m, std::size_t h,
                                           std::size_t w, std::size_t oy, std::size_t ox,
                                           std::size_t size) {
    (void)h;
    std::vector<std::uint8_t> out(size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t xx = 0; xx < size; ++xx) out[y * size + xx] = m[(oy + y) * w + ox + xx];
    return out;
}

}  // namespace batchdetail

// Builds a sample from a scene: optional aligned LR/HR crops (HR window at
// 3x the LR origin), quality-mask channel if configured, then pad_scene to K.
// A null rng takes the centered crop window.
template <typename T>
Sample<T> make_sample(const Scene<T>& scene, int k, int crop, Rng* rng, bool mask_channel,
                      int upscale = 3) {
    const std::size_t n = scene.frame_count();
    require(n >= 1, "make_sample: scene has no frames");
    const std::size_t h = scene.lr_h(), w = scene.lr_w();
    std::size_t size = crop > 0 ? static_cast<std::size_t>(crop) : 0;
    if (size > 0) require(size <= h && size <= w, "make_sample: crop larger than frame");
    std::size_t oy = 0, ox = 0;
    if (size > 0) {
        if (rng) {
            oy = static_cast<std::size_t>(rng->next_below(h - size + 1));
            ox = static_cast<std::size_t>(rng->next_below(w - size + 1));
        } else {
            oy = (h - size) / 2;
            ox = (w - size) / 2;
        }
    }
    const std::size_t out_h = crop > 0 ? size : h;
    const std::size_t out_w = crop > 0 ? size : w;

    const std::size_t c_in = mask_channel ? 2 : 1;
    Tensor<T> frames(Shape{n, c_in, out_h, out_w});
    std::vector<std::vector<std::uint8_t>> masks(n);
    for (std::size_t f = 0; f < n; ++f) {
        Tensor<T> lr = crop > 0 ? batchdetail::crop3(scene.lr[f], oy, ox, size) : scene.lr[f].detach();
        masks[f] = crop > 0 ? batchdetail::crop_mask(scene.qm[f], h, w, oy, ox, size) : scene.qm[f];
        T* dst = frames.data() + f * c_in * out_h * out_w;
        std::copy(lr.data(), lr.data() + lr.size(), dst);
        if (mask_channel)
            for (std::size_t i = 0; i < out_h * out_w; ++i)
                dst[out_h * out_w + i] = masks[f][i] ? T(1) : T(0);
    }

    Sample<T> sample;
    sample.scene_id = scene.id;
    sample.stack = pad_scene(frames, scene.clearance, k, masks);
    if (scene.hr) {
        const std::size_t rr = static_cast<std::size_t>(upscale);
        if (crop > 0) {
            sample.hr = batchdetail::crop3(*scene.hr, oy * rr, ox * rr, size * rr);
            if (scene.sm)
                sample.sm = batchdetail::crop_mask(*scene.sm, scene.hr->dim(1), scene.hr->dim(2),
                                                   oy * rr, ox * rr, size * rr);
        } else {
            sample.hr = scene.hr->detach();
            sample.sm = scene.sm;
        }
    }
    return sample;
}

// Groups scenes into batches of model-ready samples; every stack has exactly
// K frames.
template <typename T>
std::vector<std::vector<Sample<T>>> batch_scenes(const std::vector<Scene<T>>& scenes, int k,
                                                 int crop, int batch_size, Rng rng,
                                                 bool mask_channel = false) {
    require(batch_size >= 1, "batch_scenes: batch size must be >= 1");
    std::vector<std::vector<Sample<T>>> batches;
    std::vector<Sample<T>> current;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        Rng r = rng.derive("crop", i);
        current.push_back(make_sample(scenes[i], k, crop, crop > 0 ? &r : nullptr, mask_channel));
        if (static_cast<int>(current.size()) == batch_size) {
            batches.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

}  // namespace misr
