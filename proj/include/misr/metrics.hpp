#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "misr/resize.hpp"
#include "misr/scene.hpp"

namespace misr {

// Registration-tolerant quality metrics: the HR target is cropped by a 3-px
// border, the candidate slides over a 7x7 grid of offsets, a scalar
// brightness bias is removed over the clear pixels, and the best offset
// counts. dB values saturate at 100 when the error underflows.

inline constexpr int kShiftBorder = 3;       // crop margin and max offset
inline constexpr double kDbCap = 100.0;      // reported when cMSE < 1e-10
inline constexpr double kCmseFloor = 1e-10;

struct ShiftScore {
    double value = 0.0;  // dB for cpsnr, similarity for cssim
    int u = 0, v = 0;    // winning offset
    double bias = 0.0;   // winning brightness bias (cpsnr only)
    bool saturated = false;
    bool skipped = false;  // fewer than 1 clear pixel
};

namespace metricdetail {

// Both images are [H,W] flattened doubles; sm is the HR-aligned clear mask.
inline ShiftScore cpsnr_impl(const std::vector<double>& sr, const std::vector<double>& hr,
                             const std::vector<std::uint8_t>& sm, int h, int w) {
    const int b = kShiftBorder;
    const int ch = h - 2 * b, cw = w - 2 * b;
    ShiftScore best;
    best.value = -1e300;
    bool any = false;
    for (int u = 0; u <= 2 * b; ++u)
        for (int v = 0; v <= 2 * b; ++v) {
            double sum = 0.0;
            std::size_t count = 0;
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x) {
                    if (!sm[static_cast<std::size_t>(y + b) * w + (x + b)]) continue;
                    sum += hr[static_cast<std::size_t>(y + b) * w + (x + b)] -
                           sr[static_cast<std::size_t>(y + u) * w + (x + v)];
                    ++count;
                }
            if (count == 0) continue;
            const double bias = sum / static_cast<double>(count);
            double mse = 0.0;
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x) {
                    if (!sm[static_cast<std::size_t>(y + b) * w + (x + b)]) continue;
                    const double d = hr[static_cast<std::size_t>(y + b) * w + (x + b)] -
                                     sr[static_cast<std::size_t>(y + u) * w + (x + v)] - bias;
                    mse += d * d;
                }
            mse /= static_cast<double>(count);
            const bool sat = mse < kCmseFloor;
            const double db = sat ? kDbCap : -10.0 * std::log10(mse);
            any = true;
            if (db > best.value) {
                best.value = db;
                best.u = u;
                best.v = v;
                best.bias = bias;
                best.saturated = sat;
            }
        }
    if (!any) {
        best = ShiftScore{};
        best.skipped = true;
    }
    return best;
}

// Gaussian window constants of the standard SSIM formulation.
inline const std::vector<double>& ssim_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(11);
        double s = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            v[i] = std::exp(-0.5 * d * d / (1.5 * 1.5));
            s += v[i];
        }
        for (auto& x : v) x /= s;
        return v;
    }();
    return k;
}

// Separable valid-region Gaussian filtering of an h x w map -> (h-10) x (w-10).
inline std::vector<double> gauss_valid(const std::vector<double>& img, int h, int w) {
    const auto& k = ssim_kernel();
    const int ow = w - 10;
    std::vector<double> mid(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < 11; ++i) s += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
            mid[static_cast<std::size_t>(y) * ow + x] = s;
        }
    const int oh = h - 10;
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < 11; ++i) s += k[i] * mid[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

// Masked SSIM: window statistics are normalized convolutions with the clear
// mask folded into the Gaussian weights, so unclear pixels contribute nothing
// anywhere. Window centers are restricted to clear pixels as well.
inline ShiftScore cssim_impl(const std::vector<double>& sr, const std::vector<double>& hr,
                             const std::vector<std::uint8_t>& sm, int h, int w) {
    const int b = kShiftBorder;
    const int ch = h - 2 * b, cw = w - 2 * b;
    if (ch < 11 || cw < 11) {
        ShiftScore r;
        r.skipped = true;
        return r;
    }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1
    const std::size_t crop_n = static_cast<std::size_t>(ch) * cw;
    std::vector<double> mask_c(crop_n), hr_m(crop_n), hr_sq_m(crop_n);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
            const std::size_t src = static_cast<std::size_t>(y + b) * w + (x + b);
            const double m = sm[src] ? 1.0 : 0.0;
            const double t = hr[src];
            mask_c[static_cast<std::size_t>(y) * cw + x] = m;
            hr_m[static_cast<std::size_t>(y) * cw + x] = t * m;
            hr_sq_m[static_cast<std::size_t>(y) * cw + x] = t * t * m;
        }
    const auto wsum = gauss_valid(mask_c, ch, cw);
    const auto sum_h = gauss_valid(hr_m, ch, cw);
    const auto sum_hh = gauss_valid(hr_sq_m, ch, cw);

    ShiftScore best;
    best.value = -1e300;
    bool any = false;
    std::vector<double> sr_m(crop_n), sr_sq_m(crop_n), cross_m(crop_n);
    for (int u = 0; u <= 2 * b; ++u)
        for (int v = 0; v <= 2 * b; ++v) {
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * cw + x;
                    const double s = sr[static_cast<std::size_t>(y + u) * w + (x + v)];
                    sr_m[i] = s * mask_c[i];
                    sr_sq_m[i] = s * s * mask_c[i];
                    cross_m[i] = s * hr_m[i];
                }
            const auto sum_s = gauss_valid(sr_m, ch, cw);
            const auto sum_ss = gauss_valid(sr_sq_m, ch, cw);
            const auto sum_sh = gauss_valid(cross_m, ch, cw);
            const int mh = ch - 10, mw = cw - 10;
            double acc = 0.0;
            std::size_t count = 0;
            for (int y = 0; y < mh; ++y)
                for (int x = 0; x < mw; ++x) {
                    // map position (y,x) is centered at crop position (y+5,x+5)
                    if (!sm[static_cast<std::size_t>(y + 5 + b) * w + (x + 5 + b)]) continue;
                    const std::size_t i = static_cast<std::size_t>(y) * mw + x;
                    if (wsum[i] < 1e-12) continue;
                    const double inv = 1.0 / wsum[i];
                    const double mu_s = sum_s[i] * inv;
                    const double mu_h = sum_h[i] * inv;
                    const double var_s = sum_ss[i] * inv - mu_s * mu_s;
                    const double var_h = sum_hh[i] * inv - mu_h * mu_h;
                    const double cov = sum_sh[i] * inv - mu_s * mu_h;
                    const double num = (2 * mu_s * mu_h + c1) * (2 * cov + c2);
                    const double den = (mu_s * mu_s + mu_h * mu_h + c1) * (var_s + var_h + c2);
                    acc += num / den;
                    ++count;
                }
            if (count == 0) continue;
            any = true;
            const double ssim = acc / static_cast<double>(count);
            if (ssim > best.value) {
                best.value = ssim;
                best.u = u;
                best.v = v;
            }
        }
    if (!any) {
        best = ShiftScore{};
        best.skipped = true;
    }
    return best;
}

}  // namespace metricdetail

// Shift- and bias-invariant PSNR over clear pixels. sr and hr are [1,H,W]
// in [0,1]; sm marks reliable HR pixels.
template <typename T>
ShiftScore cpsnr(const Tensor<T>& sr, const Tensor<T>& hr, const std::vector<std::uint8_t>& sm) {
    require_dims(sr.shape() == hr.shape() && sr.rank() == 3 && sr.dim(0) == 1,
                 "cpsnr: [1,H,W] images of equal size required");
    require_dims(sm.size() == hr.size() / hr.dim(0), "cpsnr: mask size mismatch");
    const int h = static_cast<int>(hr.dim(1)), w = static_cast<int>(hr.dim(2));
    require(h > 2 * kShiftBorder && w > 2 * kShiftBorder, "cpsnr: image too small for shift crop");
    std::vector<double> srd(sr.size()), hrd(hr.size());
    for (std::size_t i = 0; i < sr.size(); ++i) srd[i] = static_cast<double>(sr[i]);
    for (std::size_t i = 0; i < hr.size(); ++i) hrd[i] = static_cast<double>(hr[i]);
    return metricdetail::cpsnr_impl(srd, hrd, sm, h, w);
}

// Shift-invariant masked SSIM (Gaussian window 11, sigma 1.5, standard
// constants), maximized over the same 7x7 offset grid.
template <typename T>
ShiftScore cssim(const Tensor<T>& sr, const Tensor<T>& hr, const std::vector<std::uint8_t>& sm) {
    require_dims(sr.shape() == hr.shape() && sr.rank() == 3 && sr.dim(0) == 1,
                 "cssim: [1,H,W] images of equal size required");
    const int h = static_cast<int>(hr.dim(1)), w = static_cast<int>(hr.dim(2));
    std::vector<double> srd(sr.size()), hrd(hr.size());
    for (std::size_t i = 0; i < sr.size(); ++i) srd[i] = static_cast<double>(sr[i]);
    for (std::size_t i = 0; i < hr.size(); ++i) hrd[i] = static_cast<double>(hr[i]);
    return metricdetail::cssim_impl(srd, hrd, sm, h, w);
}

struct SceneScore {
    std::string scene_id;
    double cpsnr_db = 0.0;
    double cssim_value = 0.0;
    int u = 0, v = 0;
    double bias = 0.0;
    bool saturated = false;
    bool skipped = false;
};

struct MetricReport {
    std::vector<SceneScore> per_scene;  // sorted by scene_id
    double mean_cpsnr = 0.0;
    double mean_cssim = 0.0;
    std::size_t evaluated = 0;
    std::size_t excluded_no_hr = 0;
    std::size_t skipped_no_clear = 0;
};

// Runs inference per scene (through the supplied callable) and aggregates
// both metrics; scenes without an HR target are excluded and counted.
template <typename T>
MetricReport evaluate_dataset(const std::vector<Scene<T>>& scenes,
                              const std::function<Tensor<T>(const Scene<T>&)>& sr_fn) {
    MetricReport report;
    for (const auto& scene : scenes) {
        if (!scene.hr) {
            ++report.excluded_no_hr;
            continue;
        }
        Tensor<T> sr = sr_fn(scene);
        const auto& sm = *scene.sm;
        ShiftScore ps = cpsnr(sr, *scene.hr, sm);
        ShiftScore ss = cssim(sr, *scene.hr, sm);
        SceneScore row;
        row.scene_id = scene.id;
        row.skipped = ps.skipped;
        if (!ps.skipped) {
            row.cpsnr_db = ps.value;
            row.cssim_value = ss.skipped ? 0.0 : ss.value;
            row.u = ps.u;
            row.v = ps.v;
            row.bias = ps.bias;
            row.saturated = ps.saturated;
        }
        report.per_scene.push_back(row);
    }
    std::sort(report.per_scene.begin(), report.per_scene.end(),
              [](const SceneScore& a, const SceneScore& b) { return a.scene_id < b.scene_id; });
    double sp = 0.0, ss = 0.0;
    for (const auto& row : report.per_scene) {
        if (row.skipped) {
            ++report.skipped_no_clear;
            continue;
        }
        sp += row.cpsnr_db;
        ss += row.cssim_value;
        ++report.evaluated;
    }
    if (report.evaluated) {
        report.mean_cpsnr = sp / static_cast<double>(report.evaluated);
        report.mean_cssim = ss / static_cast<double>(report.evaluated);
    }
    return report;
}

// Line-delimited report: one record per scene plus a summary footer.
inline std::string format_report(const MetricReport& r) {
    std::string out = "scene_id,cpsnr_db,cssim,shift_u,shift_v,bias\n";
    char line[192];
    for (const auto& row : r.per_scene) {
        if (row.skipped) {
            std::snprintf(line, sizeof(line), "%s,skipped,,,,\n", row.scene_id.c_str());
        } else {
            std::snprintf(line, sizeof(line), "%s,%.4f,%.6f,%d,%d,%.6f\n", row.scene_id.c_str(),
                          row.cpsnr_db, row.cssim_value, row.u, row.v, row.bias);
        }
        out += line;
    }
    std::snprintf(line, sizeof(line),
                  "# aggregate: evaluated=%zu excluded_no_hr=%zu skipped=%zu mean_cpsnr=%.4f "
                  "mean_cssim=%.6f\n",
                  r.evaluated, r.excluded_no_hr, r.skipped_no_clear, r.mean_cpsnr, r.mean_cssim);
    out += line;
    return out;
}

// Reference baseline: bicubic x3 upscale of the clearest frame (ties to the
// lower index).
template <typename T>
Tensor<T> bicubic_clearest(const Scene<T>& scene, int upscale = 3) {
    require(!scene.lr.empty(), "bicubic_clearest: scene has no frames");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scene.lr.size(); ++i)
        if (scene.clearance[i] > scene.clearance[best]) best = i;
    const auto& lr = scene.lr[best];
    return bicubic_resize(lr, lr.dim(1) * upscale, lr.dim(2) * upscale);
}

}  // namespace misr
