#include <catch2/catch_amalgamated.hpp>

#include "misr/metrics.hpp"
#include "misr/synth.hpp"

using namespace misr;

namespace {

// 64x64 structured HR image and a mask with some unclear pixels.
struct Fixture {
    Tensor<double> hr;
    std::vector<std::uint8_t> sm;
    Fixture() {
        Rng rng(101);
        hr = make_texture<double>(64, 64, rng.derive("hr"));
        sm.assign(64 * 64, 1);
        Rng mrng = rng.derive("mask");
        for (auto& m : sm) m = mrng.bernoulli(0.1) ? 0 : 1;
    }
};

Tensor<double> translate(const Tensor<double>& img, int dy, int dx) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    Tensor<double> out(img.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
            const std::size_t yy = (sy % static_cast<long>(h) + h) % h;
            const std::size_t xx = (sx % static_cast<long>(w) + w) % w;
            out[y * w + x] = img[yy * w + xx];
        }
    return out;
}

Tensor<double> degraded_sr(const Tensor<double>& hr) {
    Tensor<double> lr = area_downsample(gaussian_blur(hr, 0.5), 2);
    return bicubic_resize(lr, hr.dim(1), hr.dim(2));
}

// Direct per-window masked SSIM at one offset: non-separable 11x11 loops
// with Gaussian weights zeroed at unclear pixels and renormalized per window.
double ssim_window_oracle(const Tensor<double>& sr, const Tensor<double>& hr,
                          const std::vector<std::uint8_t>& sm, int u, int v) {
    const int b = 3;
    const int h = static_cast<int>(hr.dim(1)), w = static_cast<int>(hr.dim(2));
    const int ch = h - 2 * b, cw = w - 2 * b;
    std::vector<double> kern(121);
    double ks = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const double dy = i - 5, dx = j - 5;
            kern[i * 11 + j] = std::exp(-0.5 * (dy * dy + dx * dx) / (1.5 * 1.5));
            ks += kern[i * 11 + j];
        }
    for (auto& k : kern) k /= ks;
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0.0;
    std::size_t count = 0;
    for (int y = 0; y + 10 < ch; ++y)
        for (int x = 0; x + 10 < cw; ++x) {
            if (!sm[static_cast<std::size_t>(y + 5 + b) * w + (x + 5 + b)]) continue;
            double wsum = 0, ms = 0, mh = 0, ss = 0, hh = 0, sh = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    if (!sm[static_cast<std::size_t>(y + i + b) * w + (x + j + b)]) continue;
                    const double k = kern[i * 11 + j];
                    const double s = sr[static_cast<std::size_t>(y + i + u) * w + (x + j + v)];
                    const double t = hr[static_cast<std::size_t>(y + i + b) * w + (x + j + b)];
                    wsum += k;
                    ms += k * s;
                    mh += k * t;
                    ss += k * s * s;
                    hh += k * t * t;
                    sh += k * s * t;
                }
            if (wsum < 1e-12) continue;
            ms /= wsum;
            mh /= wsum;
            ss /= wsum;
            hh /= wsum;
            sh /= wsum;
            const double var_s = ss - ms * ms, var_h = hh - mh * mh, cov = sh - ms * mh;
            acc += ((2 * ms * mh + c1) * (2 * cov + c2)) /
                   ((ms * ms + mh * mh + c1) * (var_s + var_h + c2));
            ++count;
        }
    return acc / static_cast<double>(count);
}

}  // namespace

TEST_CASE("cpsnr of the identical image saturates at the 100 dB cap") {
    Fixture f;
    ShiftScore s = cpsnr(f.hr, f.hr, f.sm);
    CHECK(s.value == kDbCap);
    CHECK(s.saturated);
}

TEST_CASE("cpsnr is invariant to a constant brightness offset") {
    Fixture f;
    Tensor<double> sr = degraded_sr(f.hr);
    ShiftScore base = cpsnr(sr, f.hr, f.sm);
    Tensor<double> shifted = sr.detach();
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.1;
    ShiftScore biased = cpsnr(shifted, f.hr, f.sm);
    CHECK(std::abs(base.value - biased.value) < 1e-9);
    CHECK(biased.bias == Catch::Approx(base.bias - 0.1).margin(1e-9));

    // identity plus offset also saturates: the bias absorbs the offset
    Tensor<double> hr_off = f.hr.detach();
    for (std::size_t i = 0; i < hr_off.size(); ++i) hr_off[i] += 0.1;
    CHECK(cpsnr(hr_off, f.hr, f.sm).value == kDbCap);
}

TEST_CASE("cpsnr of a 2-px translated copy equals the identity score") {
    Fixture f;
    Tensor<double> moved = translate(f.hr, 0, 2);
    ShiftScore s = cpsnr(moved, f.hr, f.sm);
    CHECK(std::abs(s.value - cpsnr(f.hr, f.hr, f.sm).value) < 1e-9);
    CHECK(s.v == 3 + 2);  // realigned offset
    CHECK(s.u == 3);
}

TEST_CASE("translations within the shift budget never lower cpsnr") {
    Fixture f;
    Tensor<double> sr = degraded_sr(f.hr);
    const double base = cpsnr(sr, f.hr, f.sm).value;
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
            ShiftScore s = cpsnr(translate(sr, dy, dx), f.hr, f.sm);
            CHECK(s.value >= base - 1e-9);
        }
}

TEST_CASE("metrics ignore corruption limited to masked-out pixels") {
    Fixture f;
    Tensor<double> sr = degraded_sr(f.hr);
    const double base_p = cpsnr(sr, f.hr, f.sm).value;
    const double base_s = cssim(sr, f.hr, f.sm).value;
    Tensor<double> hr_bad = f.hr.detach();
    Rng rng(3);
    for (std::size_t i = 0; i < hr_bad.size(); ++i)
        if (!f.sm[i]) hr_bad[i] = rng.uniform(0, 1);
    CHECK(cpsnr(sr, hr_bad, f.sm).value == Catch::Approx(base_p).margin(1e-12));
    CHECK(cssim(sr, hr_bad, f.sm).value == Catch::Approx(base_s).margin(1e-12));
}

TEST_CASE("cpsnr skips scenes without clear pixels") {
    Fixture f;
    std::vector<std::uint8_t> none(f.sm.size(), 0);
    CHECK(cpsnr(f.hr, f.hr, none).skipped);
}

TEST_CASE("added noise of growing sigma never helps cpsnr on average") {
    Fixture f;
    const double sigmas[3] = {0.01, 0.03, 0.06};
    double means[3] = {0, 0, 0};
    for (int s = 0; s < 3; ++s) {
        for (int seed = 0; seed < 20; ++seed) {
            Rng rng(1000 + seed);
            Tensor<double> noisy = f.hr.detach();
            for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += rng.normal(0.0, sigmas[s]);
            means[s] += cpsnr(noisy, f.hr, f.sm).value / 20.0;
        }
    }
    CHECK(means[0] >= means[1]);
    CHECK(means[1] >= means[2]);
}

TEST_CASE("cssim of the identical image is 1") {
    Fixture f;
    CHECK(cssim(f.hr, f.hr, f.sm).value == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("cssim of an inverted image is below 1") {
    Fixture f;
    Tensor<double> inv = f.hr.detach();
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - inv[i];
    CHECK(cssim(inv, f.hr, f.sm).value < 1.0);
}

TEST_CASE("cssim matches the direct sliding-window oracle at the best shift") {
    Fixture f;
    Tensor<double> sr = degraded_sr(f.hr);
    ShiftScore s = cssim(sr, f.hr, f.sm);
    const double ref = ssim_window_oracle(sr, f.hr, f.sm, s.u, s.v);
    CHECK(s.value == Catch::Approx(ref).margin(1e-6));
}

TEST_CASE("evaluate_dataset aggregates and excludes properly") {
    Rng rng(5);
    SynthParams p;
    p.frames = 3;
    p.seed = 17;
    Scene<float> scene =
        synthesize_scene(make_texture<float>(48, 48, rng.derive("a")), p, "imgset0007");
    Scene<float> no_hr = scene;
    no_hr.id = "imgset0008";
    no_hr.hr.reset();
    no_hr.sm.reset();

    auto baseline = [](const Scene<float>& s) { return bicubic_clearest(s); };
    MetricReport single = evaluate_dataset<float>({scene}, baseline);
    REQUIRE(single.evaluated == 1);
    CHECK(single.mean_cpsnr == Catch::Approx(single.per_scene[0].cpsnr_db));

    MetricReport dup = evaluate_dataset<float>({scene, scene}, baseline);
    CHECK(dup.mean_cpsnr == Catch::Approx(single.mean_cpsnr));
    CHECK(dup.mean_cssim == Catch::Approx(single.mean_cssim));

    MetricReport mixed = evaluate_dataset<float>({scene, no_hr}, baseline);
    CHECK(mixed.evaluated == 1);
    CHECK(mixed.excluded_no_hr == 1);

    const std::string text = format_report(mixed);
    CHECK(text.find("imgset0007,") != std::string::npos);
    CHECK(text.find("# aggregate: evaluated=1 excluded_no_hr=1") != std::string::npos);
}

TEST_CASE("report rows are ordered by scene id") {
    Rng rng(6);
    SynthParams p;
    p.frames = 2;
    p.seed = 23;
    Scene<float> a = synthesize_scene(make_texture<float>(36, 36, rng.derive("a")), p, "imgset0002");
    Scene<float> b = synthesize_scene(make_texture<float>(36, 36, rng.derive("b")), p, "imgset0001");
    MetricReport r =
        evaluate_dataset<float>({a, b}, [](const Scene<float>& s) { return bicubic_clearest(s); });
    REQUIRE(r.per_scene.size() == 2);
    CHECK(r.per_scene[0].scene_id == "imgset0001");
    CHECK(r.per_scene[1].scene_id == "imgset0002");
}
