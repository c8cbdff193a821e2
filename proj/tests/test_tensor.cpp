#include <catch2/catch_amalgamated.hpp>

#include "misr/attention.hpp"
#include "misr/conv.hpp"
#include "misr/fft.hpp"
#include "misr/norm.hpp"
#include "misr/ops.hpp"
#include "misr/rng.hpp"
#include "misr/verify.hpp"

using namespace misr;

namespace {

Tensor<float> rand_f(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    return Tensor<float>::from_fn(std::move(shape),
                                  [&](std::size_t) { return (float)rng.uniform(lo, hi); });
}

}  // namespace

TEST_CASE("tensor shape/data invariants") {
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), DimError);
    Tensor<float> t(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.at(1, 2) == 6.0f);
}

TEST_CASE("conv2d identity 1x1 kernel") {
    Rng rng(1);
    Tensor<float> x = rand_f({3, 5, 4}, rng);
    Tensor<float> k(Shape{3, 3, 1, 1});
    for (std::size_t o = 0; o < 3; ++o) k[(o * 3 + o)] = 1.0f;  // per-channel identity
    Tensor<float> y = conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == Catch::Approx(x[i]).margin(1e-6));
}

TEST_CASE("conv2d all-ones 3x3, padding 1: center 9, corners 4") {
    Tensor<float> x(Shape{1, 3, 3}, std::vector<float>(9, 1.0f));
    Tensor<float> k(Shape{1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    Tensor<float> y = conv2d(x, k, 1, 1);
    REQUIRE(y.shape() == Shape{1, 3, 3});
    CHECK(y.at(0, 1, 1) == Catch::Approx(9.0f));
    CHECK(y.at(0, 0, 0) == Catch::Approx(4.0f));
    CHECK(y.at(0, 0, 2) == Catch::Approx(4.0f));
    CHECK(y.at(0, 2, 0) == Catch::Approx(4.0f));
    CHECK(y.at(0, 2, 2) == Catch::Approx(4.0f));
    CHECK(y.at(0, 0, 1) == Catch::Approx(6.0f));
}

TEST_CASE("conv2d matches four-nested-loop oracle") {
    Rng rng(2);
    Tensor<float> x = rand_f({2, 8, 8}, rng);
    Tensor<float> k = rand_f({4, 2, 3, 3}, rng);
    Tensor<float> y = conv2d(x, k, 1, 1);
    auto ref = verify::oracle::conv2d_direct(verify::to_d(x), 2, 8, 8, verify::to_d(k), 4, 3, 3, 1,
                                             1, {});
    CHECK(verify::max_abs_diff(y, ref) < 1e-6);
}

TEST_CASE("conv2d channel mismatch is a dimension error") {
    Tensor<float> x(Shape{2, 4, 4});
    Tensor<float> k(Shape{1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, 1, 1), DimError);
}

TEST_CASE("mhsa single token: softmax over one logit is 1") {
    Rng rng(3);
    const std::size_t c = 6;
    Tensor<float> x = rand_f({1, c}, rng);
    Tensor<float> wq = rand_f({c, c}, rng);
    Tensor<float> wk = rand_f({c, c}, rng);
    Tensor<float> wv = rand_f({c, c}, rng);
    Tensor<float> wo = rand_f({c, c}, rng);
    Tensor<float> bias = rand_f({2, 1, 1}, rng, -5.0f, 5.0f);  // any bias
    Tensor<float> y = mhsa(x, wq, wk, wv, wo, bias, 2);
    auto v = verify::oracle::linear_direct(verify::to_d(x), 1, c, verify::to_d(wv), c, {});
    auto ref = verify::oracle::linear_direct(v, 1, c, verify::to_d(wo), c, {});
    CHECK(verify::max_abs_diff(y, ref) < 1e-5);
}

TEST_CASE("mhsa identical tokens with zero bias give identical rows") {
    Rng rng(4);
    const std::size_t c = 8;
    Tensor<float> row = rand_f({1, c}, rng);
    Tensor<float> x(Shape{2, c});
    for (std::size_t j = 0; j < c; ++j) {
        x[j] = row[j];
        x[c + j] = row[j];
    }
    Tensor<float> wq = rand_f({c, c}, rng), wk = rand_f({c, c}, rng);
    Tensor<float> wv = rand_f({c, c}, rng), wo = rand_f({c, c}, rng);
    Tensor<float> bias(Shape{2, 2, 2});
    Tensor<float> y = mhsa(x, wq, wk, wv, wo, bias, 2);
    for (std::size_t j = 0; j < c; ++j) CHECK(y[j] == Catch::Approx(y[c + j]).margin(1e-6));
}

TEST_CASE("mhsa matches explicit per-head loop oracle") {
    Rng rng(5);
    const std::size_t t = 4, c = 8;
    Tensor<float> x = rand_f({t, c}, rng);
    Tensor<float> wq = rand_f({c, c}, rng), wk = rand_f({c, c}, rng);
    Tensor<float> wv = rand_f({c, c}, rng), wo = rand_f({c, c}, rng);
    Tensor<float> bias = rand_f({2, t, t}, rng);
    Tensor<float> y = mhsa(x, wq, wk, wv, wo, bias, 2);
    auto ref = verify::oracle::mhsa_direct(verify::to_d(x), t, c, verify::to_d(wq), {},
                                           verify::to_d(wk), {}, verify::to_d(wv), {},
                                           verify::to_d(wo), {}, verify::to_d(bias), 2);
    CHECK(verify::max_abs_diff(y, ref) < 1e-5);
}

TEST_CASE("mhsa bias token-count mismatch is a dimension error") {
    Tensor<float> x(Shape{4, 8});
    Tensor<float> w(Shape{8, 8});
    Tensor<float> bias(Shape{2, 3, 3});
    CHECK_THROWS_AS(mhsa(x, w, w, w, w, bias, 2), DimError);
}

TEST_CASE("fft2 of a constant image is a single DC coefficient") {
    const double c = 0.37;
    Tensor<double> x(Shape{1, 5, 7}, std::vector<double>(35, c));
    ComplexTensor<double> f = fft2(x);
    CHECK(f.re[0] == Catch::Approx(c * 35).margin(1e-9));
    CHECK(std::abs(f.im[0]) < 1e-9);
    for (std::size_t i = 1; i < f.size(); ++i) {
        CHECK(std::abs(f.re[i]) < 1e-9);
        CHECK(std::abs(f.im[i]) < 1e-9);
    }
}

TEST_CASE("fft2/ifft2 roundtrip identity") {
    Rng rng(6);
    Tensor<double> x = Tensor<double>::from_fn(Shape{1, 8, 8},
                                               [&](std::size_t) { return rng.uniform(-1, 1); });
    ComplexTensor<double> back = ifft2c(fft2(x));
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(back.re[i] - x[i]) < 1e-9);
        CHECK(std::abs(back.im[i]) < 1e-9);
    }
    Tensor<double> real_back = ifft2(fft2(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(real_back[i] - x[i]) < 1e-9);
}

TEST_CASE("fft2 matches direct DFT summation on 6x6") {
    Rng rng(7);
    Tensor<double> x = Tensor<double>::from_fn(Shape{1, 6, 6},
                                               [&](std::size_t) { return rng.uniform(-1, 1); });
    ComplexTensor<double> f = fft2(x);
    std::vector<double> rr, ri;
    verify::oracle::dft2_direct(verify::to_d(x), {}, 6, 6, -1, rr, ri);
    for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(std::abs(f.re[i] - rr[i]) < 1e-7);
        CHECK(std::abs(f.im[i] - ri[i]) < 1e-7);
    }
}

TEST_CASE("pixel_shuffle r=1 is the identity") {
    Rng rng(8);
    Tensor<float> x = rand_f({3, 4, 4}, rng);
    Tensor<float> y = pixel_shuffle(x, 1);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("pixel_shuffle index formula on a 2x2 block") {
    Tensor<float> x(Shape{4, 1, 1}, std::vector<float>{10, 20, 30, 40});
    Tensor<float> y = pixel_shuffle(x, 2);
    REQUIRE(y.shape() == Shape{1, 2, 2});
    CHECK(y[0] == 10.0f);  // (0,0) <- channel 0
    CHECK(y[1] == 20.0f);  // (0,1) <- channel 1
    CHECK(y[2] == 30.0f);  // (1,0) <- channel 2
    CHECK(y[3] == 40.0f);  // (1,1) <- channel 3
}

TEST_CASE("pixel_shuffle shape arithmetic and errors") {
    Tensor<float> x(Shape{18, 4, 4});
    Tensor<float> y = pixel_shuffle(x, 3);
    CHECK(y.shape() == Shape{2, 12, 12});
    Tensor<float> bad(Shape{5, 4, 4});
    CHECK_THROWS_AS(pixel_shuffle(bad, 2), DimError);
}

TEST_CASE("layer_norm of a constant row is zero before scale/shift") {
    Tensor<float> x(Shape{2, 6}, std::vector<float>(12, 3.25f));
    Tensor<float> gamma(Shape{6}, std::vector<float>(6, 1.0f));
    Tensor<float> beta(Shape{6});
    Tensor<float> y = layer_norm(x, gamma, beta);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) < 1e-6f);
}

TEST_CASE("activation fixed points") {
    Tensor<float> x(Shape{2}, std::vector<float>{0.0f, -1.0f});
    CHECK(gelu(x)[0] == 0.0f);
    CHECK(relu(x)[1] == 0.0f);
}

TEST_CASE("gelu matches quadrature of the Gaussian CDF") {
    for (double v = -4.0; v <= 4.0; v += 0.29) {
        const double ref = v * verify::oracle::gauss_cdf_quadrature(v);
        Tensor<double> x(Shape{1}, std::vector<double>{v});
        CHECK(std::abs(gelu(x)[0] - ref) < 1e-4);
    }
}

TEST_CASE("batch_norm handles zero-variance input via epsilon") {
    Tensor<float> x(Shape{2, 3, 3}, std::vector<float>(18, 0.5f));
    Tensor<float> gamma(Shape{2}, std::vector<float>(2, 1.0f));
    Tensor<float> beta(Shape{2});
    BnStats<float> stats(2);
    Tensor<float> y = batch_norm(x, gamma, beta, stats, true);
    CHECK(y.all_finite());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) < 1e-4f);
}

TEST_CASE("batch_norm eval mode uses running statistics") {
    Rng rng(9);
    Tensor<float> x = rand_f({2, 4, 4}, rng);
    Tensor<float> gamma(Shape{2}, std::vector<float>(2, 1.0f));
    Tensor<float> beta(Shape{2});
    BnStats<float> stats(2);
    (*stats.mean)[0] = 0.2f;
    (*stats.mean)[1] = -0.1f;
    (*stats.var)[0] = 0.5f;
    (*stats.var)[1] = 2.0f;
    Tensor<float> y = batch_norm(x, gamma, beta, stats, false);
    for (std::size_t i = 0; i < 16; ++i) {
        const float expect0 = (x[i] - 0.2f) / std::sqrt(0.5f + 1e-5f);
        CHECK(y[i] == Catch::Approx(expect0).margin(1e-5));
    }
    CHECK((*stats.mean)[0] == 0.2f);  // eval never touches the buffers
}

TEST_CASE("softmax_rows stays finite for large logits and rows sum to one") {
    Tensor<float> x(Shape{1, 3}, std::vector<float>{1000.0f, 1001.0f, 999.0f});
    Tensor<float> y = softmax_rows(x);
    CHECK(y.all_finite());
    CHECK(y[0] + y[1] + y[2] == Catch::Approx(1.0f).margin(1e-6));
}

TEST_CASE("backward of sum is all ones; of sum(x*x) is 2x") {
    Rng rng(10);
    Tensor<float> x = rand_f({3, 3}, rng);
    x.set_requires_grad(true);
    backward(sum(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0f);

    Tensor<float> z = rand_f({7}, rng);
    z.set_requires_grad(true);
    backward(sum(mul(z, z)));
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(z.grad()[i] == Catch::Approx(2.0f * z[i]).margin(1e-5));
}

TEST_CASE("backward on a non-scalar is a contract error") {
    Tensor<float> x(Shape{2, 2});
    x.set_requires_grad(true);
    Tensor<float> y = add(x, x);
    CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("gradients accumulate once per node through shared subgraphs") {
    Tensor<float> x(Shape{2}, std::vector<float>{1.5f, -2.0f});
    x.set_requires_grad(true);
    Tensor<float> y = mul(x, x);
    Tensor<float> z = add(y, y);  // z = 2x^2, dz/dx = 4x
    backward(sum(z));
    CHECK(x.grad()[0] == Catch::Approx(6.0f));
    CHECK(x.grad()[1] == Catch::Approx(-8.0f));
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    Tensor<float> x(Shape{2}, std::vector<float>{1, 2});
    x.set_requires_grad(true);
    NoGradGuard ng;
    Tensor<float> y = mul(x, x);
    CHECK(y.node()->parents.empty());
    CHECK_FALSE(y.tracked());
}

TEST_CASE("masked_mean averages over selected elements only") {
    Tensor<float> x(Shape{4}, std::vector<float>{1, 2, 3, 100});
    std::vector<std::uint8_t> mask{1, 1, 1, 0};
    CHECK(masked_mean(x, mask)[0] == Catch::Approx(2.0f));
    std::vector<std::uint8_t> none{0, 0, 0, 0};
    CHECK_THROWS_AS(masked_mean(x, none), ContractError);
}
