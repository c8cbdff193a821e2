#include <catch2/catch_amalgamated.hpp>

#include "misr/verify.hpp"

using namespace misr;

TEST_CASE("gradient suite: analytic gradients match central finite differences") {
    verify::Options opts;
    auto results = verify::gradient_suite(opts);
    for (const auto& r : results) {
        INFO(r.name << " max_err=" << r.value << " threshold=" << r.threshold);
        CHECK(r.value < r.threshold);
    }
}

TEST_CASE("oracle suite: operators match independent reference implementations") {
    verify::Options opts;
    auto results = verify::oracle_suite(opts);
    for (const auto& r : results) {
        INFO(r.name << " max_err=" << r.value << " threshold=" << r.threshold);
        CHECK(r.value < r.threshold);
    }
}

TEST_CASE("broken-gradient hook makes the suite fail (negative control)") {
    verify::Options opts;
    opts.shapes_per_op = 4;
    opts.break_gradient_hook = true;
    auto results = verify::gradient_suite(opts);
    CHECK_FALSE(verify::all_pass(results));
}
