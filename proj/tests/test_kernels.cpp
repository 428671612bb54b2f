#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "peakdyn/kernels.hpp"

using namespace peakdyn;

TEST_CASE("eval_k closed form and limits") {
    auto m = KernelModel::canonical(0.3, 1.5);
    CHECK(eval_k(m, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
    // xi -> 0+ limit is k0
    CHECK(eval_k(m, 1e-12) == doctest::Approx(1.0).epsilon(1e-10));
    // independent high-precision arithmetic: 1 + 2^1.3
    long double expect = 1.0L + std::exp2(1.3L);
    CHECK(eval_k(m, 2.0) == doctest::Approx(double(expect)).epsilon(1e-14));
    CHECK_THROWS_AS(eval_k(m, 0.0), std::domain_error);
    CHECK_THROWS_AS(eval_k(m, -1.0), std::domain_error);
    CHECK_THROWS_AS(eval_k(m, std::numeric_limits<double>::quiet_NaN()), std::domain_error);
}

TEST_CASE("eval_gamma closed form, limits, monotonicity") {
    auto m = KernelModel::canonical(0.3, 1.5);
    CHECK(eval_gamma(m, 4.0) == doctest::Approx(9.0).epsilon(1e-15));
    CHECK(eval_gamma(m, 1e-12) == doctest::Approx(1.0).epsilon(1e-10));
    long double expect = 1.0L + std::exp2(1.5L);
    CHECK(eval_gamma(m, 2.0) == doctest::Approx(double(expect)).epsilon(1e-14));
    double prev = eval_gamma(m, 1.0);
    for (double xi = 1.5; xi < 1e5; xi *= 1.7) {
        double cur = eval_gamma(m, xi);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("cutoff bump Q") {
    auto m = KernelModel::canonical();
    CHECK(eval_Q(m, 0.0) == doctest::Approx(1.0));
    CHECK(eval_Q(m, 0.5) == 0.0);
    CHECK(eval_Q(m, 1.0 / 3.0) == 0.0);
    CHECK(eval_Q(m, -0.1) == eval_Q(m, 0.1));
    CHECK(eval_Q(m, 0.2) > 0.0);
    // C2 at the glue: values decay smoothly to zero near the support edge
    CHECK(eval_Q(m, 0.3332) < 1e-200);
}

TEST_CASE("eval_K diagonal value, support, symmetry") {
    auto m = KernelModel::canonical(0.3, 1.5);
    CHECK(eval_K(m, 1.0, 1.0) == doctest::Approx(eval_k(m, 1.0) / 2.0).epsilon(1e-15));
    CHECK(eval_K(m, 1.0, 4.0) == 0.0);
    CHECK(eval_K(m, 1.0, 0.2) == 0.0);
    CHECK_THROWS_AS(eval_K(m, -1.0, 1.0), std::domain_error);

    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> logxi(-10.0, 10.0);
    for (int i = 0; i < 100; ++i) {
        double xi = std::exp2(logxi(rng));
        double eta = std::exp2(logxi(rng));
        CHECK(eval_K(m, xi, eta) == eval_K(m, eta, xi));
    }
}

TEST_CASE("induced support bound epsilon0 in log coordinates") {
    auto m = KernelModel::canonical();
    CHECK(m.epsilon0 > 0.0);
    CHECK(m.epsilon0 <= 1.0);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> ys(-8.0, 8.0), ds(0.0, 3.0);
    for (int i = 0; i < 2000; ++i) {
        double y = ys(rng);
        double d = m.epsilon0 + ds(rng);
        CHECK(eval_K(m, std::exp2(y), std::exp2(y + d)) == 0.0);
        CHECK(eval_K(m, std::exp2(y), std::exp2(y - d)) == 0.0);
    }
    // a narrower bump gives a strictly interior epsilon0
    auto narrow = KernelModel::canonical(0.3, 1.5, 1.0, 1.0, 0.2);
    CHECK(narrow.epsilon0 < 0.63);
    CHECK(narrow.epsilon0 > 0.5);
}

TEST_CASE("uniform kernel estimate (2^y+2^z) K <= C_K (1+2^y 2^z)") {
    auto m = KernelModel::canonical();
    auto rep = validate_assumptions(m, default_validation_grid());
    REQUIRE(rep.pass);
    CHECK(std::isfinite(rep.C_K));
    CHECK(rep.C_K > 0.0);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ys(-20.0, 20.0), ds(-0.999, 0.999);
    for (int i = 0; i < 5000; ++i) {
        double y = ys(rng), z = y + ds(rng);
        double ey = std::exp2(y), ez = std::exp2(z);
        double lhs = (ey + ez) * eval_K(m, ey, ez);
        CHECK(lhs <= rep.C_K * (1.0 + ey * ez) * (1.0 + 1e-9));
    }
}

TEST_CASE("validate_assumptions recovers the closed-form constants") {
    auto m = KernelModel::canonical(0.3, 1.5);
    auto rep = validate_assumptions(m, default_validation_grid());
    REQUIRE(rep.pass);
    // symbolic suprema of the canonical derivative ratios
    CHECK(rep.k1 == doctest::Approx(m.alpha + 1.0).epsilon(1e-6));
    CHECK(rep.k2 == doctest::Approx((m.alpha + 1.0) * m.alpha).epsilon(1e-6));
    CHECK(rep.gamma1 == doctest::Approx(m.beta).epsilon(1e-6));
    CHECK(rep.gamma2 == doctest::Approx(m.beta * (m.beta - 1.0)).epsilon(1e-6));
}

TEST_CASE("parameter ranges are enforced") {
    CHECK_THROWS_AS(KernelModel::canonical(0.3, 2.5), std::invalid_argument);
    CHECK_THROWS_AS(KernelModel::canonical(1.2, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(KernelModel::canonical(0.3, 1.5, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(KernelModel::canonical(0.3, 1.5, 1.0, 1.0, 0.4), std::invalid_argument);
    auto flat = KernelModel::constant_test();
    auto rep = validate_assumptions(flat, default_validation_grid());
    CHECK_FALSE(rep.pass);  // degenerate families are validation-exempt
}
