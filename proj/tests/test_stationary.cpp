#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "peakdyn/stationary.hpp"

using namespace peakdyn;

namespace {

ShiftSequence random_shift(const IndexWindow &w, double delta0, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(-delta0, delta0);
    ArrayXd p(w.size());
    for (int i = 0; i < w.size(); ++i) p[i] = u(rng);
    return ShiftSequence(w, p, u(rng), u(rng));
}

} // namespace

TEST_CASE("zeta closed forms for the degenerate families") {
    IndexWindow w(-10, 10);
    auto p0 = ShiftSequence::constant(w, 0.0);

    auto flat = KernelModel::constant_test(2.0, 3.0);
    for (int n : {-5, 0, 4})
        CHECK(zeta(flat, n, p0) ==
              doctest::Approx(std::log(2.0) * 2.0 / (3.0 * std::exp2(double(n)))).epsilon(1e-14));

    // k proportional to xi makes zeta independent of n and theta == 2 exactly
    auto lin = KernelModel::linear_test(2.0, 3.0);
    for (int n : {-6, -1, 0, 5}) {
        CHECK(zeta(lin, n, p0) == doctest::Approx(std::log(2.0) * 2.0 / 3.0).epsilon(1e-14));
        CHECK(theta(lin, n, p0) == doctest::Approx(2.0).epsilon(1e-14));
    }
}

TEST_CASE("zeta canonical value and left asymptote") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-40, 10);
    auto p0 = ShiftSequence::constant(w, 0.0);
    // ln2 * k(1) / gamma(2), computed independently
    double expect = std::log(2.0) * 2.0 / (1.0 + std::pow(2.0, 1.5));
    CHECK(zeta(m, 0, p0) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(expect == doctest::Approx(0.362105).epsilon(1e-5));

    // zeta_n 2^(n+p_n) -> k0 ln2 / gamma0 as n -> -inf
    for (int n : {-25, -30, -35})
        CHECK(zeta(m, n, p0) * std::exp2(double(n)) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("theta asymptotes on both sides") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-12, 12);
    std::mt19937_64 rng(5);
    auto p = random_shift(w, 0.05, rng);

    // n -> -inf: theta_n -> 2^(p_n - p_{n+1}) (constant extension below the window)
    CHECK(theta(m, -30, p) == doctest::Approx(1.0).epsilon(1e-6));
    // n -> +inf with p == p_inf beyond the window:
    // theta -> 2^(alpha - beta + 1)
    CHECK(theta(m, 40, p) ==
          doctest::Approx(std::exp2(m.alpha - m.beta + 1.0)).epsilon(1e-6));

    // interior: matches (2.29) structure with the shift corrections
    int n = 30;
    double expect = std::exp2(m.alpha - m.beta + 1.0) *
                    std::exp2(m.alpha * (p.at(n + 1) - p.at(n))) *
                    std::exp2(-m.beta * (p.at(n + 2) - p.at(n + 1)));
    CHECK(theta(m, n, p) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("mu_bar closed form for the linear test family") {
    auto lin = KernelModel::linear_test();
    IndexWindow w(-10, 10);
    auto p0 = ShiftSequence::constant(w, 0.0);
    double A = 0.7;
    auto prof = m_bar(lin, A, p0);
    for (int n : {-8, -3, 0, 3}) {
        // theta == 2: mu_bar_n = (1/2) e^(-A 2^n)
        CHECK(prof.mu(n) ==
              doctest::Approx(0.5 * std::exp(-A * std::exp2(double(n)))).epsilon(1e-13));
        // and the mu recurrence mu_{n+1} = 2 mu_n^2 holds
        CHECK(prof.mu(n + 1) == doctest::Approx(2.0 * prof.mu(n) * prof.mu(n)).epsilon(1e-12));
    }
    CHECK(mu_bar_value(lin, A, p0, -3) == doctest::Approx(prof.mu(-3)).epsilon(1e-15));
}

TEST_CASE("mu_bar canonical vs extended-precision series oracle") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-12, 12);
    auto p0 = ShiftSequence::constant(w, 0.0);

    // independent long double evaluation of
    //   mu_n = exp(-A 2^n - 2^n sum_{j>n} 2^-j ln theta_{j-1})
    auto log_k = [&](long double x) {
        return 1.3L * x * std::log(2.0L) + std::log1p(std::exp2(-1.3L * x));
    };
    auto log_g = [&](long double x) {
        return 1.5L * x * std::log(2.0L) + std::log1p(std::exp2(-1.5L * x));
    };
    auto log_zeta_ld = [&](long double n) {
        return std::log(std::log(2.0L)) - n * std::log(2.0L) + log_k(n) - log_g(n + 1.0L);
    };
    const long double A = 1.0L;
    const int n = -5;
    long double series = 0.0L;
    for (int j = n + 1; j <= n + 70; ++j) {
        long double lt = std::log(2.0L) + log_zeta_ld((long double)j) - log_zeta_ld((long double)(j - 1));
        series += std::exp2((long double)-j) * lt;
    }
    long double oracle = std::exp(-A * std::exp2((long double)n) -
                                  std::exp2((long double)n) * series);

    CHECK(mu_bar_value(m, 1.0, p0, n) == doctest::Approx(double(oracle)).epsilon(1e-13));
    // recurrence mu_{n+1} = theta_n mu_n^2 to 1e-10 relative
    auto prof = m_bar(m, 1.0, p0);
    for (int k = -10; k < 8; ++k) {
        double lhs = prof.mu(k + 1);
        double rhs = theta(m, k, p0) * prof.mu(k) * prof.mu(k);
        if (lhs > 1e-280)
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("recurrence residual over random admissible (A, p)") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-15, 12);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ua(0.2, 4.0);
    for (int trial = 0; trial < 100; ++trial) {
        auto p = random_shift(w, 0.05, rng);
        auto prof = m_bar(m, ua(rng), p);
        CHECK(recurrence_residual(prof) < 1e-10);
    }
}

TEST_CASE("constant shift reproduces the a_n recurrence and asymptotes") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-20, 14);
    double rho = 0.3, A = 1.0;
    auto prof = stationary_comb(m, A, rho, w);
    auto p = ShiftSequence::constant(w, rho);

    for (int n : {-15, -6, 0, 5})
        CHECK(prof.m(n + 1) == doctest::Approx(zeta(m, n, p) * prof.m(n) * prof.m(n)).epsilon(1e-11));

    // left: a_n / (a_-inf 2^n) in [0.99, 1.01] at n = -15
    double ratio = prof.m(-15) / (a_minus_infinity(m, rho) * std::exp2(-15.0));
    CHECK(ratio > 0.99);
    CHECK(ratio < 1.01);

    // right: ln a_n + A 2^n - (beta-alpha) n ln2 is Cauchy and approaches ln a_inf
    auto r = [&](int n) {
        return prof.log_m(n) + A * std::exp2(double(n)) -
               (m.beta - m.alpha) * n * std::log(2.0);
    };
    double rN = r(w.hi);
    for (int n = w.hi - 3; n <= w.hi; ++n) CHECK(std::abs(r(n) - rN) < 1e-3);
    CHECK(std::abs(rN - std::log(a_plus_infinity(m, rho))) < 1e-3);
}

TEST_CASE("d_mbar_dA is -2^n m_bar_n and matches finite differences") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-12, 10);
    std::mt19937_64 rng(31);
    auto p = random_shift(w, 0.05, rng);
    double A = 1.3;
    auto prof = m_bar(m, A, p);

    for (int n = w.lo; n <= w.hi; ++n) {
        if (prof.m(n) == 0.0) continue;
        double d = d_mbar_dA(prof, n);
        CHECK(d < 0.0);
        CHECK(d / prof.m(n) == doctest::Approx(-std::exp2(double(n))).epsilon(1e-15));
    }

    // central finite differences at h = 1e-6 A
    double h = 1e-6 * A;
    auto up = m_bar(m, A + h, p), dn = m_bar(m, A - h, p);
    for (int n : {-9, -4, 0, 4}) {
        double fd = (up.m(n) - dn.m(n)) / (2.0 * h);
        CHECK(d_mbar_dA(prof, n) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("d_mbar_dpk cases and finite-difference oracle") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-10, 12);
    std::mt19937_64 rng(77);
    auto p = random_shift(w, 0.05, rng);
    double A = 0.8;
    auto prof = m_bar(m, A, p);

    CHECK(d_mbar_dpk(m, prof, 3, 1) == 0.0);
    CHECK(d_mbar_dpk(m, prof, 0, -2) == 0.0);

    // long double rebuild with perturbed p_k as the derivative oracle
    auto fd_oracle = [&](int n, int k) {
        const long double h = 1e-5L;
        std::vector<long double> pv(w.size());
        for (int i = 0; i < w.size(); ++i) pv[i] = (long double)p.p[i];
        auto pa = [&](int j) -> long double {
            if (j > w.hi) return (long double)p.p_inf;
            if (j < w.lo) return (long double)p.p_lo_ext;
            return pv[j - w.lo];
        };
        long double base = pv[k - w.lo];
        pv[k - w.lo] = base + h;
        auto up = peakdyn::detail::build_core<long double>(m, (long double)A, w.lo, w.hi, pa, 60);
        pv[k - w.lo] = base - h;
        auto dn = peakdyn::detail::build_core<long double>(m, (long double)A, w.lo, w.hi, pa, 60);
        pv[k - w.lo] = base;
        return double((std::exp(up.lm(n)) - std::exp(dn.lm(n))) / (2.0L * h));
    };

    std::uniform_int_distribution<int> un(w.lo, 6);
    for (int trial = 0; trial < 40; ++trial) {
        int n = un(rng);
        std::uniform_int_distribution<int> uk(n, std::min(w.hi, n + 12));
        int k = uk(rng);
        double formula = d_mbar_dpk(m, prof, n, k);
        double fd = fd_oracle(n, k);
        if (std::abs(fd) > 1e-280)
            CHECK(formula == doctest::Approx(fd).epsilon(1e-6));
    }

    // |d m_n/d p_k| <= c 2^(n-k) m_n with a uniform constant
    double c_worst = 0.0;
    for (int n = w.lo; n <= 6; ++n)
        for (int k = n; k <= w.hi; ++k) {
            if (prof.m(n) == 0.0) continue;
            double b = std::abs(d_mbar_dpk(m, prof, n, k)) /
                       (std::exp2(double(n - k)) * prof.m(n));
            c_worst = std::max(c_worst, b);
        }
    CHECK(c_worst < 3.0);
}

TEST_CASE("total_mass positivity, monotonicity, window stability") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-26, 16);
    double rho = 0.0;

    double M1 = total_mass(stationary_comb(m, 1.0, rho, w));
    double M2 = total_mass(stationary_comb(m, 2.0, rho, w));
    CHECK(M1 > 0.0);
    CHECK(M2 > 0.0);
    CHECK(M1 > M2);  // A -> M(A) strictly decreasing

    double Mref = total_mass(stationary_comb(m, 1.0, rho, IndexWindow(-26, 15)));
    double Mbig = total_mass(stationary_comb(m, 1.0, rho, IndexWindow(-30, 20)));
    CHECK(std::abs(Mref - Mbig) / Mbig < 1e-10);

    CHECK_THROWS_AS(total_mass(stationary_comb(m, 0.001, rho, IndexWindow(-10, 8))),
                    window_too_small_error);
}

TEST_CASE("interior m_bar is stable under window extension") {
    auto m = KernelModel::canonical(0.3, 1.5);
    auto small = stationary_comb(m, 1.0, 0.25, IndexWindow(-12, 10));
    auto large = stationary_comb(m, 1.0, 0.25, IndexWindow(-18, 16));
    for (int n = -12; n <= 10; ++n)
        if (small.m(n) > 0.0)
            CHECK(small.m(n) == doctest::Approx(large.m(n)).epsilon(1e-12));
}

TEST_CASE("solve_A_for_mass round trip, uniqueness, golden-section oracle") {
    auto m = KernelModel::canonical(0.3, 1.5);
    IndexWindow w(-26, 16);
    for (double M : {0.1, 1.0, 10.0}) {
        double A = solve_A_for_mass(m, M, 0.0, w);
        double Mh = total_mass(stationary_comb(m, A, 0.0, w));
        CHECK(std::abs(Mh - M) / M < 1e-10);
    }

    // two distinct bracketing starts agree (bisection from different seeds
    // is emulated by solving for slightly perturbed M and interpolating)
    double A1 = solve_A_for_mass(m, 10.0, 0.0, w);
    double A2 = solve_A_for_mass(m, 10.0 * (1.0 + 1e-13), 0.0, w);
    CHECK(std::abs(A1 - A2) < 1e-9 * std::max(1.0, A1));

    // independent golden-section minimizer of (M(A) - M)^2
    double M = 10.0;
    auto f = [&](double lnA) {
        double d = total_mass(stationary_comb(m, std::exp(lnA), 0.0, w)) - M;
        return d * d;
    };
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(0.05), b = std::log(50.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < 200; ++it) {
        if (fc < fd) {
            b = d; d = c; fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    double A_gold = std::exp(0.5 * (a + b));
    CHECK(A1 == doctest::Approx(A_gold).epsilon(1e-8));

    CHECK_THROWS_AS(solve_A_for_mass(m, 1e30, 0.0, w), std::range_error);
}
