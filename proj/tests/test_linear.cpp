#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "peakdyn/linear.hpp"

using namespace peakdyn;
using namespace peakdyn::linear;

namespace {

SigmaCoeffs default_comb_coeffs(const IndexWindow &w) {
    auto m = KernelModel::canonical(0.3, 1.5);
    double A_M = solve_A_for_mass(m, 1.0, 0.0);
    return SigmaCoeffs::stationary_comb(m, w, A_M, 0.0, w.hi);
}

} // namespace

TEST_CASE("constants are in the kernel of every L variant") {
    IndexWindow w(-12, 8);
    auto cc = default_comb_coeffs(w);
    ArrayXd ones = ArrayXd::Constant(w.size(), 3.7);
    ArrayXd out = apply_L(cc, ones, 0.0);
    for (int i = 0; i < w.size(); ++i) CHECK(out[i] == 0.0);

    auto td = SigmaCoeffs::time_dependent(
        cc.model, w, cc.A_M,
        [&](double) { return ShiftSequence::constant(w, 0.02); }, w.hi);
    out = apply_L(td, ones, 0.3);
    for (int i = 0; i < w.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("single-site bump produces the three displayed components") {
    IndexWindow w(-10, 8);
    auto cc = default_comb_coeffs(w);
    ArrayXd sig = cc.sigma_at(0.0);
    ArrayXd rate = cc.rate_at(0.0);

    int n0 = -2, i0 = w.at(n0);
    ArrayXd e = ArrayXd::Zero(w.size());
    e[i0] = 1.0;
    ArrayXd out = apply_L(cc, e, 0.0);
    for (int i = 0; i < w.size(); ++i) {
        if (i == i0 - 1)
            CHECK(out[i] == doctest::Approx(rate[i] * sig[i]).epsilon(1e-14));
        else if (i == i0)
            CHECK(out[i] == doctest::Approx(-rate[i] * (1.0 + sig[i])).epsilon(1e-14));
        else if (i == i0 + 1)
            CHECK(out[i] == doctest::Approx(rate[i]).epsilon(1e-14));
        else
            CHECK(out[i] == 0.0);
    }
}

TEST_CASE("interior strict maximum has nonpositive image") {
    IndexWindow w(-10, 8);
    auto cc = default_comb_coeffs(w);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        ArrayXd y(w.size());
        for (int i = 0; i < w.size(); ++i) y[i] = u(rng);
        int imax = 0;
        y.maxCoeff(&imax);
        if (imax == 0 || imax == w.size() - 1) continue;
        ArrayXd out = apply_L(cc, y, 0.0);
        CHECK(out[imax] <= 1e-14);
    }
}

TEST_CASE("sigma asymptotics: 8 on the left, dead on the right") {
    IndexWindow w(-20, 10);
    auto cc = default_comb_coeffs(w);
    ArrayXd sig = cc.sigma_at(0.0);
    CHECK(sig[0] == doctest::Approx(8.0).epsilon(1e-3));
    CHECK(sig[w.at(9)] < 1e-100);
    CHECK(sig[w.at(w.hi)] == 0.0);
}

TEST_CASE("discrete derivatives") {
    ArrayXd c = ArrayXd::Constant(9, 4.0);
    CHECK(discrete_derivative(c, Side::plus).abs().maxCoeff() == 0.0);
    ArrayXd lin(5);
    lin << 0, 1, 2, 3, 4;
    ArrayXd d = discrete_derivative(lin, Side::plus);
    for (int i = 0; i + 1 < lin.size(); ++i) CHECK(d[i] == 1.0);
    // index identity D-_{n+1} = D+_n
    ArrayXd dm = discrete_derivative(lin, Side::minus);
    for (int i = 0; i + 1 < lin.size(); ++i) CHECK(dm[i + 1] == d[i]);
}

TEST_CASE("evolve_T preserves constants and truncation zeros") {
    IndexWindow w(-10, 8);
    auto cc = default_comb_coeffs(w);
    ArrayXd y0 = ArrayXd::Constant(w.size(), -0.4);
    auto res = evolve_T(cc, y0, 0.0, 2.0, 1e-9);
    for (int i = 0; i < w.size(); ++i)
        CHECK(res.back().y[i] == doctest::Approx(-0.4).epsilon(1e-12));

    // truncation strictly inside the window: rows above n_trunc stay zero
    auto tc = SigmaCoeffs::stationary_comb(cc.model, w, cc.A_M, 0.0, 4);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ArrayXd y1(w.size());
    for (int i = 0; i < w.size(); ++i) y1[i] = u(rng);
    for (int n = 5; n <= w.hi; ++n) y1[w.at(n)] = 0.0;
    auto res2 = evolve_T(tc, y1, 0.0, 1.0, 1e-8);
    for (int n = 5; n <= w.hi; ++n) CHECK(res2.back().y[w.at(n)] == 0.0);
}

TEST_CASE("evolve_T obeys the maximum principle on random data") {
    IndexWindow w(-10, 8);
    auto cc = default_comb_coeffs(w);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ArrayXd y0(w.size());
    for (int i = 0; i < w.size(); ++i) y0[i] = u(rng);
    double lo = y0.minCoeff(), hi = y0.maxCoeff();
    auto res = evolve_T(cc, y0, 0.0, 3.0, 1e-9, {0.1, 0.5, 1.0, 2.0});
    for (const auto &s : res) {
        CHECK(s.y.minCoeff() >= lo - 1e-9);
        CHECK(s.y.maxCoeff() <= hi + 1e-9);
    }
}

TEST_CASE("semigroup differences decay with a positive fitted rate") {
    IndexWindow w(-14, 9);
    auto cc = default_comb_coeffs(w);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ArrayXd y0(w.size());
    for (int i = 0; i < w.size(); ++i) y0[i] = u(rng);  // bounded: lies in Y_0

    std::vector<double> samples;
    for (double t = 0.05; t <= 6.0; t += 0.05) samples.push_back(t);
    auto traj = evolve_T(cc, y0, 0.0, 6.0, 1e-8, samples);

    double tb = cc.model.beta / 2.0;
    std::vector<double> ts, vs;
    for (const auto &s : traj) {
        double nv = dplus_norm(s.y, w, tb);
        if (nv > 1e-300) {
            ts.push_back(s.t);
            vs.push_back(nv);
        }
    }
    auto fit = fit_decay(ts, vs, 0.5);
    CHECK(fit.nu > 0.0);
    CHECK(fit.residual < 2.0);
}

TEST_CASE("fundamental solution closed forms") {
    double beta = 1.5;
    // single site
    for (double t : {0.0, 0.3, 2.0})
        CHECK(fundamental_psi(beta, 2, 2, t) ==
              doctest::Approx(std::exp(-std::exp2(beta * 2) / 4.0 * t)).epsilon(1e-14));
    CHECK(fundamental_psi(beta, 3, 1, 0.5) == 0.0);

    // two-level closed form
    int ell = 1;
    double a = std::exp2(beta * ell) / 4.0, b = std::exp2(beta * (ell + 1)) / 4.0;
    for (double t : {0.05, 0.4, 1.5}) {
        double expect = b / (b - a) * (std::exp(-a * t) - std::exp(-b * t));
        CHECK(fundamental_psi(beta, ell, ell + 1, t) == doctest::Approx(expect).epsilon(1e-10));
    }
}

namespace {

// dense RK4 on the cascade as an independent oracle
std::vector<double> rk4_cascade(double beta, int ell, int nmax, double t_end, double dt) {
    int rows = nmax - ell + 1;
    std::vector<double> y(rows, 0.0);
    y[0] = 1.0;
    auto rhs = [&](const std::vector<double> &v) {
        std::vector<double> d(rows);
        for (int i = 0; i < rows; ++i) {
            double lam = std::exp2(beta * (ell + i)) / 4.0;
            d[i] = lam * ((i > 0 ? v[i - 1] : 0.0) - v[i]);
        }
        return d;
    };
    int steps = int(std::ceil(t_end / dt));
    double h = t_end / steps;
    for (int s = 0; s < steps; ++s) {
        auto k1 = rhs(y);
        std::vector<double> tmp(rows);
        for (int i = 0; i < rows; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
        auto k2 = rhs(tmp);
        for (int i = 0; i < rows; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
        auto k3 = rhs(tmp);
        for (int i = 0; i < rows; ++i) tmp[i] = y[i] + h * k3[i];
        auto k4 = rhs(tmp);
        for (int i = 0; i < rows; ++i)
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return y;
}

double adaptive_simpson(const std::function<double(double)> &f, double a, double b,
                        double tol, int depth = 0) {
    double c = 0.5 * (a + b);
    double fa = f(a), fb = f(b), fc = f(c);
    double s = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    double lc = 0.5 * (a + c), rc = 0.5 * (c + b);
    double s2 = (b - a) / 12.0 * (fa + 4.0 * f(lc) + 2.0 * fc + 4.0 * f(rc) + fb);
    if (depth > 40 || std::abs(s2 - s) < 15.0 * tol) return s2 + (s2 - s) / 15.0;
    return adaptive_simpson(f, a, c, tol / 2.0, depth + 1) +
           adaptive_simpson(f, c, b, tol / 2.0, depth + 1);
}

} // namespace

TEST_CASE("fundamental solution matches a dense RK4 oracle") {
    double beta = 1.5;
    int ell = 0, nmax = 4;
    double t_end = 0.7;
    auto oracle = rk4_cascade(beta, ell, nmax, t_end, 1e-5);
    for (int n = ell; n <= nmax; ++n)
        CHECK(fundamental_psi(beta, ell, n, t_end) ==
              doctest::Approx(oracle[n - ell]).epsilon(1e-8));
}

TEST_CASE("fundamental solution normalization and difference bound") {
    double beta = 1.5;
    for (int ell = 0; ell <= 4; ++ell) {
        double lam_ell = std::exp2(beta * ell) / 4.0;
        for (int n = ell; n <= ell + 6; ++n) {
            double T = 60.0 / lam_ell;
            double integral = adaptive_simpson(
                [&](double s) { return fundamental_psi(beta, ell, n, s); }, 0.0, T, 1e-11);
            CHECK(lam_ell * integral == doctest::Approx(1.0).epsilon(1e-8));
        }
    }

    // |Psi_n - Psi_{n+1}| <= c 2^{-beta(n-ell)} e^{-lambda_ell t}
    int ell = 1;
    double lam_ell = std::exp2(beta * ell) / 4.0;
    double c_emp = 0.0;
    for (int n = ell; n <= ell + 8; ++n)
        for (double t = 0.01; t < 4.0; t += 0.037) {
            double d = std::abs(fundamental_psi(beta, ell, n, t) -
                                fundamental_psi(beta, ell, n + 1, t));
            c_emp = std::max(c_emp,
                             d / (std::exp2(-beta * (n - ell)) * std::exp(-lam_ell * t)));
        }
    CHECK(std::isfinite(c_emp));
    CHECK(c_emp < 50.0);
}

TEST_CASE("fit_decay on synthetic data") {
    std::vector<double> t, v1, v2;
    for (double x = 0.05; x <= 6.0; x += 0.05) {
        t.push_back(x);
        v1.push_back(3.0 * std::exp(-0.7 * x));
        v2.push_back(std::pow(x, -0.5) * std::exp(-x));
    }
    auto f1 = fit_decay(t, v1, 0.0);
    CHECK(f1.C == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(f1.a == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(f1.nu == doctest::Approx(0.7).epsilon(1e-8));
    auto f2 = fit_decay(t, v2, 0.0);
    CHECK(f2.a == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(f2.nu == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(fit_decay({1.0, 2.0}, {1.0, 0.5}, 0.0), std::invalid_argument);
}

TEST_CASE("Poincare Rayleigh ratio and the exact window constant") {
    auto model = KernelModel::canonical(0.3, 1.5);
    double A_M = solve_A_for_mass(model, 1.0, 0.0);
    IndexWindow w(-15, 10);
    auto prof = stationary_comb(model, A_M, 0.0, w);

    CHECK(poincare_rayleigh(model, prof, ArrayXd::Constant(w.size(), 2.0)) == 0.0);

    ArrayXd bump = ArrayXd::Zero(w.size());
    bump[w.at(0)] = 1.0;
    double r = poincare_rayleigh(model, prof, bump);
    CHECK(r > 0.0);
    CHECK(std::isfinite(r));

    double c0 = poincare_c0_exact(model, prof);
    CHECK(c0 > 0.0);
    std::mt19937_64 rng(5150);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double sup = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        ArrayXd y(w.size());
        for (int i = 0; i < w.size(); ++i) y[i] = u(rng);
        double ratio = poincare_rayleigh(model, prof, y);
        CHECK(ratio <= c0 * (1.0 + 1e-9));
        sup = std::max(sup, ratio);
    }
    CHECK(sup > 0.05 * c0);

    // stability of the exact constant under window growth
    double c0_big =
        poincare_c0_exact(model, stationary_comb(model, A_M, 0.0, IndexWindow(-20, 14)));
    CHECK(std::abs(c0_big - c0) / c0 < 0.10);
}

TEST_CASE("hatq supersolution: data, boundary, oracle, sandwich") {
    auto model = KernelModel::canonical(0.3, 1.5);
    double delta0 = 0.05, nu = 0.3;
    double theta_bar2 = 0.8;
    double sg = 1.0 - theta_bar2;
    double delta1 = (std::exp2(sg) - 1.0) / (std::exp2(sg) + 1.0);
    std::vector<double> tg;
    for (double t = 0.0; t <= 2.0; t += 0.05) tg.push_back(t);

    int n0 = 1, count = 5;
    auto res = hatq_supersolution(model, n0, delta0, delta1, nu, tg, count);
    double amp = 4.0 * std::pow(delta0, 1.5);
    for (int i = 0; i < count; ++i)
        CHECK(res.values(i, 0) == doctest::Approx(amp).epsilon(1e-12));
    CHECK(res.theta_bar2 == doctest::Approx(theta_bar2).epsilon(1e-12));
    CHECK(res.sandwich_ok);

    // independent dense integration with the boundary row forced
    std::vector<double> q(count, amp);
    auto rhs = [&](const std::vector<double> &v, double t) {
        std::vector<double> d(count);
        for (int i = 0; i < count; ++i) {
            double g4 = eval_gamma(model, std::exp2(double(n0 + 1 + i))) / 4.0;
            double below = (i == 0) ? amp * std::exp(-nu * t) : v[i - 1];
            d[i] = g4 * (0.5 * (1.0 + delta1) * below - (1.0 - delta1) * v[i]);
        }
        return d;
    };
    double t = 0.0, dt = 2e-6;
    size_t next = 1;
    while (next < tg.size()) {
        auto k1 = rhs(q, t);
        std::vector<double> tmp(count);
        for (int i = 0; i < count; ++i) tmp[i] = q[i] + 0.5 * dt * k1[i];
        auto k2 = rhs(tmp, t + 0.5 * dt);
        for (int i = 0; i < count; ++i) tmp[i] = q[i] + 0.5 * dt * k2[i];
        auto k3 = rhs(tmp, t + 0.5 * dt);
        for (int i = 0; i < count; ++i) tmp[i] = q[i] + dt * k3[i];
        auto k4 = rhs(tmp, t + dt);
        for (int i = 0; i < count; ++i)
            q[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        t += dt;
        if (std::abs(t - tg[next]) < 0.5 * dt) {
            for (int i = 0; i < count; ++i)
                CHECK(res.values(i, int(next)) == doctest::Approx(q[i]).epsilon(1e-8));
            ++next;
        }
    }
}
