#include "peakdyn/kernels.hpp"

#include <algorithm>

namespace peakdyn {

void KernelModel::finalize() {
    if (family == KernelFamily::canonical) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("KernelModel: alpha must lie in (0,1)");
        if (!(beta > 1.0 && beta < 2.0))
            throw std::invalid_argument("KernelModel: beta must lie in (1,2)");
    }
    if (!(k0 > 0.0 && gamma0 > 0.0))
        throw std::invalid_argument("KernelModel: k0, gamma0 must be positive");
    if (!(q_width > 0.0 && q_width <= 1.0 / 3.0))
        throw std::invalid_argument("KernelModel: q_width must lie in (0, 1/3]");

    alpha_bar = alpha + 1.0;
    beta_tilde = 0.0;
    beta_bar = beta;

    // Numerical support half-width of Q: largest s with Q(s) > 0 in double
    // arithmetic.  The bump underflows strictly inside |s| = q_width, so the
    // induced bound epsilon0 = log2((1+w)/(1-w)) lands in (0,1).
    double lo = 0.0, hi = q_width;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (eval_Q_width(mid, q_width) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    double w = hi;
    epsilon0 = std::log2((1.0 + w) / (1.0 - w)) + 1e-12;
    if (epsilon0 >= 1.0) epsilon0 = 1.0;  // cannot exceed the w = 1/3 limit
}

std::vector<double> default_validation_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 240; ++i)
        grid.push_back(std::pow(10.0, -6.0 + 12.0 * i / 240.0));
    return grid;
}

KernelValidationReport validate_assumptions(const KernelModel &m,
                                            const std::vector<double> &xi_grid) {
    KernelValidationReport rep;
    if (m.family != KernelFamily::canonical) {
        rep.pass = false;
        rep.issues.push_back({"degenerate test family is validation-exempt", 0.0, 0.0});
        return rep;
    }
    if (xi_grid.empty()) throw std::invalid_argument("validate_assumptions: empty grid");

    auto bound1 = [&](double xi, double expo_ge1, double expo_le1) {
        return xi >= 1.0 ? std::pow(xi, expo_ge1) : std::pow(xi, expo_le1);
    };

    double k1 = 0.0, k2 = 0.0, g1 = 0.0, g2 = 0.0;
    for (double xi : xi_grid) {
        k1 = std::max(k1, std::abs(eval_k_prime(m, xi)) / bound1(xi, m.alpha, m.alpha_bar - 1.0));
        k2 = std::max(k2, std::abs(eval_k_second(m, xi)) / bound1(xi, m.alpha - 1.0, m.alpha_bar - 2.0));
        g1 = std::max(g1, std::abs(eval_gamma_prime(m, xi)) / bound1(xi, m.beta - 1.0, m.beta_bar - 1.0));
        g2 = std::max(g2, std::abs(eval_gamma_second(m, xi)) / bound1(xi, m.beta - 2.0, m.beta_bar - 2.0));
    }
    rep.k1 = k1;
    rep.k2 = k2;
    rep.gamma1 = g1;
    rep.gamma2 = g2;

    // The closed forms give exact suprema k1 = alpha+1, k2 = (alpha+1)alpha,
    // gamma1 = beta, gamma2 = beta(beta-1); any sampled ratio above them by
    // more than roundoff is a bug.
    const double slack = 1.0 + 1e-12;
    struct Check { double got, expect; const char *what; };
    for (auto c : {Check{k1, m.alpha + 1.0, "k' bound"},
                   Check{k2, (m.alpha + 1.0) * m.alpha, "k'' bound"},
                   Check{g1, m.beta, "gamma' bound"},
                   Check{g2, m.beta * (m.beta - 1.0), "gamma'' bound"}}) {
        if (c.got > c.expect * slack)
            rep.issues.push_back({c.what, 0.0, c.got / c.expect});
    }

    // C_K: maximize (2^y + 2^z) K(2^y,2^z) / (1 + 2^y 2^z) over |y-z| < 1.
    double ck = 0.0;
    for (double y = -24.0; y <= 24.0; y += 0.05) {
        for (double d = -0.999; d <= 0.999; d += 0.01) {
            double z = y + d;
            double ey = std::exp2(y), ez = std::exp2(z);
            double val = (ey + ez) * eval_K(m, ey, ez) / (1.0 + ey * ez);
            ck = std::max(ck, val);
        }
    }
    rep.C_K = ck;
    if (!(std::isfinite(ck) && ck > 0.0))
        rep.issues.push_back({"C_K degenerate", 0.0, ck});

    rep.pass = rep.issues.empty();
    return rep;
}

} // namespace peakdyn
