#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace peakdyn {

// Coagulation/fragmentation rate model.  The canonical family
//   k(xi) = k0 + xi^(alpha+1),   gamma(xi) = gamma0 + xi^beta
// satisfies every growth and derivative assumption with
// alpha_bar = alpha+1, beta_tilde = 0, beta_bar = beta.  The two degenerate
// families exist for tests only and are exempt from validation:
//   constant_k:  k == k0,      gamma == gamma0
//   linear_k:    k(xi) = k0*xi, gamma == gamma0   (zeta_n independent of n)
enum class KernelFamily { canonical, constant_k, linear_k };

struct KernelModel {
    KernelFamily family = KernelFamily::canonical;
    double alpha = 0.3;       // in (0,1)
    double beta = 1.5;        // in (1,2)
    double k0 = 1.0;
    double gamma0 = 1.0;
    double q_width = 1.0 / 3.0;  // support half-width of the cutoff Q

    // Derived, filled by finalize():
    double alpha_bar = 0.0;   // = alpha + 1
    double beta_tilde = 0.0;  // = 0 for the canonical family
    double beta_bar = 0.0;    // = beta
    double epsilon0 = 0.0;    // tight induced support bound of K(2^y,2^z) in |y-z|

    static KernelModel canonical(double alpha = 0.3, double beta = 1.5,
                                 double k0 = 1.0, double gamma0 = 1.0,
                                 double q_width = 1.0 / 3.0) {
        KernelModel m;
        m.family = KernelFamily::canonical;
        m.alpha = alpha;
        m.beta = beta;
        m.k0 = k0;
        m.gamma0 = gamma0;
        m.q_width = q_width;
        m.finalize();
        return m;
    }

    // Test-only: k == k0 (flat), gamma == gamma0.
    static KernelModel constant_test(double k0 = 1.0, double gamma0 = 1.0) {
        KernelModel m;
        m.family = KernelFamily::constant_k;
        m.k0 = k0;
        m.gamma0 = gamma0;
        m.finalize();
        return m;
    }

    // Test-only: k(xi) = k0*xi, gamma == gamma0; zeta_n is constant and the
    // whole system is exactly translation invariant in p.
    static KernelModel linear_test(double k0 = 1.0, double gamma0 = 1.0) {
        KernelModel m;
        m.family = KernelFamily::linear_k;
        m.k0 = k0;
        m.gamma0 = gamma0;
        m.finalize();
        return m;
    }

    void finalize();
};

// --- cutoff bump -----------------------------------------------------------

// Q(s) = exp(1 - 1/(1 - (s/w)^2)) for |s| < w, 0 otherwise.  C^inf, even,
// Q(0) = 1.  The default w = 1/3 gives supp Q subset (-1/3, 1/3).
template <class Scalar>
Scalar eval_Q_width(Scalar s, Scalar w) {
    if (!(std::isfinite(double(s)))) throw std::domain_error("eval_Q: non-finite argument");
    Scalar u = s / w;
    Scalar d = Scalar(1) - u * u;
    if (d <= Scalar(0)) return Scalar(0);
    return std::exp(Scalar(1) - Scalar(1) / d);
}

// --- rate functions --------------------------------------------------------

namespace detail {
template <class Scalar>
void check_positive_arg(Scalar xi, const char *who) {
    if (!(std::isfinite(double(xi)) && xi > Scalar(0)))
        throw std::domain_error(std::string(who) + ": argument must be positive and finite");
}
} // namespace detail

template <class Scalar>
Scalar eval_k(const KernelModel &m, Scalar xi) {
    detail::check_positive_arg(xi, "eval_k");
    switch (m.family) {
        case KernelFamily::canonical:
            return Scalar(m.k0) + std::pow(xi, Scalar(m.alpha + 1.0));
        case KernelFamily::constant_k:
            return Scalar(m.k0);
        case KernelFamily::linear_k:
            return Scalar(m.k0) * xi;
    }
    throw std::logic_error("eval_k: bad family");
}

template <class Scalar>
Scalar eval_gamma(const KernelModel &m, Scalar xi) {
    detail::check_positive_arg(xi, "eval_gamma");
    if (m.family == KernelFamily::canonical)
        return Scalar(m.gamma0) + std::pow(xi, Scalar(m.beta));
    return Scalar(m.gamma0);
}

inline double eval_Q(const KernelModel &m, double s) {
    return eval_Q_width(s, m.q_width);
}

// ln k(2^x), stable for any real x (no overflow of 2^x).
template <class Scalar>
Scalar log_k_at_log2(const KernelModel &m, Scalar x) {
    const Scalar ln2 = std::log(Scalar(2));
    switch (m.family) {
        case KernelFamily::canonical: {
            Scalar a1 = Scalar(m.alpha + 1.0);
            if (x >= Scalar(0))
                return a1 * x * ln2 + std::log1p(Scalar(m.k0) * std::exp2(-a1 * x));
            return std::log(Scalar(m.k0)) + std::log1p(std::exp2(a1 * x) / Scalar(m.k0));
        }
        case KernelFamily::constant_k:
            return std::log(Scalar(m.k0));
        case KernelFamily::linear_k:
            return std::log(Scalar(m.k0)) + x * ln2;
    }
    throw std::logic_error("log_k_at_log2: bad family");
}

// ln gamma(2^x), stable for any real x.
template <class Scalar>
Scalar log_gamma_at_log2(const KernelModel &m, Scalar x) {
    const Scalar ln2 = std::log(Scalar(2));
    if (m.family != KernelFamily::canonical) return std::log(Scalar(m.gamma0));
    Scalar b = Scalar(m.beta);
    if (x >= Scalar(0))
        return b * x * ln2 + std::log1p(Scalar(m.gamma0) * std::exp2(-b * x));
    return std::log(Scalar(m.gamma0)) + std::log1p(std::exp2(b * x) / Scalar(m.gamma0));
}

// Derivatives of the closed forms (canonical family).
inline double eval_k_prime(const KernelModel &m, double xi) {
    detail::check_positive_arg(xi, "eval_k_prime");
    switch (m.family) {
        case KernelFamily::canonical:
            return (m.alpha + 1.0) * std::pow(xi, m.alpha);
        case KernelFamily::constant_k:
            return 0.0;
        case KernelFamily::linear_k:
            return m.k0;
    }
    throw std::logic_error("eval_k_prime: bad family");
}

inline double eval_k_second(const KernelModel &m, double xi) {
    detail::check_positive_arg(xi, "eval_k_second");
    if (m.family != KernelFamily::canonical) return 0.0;
    return (m.alpha + 1.0) * m.alpha * std::pow(xi, m.alpha - 1.0);
}

inline double eval_gamma_prime(const KernelModel &m, double xi) {
    detail::check_positive_arg(xi, "eval_gamma_prime");
    if (m.family != KernelFamily::canonical) return 0.0;
    return m.beta * std::pow(xi, m.beta - 1.0);
}

inline double eval_gamma_second(const KernelModel &m, double xi) {
    detail::check_positive_arg(xi, "eval_gamma_second");
    if (m.family != KernelFamily::canonical) return 0.0;
    return m.beta * (m.beta - 1.0) * std::pow(xi, m.beta - 2.0);
}

// --- coagulation kernel ----------------------------------------------------

// K(xi,eta) = (xi+eta)^-1 k((xi+eta)/2) Q(2 eta/(xi+eta) - 1).
// Symmetric; zero unless xi/2 < eta < 2 xi.
template <class Scalar>
Scalar eval_K(const KernelModel &m, Scalar xi, Scalar eta) {
    detail::check_positive_arg(xi, "eval_K");
    detail::check_positive_arg(eta, "eval_K");
    Scalar s = (eta - xi) / (xi + eta);
    Scalar q = eval_Q_width(s, Scalar(m.q_width));
    if (q == Scalar(0)) return Scalar(0);
    return q * eval_k(m, (xi + eta) / Scalar(2)) / (xi + eta);
}

// --- assumption validation -------------------------------------------------

struct KernelValidationIssue {
    std::string what;
    double xi;
    double ratio;
};

struct KernelValidationReport {
    bool pass = false;
    // Minimal admissible derivative-bound constants.
    double k1 = 0.0, k2 = 0.0, gamma1 = 0.0, gamma2 = 0.0;
    // Uniform constant of (2^y+2^z) K(2^y,2^z) <= C_K (1 + 2^y 2^z).
    double C_K = 0.0;
    std::vector<KernelValidationIssue> issues;
};

// Samples the derivative bounds over a log grid and maximizes the C_K ratio
// over |y-z| < 1.  Degenerate test families are rejected.
KernelValidationReport validate_assumptions(const KernelModel &m,
                                            const std::vector<double> &xi_grid);

std::vector<double> default_validation_grid();

} // namespace peakdyn
