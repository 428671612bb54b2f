#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "peakdyn/kernels.hpp"
#include "peakdyn/seq.hpp"

namespace peakdyn {

struct window_too_small_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ln zeta_n(p) with zeta_n(p) = (ln2 / 2^(n+p_n)) k(2^(n+p_n)) / gamma(2^(n+1+p_(n+1))).
template <class Scalar, class PAt>
Scalar log_zeta_at(const KernelModel &model, int n, const PAt &p_at) {
    const Scalar ln2 = std::log(Scalar(2));
    Scalar xn = Scalar(n) + p_at(n);
    Scalar xn1 = Scalar(n + 1) + p_at(n + 1);
    return std::log(ln2) - xn * ln2 + log_k_at_log2<Scalar>(model, xn) -
           log_gamma_at_log2<Scalar>(model, xn1);
}

namespace detail {

// Log-space construction of the shifted-comb coefficients on [window.lo, jmax].
//   log_mu[n]  = -A 2^n - 2^n sum_{j>n} 2^-j ln theta_{j-1}(p)
//   log_m[n]   = ln 2 + log_mu[n] - log_zeta[n]
// The series beyond jmax is summed in closed form using the n -> inf limit of
// ln theta (evaluated with p == p_inf).
template <class Scalar>
struct ProfileCore {
    int lo = 0, jmax = 0;
    std::vector<Scalar> log_zeta;   // index j - lo, j in [lo, jmax]
    std::vector<Scalar> log_theta;  // index j - lo, j in [lo, jmax-1]
    std::vector<Scalar> tail_sum;   // T(n) = sum_{j=n+1}^inf 2^-j ln theta_{j-1}
    std::vector<Scalar> log_mu;
    std::vector<Scalar> log_m;

    Scalar lz(int j) const { return log_zeta[j - lo]; }
    Scalar lmu(int n) const { return log_mu[n - lo]; }
    Scalar lm(int n) const { return log_m[n - lo]; }
};

template <class Scalar, class PAt>
ProfileCore<Scalar> build_core(const KernelModel &model, Scalar A, int lo, int hi,
                               const PAt &p_at, int tail_terms) {
    if (!(A > Scalar(0)) || !std::isfinite(double(A)))
        throw std::invalid_argument("profile: A must be positive and finite");
    ProfileCore<Scalar> core;
    core.lo = lo;
    core.jmax = hi + tail_terms;
    const Scalar ln2 = std::log(Scalar(2));
    const int count = core.jmax - lo + 1;

    core.log_zeta.resize(count);
    for (int j = lo; j <= core.jmax; ++j)
        core.log_zeta[j - lo] = log_zeta_at<Scalar>(model, j, p_at);

    core.log_theta.resize(count - 1);
    for (int j = lo; j < core.jmax; ++j)
        core.log_theta[j - lo] = ln2 + core.log_zeta[j + 1 - lo] - core.log_zeta[j - lo];

    // Asymptotic value of ln theta, evaluated far beyond the window.
    int jbig = core.jmax + 340;
    Scalar lt_asym = ln2 + log_zeta_at<Scalar>(model, jbig + 1, p_at) -
                     log_zeta_at<Scalar>(model, jbig, p_at);
    if (!std::isfinite(double(lt_asym)))
        throw std::runtime_error("profile: ln theta tail diverges");

    // T(n), downward recursion; T(jmax-1) gets the closed geometric tail.
    core.tail_sum.resize(count - 1);
    Scalar tail = std::exp2(Scalar(-(core.jmax - 1))) * lt_asym;
    core.tail_sum[core.jmax - 1 - lo] = tail;
    for (int n = core.jmax - 2; n >= lo; --n)
        core.tail_sum[n - lo] =
            core.tail_sum[n + 1 - lo] + std::exp2(Scalar(-(n + 1))) * core.log_theta[n - lo];

    core.log_mu.resize(count - 1);
    core.log_m.resize(count - 1);
    for (int n = lo; n < core.jmax; ++n) {
        Scalar two_n = std::exp2(Scalar(n));
        core.log_mu[n - lo] = -A * two_n - two_n * core.tail_sum[n - lo];
        core.log_m[n - lo] = ln2 + core.log_mu[n - lo] - core.log_zeta[n - lo];
    }
    return core;
}

} // namespace detail

// Coefficients m_bar_n(A, p) of a stationary state with peaks at n + p_n,
// solving m_bar_{n+1} = zeta_n(p) m_bar_n^2.  Values below ~1e-300 are
// flushed to zero and flagged; the log-space columns stay exact.
struct StationaryProfile {
    KernelModel model;
    double A;
    ShiftSequence shift;
    int tail_terms;

    ArrayXd log_m_bar;   // natural log, always finite on the window
    ArrayXd log_mu_bar;
    ArrayXd log_zeta;    // ln zeta_n(p) on the window
    ArrayXd m_bar;       // flushed to 0 where underflowed
    ArrayXd mu_bar;
    std::vector<bool> underflow;

    const IndexWindow &window() const { return shift.window; }
    double m(int n) const { return m_bar[shift.window.at(n)]; }
    double mu(int n) const { return mu_bar[shift.window.at(n)]; }
    double log_m(int n) const { return log_m_bar[shift.window.at(n)]; }
    double log_mu(int n) const { return log_mu_bar[shift.window.at(n)]; }
};

inline constexpr double kUnderflowFloorLog = -690.0;  // ~ ln(1e-300)

StationaryProfile m_bar(const KernelModel &model, double A, const ShiftSequence &p,
                        int tail_terms = 60);

// Constant-shift convenience: the a_n(A, rho) family.
StationaryProfile stationary_comb(const KernelModel &model, double A, double rho,
                                  const IndexWindow &w, int tail_terms = 60);

double zeta(const KernelModel &model, int n, const ShiftSequence &p);
double theta(const KernelModel &model, int n, const ShiftSequence &p);
double mu_bar_value(const KernelModel &model, double A, const ShiftSequence &p, int n,
                    int tail_terms = 60);

// Max over interior n of the relative recurrence residual
// |m_{n+1} - zeta_n m_n^2| / m_{n+1}, evaluated in log space so underflowed
// entries are still checked.
double recurrence_residual(const StationaryProfile &profile);

// d m_bar_n / dA = -2^n m_bar_n.
double d_mbar_dA(const StationaryProfile &profile, int n);

// d m_bar_n / dp_k: zero for k < n, and the k'/gamma' elasticity terms
// otherwise.
double d_mbar_dpk(const KernelModel &model, const StationaryProfile &profile, int n, int k);

// Left/right asymptote constants of the constant-shift family.
inline double a_minus_infinity(const KernelModel &model, double rho) {
    return model.gamma0 * std::exp2(rho + 1.0) / (model.k0 * std::log(2.0));
}
inline double a_plus_infinity(const KernelModel &model, double rho) {
    return std::exp2(model.beta) * std::exp2((model.beta - model.alpha) * (rho + 1.0)) /
           std::log(2.0);
}

// Total xi-mass M(A, rho) = sum_n 2^(n+rho) a_n over the window plus analytic
// tail bounds (constant-shift profiles only).  Throws window_too_small_error
// when the tail exceeds tol_rel of the partial sum.
double total_mass(const StationaryProfile &profile, double tol_rel = 1e-12);

// Unique A with total_mass(A, rho) = M, by bisection on the decreasing map.
double solve_A_for_mass(const KernelModel &model, double M, double rho,
                        const IndexWindow &w = IndexWindow(-26, 16),
                        double mass_tol_rel = 1e-10, double A_tol_abs = 1e-12,
                        int tail_terms = 60);

} // namespace peakdyn
