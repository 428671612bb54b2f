#pragma once

#include <functional>
#include <vector>

#include "peakdyn/kernels.hpp"
#include "peakdyn/seq.hpp"
#include "peakdyn/stationary.hpp"

namespace peakdyn {
namespace linear {

// Coefficients sigma_n of the linearized operator
//   (L y)_n = (gamma(2^(n+p_n))/4) (y_{n-1} - y_n - sigma_n (y_n - y_{n+1})).
// Three variants: frozen stationary comb (constant-shift), time-dependent
// shifts p(t), and the truncated operator with sigma = 0 at n = n_trunc and
// y_n == 0 above it.  The left closure copies y_{lo} into the ghost site.
struct SigmaCoeffs {
    KernelModel model;
    IndexWindow window;
    double A_M;
    int n_trunc;  // sigma_{n_trunc} = 0; rows above are pinned to zero
    std::function<ShiftSequence(double)> shift_of_t;  // null => constant rho
    double rho = 0.0;

    static SigmaCoeffs stationary_comb(const KernelModel &m, const IndexWindow &w,
                                       double A_M, double rho, int n_trunc);
    static SigmaCoeffs time_dependent(const KernelModel &m, const IndexWindow &w,
                                      double A_M, std::function<ShiftSequence(double)> p,
                                      int n_trunc);

    ShiftSequence shift_at(double t) const;
    // sigma_n(t) = 8 mu_bar_n(A_M, p(t)) gamma(2^(n+1+p_{n+1}))/gamma(2^(n+p_n)),
    // zeroed at and above n_trunc.
    ArrayXd sigma_at(double t) const;
    // gamma(2^(n+p_n(t)))/4 per index.
    ArrayXd rate_at(double t) const;
};

ArrayXd apply_L(const SigmaCoeffs &coeffs, const ArrayXd &y, double t);

enum class Side { plus, minus };

// D+_n(y) = y_{n+1} - y_n (last entry via ghost copy drops off: size-1 array);
// D-_n(y) = y_n - y_{n-1} with the left ghost copy (first entry 0).
ArrayXd discrete_derivative(const ArrayXd &y, Side side);

// sup-norm of D+(y) in the theta weight over the window's interior.
double dplus_norm(const ArrayXd &y, const IndexWindow &w, double theta);

struct EvolveSample {
    double t;
    ArrayXd y;
};

// Solves dy/dt = L(y; t) with exponential handling of the stiff diagonal
// (adaptive exponential trapezoidal rule).  Returns y at the requested
// sample times plus t1.
std::vector<EvolveSample> evolve_T(const SigmaCoeffs &coeffs, const ArrayXd &y0,
                                   double t0, double t1, double tol,
                                   const std::vector<double> &samples = {});

// Fundamental solution of the pure-fragmentation cascade
//   dPsi_n/dt = (2^(beta n)/4)(Psi_{n-1} - Psi_n),  Psi_n(0) = delta(n - ell),
// evaluated by partial fractions (rates are distinct for beta > 0).
double fundamental_psi(double beta, int ell, int n, double t);

struct DecayFit {
    double C = 0.0;
    double a = 0.0;
    double nu = 0.0;
    double residual = 0.0;  // max log deviation over the fitted range
};

// Least squares of ln v = ln C - a ln t - nu t over samples with t >= t_burn.
DecayFit fit_decay(const std::vector<double> &t, const std::vector<double> &v,
                   double t_burn = 0.5, bool fit_power = true);

// Rayleigh ratio of the discrete Poincare inequality
//   sum 2^{2n} m_n (y_n - ybar)^2 <= c0 sum 2^{2n} gamma(2^{n+1+p_{n+1}}) m_{n+1} (D+_n y)^2
// with ybar the 2^{2n} m_n weighted mean.  0/0 -> 0.
double poincare_rayleigh(const KernelModel &model, const StationaryProfile &profile,
                         const ArrayXd &y);

// Exact sup of the Rayleigh ratio on the window (top generalized eigenvalue
// of the difference-coordinate pencil).
double poincare_c0_exact(const KernelModel &model, const StationaryProfile &profile);

struct HatqResult {
    int n0;
    std::vector<int> n;        // n0+1 .. n0+count
    std::vector<double> t;
    Eigen::ArrayXXd values;    // (n index, t index)
    double c1 = 0.0;           // min over samples of 2^{tb2 n} qhat e^{nu t} / delta0^{3/2}
    double c2 = 0.0;           // max of the same scaled by t^{tb2/beta}
    double theta_bar2 = 0.0;   // 1 - sigma with 2^-sigma = (1-delta1)/(1+delta1)
    bool sandwich_ok = false;
};

// Exact solution of the supersolution cascade
//   dqhat_n/dt = (gamma(2^n)/4)((1+delta1)/2 qhat_{n-1} - (1-delta1) qhat_n), n > n0,
//   qhat_n(0) = 4 delta0^{3/2},  qhat_{n0}(t) = 4 delta0^{3/2} e^{-nu t},
// with the two-sided envelope check.
HatqResult hatq_supersolution(const KernelModel &model, int n0, double delta0,
                              double delta1, double nu, const std::vector<double> &t_grid,
                              int count = 12);

} // namespace linear
} // namespace peakdyn
