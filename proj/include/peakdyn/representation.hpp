#pragma once

#include <vector>

#include "peakdyn/linear.hpp"
#include "peakdyn/seq.hpp"
#include "peakdyn/stationary.hpp"

namespace peakdyn {
namespace representation {

// Masses written as perturbations of a shifted stationary state,
//   m_n = m_bar_n(A, p) (1 + 2^n y_n),  gauged by y_N = 0.
struct Decomposition {
    double A;
    ArrayXd y;            // window-sized; zero at and above N
    ShiftSequence shift;
    int N;

    const IndexWindow &window() const { return shift.window; }
};

// Closed-form inversion: A from the gauge row m_N = m_bar_N(A, p), then
// y_n = 2^-n (m_n / m_bar_n - 1).  Round trips to ~1e-12 relative.
Decomposition decompose(const KernelModel &model, const ArrayXd &masses,
                        const ShiftSequence &p, int N);

// Masses implied by a decomposition (the inverse map).
ArrayXd reconstruct(const KernelModel &model, const Decomposition &d);

struct Remainders {
    ArrayXd r1, r2, r3;
};

// Fixed-point remainders of the mass-perturbation equation: r1 quadratic in
// y plus the mu_bar(A_M)-mu_bar(A) coupling, r2 variance-driven, r3 the
// dp/dt back-reaction through d m_bar / d p_k.  O(q) slots enter with
// coefficient one.  y_{lo-1} is closed by copying y_lo.
Remainders remainders_r(const KernelModel &model, const Decomposition &d, double A_M,
                        const ArrayXd &dpdt, const ArrayXd &q);

// Continuation remainders of the shift equation (R1 y-weighted
// p-differences, R2 variance-driven, R3 the mu_bar A-mismatch term).
Remainders remainders_R(const KernelModel &model, const Decomposition &d, double A_M,
                        const ArrayXd &q);

struct DecompositionSample {
    double t = 0.0;
    Decomposition d;
    double dAdt = 0.0;   // smoothed 5-point finite difference
    double norm1 = 0.0;  // ||y||_1
    double normb = 0.0;  // ||y||_beta
};

// Decompose every sample of a moment trajectory; absent peaks above N are
// excluded by construction of N.
std::vector<DecompositionSample> track_decomposition(const KernelModel &model,
                                                     const std::vector<MomentState> &traj,
                                                     int N);

// W2 distance of the normalized restriction to a Dirac at n + rho: the
// transport to a point is deterministic, W2^2 = q_n + (p_n - rho)^2.
double wasserstein_to_peak(double q_n, double p_n, double rho);
ArrayXd wasserstein_to_peak(const MomentState &state, double rho);

struct RhoEstimate {
    double rho_hat = 0.0;               // xi-mass weighted mean of p at the end
    std::vector<double> t;
    std::vector<double> spread;          // sup_n |p_n(t) - rho_hat|
};

RhoEstimate rho_estimate(const std::vector<MomentState> &traj);

// One application of the Duhamel fixed-point map to a decomposed trajectory:
// returns the max over probe times of ||T(y,A) - y||_1 normalized by the
// trajectory's ||y||_1 scale.  Integrals are trapezoidal over the sample
// grid (verification pass, not a solver); traj supplies p(t), q(t) and track
// the matching (y, A, dA/dt).  include_r2 selects whether the O(q) remainder
// is instantiated (true for grid-generated data; false when the trajectory
// came from the drop-closure moment system, whose exact identity has no
// q-term).
double duhamel_residual(const KernelModel &model, double A_M,
                        const std::vector<DecompositionSample> &track,
                        const std::vector<MomentState> &traj, bool include_r2 = true,
                        double evolve_tol = 1e-8);

} // namespace representation
} // namespace peakdyn
