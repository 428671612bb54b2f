#pragma once

#include <optional>
#include <string>
#include <vector>

#include "peakdyn/io.hpp"
#include "peakdyn/kernels.hpp"
#include "peakdyn/linear.hpp"
#include "peakdyn/moment_ode.hpp"
#include "peakdyn/representation.hpp"
#include "peakdyn/seq.hpp"
#include "peakdyn/stationary.hpp"

namespace peakdyn {
namespace experiments {

inline constexpr const char *kVersion = "0.1.0";

// Theorem-hypothesis violations refuse the run (CLI exit code 3).
struct hypothesis_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunContext {
    io::Config cfg;
    std::string out_dir;  // empty: compute only, write nothing
    unsigned long long seed = 42;
    int threads = 1;
};

KernelModel model_from_config(const io::Config &cfg);
IndexWindow window_from_config(const io::Config &cfg, int def_lo, int def_hi);

// ---- stationary ------------------------------------------------------------

struct StationaryResult {
    double rho = 0.0;
    double A = 0.0;
    double mass = 0.0;
    double recurrence_residual = 0.0;
    double left_asymptote_ratio = 0.0;   // a_n / (a_-inf 2^n) at the window floor
    double right_cauchy_dev = 0.0;       // log-residual Cauchy deviation near the top
    double right_vs_ainf = 0.0;          // |r_hi - ln a_inf|
    double deriv_dA_worst = 0.0;         // worst relative error vs finite differences
    double deriv_dpk_worst = 0.0;
    double mass_roundtrip_rel = 0.0;     // |M(A_M) - M| / M when M was given
};

std::vector<StationaryResult> run_stationary(const RunContext &ctx);

// ---- simulate / moments ----------------------------------------------------

struct SimulateResult {
    double xi_mass_initial = 0.0;
    double xi_mass_final = 0.0;
    double xi_drift_rel = 0.0;
    double leakage_max = 0.0;
    double min_cell_mass = 0.0;
    long steps = 0;
    std::vector<MomentState> moments;
};

SimulateResult run_simulate(const RunContext &ctx);

struct MomentsResult {
    std::vector<MomentState> trajectory;
    double nu_q = 0.0;   // fitted decay rate of sup_n q_n
    double nu_p = 0.0;   // fitted decay rate of ||D+ p||_0 (half-rate convention kept raw)
    int q_clip_events = 0;
};

MomentsResult run_moments(const RunContext &ctx);

// ---- linear ----------------------------------------------------------------

struct LinearDecayCase {
    double theta = 0.0;
    double theta_tilde = 0.0;
    linear::DecayFit fit;
    bool eta0_ok = true;  // data within the smallness hypothesis, else flagged
};

struct LinearResult {
    std::vector<LinearDecayCase> decays;
    bool truncation_zeros_ok = true;
    double psi_normalization_worst = 0.0;  // |lambda_ell * integral - 1|
    double psi_two_level_worst = 0.0;
    double c0_exact = 0.0;
    double c0_sampled = 0.0;     // refined 10^3-sample sup
    int fresh_violations = 0;    // certification count on 10^4 fresh samples
    double c0_window_drift = 0.0;  // relative change under window growth
    double nu_from_c0 = 0.0;       // 1/(4 c0)
};

LinearResult run_linear(const RunContext &ctx);

// ---- stability -------------------------------------------------------------

struct StabilityResult {
    double delta0 = 0.0;
    double M = 0.0;
    double A0 = 0.0;
    double A_M = 0.0;
    double y0_norm1 = 0.0;

    double xi_drift_rel = 0.0;
    double leakage_max = 0.0;
    long steps = 0;

    double rho_hat = 0.0;
    double spread_final = 0.0;
    double t_spread_below_1e3 = -1.0;  // first sample time with spread < 1e-3

    linear::DecayFit fit_q;       // sup_n q_n(t) ~ C e^{-nu t}
    bool q_envelope_ok = true;    // 8 delta0^(3/2) e^{-nu t} after burn-in
    linear::DecayFit fit_dp;      // ||D+ p||_0 ~ C e^{-nu t / 2}
    linear::DecayFit fit_w;       // sup_n W2 ~ C e^{-nu t / 2}
    linear::DecayFit fit_spread;  // sup_n |p_n - rho_hat|

    double final_profile_worst_rel = 0.0;  // vs a_n(A_{M,rho_hat}) for |n| <= 8

    // grid vs drop-closure moment system over the same samples
    double cmp_m_worst = 0.0;
    double cmp_p_worst = 0.0;
    double cmp_q_worst_resolved = 0.0;  // |dq|/q where q above the grid resolution
    bool cmp_q_ok = true;

    // decomposition diagnostics
    double track_norm1_max = 0.0;
    double track_A_drift = 0.0;

    std::vector<MomentState> grid_moments;
};

StabilityResult run_stability(const RunContext &ctx);

// ---- verify-bounds ---------------------------------------------------------

struct BoundConstant {
    std::string name;
    double c_half = 0.0;  // max over the first half of the samples
    double c_full = 0.0;  // max over all samples
    bool zero_input_zero = true;
};

struct VerifyBoundsResult {
    std::vector<BoundConstant> constants;
    bool zero_rows_ok = true;
    double hatq_c1 = 0.0;
    double hatq_c2 = 0.0;
    bool hatq_sandwich_ok = false;
    double duhamel = 0.0;
};

VerifyBoundsResult run_verify_bounds(const RunContext &ctx);

// CLI dispatcher: returns the process exit code (0 ok, 2 config, 3
// hypothesis, 4 numerical failure with diagnostic file).
int run_kind(const std::string &kind, RunContext &ctx);

} // namespace experiments
} // namespace peakdyn
