#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "peakdyn/grid_sim.hpp"
#include "peakdyn/kernels.hpp"
#include "peakdyn/seq.hpp"
#include "peakdyn/stationary.hpp"

namespace peakdyn {
namespace moments {

struct model_breakdown_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Closure for the second-order Taylor remainders of the per-peak integrals.
// drop_oq zeroes every remainder slot (the leading-order system); the
// gaussian closure fills them with the exact second-order Taylor
// coefficients of k, gamma and the log-sum against a symmetric intra-peak
// profile of variance q (terms O(q^2) dropped).
struct ClosureOptions {
    bool drop_oq_terms = true;
    bool oq_gaussian = false;

    static ClosureOptions drop() { return {true, false}; }
    static ClosureOptions gaussian() { return {false, true}; }
};

struct BoundaryOptions {
    int n_trunc;              // one-sided equations at n = n_trunc
    bool truncate_left = true;  // n_lo: no own fragmentation, no coag gain
};

// Optional decomposition data for the rewritten rhs form: prefactors built
// from mu_bar(A, p) and the (1 + 2^n y_n) ratios instead of raw m-ratios.
struct DecompositionView {
    double A;
    const ArrayXd *y;  // window-sized, gauge y_N = 0
};

struct MomentRates {
    ArrayXd m;
    ArrayXd p;
    ArrayXd q;
};

MomentRates compute_rhs(const KernelModel &model, const MomentState &state,
                        const ClosureOptions &closure, const BoundaryOptions &bc,
                        const std::optional<DecompositionView> &decomp = std::nullopt);

// Componentwise accessors used by tests and experiments.
ArrayXd rhs_m(const KernelModel &model, const MomentState &state,
              const ClosureOptions &closure, const BoundaryOptions &bc);
ArrayXd rhs_p(const KernelModel &model, const MomentState &state,
              const ClosureOptions &closure, const BoundaryOptions &bc,
              const std::optional<DecompositionView> &decomp = std::nullopt);
ArrayXd rhs_q(const KernelModel &model, const MomentState &state,
              const ClosureOptions &closure, const BoundaryOptions &bc,
              const std::optional<DecompositionView> &decomp = std::nullopt);

struct IntegrateOptions {
    double tol = 1e-8;
    double dt_init = 1e-4;
    double dt_max = 0.05;
    ClosureOptions closure = ClosureOptions::drop();
    BoundaryOptions bc{0, true};
    bool log_q_clips = true;
};

struct Trajectory {
    std::vector<MomentState> samples;
    int q_clip_events = 0;  // q < 0 clipped to 0 (logged, not an error)
};

// Adaptive exponential-trapezoidal integration (exact per-component linear
// loss, second-order source correction, step doubling on the
// predictor/corrector gap).  p_n leaving [-delta0, delta0] is a model
// breakdown and throws.
Trajectory integrate(const KernelModel &model, const MomentState &state0, double t_end,
                     const std::vector<double> &sample_times, const IntegrateOptions &opts);

// Quadrature check of the per-peak Taylor identities on a resolved grid
// state: for each identity the remainder is measured against its q_h (or
// delta0 q_h) scale and the worst constant is reported.
struct TaylorIdentityReport {
    // max over peaks of |lhs - leading|/(scale * q_h); indices as in the
    // six identity slots (K-mass, gamma-mass, K-linear, gamma-linear,
    // K-quadratic, gamma-quadratic)
    double ratio[6] = {0, 0, 0, 0, 0, 0};
    bool all_finite = true;
};

TaylorIdentityReport taylor_identity_check(const KernelModel &model,
                                           const gridsim::GridMeasure &state);

} // namespace moments
} // namespace peakdyn
