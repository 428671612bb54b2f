#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "peakdyn/kernels.hpp"
#include "peakdyn/seq.hpp"
#include "peakdyn/stationary.hpp"

namespace peakdyn {
namespace gridsim {

struct step_rejected : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Sectional discretization: each interval I_n = (n - delta0, n + delta0)
// carries G cells of width h = 2 delta0 / G; cell j of interval n is the
// point mass at x = n + off_j with off_j = -delta0 + (j + 1/2) h + s.  The
// global sub-cell shift s (|s| <= h/2) is chosen so that a requested comb
// offset lands exactly on a cell center.
struct SimConfig {
    double delta0 = 0.05;
    IndexWindow window;
    int cells = 64;
    int n_trunc;            // = window.hi: kernels truncated above this peak
    double dt_safety = 0.2;
    double align_offset = std::numeric_limits<double>::quiet_NaN();
    bool truncate_left = true;  // n_lo row does not fragment (mirror of the
                                // upper truncation; combs stay exact fixed points)
    double freeze_mass = kAbsentMassThreshold;

    SimConfig(double d0, IndexWindow w, int G)
        : delta0(d0), window(w), cells(G), n_trunc(w.hi) {
        if (!(delta0 > 0.0 && delta0 < 0.5))
            throw std::invalid_argument("SimConfig: delta0 must lie in (0, 1/2)");
        if (cells < 8 || cells % 2 != 0)
            throw std::invalid_argument("SimConfig: cells must be even and >= 8");
    }

    double cell_width() const { return 2.0 * delta0 / cells; }
};

// Static per-configuration tables: kernel values on the cell lattice, the
// two-point deposit targets/weights (peak independent), fragmentation rates.
struct GridTables;

struct GridMeasure {
    SimConfig cfg;
    KernelModel model;
    ArrayXd cell_off;          // G offsets within each interval
    Eigen::ArrayXXd mass;      // (cell j, peak index r); peak n = window.lo + r
    double time = 0.0;
    // Below-window fragmentation ledger (only fed when !truncate_left).
    double below_number = 0.0;
    double below_xi = 0.0;
    std::shared_ptr<const GridTables> tables;

    int peaks() const { return cfg.window.size(); }
    int peak_of_row(int r) const { return cfg.window.lo + r; }
    double peak_mass(int r) const { return mass.col(r).sum(); }
};

// Peak-n blobs centered at n + p_n with masses m_bar_n(A,p) * factor_n.
// factor is indexed like the window; blob_width = 0 places a single-cell
// Dirac at the nearest lattice point.
GridMeasure init_from_profile(const StationaryProfile &profile, const SimConfig &cfg,
                              double blob_width, const ArrayXd &mass_factors);

// Exact (uniformized) update of the linear fragmentation cascade over dt:
// cell (n,j) loses number at rate gamma(2^x)/4 and deposits twice that rate
// one interval down at the same offset.
GridMeasure fragmentation_substep(const GridMeasure &state, double dt);

// Explicit update of the within-interval coagulation pairs with the
// number+xi exact two-point deposit into the interval above.  Throws
// step_rejected when dt would drive a cell negative.
GridMeasure coagulation_substep(const GridMeasure &state, double dt);

// Strang splitting frag(dt/2) . coag(dt) . frag(dt/2).
GridMeasure step(const GridMeasure &state, double dt);

// dt_safety / max over occupied, non-frozen cells of (gamma/4 + coagulation
// outflow rate).
double suggest_dt(const GridMeasure &state);

// Advance to t_end with adaptive steps capped at dt_cap, invoking on_sample
// at the requested times (state.time == sample time exactly).
void advance(GridMeasure &state, double t_end, double dt_cap,
             const std::vector<double> &sample_times,
             const std::function<void(const GridMeasure &)> &on_sample);

MomentState extract_moments(const GridMeasure &state);

// xi-mass outside the union of the closed intervals n + [-delta0, delta0];
// identically zero for this scheme.
double support_leakage(const GridMeasure &state);

// Conservation ledgers (below-window accumulator included).
double total_xi_mass(const GridMeasure &state);
double total_number(const GridMeasure &state);

} // namespace gridsim
} // namespace peakdyn
