#include "peakdyn/grid_sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace peakdyn {
namespace gridsim {

struct GridTables {
    ArrayXd off;                       // G cell offsets
    Eigen::ArrayXXd frag_rate;         // gamma(2^(n_r+off_j))/4, (cell, peak)
    std::vector<Eigen::ArrayXXd> khat; // ln2 K on the cell lattice, peaks with n < n_trunc
    std::vector<int> dep_t1;           // G*G two-point deposit targets
    std::vector<double> dep_w1;        // number fraction into dep_t1
};

namespace {

ArrayXd make_offsets(const SimConfig &cfg) {
    const int G = cfg.cells;
    const double h = cfg.cell_width();
    ArrayXd off(G);
    for (int j = 0; j < G; ++j) off[j] = -cfg.delta0 + (j + 0.5) * h;
    if (std::isfinite(cfg.align_offset)) {
        if (std::abs(cfg.align_offset) > cfg.delta0)
            throw std::invalid_argument("SimConfig: align_offset outside the interval");
        // shift the whole lattice so align_offset is a cell center
        int j_near = 0;
        (off - cfg.align_offset).abs().minCoeff(&j_near);
        off += cfg.align_offset - off[j_near];
    }
    return off;
}

std::shared_ptr<const GridTables> build_tables(const SimConfig &cfg, const KernelModel &model) {
    auto tb = std::make_shared<GridTables>();
    const int G = cfg.cells;
    const int R = cfg.window.size();
    tb->off = make_offsets(cfg);

    tb->frag_rate.resize(G, R);
    for (int r = 0; r < R; ++r) {
        double n = cfg.window.lo + r;
        for (int j = 0; j < G; ++j)
            tb->frag_rate(j, r) =
                0.25 * std::exp(log_gamma_at_log2<double>(model, n + tb->off[j]));
    }

    tb->khat.resize(R);
    for (int r = 0; r < R; ++r) {
        int n = cfg.window.lo + r;
        if (n >= cfg.n_trunc) continue;  // truncated kernel: no coagulation at/above N
        Eigen::ArrayXXd K(G, G);
        for (int j = 0; j < G; ++j)
            for (int k = j; k < G; ++k) {
                double v = std::log(2.0) *
                           eval_K(model, std::exp2(n + tb->off[j]), std::exp2(n + tb->off[k]));
                K(j, k) = v;
                K(k, j) = v;
            }
        tb->khat[r] = std::move(K);
    }

    // Deposit geometry: pair (j,k) creates mass at offset
    // log2(2^off_j + 2^off_k) - 1 in the interval above, independent of n.
    // The bracketing cells receive fractions that keep number and xi exact.
    tb->dep_t1.assign(size_t(G) * G, 0);
    tb->dep_w1.assign(size_t(G) * G, 1.0);
    for (int j = 0; j < G; ++j)
        for (int k = 0; k < G; ++k) {
            size_t idx = size_t(j) * G + k;
            if (j == k) {
                tb->dep_t1[idx] = j;
                tb->dep_w1[idx] = 1.0;
                continue;
            }
            double d = std::log2(std::exp2(tb->off[j]) + std::exp2(tb->off[k])) - 1.0;
            int t1 = int(std::upper_bound(tb->off.data(), tb->off.data() + G, d) -
                         tb->off.data()) - 1;
            t1 = std::clamp(t1, 0, G - 2);
            double lo = std::exp2(tb->off[t1]), hi = std::exp2(tb->off[t1 + 1]);
            double w1 = (hi - std::exp2(d)) / (hi - lo);
            tb->dep_t1[idx] = t1;
            tb->dep_w1[idx] = std::clamp(w1, 0.0, 1.0);
        }
    return tb;
}

// Uniformization (positive truncated-Poisson series) of the one-column
// cascade propagator exp(dt M), M = -diag(lam) + gains 2 lam_{r+1} into row
// r.  No cancellation for near-degenerate rates; series tail below 1e-19.
// When below != nullptr the number leaving row 0 is accumulated there.
void column_propagate(const ArrayXd &lam, ArrayXd &v, double dt, double *below) {
    const int R = int(v.size());
    int top = -1;
    for (int r = R - 1; r >= 0; --r)
        if (v[r] > 0.0) {
            top = r;
            break;
        }
    if (top < 0) return;

    double mu_full = 0.0;
    for (int r = 0; r <= top; ++r) mu_full = std::max(mu_full, lam[r]);
    if (mu_full <= 0.0) return;
    const bool track = below != nullptr && lam[0] > 0.0;

    int nsub = std::max(1, int(std::ceil(mu_full * dt / 100.0)));
    double hsub = dt / nsub;
    double mu = mu_full * hsub;

    ArrayXd cur(top + 1), acc(top + 1), nxt(top + 1);
    for (int s = 0; s < nsub; ++s) {
        for (int r = 0; r <= top; ++r) cur[r] = v[r];
        double cur_below = 0.0, acc_below = 0.0;
        double logw = -mu;
        double scale = std::exp(logw);
        for (int r = 0; r <= top; ++r) acc[r] = scale * cur[r];
        int k = 0;
        // once k > mu the weights decay monotonically, so the dropped tail
        // is below scale / (1 - mu/(k+1)) ~ 1e-22
        while (!(double(k) > mu && scale < 1e-22) && k < 10000) {
            ++k;
            for (int r = 0; r <= top; ++r) {
                double gain = (r + 1 <= top) ? 2.0 * lam[r + 1] * cur[r + 1] : 0.0;
                nxt[r] = cur[r] + (gain - lam[r] * cur[r]) / mu_full;
            }
            double nxt_below = cur_below + (track ? 2.0 * lam[0] * cur[0] / mu_full : 0.0);
            for (int r = 0; r <= top; ++r) cur[r] = nxt[r];
            cur_below = nxt_below;
            logw += std::log(mu) - std::log(double(k));
            scale = std::exp(logw);
            for (int r = 0; r <= top; ++r) acc[r] += scale * cur[r];
            acc_below += scale * cur_below;
        }
        for (int r = 0; r <= top; ++r) v[r] = std::max(acc[r], 0.0);
        if (track) *below += acc_below;
    }
}

} // namespace

GridMeasure init_from_profile(const StationaryProfile &profile, const SimConfig &cfg,
                              double blob_width, const ArrayXd &mass_factors) {
    if (!(profile.window() == cfg.window))
        throw std::invalid_argument("init_from_profile: window mismatch");
    if (mass_factors.size() != cfg.window.size())
        throw std::invalid_argument("init_from_profile: factor size mismatch");
    if (!(blob_width >= 0.0) || blob_width >= 0.5 * cfg.delta0)
        throw std::invalid_argument("init_from_profile: blob_width must lie in [0, delta0/2)");
    if ((mass_factors <= 0.0).any())
        throw std::invalid_argument("init_from_profile: mass factors must be positive");

    GridMeasure g{cfg,
                  profile.model,
                  make_offsets(cfg),
                  Eigen::ArrayXXd::Zero(cfg.cells, cfg.window.size()),
                  0.0,
                  0.0,
                  0.0,
                  build_tables(cfg, profile.model)};

    const int G = cfg.cells;
    for (int r = 0; r < g.peaks(); ++r) {
        int n = cfg.window.lo + r;
        double target = profile.m(n) * mass_factors[r];
        if (target <= 0.0) continue;
        double c = profile.shift.at(n);
        if (std::abs(c) + blob_width > cfg.delta0 + 1e-15)
            throw std::invalid_argument("init_from_profile: blob extends outside I_n");
        if (blob_width == 0.0) {
            int j = 0;
            (g.cell_off - c).abs().minCoeff(&j);
            g.mass(j, r) = target;
        } else {
            double sig = 0.5 * blob_width;
            ArrayXd wgt = ArrayXd::Zero(G);
            for (int j = 0; j < G; ++j) {
                double d = g.cell_off[j] - c;
                if (std::abs(d) <= blob_width)
                    wgt[j] = std::exp(-0.5 * d * d / (sig * sig));
            }
            double s = wgt.sum();
            if (s <= 0.0) throw std::invalid_argument("init_from_profile: blob unresolved");
            g.mass.col(r) = target * wgt / s;
        }
    }
    return g;
}

GridMeasure fragmentation_substep(const GridMeasure &state, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("fragmentation_substep: dt must be positive");
    GridMeasure g = state;
    const auto &tb = *g.tables;
    const int G = g.cfg.cells;
    const int R = g.peaks();

    ArrayXd lam(R), v(R);
    for (int j = 0; j < G; ++j) {
        bool any = false;
        for (int r = 0; r < R; ++r) {
            lam[r] = tb.frag_rate(j, r);
            v[r] = g.mass(j, r);
            any = any || v[r] > 0.0;
        }
        if (!any) continue;
        if (g.cfg.truncate_left) lam[0] = 0.0;  // n_lo row does not fragment

        double deposited = 0.0;
        column_propagate(lam, v, dt, g.cfg.truncate_left ? nullptr : &deposited);
        for (int r = 0; r < R; ++r) g.mass(j, r) = v[r];
        if (deposited > 0.0) {
            g.below_number += deposited;
            // each parcel lands one interval down at the same offset
            g.below_xi += deposited * std::exp2(double(g.cfg.window.lo) + tb.off[j] - 1.0);
        }
    }
    g.time = state.time + dt;
    return g;
}

namespace {

// Pair events over one Euler stage: removals/deposits accumulated into the
// staging arrays.  Every event removes its number from both donors and
// deposits it with the number+xi exact two-point split.
void coag_stage(const GridMeasure &g, const Eigen::ArrayXXd &m, double dt,
                Eigen::ArrayXXd &removal, Eigen::ArrayXXd &deposit) {
    const auto &tb = *g.tables;
    const int G = g.cfg.cells;
    const int R = g.peaks();
    removal.setZero();
    deposit.setZero();
    std::vector<int> occ;
    occ.reserve(G);

    for (int r = 0; r + 1 < R; ++r) {
        int n = g.cfg.window.lo + r;
        if (n >= g.cfg.n_trunc) break;
        if (m.col(r).sum() < g.cfg.freeze_mass) continue;  // frozen peak
        const auto &K = tb.khat[r];
        occ.clear();
        for (int j = 0; j < G; ++j)
            if (m(j, r) > 0.0) occ.push_back(j);
        for (size_t a = 0; a < occ.size(); ++a) {
            int j = occ[a];
            double mj = m(j, r);
            for (size_t b = a; b < occ.size(); ++b) {
                int k = occ[b];
                double E = K(j, k) * mj * m(k, r) * dt;
                if (E == 0.0) continue;
                if (j == k) {
                    E *= 0.5;
                    removal(j, r) += 2.0 * E;
                } else {
                    removal(j, r) += E;
                    removal(k, r) += E;
                }
                size_t idx = size_t(j) * G + k;
                int t1 = tb.dep_t1[idx];
                double w1 = tb.dep_w1[idx];
                deposit(t1, r + 1) += w1 * E;
                if (w1 < 1.0) deposit(t1 + 1, r + 1) += (1.0 - w1) * E;
            }
        }
    }
}

} // namespace

GridMeasure coagulation_substep(const GridMeasure &state, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("coagulation_substep: dt must be positive");
    GridMeasure g = state;
    const int G = g.cfg.cells;
    const int R = g.peaks();

    // Two-stage (Heun) average of the event counts.  A single Euler stage
    // leaves the stiff slaved peaks with a first-order equilibrium offset
    // ~ lambda dt; averaging restores second order while each stage's lumps
    // stay number+xi exact.
    Eigen::ArrayXXd r1(G, R), d1(G, R), r2(G, R), d2(G, R);
    coag_stage(g, g.mass, dt, r1, d1);
    if ((r1 > g.mass).any())
        throw step_rejected("coagulation_substep: dt too large for positivity");
    Eigen::ArrayXXd pred = g.mass - r1 + d1;
    coag_stage(g, pred, dt, r2, d2);

    g.mass += 0.5 * (d1 + d2 - r1 - r2);
    if ((g.mass < 0.0).any())
        throw step_rejected("coagulation_substep: dt too large for positivity");
    g.time = state.time + dt;
    return g;
}

GridMeasure step(const GridMeasure &state, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    // Coagulation outside, exact fragmentation inside: sampling the donor
    // masses at the step boundaries keeps the stiff slaved peaks within
    // O((lambda dt)^2) of stationarity; with fragmentation outside they pick
    // up a first-order mid-step phase offset ~ lambda dt.
    GridMeasure g = coagulation_substep(state, 0.5 * dt);
    g = fragmentation_substep(g, dt);
    g = coagulation_substep(g, 0.5 * dt);
    g.time = state.time + dt;
    return g;
}

double suggest_dt(const GridMeasure &state) {
    const auto &tb = *state.tables;
    const int G = state.cfg.cells;
    double max_rate = 0.0;
    for (int r = 0; r < state.peaks(); ++r) {
        if (state.peak_mass(r) < state.cfg.freeze_mass) continue;
        int n = state.cfg.window.lo + r;
        bool coag = n < state.cfg.n_trunc && r + 1 < state.peaks();
        for (int j = 0; j < G; ++j) {
            if (state.mass(j, r) <= 0.0) continue;
            double rate = tb.frag_rate(j, r);
            if (coag) rate += (tb.khat[r].col(j) * state.mass.col(r)).sum();
            max_rate = std::max(max_rate, rate);
        }
    }
    if (max_rate <= 0.0) return std::numeric_limits<double>::infinity();
    return state.cfg.dt_safety / max_rate;
}

void advance(GridMeasure &state, double t_end, double dt_cap,
             const std::vector<double> &sample_times,
             const std::function<void(const GridMeasure &)> &on_sample) {
    std::vector<double> marks(sample_times);
    marks.push_back(t_end);
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());

    size_t mi = 0;
    while (mi < marks.size() && marks[mi] < state.time - 1e-15) ++mi;
    while (mi < marks.size()) {
        double target = marks[mi];
        if (target <= state.time + 1e-15) {
            if (on_sample) on_sample(state);
            ++mi;
            continue;
        }
        double dt = std::min({suggest_dt(state), dt_cap, target - state.time});
        for (int attempt = 0;; ++attempt) {
            try {
                state = step(state, dt);
                break;
            } catch (const step_rejected &) {
                if (attempt > 60) throw;
                dt *= 0.5;
            }
        }
    }
}

MomentState extract_moments(const GridMeasure &state) {
    MomentState ms(state.cfg.window, state.cfg.delta0);
    ms.t = state.time;
    for (int r = 0; r < state.peaks(); ++r) {
        double m = state.mass.col(r).sum();
        ms.m[r] = m;
        if (m < kAbsentMassThreshold) {
            ms.absent[r] = true;
            continue;
        }
        int occupied = 0, j_only = 0;
        for (int j = 0; j < state.cfg.cells; ++j)
            if (state.mass(j, r) > 0.0) {
                ++occupied;
                j_only = j;
            }
        if (occupied == 1) {  // point mass: moments are exact
            ms.p[r] = state.cell_off[j_only];
            ms.q[r] = 0.0;
            continue;
        }
        double p = (state.mass.col(r) * state.cell_off).sum() / m;
        double q = (state.mass.col(r) * (state.cell_off - p).square()).sum() / m;
        ms.p[r] = p;
        ms.q[r] = std::max(q, 0.0);
    }
    return ms;
}

double support_leakage(const GridMeasure &state) {
    double out = 0.0;
    for (int j = 0; j < state.cfg.cells; ++j)
        if (std::abs(state.cell_off[j]) > state.cfg.delta0)
            out += state.mass.row(j).sum();
    return out;
}

double total_xi_mass(const GridMeasure &state) {
    double sum = 0.0, comp = 0.0;
    for (int r = 0; r < state.peaks(); ++r) {
        double n = state.cfg.window.lo + r;
        for (int j = 0; j < state.cfg.cells; ++j) {
            double term = state.mass(j, r) * std::exp2(n + state.cell_off[j]);
            double t = sum + term;
            comp += (std::abs(sum) >= std::abs(term)) ? (sum - t) + term : (term - t) + sum;
            sum = t;
        }
    }
    return sum + comp + state.below_xi;
}

double total_number(const GridMeasure &state) {
    return state.mass.sum() + state.below_number;
}

} // namespace gridsim
} // namespace peakdyn
