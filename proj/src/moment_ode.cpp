#include "peakdyn/moment_ode.hpp"

#include <algorithm>
#include <cmath>

namespace peakdyn {
namespace moments {

namespace {

// Second-order Taylor data of the kernels at a peak center x = h + p_h.
// K-derivatives are taken in the log coordinates y, z of K(2^y, 2^z) by
// central differences on the closed form; the gamma derivatives are exact.
struct PeakKernelData {
    double K0 = 0.0;    // K(2^x, 2^x)
    double Ky = 0.0;    // d/dy at the diagonal
    double Kyy = 0.0;   // d2/dy2
    double Kzz = 0.0;   // d2/dz2 (= Kyy by symmetry, kept for clarity)
    double g0 = 0.0;    // gamma(2^x)
    double g1 = 0.0;    // d/dy gamma(2^y) at x
    double g2 = 0.0;    // d2/dy2
};

PeakKernelData peak_kernel_data(const KernelModel &model, double x, bool need_second) {
    PeakKernelData d;
    double xi = std::exp2(x);
    d.K0 = eval_K(model, xi, xi);
    d.g0 = eval_gamma(model, xi);
    const double ln2 = std::log(2.0);
    double gp = eval_gamma_prime(model, xi);
    d.g1 = gp * xi * ln2;
    if (need_second) {
        double gpp = eval_gamma_second(model, xi);
        d.g2 = ln2 * ln2 * (gpp * xi * xi + gp * xi);
        const double h = 1e-3;
        auto Kyz = [&](double dy, double dz) {
            return eval_K(model, std::exp2(x + dy), std::exp2(x + dz));
        };
        d.Ky = (Kyz(h, 0.0) - Kyz(-h, 0.0)) / (2.0 * h);
        d.Kyy = (Kyz(h, 0.0) - 2.0 * d.K0 + Kyz(-h, 0.0)) / (h * h);
        d.Kzz = (Kyz(0.0, h) - 2.0 * d.K0 + Kyz(0.0, -h)) / (h * h);
    }
    return d;
}

// Per-peak integral values under the active closure.
struct PeakIntegrals {
    double C0 = 0.0;   // int int K g g
    double C1 = 0.0;   // int int K g g (y - x)
    double Cu1 = 0.0;  // int int K g g (u - (h+1+p_h))
    double Cu2 = 0.0;  // int int K g g (u - (h+1+p_h))^2
    double G0 = 0.0;   // int gamma g
    double G1 = 0.0;   // int gamma g (y - x)
    double K0 = 0.0;
    double g0 = 0.0;
};

PeakIntegrals peak_integrals(const KernelModel &model, double x, double m, double q,
                             const ClosureOptions &closure) {
    const bool gauss = closure.oq_gaussian;
    PeakKernelData kd = peak_kernel_data(model, x, gauss);
    PeakIntegrals I;
    I.K0 = kd.K0;
    I.g0 = kd.g0;
    const double ln2 = std::log(2.0);
    double m2 = m * m;
    if (gauss) {
        I.C0 = kd.K0 * m2 + 0.5 * (kd.Kyy + kd.Kzz) * m2 * q;
        I.C1 = kd.Ky * m2 * q;
        I.Cu1 = (kd.Ky + 0.25 * ln2 * kd.K0) * m2 * q;  // (Ky+Kz)/2 = Ky at the diagonal
        I.G0 = kd.g0 * m + 0.5 * kd.g2 * m * q;
        I.G1 = kd.g1 * m * q;
    } else {
        I.C0 = kd.K0 * m2;
        I.G0 = kd.g0 * m;
    }
    I.Cu2 = kd.K0 * m2 * 0.5 * q;  // leading variance transport, both closures
    return I;
}

} // namespace

MomentRates compute_rhs(const KernelModel &model, const MomentState &state,
                        const ClosureOptions &closure, const BoundaryOptions &bc,
                        const std::optional<DecompositionView> &decomp) {
    const IndexWindow &w = state.window;
    const int W = w.size();
    const double ln2 = std::log(2.0);

    // The decomposition route rebuilds the masses from m_bar(A, p)(1+2^n y_n)
    // and shares the integral assembly; with an exact decomposition the raw
    // and rewritten forms agree identically.
    ArrayXd mass = state.m;
    if (decomp) {
        ShiftSequence ps(w, state.p, state.p[W - 1], state.p[0]);
        auto prof = m_bar(model, decomp->A, ps);
        for (int i = 0; i < W; ++i)
            mass[i] = prof.m_bar[i] * (1.0 + std::exp2(double(w.lo + i)) * (*decomp->y)[i]);
    }

    std::vector<PeakIntegrals> I(W);
    for (int i = 0; i < W; ++i) {
        if (state.absent[i]) continue;
        double x = double(w.lo + i) + state.p[i];
        I[i] = peak_integrals(model, x, mass[i], state.q[i], closure);
    }

    MomentRates out{ArrayXd::Zero(W), ArrayXd::Zero(W), ArrayXd::Zero(W)};
    const int i_hi = std::min(bc.n_trunc, w.hi) - w.lo;

    for (int i = 0; i <= i_hi; ++i) {
        if (state.absent[i]) continue;
        const bool at_left = (i == 0);
        const bool at_right = (i == i_hi);
        const bool own_frag = !(at_left && bc.truncate_left);
        const bool gain_below = !at_left && !state.absent[i - 1];
        const bool coag_up = !at_right;
        const bool gain_above = !at_right && !state.absent[i + 1];

        double dm = 0.0, dp = 0.0, dq = 0.0;
        if (gain_below) {
            double b = state.p[i - 1] - state.p[i];
            dm += 0.5 * ln2 * I[i - 1].C0;
            dp += 0.5 * ln2 * (I[i - 1].Cu1 + b * I[i - 1].C0);
            dq += 0.5 * ln2 *
                  (I[i - 1].Cu2 + 2.0 * b * I[i - 1].Cu1 + (b * b - state.q[i]) * I[i - 1].C0);
        }
        if (coag_up) {
            dm -= ln2 * I[i].C0;
            dp -= ln2 * I[i].C1;
            // quadratic own-coagulation term is O(q^2) under both closures
        }
        if (own_frag) {
            dm -= 0.25 * I[i].G0;
            dp -= 0.25 * I[i].G1;
        }
        if (gain_above) {
            double b = state.p[i + 1] - state.p[i];
            dm += 0.5 * I[i + 1].G0;
            dp += 0.5 * (I[i + 1].G1 + b * I[i + 1].G0);
            dq += 0.5 * (2.0 * b * I[i + 1].G1 +
                         (state.q[i + 1] - state.q[i] + b * b) * I[i + 1].G0);
        }
        out.m[i] = dm;
        out.p[i] = dp / mass[i];
        out.q[i] = dq / mass[i];
    }
    return out;
}

ArrayXd rhs_m(const KernelModel &model, const MomentState &state,
              const ClosureOptions &closure, const BoundaryOptions &bc) {
    return compute_rhs(model, state, closure, bc).m;
}

ArrayXd rhs_p(const KernelModel &model, const MomentState &state,
              const ClosureOptions &closure, const BoundaryOptions &bc,
              const std::optional<DecompositionView> &decomp) {
    return compute_rhs(model, state, closure, bc, decomp).p;
}

ArrayXd rhs_q(const KernelModel &model, const MomentState &state,
              const ClosureOptions &closure, const BoundaryOptions &bc,
              const std::optional<DecompositionView> &decomp) {
    return compute_rhs(model, state, closure, bc, decomp).q;
}

namespace {

double phi1(double z) {
    if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z;
    return std::expm1(z) / z;
}

double phi2(double z) {
    if (std::abs(z) < 1e-8) return 0.5 + z / 6.0;
    return (std::expm1(z) / z - 1.0) / z;
}

// Per-component loss coefficients of the leading-order structure: the
// exponential factor absorbs the gamma-stiff diagonal.
void loss_coefficients(const KernelModel &model, const MomentState &state,
                       const BoundaryOptions &bc, ArrayXd &lam_m, ArrayXd &lam_pq) {
    const IndexWindow &w = state.window;
    const int W = w.size();
    const int i_hi = std::min(bc.n_trunc, w.hi) - w.lo;
    lam_m.setZero(W);
    lam_pq.setZero(W);
    const double ln2 = std::log(2.0);
    for (int i = 0; i <= i_hi; ++i) {
        if (state.absent[i]) continue;
        int n = w.lo + i;
        double x = double(n) + state.p[i];
        double g = std::exp(log_gamma_at_log2<double>(model, x));
        double frag = (i == 0 && bc.truncate_left) ? 0.0 : 0.25 * g;
        double coag = 0.0;
        if (i < i_hi) {
            double xi = std::exp2(x);
            coag = ln2 * eval_K(model, xi, xi) * state.m[i];
        }
        lam_m[i] = frag + coag;
        double A = 0.0, B = 0.0;
        if (i > 0 && !state.absent[i - 1]) {
            double xm = double(n - 1) + state.p[i - 1];
            double xim = std::exp2(xm);
            A = 0.5 * ln2 * eval_K(model, xim, xim) * state.m[i - 1] * state.m[i - 1] /
                state.m[i];
        }
        if (i < i_hi && !state.absent[i + 1]) {
            double xp = double(n + 1) + state.p[i + 1];
            B = 0.5 * std::exp(log_gamma_at_log2<double>(model, xp)) * state.m[i + 1] /
                state.m[i];
        }
        lam_pq[i] = A + B;
    }
}

} // namespace

Trajectory integrate(const KernelModel &model, const MomentState &state0, double t_end,
                     const std::vector<double> &sample_times, const IntegrateOptions &opts) {
    if (!(t_end > state0.t)) throw std::invalid_argument("integrate: t_end must exceed state0.t");
    const IndexWindow &w = state0.window;
    const int W = w.size();

    std::vector<double> marks(sample_times);
    marks.push_back(t_end);
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());

    Trajectory traj;
    MomentState cur = state0;
    double h = opts.dt_init;
    const double m_floor = kAbsentMassThreshold;

    auto refresh_absent = [&](MomentState &s) {
        for (int i = 0; i < W; ++i) s.absent[i] = s.m[i] < m_floor;
    };
    refresh_absent(cur);

    ArrayXd lam_m(W), lam_pq(W);
    size_t mi = 0;
    while (mi < marks.size() && marks[mi] < cur.t - 1e-15) ++mi;

    long guard = 0;
    while (mi < marks.size()) {
        if (++guard > 50'000'000) throw std::runtime_error("integrate: step budget exhausted");
        double target = marks[mi];
        if (target <= cur.t + 1e-15) {
            traj.samples.push_back(cur);
            ++mi;
            continue;
        }
        double hstep = std::min({h, opts.dt_max, target - cur.t});

        auto f0 = compute_rhs(model, cur, opts.closure, opts.bc);
        loss_coefficients(model, cur, opts.bc, lam_m, lam_pq);

        MomentState pred = cur;
        pred.t = cur.t + hstep;
        for (int i = 0; i < W; ++i) {
            double zm = -lam_m[i] * hstep;
            pred.m[i] = std::exp(zm) * cur.m[i] +
                        hstep * phi1(zm) * (f0.m[i] + lam_m[i] * cur.m[i]);
            double zp = -lam_pq[i] * hstep;
            pred.p[i] = std::exp(zp) * cur.p[i] +
                        hstep * phi1(zp) * (f0.p[i] + lam_pq[i] * cur.p[i]);
            pred.q[i] = std::exp(zp) * cur.q[i] +
                        hstep * phi1(zp) * (f0.q[i] + lam_pq[i] * cur.q[i]);
        }
        auto f1 = compute_rhs(model, pred, opts.closure, opts.bc);

        MomentState corr = pred;
        double err = 0.0;
        for (int i = 0; i < W; ++i) {
            double zm = -lam_m[i] * hstep;
            double dsm = (f1.m[i] + lam_m[i] * pred.m[i]) - (f0.m[i] + lam_m[i] * cur.m[i]);
            corr.m[i] = pred.m[i] + hstep * phi2(zm) * dsm;
            double zp = -lam_pq[i] * hstep;
            double dsp = (f1.p[i] + lam_pq[i] * pred.p[i]) - (f0.p[i] + lam_pq[i] * cur.p[i]);
            corr.p[i] = pred.p[i] + hstep * phi2(zp) * dsp;
            double dsq = (f1.q[i] + lam_pq[i] * pred.q[i]) - (f0.q[i] + lam_pq[i] * cur.q[i]);
            corr.q[i] = pred.q[i] + hstep * phi2(zp) * dsq;

            double ms = std::max(std::abs(cur.m[i]), 1e-30);
            err = std::max(err, std::abs(corr.m[i] - pred.m[i]) / ms);
            err = std::max(err, std::abs(corr.p[i] - pred.p[i]) / cur.delta0);
            err = std::max(err,
                           std::abs(corr.q[i] - pred.q[i]) / (cur.delta0 * cur.delta0));
        }

        if (err <= opts.tol) {
            for (int i = 0; i < W; ++i) {
                if (corr.q[i] < 0.0) {
                    corr.q[i] = 0.0;
                    ++traj.q_clip_events;
                }
                if (!corr.absent[i] && std::abs(corr.p[i]) > cur.delta0)
                    throw model_breakdown_error(
                        "integrate: p_n left [-delta0, delta0]; peak regime lost");
            }
            refresh_absent(corr);
            cur = corr;
            double grow = err > 0.0 ? 0.9 * std::sqrt(opts.tol / err) : 5.0;
            h = hstep * std::clamp(grow, 0.2, 5.0);
        } else {
            h = hstep * std::clamp(0.9 * std::sqrt(opts.tol / err), 0.1, 0.9);
            if (h < 1e-15) throw std::runtime_error("integrate: step size underflow");
        }
    }
    return traj;
}

TaylorIdentityReport taylor_identity_check(const KernelModel &model,
                                           const gridsim::GridMeasure &state) {
    if (state.cfg.cells < 32)
        throw std::invalid_argument("taylor_identity_check: need G >= 32 for resolved blobs");
    TaylorIdentityReport rep;
    auto ms = gridsim::extract_moments(state);
    const IndexWindow &w = state.cfg.window;
    const int G = state.cfg.cells;

    for (int i = 0; i < w.size(); ++i) {
        if (ms.absent[i]) continue;
        int n = w.lo + i;
        double m = ms.m[i], p = ms.p[i], q = ms.q[i];
        double x = double(n) + p;
        double xi = std::exp2(x);
        double K0 = eval_K(model, xi, xi);
        double g0 = eval_gamma(model, xi);

        double lhs_kk = 0.0, lhs_k1 = 0.0, lhs_k2 = 0.0;
        double lhs_g0 = 0.0, lhs_g1 = 0.0, lhs_g2 = 0.0;
        for (int j = 0; j < G; ++j) {
            double mj = state.mass(j, i);
            if (mj == 0.0) continue;
            double yj = double(n) + state.cell_off[j];
            double dyj = yj - x;
            double gv = eval_gamma(model, std::exp2(yj)) * mj;
            lhs_g0 += gv;
            lhs_g1 += gv * dyj;
            lhs_g2 += gv * (dyj * dyj - q);
            for (int k = 0; k < G; ++k) {
                double mk = state.mass(k, i);
                if (mk == 0.0) continue;
                double zk = double(n) + state.cell_off[k];
                double Kv = eval_K(model, std::exp2(yj), std::exp2(zk)) * mj * mk;
                lhs_kk += Kv;
                lhs_k1 += Kv * dyj;
                lhs_k2 += Kv * (dyj * dyj - q);
            }
        }

        if (q <= 1e-18) continue;  // point mass: remainders vanish identically
        double d0 = state.cfg.delta0;
        rep.ratio[0] = std::max(rep.ratio[0], std::abs(lhs_kk - K0 * m * m) / (K0 * m * m * q));
        rep.ratio[1] = std::max(rep.ratio[1], std::abs(lhs_g0 - g0 * m) / (g0 * m * q));
        rep.ratio[2] = std::max(rep.ratio[2], std::abs(lhs_k1) / (K0 * m * m * q));
        rep.ratio[3] = std::max(rep.ratio[3], std::abs(lhs_g1) / (g0 * m * q));
        rep.ratio[4] = std::max(rep.ratio[4], std::abs(lhs_k2) / (K0 * m * m * d0 * q));
        rep.ratio[5] = std::max(rep.ratio[5], std::abs(lhs_g2) / (g0 * m * d0 * q));
    }
    for (double r : rep.ratio) rep.all_finite = rep.all_finite && std::isfinite(r);
    return rep;
}

} // namespace moments
} // namespace peakdyn
