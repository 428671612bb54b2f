#include "peakdyn/representation.hpp"

#include <algorithm>
#include <cmath>

namespace peakdyn {
namespace representation {

namespace {

struct ShiftAt {
    const ShiftSequence *p;
    double operator()(int n) const { return p->at(n); }
};

// mu_bar on the window for a given A, through the shared log-space core.
ArrayXd mu_values(const KernelModel &model, double A, const ShiftSequence &p) {
    const IndexWindow &w = p.window;
    auto core = detail::build_core<double>(model, A, w.lo, w.hi, ShiftAt{&p}, 60);
    ArrayXd mu(w.size());
    for (int n = w.lo; n <= w.hi; ++n) {
        double lmu = core.lmu(n);
        mu[n - w.lo] = lmu < kUnderflowFloorLog ? 0.0 : std::exp(lmu);
    }
    return mu;
}

} // namespace

Decomposition decompose(const KernelModel &model, const ArrayXd &masses,
                        const ShiftSequence &p, int N) {
    const IndexWindow &w = p.window;
    if (masses.size() != w.size()) throw std::invalid_argument("decompose: size mismatch");
    if (N <= w.lo || N > w.hi) throw std::invalid_argument("decompose: N outside window");
    for (int n = w.lo; n <= N; ++n)
        if (!(masses[n - w.lo] > 0.0))
            throw std::invalid_argument("decompose: masses must be positive up to N");

    // Gauge row in logs: ln m_N = ln 2 - ln zeta_N - A 2^N - 2^N T(N)
    auto core = detail::build_core<double>(model, 1.0, w.lo, w.hi, ShiftAt{&p}, 60);
    double twoN = std::exp2(double(N));
    double T_N = core.tail_sum[N - w.lo];
    double A = (std::log(2.0) - core.lz(N) - twoN * T_N - std::log(masses[N - w.lo])) / twoN;
    if (!(A >= 1e-8 && A <= 1e8))
        throw std::range_error("decompose: gauge row selects A outside [1e-8, 1e8]");

    Decomposition d{A, ArrayXd::Zero(w.size()), p, N};
    for (int n = w.lo; n < N; ++n) {
        int i = n - w.lo;
        double lm_bar = std::log(2.0) + (-A * std::exp2(double(n)) -
                                         std::exp2(double(n)) * core.tail_sum[i]) -
                        core.lz(n);
        if (lm_bar < kUnderflowFloorLog)
            throw std::range_error("decompose: m_bar underflows inside the window");
        d.y[i] = std::exp2(double(-n)) * (masses[i] / std::exp(lm_bar) - 1.0);
        if (1.0 + std::exp2(double(n)) * d.y[i] <= 0.0)
            throw std::runtime_error("decompose: mass positivity violated");
    }
    return d;
}

ArrayXd reconstruct(const KernelModel &model, const Decomposition &d) {
    auto prof = m_bar(model, d.A, d.shift);
    const IndexWindow &w = d.window();
    ArrayXd m(w.size());
    for (int i = 0; i < w.size(); ++i)
        m[i] = prof.m_bar[i] * (1.0 + std::exp2(double(w.lo + i)) * d.y[i]);
    return m;
}

Remainders remainders_r(const KernelModel &model, const Decomposition &d, double A_M,
                        const ArrayXd &dpdt, const ArrayXd &q) {
    const IndexWindow &w = d.window();
    const int W = w.size();
    if (dpdt.size() != W || q.size() != W)
        throw std::invalid_argument("remainders_r: size mismatch");

    ArrayXd mu_A = mu_values(model, d.A, d.shift);
    ArrayXd mu_M = mu_values(model, A_M, d.shift);
    auto prof = m_bar(model, d.A, d.shift);

    Remainders out{ArrayXd::Zero(W), ArrayXd::Zero(W), ArrayXd::Zero(W)};
    const int iN = d.N - w.lo;
    for (int i = 0; i <= iN; ++i) {
        int n = w.lo + i;
        double two_n = std::exp2(double(n));
        double g_n = std::exp(log_gamma_at_log2<double>(model, double(n) + d.shift.at(n)));
        double g_n1 =
            std::exp(log_gamma_at_log2<double>(model, double(n + 1) + d.shift.at(n + 1)));
        double ym1 = (i == 0) ? d.y[0] : d.y[i - 1];
        double yp1 = (i + 1 < W) ? d.y[i + 1] : 0.0;
        double qm1 = (i == 0) ? q[0] : q[i - 1];
        double qp1 = (i + 1 < W) ? q[i + 1] : 0.0;
        bool at_top = (i == iN);
        bool at_bottom = (i == 0);  // left truncation: no feed from below

        // r1: quadratic in y plus the mu_bar A-mismatch coupling
        double r1 = at_bottom ? 0.0 : two_n * g_n / 4.0 * (0.25 * ym1 * ym1);
        if (!at_top) {
            r1 -= two_n * g_n / 4.0 * (4.0 * mu_A[i] * (g_n1 / g_n) * d.y[i] * d.y[i]);
            r1 += 2.0 * g_n1 * (mu_M[i] - mu_A[i]) * (d.y[i] - yp1);
        }
        out.r1[i] = r1;

        // r2: variance-driven, O(q) slots with coefficient one
        double e_nm1 = 1.0 + 0.5 * two_n * ym1;  // 1 + 2^(n-1) y_{n-1}
        double e_n = 1.0 + two_n * d.y[i];
        double e_np1 = 1.0 + 2.0 * two_n * yp1;
        double r2 = at_bottom ? 0.0
                              : g_n / (4.0 * two_n) * (e_nm1 * e_nm1 * qm1 - e_n * q[i]);
        if (!at_top)
            r2 -= mu_A[i] * g_n1 / two_n * (e_n * e_n * q[i] - e_np1 * qp1);
        out.r2[i] = r2;

        // r3: dp/dt back-reaction; (1/m_bar) d m_bar / d p_k is A-independent
        double sum = 0.0;
        for (int k = n; k <= d.N; ++k) {
            double Dnk = d_mbar_dpk(model, prof, n, k);
            if (prof.m_bar[i] > 0.0) sum += Dnk / prof.m_bar[i] * dpdt[k - w.lo];
        }
        out.r3[i] = -e_n / two_n * sum;
    }
    return out;
}

Remainders remainders_R(const KernelModel &model, const Decomposition &d, double A_M,
                        const ArrayXd &q) {
    const IndexWindow &w = d.window();
    const int W = w.size();
    if (q.size() != W) throw std::invalid_argument("remainders_R: size mismatch");

    ArrayXd mu_A = mu_values(model, d.A, d.shift);
    ArrayXd mu_M = mu_values(model, A_M, d.shift);

    Remainders out{ArrayXd::Zero(W), ArrayXd::Zero(W), ArrayXd::Zero(W)};
    const int iN = d.N - w.lo;
    for (int i = 0; i <= iN; ++i) {
        int n = w.lo + i;
        double two_n = std::exp2(double(n));
        double g_n = std::exp(log_gamma_at_log2<double>(model, double(n) + d.shift.at(n)));
        double g_n1 =
            std::exp(log_gamma_at_log2<double>(model, double(n + 1) + d.shift.at(n + 1)));
        double ym1 = (i == 0) ? d.y[0] : d.y[i - 1];
        double yp1 = (i + 1 < W) ? d.y[i + 1] : 0.0;
        double qm1 = (i == 0) ? q[0] : q[i - 1];
        double qp1 = (i + 1 < W) ? q[i + 1] : 0.0;
        double pm1 = d.shift.at(n - 1), pn = d.shift.at(n), pp1 = d.shift.at(n + 1);
        bool at_top = (i == iN);

        double e_nm1 = 1.0 + 0.5 * two_n * ym1;
        double e_n = 1.0 + two_n * d.y[i];
        double e_np1 = 1.0 + 2.0 * two_n * yp1;
        double ratio_dn = e_nm1 * e_nm1 / e_n;
        double ratio_up = e_np1 / e_n;
        bool at_bottom = (i == 0);

        double R1 = at_bottom ? 0.0 : g_n / 4.0 * (ratio_dn - 1.0) * (pm1 - pn);
        double R2 = at_bottom ? 0.0 : g_n / 4.0 * (ratio_dn * qm1 + q[i]);
        double R3 = 0.0;
        if (!at_top) {
            R1 -= mu_A[i] * g_n1 * (ratio_up - 1.0) * (pn - pp1);
            R2 -= mu_A[i] * g_n1 * (ratio_up * qp1 + e_n * q[i]);
            R3 = g_n1 * (mu_M[i] - mu_A[i]) * (pn - pp1);
        }
        out.r1[i] = R1;
        out.r2[i] = R2;
        out.r3[i] = R3;
    }
    return out;
}

std::vector<DecompositionSample> track_decomposition(const KernelModel &model,
                                                     const std::vector<MomentState> &traj,
                                                     int N) {
    std::vector<DecompositionSample> out;
    out.reserve(traj.size());
    for (const auto &s : traj) {
        const IndexWindow &w = s.window;
        ShiftSequence p(w, s.p, s.p[N - w.lo], s.p[0]);
        DecompositionSample ds{s.t, decompose(model, s.m, p, N), 0.0, 0.0, 0.0};
        ds.norm1 = weighted_norm(ds.d.y, w, 1.0);
        ds.normb = weighted_norm(ds.d.y, w, model.beta);
        out.push_back(std::move(ds));
    }
    // smoothed five-point finite differences of A(t)
    const int S = int(out.size());
    for (int k = 0; k < S; ++k) {
        int lo = std::max(0, k - 2), hi = std::min(S - 1, k + 2);
        double st = 0, sa = 0, stt = 0, sta = 0;
        int cnt = hi - lo + 1;
        for (int j = lo; j <= hi; ++j) {
            st += out[j].t;
            sa += out[j].d.A;
            stt += out[j].t * out[j].t;
            sta += out[j].t * out[j].d.A;
        }
        double denom = cnt * stt - st * st;
        out[k].dAdt = denom != 0.0 ? (cnt * sta - st * sa) / denom : 0.0;
    }
    return out;
}

double wasserstein_to_peak(double q_n, double p_n, double rho) {
    return std::sqrt(std::max(q_n, 0.0) + (p_n - rho) * (p_n - rho));
}

ArrayXd wasserstein_to_peak(const MomentState &state, double rho) {
    ArrayXd out = ArrayXd::Zero(state.size());
    for (int i = 0; i < state.size(); ++i) {
        if (state.absent[i]) continue;
        out[i] = wasserstein_to_peak(state.q[i], state.p[i], rho);
    }
    return out;
}

RhoEstimate rho_estimate(const std::vector<MomentState> &traj) {
    if (traj.empty()) throw std::invalid_argument("rho_estimate: empty trajectory");
    RhoEstimate est;
    const MomentState &last = traj.back();
    double wsum = 0.0, wp = 0.0;
    for (int i = 0; i < last.size(); ++i) {
        if (last.absent[i]) continue;
        double wgt = std::exp2(double(last.window.lo + i) + last.p[i]) * last.m[i];
        wsum += wgt;
        wp += wgt * last.p[i];
    }
    if (wsum <= 0.0) throw std::runtime_error("rho_estimate: no mass");
    est.rho_hat = wp / wsum;
    for (const auto &s : traj) {
        double spread = 0.0;
        for (int i = 0; i < s.size(); ++i)
            if (!s.absent[i]) spread = std::max(spread, std::abs(s.p[i] - est.rho_hat));
        est.t.push_back(s.t);
        est.spread.push_back(spread);
    }
    return est;
}

double duhamel_residual(const KernelModel &model, double A_M,
                        const std::vector<DecompositionSample> &track,
                        const std::vector<MomentState> &traj, bool include_r2,
                        double evolve_tol) {
    if (track.size() != traj.size() || track.size() < 4)
        throw std::invalid_argument("duhamel_residual: need aligned samples (>= 4)");
    const IndexWindow &w = track[0].d.window();
    const int W = w.size();
    const int N = track[0].d.N;
    const int S = int(track.size());

    // piecewise-linear interpolation of the sampled shifts
    auto shift_of_t = [&](double t) {
        int k = 0;
        while (k + 2 < S && track[k + 1].t <= t) ++k;
        double t0 = track[k].t, t1 = track[k + 1].t;
        double a = t1 > t0 ? std::clamp((t - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
        ArrayXd p = (1.0 - a) * traj[k].p + a * traj[k + 1].p;
        return ShiftSequence(w, p, p[N - w.lo], p[0]);
    };
    auto coeffs = linear::SigmaCoeffs::time_dependent(model, w, A_M, shift_of_t, N);

    // dp/dt per sample by centered differences
    std::vector<ArrayXd> dpdt(S);
    for (int k = 0; k < S; ++k) {
        int a = std::max(0, k - 1), b = std::min(S - 1, k + 1);
        dpdt[k] = (traj[b].p - traj[a].p) / std::max(traj[b].t - traj[a].t, 1e-12);
    }

    // total remainder r(s) = r1 + r2 + r3 and the P y term per sample
    std::vector<ArrayXd> rsum(S), py(S);
    for (int k = 0; k < S; ++k) {
        auto r = remainders_r(model, track[k].d, A_M, dpdt[k], traj[k].q);
        rsum[k] = r.r1 + r.r3;
        if (include_r2) rsum[k] += r.r2;
        py[k] = track[k].d.y;
        for (int i = 0; i < W; ++i) py[k][i] *= std::exp2(double(w.lo + i));
    }

    auto propagate_centered = [&](const ArrayXd &v, double s, double t) {
        ArrayXd out = v;
        if (t > s + 1e-12) out = linear::evolve_T(coeffs, v, s, t, evolve_tol).back().y;
        out -= out[N - w.lo];
        for (int i = N - w.lo + 1; i < W; ++i) out[i] = 0.0;  // identity lives on n <= N
        return out;
    };

    double scale = 1e-8;
    for (int k = 0; k < S; ++k) scale = std::max(scale, track[k].norm1);

    double worst = 0.0;
    for (int probe : {S / 2, S - 1}) {
        double t = track[probe].t;
        ArrayXd acc = propagate_centered(track[0].d.y, track[0].t, t);
        for (int k = 0; k < probe; ++k) {
            double h = track[k + 1].t - track[k].t;
            ArrayXd f0 = track[k].dAdt * propagate_centered(py[k], track[k].t, t) +
                         propagate_centered(rsum[k], track[k].t, t);
            ArrayXd f1 = track[k + 1].dAdt * propagate_centered(py[k + 1], track[k + 1].t, t) +
                         propagate_centered(rsum[k + 1], track[k + 1].t, t);
            acc += 0.5 * h * (f0 + f1);
        }
        double num = weighted_norm(acc - track[probe].d.y, w, 1.0);
        worst = std::max(worst, num / scale);
    }
    return worst;
}

} // namespace representation
} // namespace peakdyn
