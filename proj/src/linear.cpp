#include "peakdyn/linear.hpp"

#include <algorithm>
#include <cmath>

namespace peakdyn {
namespace linear {

SigmaCoeffs SigmaCoeffs::stationary_comb(const KernelModel &m, const IndexWindow &w,
                                         double A_M, double rho, int n_trunc) {
    return SigmaCoeffs{m, w, A_M, n_trunc, nullptr, rho};
}

SigmaCoeffs SigmaCoeffs::time_dependent(const KernelModel &m, const IndexWindow &w,
                                        double A_M, std::function<ShiftSequence(double)> p,
                                        int n_trunc) {
    return SigmaCoeffs{m, w, A_M, n_trunc, std::move(p), 0.0};
}

ShiftSequence SigmaCoeffs::shift_at(double t) const {
    if (shift_of_t) return shift_of_t(t);
    return ShiftSequence::constant(window, rho);
}

ArrayXd SigmaCoeffs::sigma_at(double t) const {
    ShiftSequence p = shift_at(t);
    auto pa = [&](int j) { return p.at(j); };
    auto core = detail::build_core<double>(model, A_M, window.lo, window.hi, pa, 60);
    ArrayXd sig = ArrayXd::Zero(window.size());
    for (int n = window.lo; n <= window.hi; ++n) {
        if (n >= n_trunc) break;
        double lmu = core.lmu(n);
        double lgr = log_gamma_at_log2<double>(model, double(n + 1) + p.at(n + 1)) -
                     log_gamma_at_log2<double>(model, double(n) + p.at(n));
        double v = lmu + lgr;
        sig[n - window.lo] = v < kUnderflowFloorLog ? 0.0 : 8.0 * std::exp(v);
    }
    return sig;
}

ArrayXd SigmaCoeffs::rate_at(double t) const {
    ShiftSequence p = shift_at(t);
    ArrayXd r(window.size());
    for (int n = window.lo; n <= window.hi; ++n)
        r[n - window.lo] =
            0.25 * std::exp(log_gamma_at_log2<double>(model, double(n) + p.at(n)));
    return r;
}

ArrayXd apply_L(const SigmaCoeffs &coeffs, const ArrayXd &y, double t) {
    const IndexWindow &w = coeffs.window;
    if (y.size() != w.size()) throw std::invalid_argument("apply_L: size mismatch");
    ArrayXd sig = coeffs.sigma_at(t);
    ArrayXd rate = coeffs.rate_at(t);
    ArrayXd out = ArrayXd::Zero(w.size());
    for (int n = w.lo; n <= std::min(coeffs.n_trunc, w.hi); ++n) {
        int i = n - w.lo;
        double ym1 = (n == w.lo) ? y[i] : y[i - 1];  // left ghost copy
        double yp1 = (n == w.hi) ? 0.0 : y[i + 1];   // unused when sigma == 0
        out[i] = rate[i] * (ym1 - y[i] - sig[i] * (y[i] - yp1));
    }
    return out;
}

ArrayXd discrete_derivative(const ArrayXd &y, Side side) {
    ArrayXd d = ArrayXd::Zero(y.size());
    if (side == Side::plus) {
        for (int i = 0; i + 1 < y.size(); ++i) d[i] = y[i + 1] - y[i];
    } else {
        for (int i = 1; i < y.size(); ++i) d[i] = y[i] - y[i - 1];
    }
    return d;
}

double dplus_norm(const ArrayXd &y, const IndexWindow &w, double theta) {
    double neg = 0.0, pos = 0.0;
    for (int n = w.lo; n < w.hi; ++n) {
        double a = std::abs(y[n - w.lo + 1] - y[n - w.lo]);
        if (n <= 0)
            neg = std::max(neg, std::exp2(double(n)) * a);
        else
            pos = std::max(pos, std::exp2(theta * n) * a);
    }
    return neg + pos;
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

} // namespace

std::vector<EvolveSample> evolve_T(const SigmaCoeffs &coeffs, const ArrayXd &y0,
                                   double t0, double t1, double tol,
                                   const std::vector<double> &samples) {
    const IndexWindow &w = coeffs.window;
    if (y0.size() != w.size()) throw std::invalid_argument("evolve_T: size mismatch");
    if (!(t1 >= t0)) throw std::invalid_argument("evolve_T: need t1 >= t0");

    const int itrunc = std::min(coeffs.n_trunc, w.hi) - w.lo;

    // Split L y = -Lambda y + S(y): Lambda is the per-row loss coefficient,
    // handled by exact exponentials; the gains S enter through an adaptive
    // exponential trapezoidal correction.
    auto assemble = [&](double t, ArrayXd &lam, ArrayXd &sig, ArrayXd &rate) {
        sig = coeffs.sigma_at(t);
        rate = coeffs.rate_at(t);
        lam = rate * (1.0 + sig);
    };
    auto gains = [&](const ArrayXd &y, const ArrayXd &sig, const ArrayXd &rate) {
        ArrayXd s = ArrayXd::Zero(w.size());
        for (int i = 0; i <= itrunc; ++i) {
            double ym1 = (i == 0) ? y[0] : y[i - 1];
            double yp1 = (i + 1 < w.size()) ? y[i + 1] : 0.0;
            s[i] = rate[i] * (ym1 + sig[i] * yp1);
        }
        return s;
    };

    std::vector<double> marks(samples);
    marks.push_back(t1);
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());

    std::vector<EvolveSample> out;
    ArrayXd y = y0;
    for (int i = itrunc + 1; i < w.size(); ++i) y[i] = 0.0;
    double t = t0;
    double h = 1e-4 * std::max(1e-12, t1 - t0);
    const double h_floor = 1e-14 * std::max(1.0, t1 - t0);

    ArrayXd lam(w.size()), sig(w.size()), rate(w.size());
    ArrayXd lam1(w.size()), sig1(w.size()), rate1(w.size());

    size_t mark_idx = 0;
    while (mark_idx < marks.size() && marks[mark_idx] < t0 - 1e-15) ++mark_idx;

    while (mark_idx < marks.size()) {
        double target = marks[mark_idx];
        if (target <= t + 1e-15) {
            out.push_back({target, y});
            ++mark_idx;
            continue;
        }
        double hstep = std::min(h, target - t);
        assemble(t, lam, sig, rate);
        ArrayXd s0 = gains(y, sig, rate);

        ArrayXd pred(w.size()), corr(w.size());
        assemble(t + hstep, lam1, sig1, rate1);
        for (int i = 0; i < w.size(); ++i) {
            double z = -lam[i] * hstep;
            pred[i] = std::exp(z) * y[i] + hstep * phi1(z) * s0[i];
        }
        for (int i = itrunc + 1; i < w.size(); ++i) pred[i] = 0.0;
        ArrayXd s1 = gains(pred, sig1, rate1);
        double err = 0.0;
        for (int i = 0; i <= itrunc; ++i) {
            double z = -lam[i] * hstep;
            corr[i] = pred[i] + hstep * phi2(z) * (s1[i] - s0[i]);
            err = std::max(err, std::abs(corr[i] - pred[i]) / (1.0 + std::abs(y[i])));
        }
        for (int i = itrunc + 1; i < w.size(); ++i) corr[i] = 0.0;

        if (err <= tol || hstep <= h_floor) {
            y = corr;
            t += hstep;
            double grow = err > 0.0 ? 0.9 * std::sqrt(tol / err) : 5.0;
            h = hstep * std::clamp(grow, 0.2, 5.0);
        } else {
            h = hstep * std::clamp(0.9 * std::sqrt(tol / err), 0.1, 0.9);
            if (h < h_floor)
                throw std::runtime_error("evolve_T: tolerance not reachable");
        }
    }
    return out;
}

double fundamental_psi(double beta, int ell, int n, double t) {
    if (!(beta > 0.0)) throw std::invalid_argument("fundamental_psi: beta must be positive");
    if (t < 0.0) throw std::invalid_argument("fundamental_psi: t must be nonnegative");
    if (n < ell) return 0.0;
    auto lambda = [&](int m) { return std::exp2(beta * m) / 4.0; };
    if (n == ell) return std::exp(-lambda(ell) * t);

    // Psi_n = sum_m c_m e^(-lambda_m t),
    // c_m = (lambda_m/lambda_ell) prod_{j != m} lambda_j/(lambda_j - lambda_m).
    // Neumaier-compensated sum; the factors stay bounded because the rates
    // are geometrically separated.
    double sum = 0.0, comp = 0.0;
    for (int m = ell; m <= n; ++m) {
        double c = lambda(m) / lambda(ell);
        for (int j = ell; j <= n; ++j) {
            if (j == m) continue;
            c *= lambda(j) / (lambda(j) - lambda(m));
        }
        double term = c * std::exp(-lambda(m) * t);
        double s = sum + term;
        comp += (std::abs(sum) >= std::abs(term)) ? (sum - s) + term : (term - s) + sum;
        sum = s;
    }
    sum += comp;
    return std::max(sum, 0.0);
}

DecayFit fit_decay(const std::vector<double> &t, const std::vector<double> &v,
                   double t_burn, bool fit_power) {
    if (t.size() != v.size()) throw std::invalid_argument("fit_decay: size mismatch");
    std::vector<double> ts, lv;
    for (size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t_burn) continue;
        if (!(v[i] > 0.0)) throw std::invalid_argument("fit_decay: nonpositive sample");
        ts.push_back(t[i]);
        lv.push_back(std::log(v[i]));
    }
    if (ts.size() < 20) throw std::invalid_argument("fit_decay: need at least 20 samples");

    const int rows = int(ts.size());
    const int cols = fit_power ? 3 : 2;
    Eigen::MatrixXd X(rows, cols);
    Eigen::VectorXd b(rows);
    for (int i = 0; i < rows; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = -ts[i];
        if (fit_power) X(i, 2) = -std::log(ts[i]);
        b[i] = lv[i];
    }
    Eigen::VectorXd coef = X.colPivHouseholderQr().solve(b);

    DecayFit fit;
    fit.C = std::exp(coef[0]);
    fit.nu = coef[1];
    fit.a = fit_power ? coef[2] : 0.0;
    Eigen::VectorXd res = X * coef - b;
    fit.residual = res.cwiseAbs().maxCoeff();
    return fit;
}

double poincare_rayleigh(const KernelModel &model, const StationaryProfile &profile,
                         const ArrayXd &y) {
    const IndexWindow &w = profile.window();
    if (y.size() != w.size()) throw std::invalid_argument("poincare_rayleigh: size mismatch");

    double wsum = 0.0, wy = 0.0;
    ArrayXd weight(w.size());
    for (int n = w.lo; n <= w.hi; ++n) {
        int i = n - w.lo;
        weight[i] = std::exp2(2.0 * n) * profile.m_bar[i];
        wsum += weight[i];
        wy += weight[i] * y[i];
    }
    if (wsum <= 0.0) return 0.0;
    double mean = wy / wsum;

    double num = 0.0;
    for (int i = 0; i < w.size(); ++i) num += weight[i] * (y[i] - mean) * (y[i] - mean);

    double den = 0.0;
    for (int n = w.lo; n < w.hi; ++n) {
        int i = n - w.lo;
        double g = std::exp(log_gamma_at_log2<double>(model,
                                                      double(n + 1) + profile.shift.at(n + 1)));
        double d = y[i + 1] - y[i];
        den += std::exp2(2.0 * n) * g * profile.m_bar[i + 1] * d * d;
    }
    if (num == 0.0 && den == 0.0) return 0.0;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return num / den;
}

double poincare_c0_exact(const KernelModel &model, const StationaryProfile &profile) {
    // In difference coordinates d_n = y_{n+1} - y_n the numerator is a dense
    // quadratic form and the denominator is diagonal positive, so the sup of
    // the ratio is a plain symmetric eigenvalue.  Rows whose weight has
    // decayed below 1e-30 of the peak carry ratio ~ 4/gamma(2^n) -> 0 and are
    // excluded; keeping them clamps 0/0 directions into the pencil.
    const IndexWindow &w = profile.window();

    int i_hi = 0;
    double m_max = profile.m_bar.maxCoeff();
    for (int i = 0; i < w.size(); ++i)
        if (profile.m_bar[i] > 1e-30 * m_max) i_hi = i;
    const int W = i_hi + 1;
    if (W < 3) throw std::runtime_error("poincare_c0_exact: profile too degenerate");

    ArrayXd weight(W);
    for (int i = 0; i < W; ++i)
        weight[i] = std::exp2(2.0 * (w.lo + i)) * profile.m_bar[i];
    double wsum = weight.sum();

    // In the gauge y_lo = 0 with y_a = sum_{k<a} d_k, the centered form is
    //   N(d)_{ij} = S_max(i,j) T_min(i,j) / wsum,
    // with T/S the prefix/suffix weight sums.  Assembling it this way avoids
    // the catastrophic cancellation of the dense L^T N L product across the
    // ~8^n weight range.
    std::vector<double> T(W, 0.0), S(W, 0.0);
    T[0] = weight[0];
    for (int i = 1; i < W; ++i) T[i] = T[i - 1] + weight[i];
    S[W - 1] = 0.0;
    for (int i = W - 2; i >= 0; --i) S[i] = S[i + 1] + weight[i + 1];

    Eigen::VectorXd dscale(W - 1);
    for (int i = 0; i + 1 < W; ++i) {
        int n = w.lo + i;
        double g = std::exp(log_gamma_at_log2<double>(model,
                                                      double(n + 1) + profile.shift.at(n + 1)));
        dscale[i] = std::exp2(2.0 * n) * g * profile.m_bar[i + 1];
    }

    Eigen::MatrixXd Sym(W - 1, W - 1);
    for (int i = 0; i + 1 < W; ++i)
        for (int j = 0; j + 1 < W; ++j) {
            double num = S[std::max(i, j)] * T[std::min(i, j)] / wsum;
            Sym(i, j) = num / std::sqrt(dscale[i] * dscale[j]);
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Sym + Sym.transpose()));
    return es.eigenvalues().maxCoeff();
}

HatqResult hatq_supersolution(const KernelModel &model, int n0, double delta0,
                              double delta1, double nu, const std::vector<double> &t_grid,
                              int count) {
    if (!(delta0 > 0.0 && delta1 > 0.0 && delta1 < 1.0 && nu > 0.0))
        throw std::invalid_argument("hatq_supersolution: bad parameters");
    const double amp = 4.0 * std::pow(delta0, 1.5);

    HatqResult res;
    res.n0 = n0;
    res.t = t_grid;
    double sigma = -std::log2((1.0 - delta1) / (1.0 + delta1));
    res.theta_bar2 = 1.0 - sigma;

    // Row n: dq_n/dt = G_n q_{n-1} - Lam_n q_n with
    //   G_n = (gamma(2^n)/4)(1+delta1)/2,  Lam_n = (gamma(2^n)/4)(1-delta1).
    // Exact solution as alpha_n e^{-nu t} + sum_m c_{n,m} e^{-Lam_m t}.
    std::vector<double> G(count + 1, 0.0), Lam(count + 1, 0.0);
    for (int i = 1; i <= count; ++i) {
        double g4 = eval_gamma(model, std::exp2(double(n0 + i))) / 4.0;
        G[i] = g4 * 0.5 * (1.0 + delta1);
        Lam[i] = g4 * (1.0 - delta1);
        if (std::abs(Lam[i] - nu) < 1e-9 * Lam[i])
            throw std::invalid_argument("hatq_supersolution: nu resonates with a cascade rate");
    }

    std::vector<double> alpha(count + 1, 0.0);
    alpha[0] = amp;  // boundary row amplitude
    std::vector<std::vector<double>> c(count + 1);
    for (int i = 1; i <= count; ++i) {
        alpha[i] = G[i] * alpha[i - 1] / (Lam[i] - nu);
        c[i].assign(count + 1, 0.0);
        for (int m = 1; m < i; ++m) {
            if (std::abs(Lam[i] - Lam[m]) < 1e-12 * Lam[i])
                throw std::runtime_error("hatq_supersolution: degenerate rates");
            c[i][m] = G[i] * c[i - 1][m] / (Lam[i] - Lam[m]);
        }
        double sum_c = 0.0;
        for (int m = 1; m < i; ++m) sum_c += c[i][m];
        c[i][i] = amp - alpha[i] - sum_c;
    }

    res.n.resize(count);
    res.values.resize(count, int(t_grid.size()));
    double c1 = std::numeric_limits<double>::infinity(), c2 = 0.0;
    for (int i = 1; i <= count; ++i) {
        res.n[i - 1] = n0 + i;
        for (size_t j = 0; j < t_grid.size(); ++j) {
            double t = t_grid[j];
            double v = alpha[i] * std::exp(-nu * t);
            for (int m = 1; m <= i; ++m) v += c[i][m] * std::exp(-Lam[m] * t);
            res.values(i - 1, int(j)) = v;
            if (t > 0.0) {
                double scaled = std::exp2(res.theta_bar2 * (n0 + i)) * v *
                                std::exp(nu * t) / std::pow(delta0, 1.5);
                c1 = std::min(c1, scaled);
                c2 = std::max(c2, scaled * std::pow(t, res.theta_bar2 / model.beta));
            }
        }
    }
    res.c1 = c1;
    res.c2 = c2;
    res.sandwich_ok = std::isfinite(c2) && c1 > 0.0;
    return res;
}

} // namespace linear
} // namespace peakdyn
