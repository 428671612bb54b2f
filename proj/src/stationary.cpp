#include "peakdyn/stationary.hpp"

#include <algorithm>

namespace peakdyn {

namespace {

struct ShiftAt {
    const ShiftSequence *p;
    double operator()(int n) const { return p->at(n); }
};

} // namespace

StationaryProfile m_bar(const KernelModel &model, double A, const ShiftSequence &p,
                        int tail_terms) {
    const IndexWindow &w = p.window;
    auto core = detail::build_core<double>(model, A, w.lo, w.hi, ShiftAt{&p}, tail_terms);

    StationaryProfile prof{model, A, p, tail_terms,
                           ArrayXd(w.size()), ArrayXd(w.size()), ArrayXd(w.size()),
                           ArrayXd(w.size()), ArrayXd(w.size()),
                           std::vector<bool>(w.size(), false)};
    for (int n = w.lo; n <= w.hi; ++n) {
        int i = n - w.lo;
        prof.log_zeta[i] = core.lz(n);
        prof.log_mu_bar[i] = core.lmu(n);
        prof.log_m_bar[i] = core.lm(n);
        bool uf_m = core.lm(n) < kUnderflowFloorLog;
        bool uf_mu = core.lmu(n) < kUnderflowFloorLog;
        prof.m_bar[i] = uf_m ? 0.0 : std::exp(core.lm(n));
        prof.mu_bar[i] = uf_mu ? 0.0 : std::exp(core.lmu(n));
        prof.underflow[i] = uf_m;
        if (!std::isfinite(prof.log_m_bar[i]))
            throw std::runtime_error("m_bar: non-finite coefficient");
    }
    return prof;
}

StationaryProfile stationary_comb(const KernelModel &model, double A, double rho,
                                  const IndexWindow &w, int tail_terms) {
    return m_bar(model, A, ShiftSequence::constant(w, rho), tail_terms);
}

double zeta(const KernelModel &model, int n, const ShiftSequence &p) {
    double lz = log_zeta_at<double>(model, n, ShiftAt{&p});
    if (!std::isfinite(lz)) throw std::range_error("zeta: exponent out of range");
    return std::exp(lz);
}

double theta(const KernelModel &model, int n, const ShiftSequence &p) {
    double lt = std::log(2.0) + log_zeta_at<double>(model, n + 1, ShiftAt{&p}) -
                log_zeta_at<double>(model, n, ShiftAt{&p});
    if (!std::isfinite(lt)) throw std::range_error("theta: exponent out of range");
    return std::exp(lt);
}

double mu_bar_value(const KernelModel &model, double A, const ShiftSequence &p, int n,
                    int tail_terms) {
    const IndexWindow &w = p.window;
    if (n < w.lo || n > w.hi) throw std::out_of_range("mu_bar_value: n outside window");
    auto core = detail::build_core<double>(model, A, w.lo, w.hi, ShiftAt{&p}, tail_terms);
    return std::exp(core.lmu(n));
}

double recurrence_residual(const StationaryProfile &profile) {
    const IndexWindow &w = profile.window();
    double worst = 0.0;
    for (int n = w.lo; n < w.hi; ++n) {
        int i = n - w.lo;
        double delta = profile.log_m_bar[i + 1] - profile.log_zeta[i] - 2.0 * profile.log_m_bar[i];
        worst = std::max(worst, std::abs(std::expm1(-delta)));
    }
    return worst;
}

double d_mbar_dA(const StationaryProfile &profile, int n) {
    return -std::exp2(double(n)) * profile.m(n);
}

namespace {

// k'(xi) xi / k(xi) computed through logs, stable for huge xi = 2^x.
double k_elasticity_at_log2(const KernelModel &m, double x) {
    switch (m.family) {
        case KernelFamily::canonical:
            return (m.alpha + 1.0) / (1.0 + m.k0 * std::exp(-(m.alpha + 1.0) * x * std::log(2.0)));
        case KernelFamily::constant_k:
            return 0.0;
        case KernelFamily::linear_k:
            return 1.0;
    }
    throw std::logic_error("k_elasticity: bad family");
}

double gamma_elasticity_at_log2(const KernelModel &m, double x) {
    if (m.family != KernelFamily::canonical) return 0.0;
    return m.beta / (1.0 + m.gamma0 * std::exp(-m.beta * x * std::log(2.0)));
}

} // namespace

double d_mbar_dpk(const KernelModel &model, const StationaryProfile &profile, int n, int k) {
    const IndexWindow &w = profile.window();
    if (!w.contains(n) || !w.contains(k))
        throw std::out_of_range("d_mbar_dpk: index outside window");
    if (k < n) return 0.0;
    const double ln2 = std::log(2.0);
    double xk = double(k) + profile.shift.at(k);
    double ek = k_elasticity_at_log2(model, xk);
    double val = -std::exp2(double(n - k - 1)) * ln2 * (ek - 1.0);
    if (k > n) {
        double eg = gamma_elasticity_at_log2(model, xk);
        val += std::exp2(double(n - k)) * ln2 * eg;
    }
    return val * profile.m(n);
}

double total_mass(const StationaryProfile &profile, double tol_rel) {
    const IndexWindow &w = profile.window();
    if (!profile.shift.is_constant())
        throw std::invalid_argument("total_mass: constant-shift profile required");
    const double rho = profile.shift.at(0);

    // Neumaier-compensated partial sum of 2^(n+rho) m_n.
    double sum = 0.0, comp = 0.0;
    for (int n = w.lo; n <= w.hi; ++n) {
        double term = std::exp2(double(n) + rho) * profile.m(n);
        double t = sum + term;
        comp += (std::abs(sum) >= std::abs(term)) ? (sum - t) + term : (term - t) + sum;
        sum = t;
    }
    sum += comp;
    if (!(sum > 0.0)) throw std::runtime_error("total_mass: empty profile");

    // Left tail from a_n ~ a_-inf 2^n: sum_{n < lo} 2^(n+rho) a_n ~ a_-inf 2^rho 4^lo / 3.
    double left = a_minus_infinity(profile.model, rho) * std::exp2(rho) *
                  std::exp2(2.0 * w.lo) / 3.0;

    // Right tail via the actual next coefficients (double-exponential decay).
    ShiftAt pa{&profile.shift};
    auto core = detail::build_core<double>(profile.model, profile.A, w.lo, w.hi + 4, pa,
                                           profile.tail_terms);
    auto mass_at = [&](int n) {
        double lm = core.lm(n) + (double(n) + rho) * std::log(2.0);
        return lm < kUnderflowFloorLog ? 0.0 : std::exp(lm);
    };
    double t1 = mass_at(w.hi + 1), t2 = mass_at(w.hi + 2);
    double right = (t1 > 0.0 && t2 < 0.5 * t1) ? t1 / (1.0 - t2 / t1) : t1 + t2 + mass_at(w.hi + 3);

    if (left + right > tol_rel * sum)
        throw window_too_small_error("total_mass: window tail above tolerance");
    return sum + left + right;
}

double solve_A_for_mass(const KernelModel &model, double M, double rho,
                        const IndexWindow &w, double mass_tol_rel, double A_tol_abs,
                        int tail_terms) {
    if (!(M > 0.0) || !std::isfinite(M))
        throw std::invalid_argument("solve_A_for_mass: M must be positive");
    if (!(std::abs(rho) < 1.0))
        throw std::invalid_argument("solve_A_for_mass: need |rho| < 1");

    auto mass_of = [&](double A) {
        return total_mass(stationary_comb(model, A, rho, w, tail_terms));
    };

    // Walk the bracket endpoints inward until the window can evaluate the
    // mass; extreme A concentrate the profile outside any fixed window.
    double A_lo = 1e-8, A_hi = 1e8;
    double m_lo = 0.0, m_hi = 0.0;
    bool ok = false;
    while (!ok && A_lo < 1e2) {
        try {
            m_lo = mass_of(A_lo);
            ok = true;
        } catch (const window_too_small_error &) {
            A_lo *= 10.0;
        }
    }
    if (!ok) throw std::range_error("solve_A_for_mass: window cannot bracket any A");
    ok = false;
    while (!ok && A_hi > 1e-2) {
        try {
            m_hi = mass_of(A_hi);
            ok = true;
        } catch (const window_too_small_error &) {
            A_hi /= 10.0;
        }
    }
    if (!ok) throw std::range_error("solve_A_for_mass: window cannot bracket any A");
    if (!(m_lo >= M && M >= m_hi))
        throw std::range_error("solve_A_for_mass: M outside attainable range for A in [1e-8,1e8]");

    // Bisection in ln A on the strictly decreasing map A -> M(A).
    double lo = std::log(A_lo), hi = std::log(A_hi);
    double A_mid = std::exp(0.5 * (lo + hi));
    for (int it = 0; it < 200; ++it) {
        A_mid = std::exp(0.5 * (lo + hi));
        double Mm = mass_of(A_mid);
        if (std::abs(Mm - M) <= mass_tol_rel * M) return A_mid;
        if (Mm > M)
            lo = std::log(A_mid);
        else
            hi = std::log(A_mid);
        if (std::exp(hi) - std::exp(lo) < A_tol_abs) break;
    }
    return std::exp(0.5 * (lo + hi));
}

} // namespace peakdyn
