#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace peakdyn {

using Eigen::ArrayXd;

// Finite index window [lo, hi] standing in for the bi-infinite peak index n.
struct IndexWindow {
    int lo;
    int hi;

    IndexWindow(int lo_, int hi_) : lo(lo_), hi(hi_) {
        if (!(lo < 0 && 0 < hi))
            throw std::invalid_argument("IndexWindow: need lo < 0 < hi");
        if (hi - lo < 8)
            throw std::invalid_argument("IndexWindow: need hi - lo >= 8");
    }

    int size() const { return hi - lo + 1; }
    bool contains(int n) const { return lo <= n && n <= hi; }
    // Position of peak index n in a window-sized array.
    int at(int n) const {
        if (!contains(n)) throw std::out_of_range("IndexWindow::at");
        return n - lo;
    }
};

inline bool operator==(const IndexWindow &a, const IndexWindow &b) {
    return a.lo == b.lo && a.hi == b.hi;
}

// Per-peak shifts p_n on a window, extended by constants on both sides.
struct ShiftSequence {
    IndexWindow window;
    ArrayXd p;        // size window.size()
    double p_inf;     // value used for n > window.hi
    double p_lo_ext;  // value used for n < window.lo

    ShiftSequence(IndexWindow w, ArrayXd values, double pinf, double plo)
        : window(w), p(std::move(values)), p_inf(pinf), p_lo_ext(plo) {
        if (p.size() != window.size())
            throw std::invalid_argument("ShiftSequence: size mismatch");
        // a unit shift would alias peak labels; the dynamics modules enforce
        // the tighter |p_n| <= delta0 themselves
        if (p.abs().maxCoeff() >= 1.0 || std::abs(p_inf) >= 1.0 || std::abs(p_lo_ext) >= 1.0)
            throw std::invalid_argument("ShiftSequence: |p_n| must stay below 1");
    }

    static ShiftSequence constant(IndexWindow w, double rho) {
        return ShiftSequence(w, ArrayXd::Constant(w.size(), rho), rho, rho);
    }

    double at(int n) const {
        if (n > window.hi) return p_inf;
        if (n < window.lo) return p_lo_ext;
        return p[n - window.lo];
    }

    bool is_constant(double tol = 0.0) const {
        double lo = p.minCoeff(), hi = p.maxCoeff();
        return hi - lo <= tol && std::abs(p_inf - lo) <= tol && std::abs(p_lo_ext - lo) <= tol;
    }
};

// Element of the weighted sequence space with
//   ||y||_theta = sup_{n<=0} 2^n |y_n| + sup_{n>0} 2^{theta n} |y_n|.
struct WeightedSeq {
    IndexWindow window;
    ArrayXd y;
    double theta;

    WeightedSeq(IndexWindow w, ArrayXd values, double th)
        : window(w), y(std::move(values)), theta(th) {
        if (y.size() != window.size())
            throw std::invalid_argument("WeightedSeq: size mismatch");
    }

    double at(int n) const { return y[window.at(n)]; }
};

inline double weighted_norm(const ArrayXd &y, const IndexWindow &w, double theta) {
    double neg = 0.0, pos = 0.0;
    for (int n = w.lo; n <= w.hi; ++n) {
        double a = std::abs(y[n - w.lo]);
        if (n <= 0)
            neg = std::max(neg, std::exp2(double(n)) * a);
        else
            pos = std::max(pos, std::exp2(theta * n) * a);
    }
    return neg + pos;
}

inline double weighted_norm(const WeightedSeq &s) {
    return weighted_norm(s.y, s.window, s.theta);
}

// Per-peak mass / centroid offset / variance state of a solution restricted
// to the intervals I_n = (n - delta0, n + delta0).
struct MomentState {
    IndexWindow window;
    double t = 0.0;
    double delta0 = 0.0;
    ArrayXd m;
    ArrayXd p;
    ArrayXd q;
    // Peaks with mass below the absence threshold carry stale p,q.
    std::vector<bool> absent;

    MomentState(IndexWindow w, double delta0_)
        : window(w),
          delta0(delta0_),
          m(ArrayXd::Zero(w.size())),
          p(ArrayXd::Zero(w.size())),
          q(ArrayXd::Zero(w.size())),
          absent(w.size(), false) {}

    int size() const { return window.size(); }
};

inline constexpr double kAbsentMassThreshold = 1e-250;

} // namespace peakdyn
