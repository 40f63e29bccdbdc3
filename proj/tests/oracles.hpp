// Test-only oracles: finite differences, quadrature, and brute-force
// enumeration. Kept independent of the library's own computational paths.
#pragma once

#include <functional>
#include <vector>

#include "dsmbocd/common.hpp"
#include "dsmbocd/model.hpp"

namespace oracles {

using dsmbocd::Index;
using dsmbocd::Matrix;
using dsmbocd::Vector;

// Central finite difference of a scalar function along coordinate i.
inline double fd_partial(const std::function<double(const Vector&)>& f, const Vector& x,
                         Index i, double h = 1e-5) {
  Vector xp = x, xm = x;
  xp(i) += h;
  xm(i) -= h;
  return (f(xp) - f(xm)) / (2.0 * h);
}

inline double fd_second(const std::function<double(const Vector&)>& f, const Vector& x,
                        Index i, double h = 1e-4) {
  Vector xp = x, xm = x;
  xp(i) += h;
  xm(i) -= h;
  return (f(xp) - 2.0 * f(x) + f(xm)) / (h * h);
}

// Adaptive Simpson on [a, b].
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-10, int depth = 24) {
  struct Impl {
    const std::function<double(double)>& f;
    double run(double a, double m, double b, double fa, double fm, double fb, double whole,
               double tol, int depth) {
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
      return run(a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
             run(m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  };
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  Impl impl{f};
  return impl.run(a, m, b, fa, fm, fb, whole, tol, depth);
}

// Integral of f over the whole real line via the tangent substitution
// x = loc + scale * tan(u).
inline double integrate_real_line(const std::function<double(double)>& f, double loc,
                                  double scale, double tol = 1e-10) {
  auto g = [&](double u) {
    const double t = std::tan(u);
    const double x = loc + scale * t;
    const double jac = scale * (1.0 + t * t);
    return f(x) * jac;
  };
  const double eps = 1e-9;
  return adaptive_simpson(g, -M_PI_2 + eps, M_PI_2 - eps, tol);
}

// All 2^T changepoint configurations of a length-T stream: configuration bit
// t-1 set means a segment restarts at time t (t = 1 restarting is the
// vacuous flag that splits the run-length prior without changing segments).
struct Enumeration {
  // seg_log_marginal(first, last): joint predictive mass of x_{first..last}
  // (1-based, inclusive) as one segment, i.e. the product of sequential
  // predictives under the segment posterior.
  static double log_evidence(long T, double h,
                             const std::function<double(long, long)>& seg_log_marginal) {
    double acc = dsmbocd::kNegInf;
    for (unsigned long mask = 0; mask < (1ul << T); ++mask)
      acc = dsmbocd::logsumexp2(acc, config_log_joint(T, h, mask, seg_log_marginal));
    return acc;
  }

  // log p(r_T = r, x_{1:T}) by summing configurations whose final segment has
  // run length r.
  static double log_joint_rT(long T, long r, double h,
                             const std::function<double(long, long)>& seg_log_marginal) {
    double acc = dsmbocd::kNegInf;
    for (unsigned long mask = 0; mask < (1ul << T); ++mask) {
      long last_start = 1;  // a segment always starts at 1, flagged or not
      for (long t = T; t >= 1; --t)
        if (mask & (1ul << (t - 1))) {
          last_start = t;
          break;
        }
      long run = T - last_start;  // run length counts steps since the restart
      if ((mask & 1ul) && last_start == 1) run = T - 1;  // flagged restart at t = 1
      if (!(mask & 1ul) && last_start == 1) run = T;     // no restart anywhere
      if (run != r) continue;
      acc = dsmbocd::logsumexp2(acc, config_log_joint(T, h, mask, seg_log_marginal));
    }
    return acc;
  }

  static double config_log_joint(long T, double h, unsigned long mask,
                                 const std::function<double(long, long)>& seg_log_marginal) {
    double lp = 0.0;
    for (long t = 1; t <= T; ++t)
      lp += (mask & (1ul << (t - 1))) ? std::log(h) : std::log1p(-h);
    long start = 1;
    for (long t = 2; t <= T; ++t) {
      if (mask & (1ul << (t - 1))) {
        lp += seg_log_marginal(start, t - 1);
        start = t;
      }
    }
    lp += seg_log_marginal(start, T);
    return lp;
  }

  // Best configuration (MAP): returns the restart times > 1.
  static std::vector<long> map_config(long T, double h,
                                      const std::function<double(long, long)>& seg_lm) {
    double best = dsmbocd::kNegInf;
    unsigned long best_mask = 0;
    for (unsigned long mask = 0; mask < (1ul << T); ++mask) {
      const double lp = config_log_joint(T, h, mask, seg_lm);
      if (lp > best) {
        best = lp;
        best_mask = mask;
      }
    }
    std::vector<long> cps;
    for (long t = 2; t <= T; ++t)
      if (best_mask & (1ul << (t - 1))) cps.push_back(t);
    return cps;
  }
};

}  // namespace oracles
