#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "wkam/action_kernel.hpp"
#include "wkam/error.hpp"
#include "wkam/nonsmooth_calculus.hpp"
#include "wkam/parallel.hpp"
#include "wkam/report.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

namespace detail {
inline void require_same_grid(const GridFunction& f, const ActionKernel& k) {
  if (!(f.grid() == k.grid())) throw GridMismatch("operator: function and kernel grids differ");
}
}  // namespace detail

/// T-_t phi(x) = min_y phi(y) + K[y][x].
inline GridFunction t_minus(const GridFunction& phi, const ActionKernel& k) {
  detail::require_same_grid(phi, k);
  const std::size_t n = phi.size();
  std::vector<double> out(n, kInf);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t y = 0; y < n; ++y) {
      const double fy = phi[y];
      const double* row = k.row(y);
      for (std::size_t x = lo; x < hi; ++x) out[x] = std::min(out[x], fy + row[x]);
    }
  });
  return GridFunction(phi.grid(), std::move(out));
}

/// T+_t phi(x) = max_y phi(y) - K[x][y].
inline GridFunction t_plus(const GridFunction& phi, const ActionKernel& k) {
  detail::require_same_grid(phi, k);
  const std::size_t n = phi.size();
  std::vector<double> out(n, -kInf);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t x = lo; x < hi; ++x) {
      const double* row = k.row(x);
      double best = -kInf;
      for (std::size_t y = 0; y < n; ++y) best = std::max(best, phi[y] - row[y]);
      out[x] = best;
    }
  });
  return GridFunction(phi.grid(), std::move(out));
}

/// T-_t through the ladder: levels of the binary expansion of t applied in ascending order.
/// This equals t_minus with the product of those levels.
inline GridFunction t_minus(const GridFunction& phi, const KernelLadder& ladder, double t) {
  GridFunction cur = phi;
  for (std::size_t k : ladder.decompose(t)) cur = t_minus(cur, ladder.level(k));
  return cur;
}

/// T+_t through the ladder, the adjoint order of t_minus (descending levels).
inline GridFunction t_plus(const GridFunction& phi, const KernelLadder& ladder, double t) {
  GridFunction cur = phi;
  auto parts = ladder.decompose(t);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) cur = t_plus(cur, ladder.level(*it));
  return cur;
}

/// (T-T+ phi - phi, phi - T+T- phi); both nonnegative at every node.
inline std::pair<GridFunction, GridFunction> commutator_gap(const GridFunction& phi,
                                                            const ActionKernel& k) {
  return {t_minus(t_plus(phi, k), k) - phi, phi - t_plus(t_minus(phi, k), k)};
}

inline std::pair<GridFunction, GridFunction> commutator_gap(const GridFunction& phi,
                                                            const KernelLadder& ladder, double t) {
  return {t_minus(t_plus(phi, ladder, t), ladder, t) - phi,
          phi - t_plus(t_minus(phi, ladder, t), ladder, t)};
}

struct TripleIdentity {
  double plus = 0.0;   // sup |T+T-T+ phi - T+ phi|
  double minus = 0.0;  // sup |T-T+T- phi - T- phi|
};

inline TripleIdentity triple_identity_check(const GridFunction& phi, const ActionKernel& k) {
  GridFunction p = t_plus(phi, k);
  GridFunction m = t_minus(phi, k);
  return {sup_diff(t_plus(t_minus(p, k), k), p), sup_diff(t_minus(t_plus(m, k), k), m)};
}

enum class OperatorTag { t_minus, t_plus, t_minus_t_plus, t_plus_t_minus };

inline std::string to_string(OperatorTag t) {
  switch (t) {
    case OperatorTag::t_minus: return "T_minus";
    case OperatorTag::t_plus: return "T_plus";
    case OperatorTag::t_minus_t_plus: return "T_minus_T_plus";
    case OperatorTag::t_plus_t_minus: return "T_plus_T_minus";
  }
  return "?";
}

/// Snapshots of an operator applied at increasing times.
struct SemigroupEvolution {
  std::vector<double> times;
  std::vector<GridFunction> snapshots;
  OperatorTag tag = OperatorTag::t_minus;

  void push(double t, GridFunction f) {
    if (!times.empty() && !(t > times.back()))
      throw Error("SemigroupEvolution: times must be strictly increasing");
    if (!snapshots.empty()) snapshots.front().check_same_grid(f);
    times.push_back(t);
    snapshots.push_back(std::move(f));
  }
};

inline GridFunction apply(OperatorTag tag, const GridFunction& phi, const KernelLadder& ladder,
                          double t) {
  switch (tag) {
    case OperatorTag::t_minus: return t_minus(phi, ladder, t);
    case OperatorTag::t_plus: return t_plus(phi, ladder, t);
    case OperatorTag::t_minus_t_plus: return t_minus(t_plus(phi, ladder, t), ladder, t);
    case OperatorTag::t_plus_t_minus: return t_plus(t_minus(phi, ladder, t), ladder, t);
  }
  throw Error("apply: unknown operator");
}

inline SemigroupEvolution evolve(const GridFunction& phi, const KernelLadder& ladder,
                                 const std::vector<double>& times, OperatorTag tag) {
  SemigroupEvolution ev;
  ev.tag = tag;
  for (double t : times) ev.push(t, apply(tag, phi, ladder, t));
  return ev;
}

/// CSV with columns t, node, value.
inline void write_csv(std::ostream& os, const SemigroupEvolution& ev) {
  os << "t,node,value\n";
  for (std::size_t k = 0; k < ev.times.size(); ++k)
    for (std::size_t i = 0; i < ev.snapshots[k].size(); ++i)
      os << format_real(ev.times[k]) << ',' << i << ',' << format_real(ev.snapshots[k][i]) << '\n';
}

/// phi = T-_t psi and psi = T+_t phi, with the recorded residuals of both equalities.
struct KantorovichPair {
  GridFunction phi;
  GridFunction psi;
  double t = 0.0;
  double residual_phi = 0.0;  // sup |T-_t psi - phi|
  double residual_psi = 0.0;  // sup |T+_t phi - psi|
};

enum class LimitDirection { minus, plus };

struct LimitResult {
  GridFunction value;
  double t = 0.0;
  std::vector<double> history;  // sup change between consecutive ladder times
};

/// S-phi = lim T-_t phi (or S+ with T+), along ladder times. Converged once t >= min_time
/// and the change from the previous ladder time is at most tol.
inline LimitResult weak_kam_limit(const GridFunction& phi, const KernelLadder& ladder,
                                  LimitDirection dir, double tol, double min_time = 1.0) {
  std::vector<double> history;
  GridFunction prev = phi;
  for (std::size_t k = 0; k < ladder.levels(); ++k) {
    const ActionKernel& kk = ladder.level(k);
    GridFunction cur = dir == LimitDirection::minus ? t_minus(phi, kk) : t_plus(phi, kk);
    double change = sup_diff(cur, prev);
    history.push_back(change);
    if (k > 0 && kk.t() >= min_time && change <= tol) return {std::move(cur), kk.t(), history};
    prev = std::move(cur);
  }
  throw NonConvergence("weak_kam_limit: no convergence by T_max (c[H] may not be 0, or the "
                       "grid is too coarse)",
                       std::move(history));
}

struct PeierlsResult {
  std::shared_ptr<const ActionKernel> kernel;
  double t = 0.0;
  std::vector<double> history;
};

/// h = lim A_t along the ladder: the first level at or beyond min_time whose sup
/// entry-wise change from the previous level is at most tol.
inline PeierlsResult peierls_barrier(const KernelLadder& ladder, double tol,
                                     double min_time = 1.0) {
  detail::require_normalized(ladder.spec());
  std::vector<double> history;
  for (std::size_t k = 1; k < ladder.levels(); ++k) {
    const ActionKernel& a = ladder.level(k - 1);
    const ActionKernel& b = ladder.level(k);
    double change = 0.0;
    for (std::size_t i = 0; i < a.nodes(); ++i)
      for (std::size_t j = 0; j < a.nodes(); ++j) {
        double x = a(i, j), y = b(i, j);
        if (x == kInf && y == kInf) continue;
        change = std::max(change, std::abs(x - y));
      }
    history.push_back(change);
    if (b.t() >= min_time && change <= tol) return {ladder.level_ptr(k), b.t(), history};
  }
  throw NonConvergence("peierls_barrier: no convergence by T_max", std::move(history));
}

/// Checks S-phi = inf_y phi(y) + h(y,.), S+phi = sup_y phi(y) - h(.,y), and
/// lim T-_t T+_t phi = S-S+phi (the limit taken at the top of the ladder).
inline Report limit_exchange_check(const GridFunction& phi, const KernelLadder& ladder,
                                   const ActionKernel& h, double limit_tol, double tol) {
  Report r;
  r.name = "limit_exchange";
  GridFunction s_minus = weak_kam_limit(phi, ladder, LimitDirection::minus, limit_tol).value;
  GridFunction s_plus = weak_kam_limit(phi, ladder, LimitDirection::plus, limit_tol).value;
  r.expect_le("S- phi equals the barrier formula", sup_diff(s_minus, t_minus(phi, h)), tol);
  r.expect_le("S+ phi equals the barrier formula", sup_diff(s_plus, t_plus(phi, h)), tol);
  GridFunction sms = t_minus(t_plus(phi, h), h);
  const ActionKernel& top = ladder.level(ladder.levels() - 1);
  GridFunction lim = t_minus(t_plus(phi, top), top);
  r.expect_le("lim T-T+ phi equals S-S+ phi", sup_diff(lim, sms), tol);
  r.data["t_limit"] = top.t();
  return r;
}

/// One row of a time scan.
struct ScanRow {
  double t;
  double residual;
  double tolerance;
  bool pass;
};

inline nlohmann::json to_json(const ScanRow& s) {
  return {{"t", s.t},
          {"residual", json_real(s.residual)},
          {"tolerance", json_real(s.tolerance)},
          {"verdict", s.pass ? "PASS" : "FAIL"}};
}

struct TauResult {
  double tau = 0.0;        // kInf when the test passes through the whole ladder
  double last_pass = 0.0;  // 0 when the first ladder time already fails
  double first_fail = kInf;
  std::vector<ScanRow> scan;
};

namespace detail {
// Coarse pass over ladder times with early exit, then bisection between the last
// passing and first failing time at multiples of delta. `test(t)` returns a ScanRow.
template <class Test>
TauResult dyadic_scan(const KernelLadder& ladder, int bisection_levels, Test&& test) {
  TauResult r;
  for (double t : ladder.times()) {
    ScanRow row = test(t);
    r.scan.push_back(row);
    if (!row.pass) {
      r.first_fail = t;
      break;
    }
    r.last_pass = t;
  }
  if (r.first_fail == kInf) {
    r.tau = kInf;
    return r;
  }
  const double d = ladder.base_step();
  double lo = r.last_pass, hi = r.first_fail;
  for (int level = 0; level < bisection_levels && hi - lo > d * 1.5; ++level) {
    double mid = std::round(0.5 * (lo + hi) / d) * d;
    ScanRow row = test(mid);
    r.scan.push_back(row);
    if (row.pass) lo = mid; else hi = mid;
  }
  r.last_pass = lo;
  r.first_fail = hi;
  r.tau = lo;
  return r;
}
}  // namespace detail

/// Default commutator tolerance 10 dx Lip(phi).
inline double default_commutator_tol(const GridFunction& phi) {
  return 10.0 * phi.grid().spacing() * phi.lipschitz();
}

/// tau_2(phi) = sup{t : T-_t T+_t phi = phi}: the largest scanned t whose first commutator
/// gap stays within tol. The gap is non-decreasing in t, so the scan stops at the first
/// failure and bisects.
inline TauResult tau2_estimate(const GridFunction& phi, const KernelLadder& ladder, double tol,
                               int bisection_levels = 6) {
  return detail::dyadic_scan(ladder, bisection_levels, [&](double t) {
    double gap = commutator_gap(phi, ladder, t).first.max();
    return ScanRow{t, gap, tol, gap <= tol};
  });
}

/// tau_1(phi): the largest scanned t such that T+_t phi has semiconcavity and semiconvexity
/// constants both at most c_bound (the end of the initial passing run).
inline TauResult tau1_estimate(const GridFunction& phi, const KernelLadder& ladder,
                               double c_bound, int bisection_levels = 6) {
  double pre = semiconcavity_constant(phi).constant_estimate;
  if (pre > c_bound)
    throw PreconditionError("tau1_estimate: phi is not semiconcave within the bound", pre);
  return detail::dyadic_scan(ladder, bisection_levels, [&](double t) {
    GridFunction f = t_plus(phi, ladder, t);
    double c = std::max(semiconcavity_constant(f).constant_estimate,
                        semiconvexity_constant(f).constant_estimate);
    return ScanRow{t, c, c_bound, c <= c_bound};
  });
}

/// Default C^{1,1} bound for tau_1 scans: 4 / dx.
inline double default_c_bound(const TorusGrid& g) { return 4.0 / g.spacing(); }

}  // namespace wkam
