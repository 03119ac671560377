#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include "wkam/error.hpp"
#include "wkam/report.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

enum class CurvatureSide { concave_side, convex_side };

struct SemiconcavityReport {
  double constant_estimate = 0.0;
  CurvatureSide direction = CurvatureSide::concave_side;
  double threshold = 0.0;
  bool pass = false;
};

namespace detail {
// Largest sign * second difference quotient over nodes and axes (per-axis surrogate in 2D).
inline double extreme_second_difference(const GridFunction& f, double sign) {
  const TorusGrid& g = f.grid();
  const double h2 = g.spacing() * g.spacing();
  double best = -kInf;
  for (std::size_t k = 0; k < f.size(); ++k)
    for (int a = 0; a < g.dim(); ++a) {
      double s = (f[g.neighbor(k, a, -1)] - 2.0 * f[k] + f[g.neighbor(k, a, 1)]) / h2;
      best = std::max(best, sign * s);
    }
  return best;
}
}  // namespace detail

/// max (f[i-1] - 2 f[i] + f[i+1]) / dx^2, clipped below at 0. Concave kinks do not raise it.
inline SemiconcavityReport semiconcavity_constant(const GridFunction& f,
                                                  double threshold = kInf) {
  double c = std::max(0.0, detail::extreme_second_difference(f, 1.0));
  return {c, CurvatureSide::concave_side, threshold, c <= threshold};
}

/// max -(f[i-1] - 2 f[i] + f[i+1]) / dx^2, clipped below at 0.
inline SemiconcavityReport semiconvexity_constant(const GridFunction& f,
                                                  double threshold = kInf) {
  double c = std::max(0.0, detail::extreme_second_difference(f, -1.0));
  return {c, CurvatureSide::convex_side, threshold, c <= threshold};
}

/// One-sided derivatives and the superdifferential of a 1D grid function.
///
/// At a smooth node left == right == the derivative. At a detected kink the node nearest
/// to the kink carries the one-sided slopes of the two smooth pieces evaluated at the
/// kink location; D+ = [min, max] of the pair, D* the pair itself.
struct DifferentialData {
  std::vector<double> left;
  std::vector<double> right;
  std::vector<bool> singular;
  std::vector<double> kink_location;  // NaN at smooth nodes
  double gap_tol = 0.0;

  std::size_t size() const noexcept { return left.size(); }
  /// Derivative used where a single value is needed (midpoint of D+ at kinks).
  double derivative(std::size_t i) const { return 0.5 * (left[i] + right[i]); }
  std::array<double, 2> superdifferential(std::size_t i) const {
    return {std::min(left[i], right[i]), std::max(left[i], right[i])};
  }
  /// Endpoints of D+, the reachable gradients.
  std::vector<double> reachable(std::size_t i) const {
    if (!singular[i]) return {left[i]};
    return {right[i], left[i]};
  }
  std::vector<std::size_t> singular_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < singular.size(); ++i)
      if (singular[i]) out.push_back(i);
    return out;
  }
};

namespace detail {

// Quadratic through (0, f0), (h, f1), (2h, f2) shifted to start at x0.
struct Quadratic {
  double x0, h, f0, f1, f2;
  double value(double x) const {
    double s = (x - x0) / h;
    return f0 + s * (f1 - f0) + 0.5 * s * (s - 1.0) * (f2 - 2.0 * f1 + f0);
  }
  double slope(double x) const {
    double s = (x - x0) / h;
    return ((f1 - f0) + (s - 0.5) * (f2 - 2.0 * f1 + f0)) / h;
  }
};

// Crossing of two quadratics inside [lo, hi] closest to the midpoint, if any.
inline std::optional<double> root_in(const Quadratic& pl, const Quadratic& pr, double lo,
                                     double hi) {
  auto diff = [&](double x) { return pr.value(x) - pl.value(x); };
  const double c = 0.5 * (lo + hi);
  const double d0 = diff(c);
  const double r = 0.5 * (hi - lo);
  const double dh = diff(hi), dl = diff(lo);
  const double b = (dh - dl) / (2.0 * r);
  const double e = 0.5 * (dh + dl - 2.0 * d0) / (r * r);
  std::vector<double> roots;
  if (std::abs(e) * (hi - lo) < 1e-12 * (std::abs(b) + 1e-300)) {
    if (b != 0.0) roots.push_back(c - d0 / b);
  } else {
    double disc = b * b - 4.0 * e * d0;
    if (disc >= 0.0) {
      double sq = std::sqrt(disc);
      double q = -0.5 * (b + std::copysign(sq, b));
      if (q != 0.0) roots.push_back(c + q / e);
      if (q != 0.0) roots.push_back(c + d0 / q);
    }
  }
  std::optional<double> best;
  for (double r : roots)
    if (r >= lo && r <= hi && (!best || std::abs(r - c) < std::abs(*best - c))) best = r;
  return best;
}

}  // namespace detail

/// Builds DifferentialData for a 1D grid function.
///
/// Kinks are located from third differences: a window of four consecutive nodes whose
/// third difference exceeds a quarter of gap_tol * dx straddles a slope jump. Each cluster
/// of flagged windows is resolved by intersecting the clean quadratic on its left with the
/// clean quadratic on its right. gap_tol defaults to max(10 dx C_est, 1e-6) with C_est the
/// semiconcavity constant.
inline DifferentialData differential_data(const GridFunction& f,
                                          std::optional<double> gap_tol = std::nullopt) {
  const TorusGrid& g = f.grid();
  if (g.dim() != 1) throw Error("differential_data: only dim = 1 is supported");
  const int n = g.n();
  const double h = g.spacing();
  auto at = [&](long i) { return f[static_cast<std::size_t>(((i % n) + n) % n)]; };
  auto idx = [n](long i) { return static_cast<std::size_t>(((i % n) + n) % n); };

  DifferentialData out;
  out.gap_tol = gap_tol.value_or(std::max(10.0 * h * semiconcavity_constant(f).constant_estimate,
                                          1e-6));
  out.left.assign(n, 0.0);
  out.right.assign(n, 0.0);
  out.singular.assign(n, false);
  out.kink_location.assign(n, std::numeric_limits<double>::quiet_NaN());

  // Window w covers nodes w-2 .. w+1.
  const double thr = 0.25 * out.gap_tol * h;
  std::vector<bool> flagged(n, false);
  for (long w = 0; w < n; ++w)
    flagged[w] = std::abs(at(w + 1) - 3.0 * at(w) + 3.0 * at(w - 1) - at(w - 2)) > thr;
  auto is_flagged = [&](long w) { return static_cast<bool>(flagged[idx(w)]); };

  // Clusters of consecutive flagged windows, as [a, b] in unwrapped indices.
  std::vector<std::pair<long, long>> clusters;
  long start = -1;
  for (long w = 0; w < n; ++w)
    if (!flagged[w]) { start = w; break; }
  if (start < 0) throw Error("differential_data: every window is flagged; grid too coarse");
  for (long w = start + 1; w <= start + n; ++w) {
    if (is_flagged(w) && !is_flagged(w - 1)) {
      long b = w;
      while (is_flagged(b + 1)) ++b;
      clusters.emplace_back(w, b);
      w = b;
    }
  }

  std::vector<double> kinks;  // unwrapped kink coordinates, one per resolved cluster
  std::vector<std::pair<double, double>> kink_slopes;
  for (auto [a, b] : clusters) {
    std::optional<double> xi;
    double sl = 0, sr = 0;
    double best_score = kInf;
    for (long c = a - 2; c <= b + 1; ++c) {
      // Cell [c, c+1]; left piece on nodes c-2..c, right piece on nodes c+1..c+3.
      if (is_flagged(c - 1) || is_flagged(c + 3)) continue;
      detail::Quadratic pl{(c - 2) * h, h, at(c - 2), at(c - 1), at(c)};
      detail::Quadratic pr{(c + 1) * h, h, at(c + 1), at(c + 2), at(c + 3)};
      const double slack = 0.05 * h;
      auto r = detail::root_in(pl, pr, c * h - slack, (c + 1) * h + slack);
      if (!r) continue;
      double score = std::max({0.0, c * h - *r, *r - (c + 1) * h});
      if (score < best_score) {
        best_score = score;
        xi = r;
        sl = pl.slope(*r);
        sr = pr.slope(*r);
      }
    }
    if (!xi) {
      // Unresolved cluster: fall back to slopes of quadratics just outside it.
      long k = (a + b + 1) / 2;
      detail::Quadratic pl{(a - 4) * h, h, at(a - 4), at(a - 3), at(a - 2)};
      detail::Quadratic pr{(b + 1) * h, h, at(b + 1), at(b + 2), at(b + 3)};
      xi = k * h;
      sl = pl.slope(*xi);
      sr = pr.slope(*xi);
    }
    if (std::abs(sl - sr) <= out.gap_tol) continue;  // too small a jump to be a kink
    kinks.push_back(*xi);
    kink_slopes.emplace_back(sl, sr);
  }

  // Smooth derivatives: central when clean, else the clean one-sided second-order stencil.
  auto kink_inside = [&](double lo, double hi) {
    for (double xi : kinks) {
      for (double shift : {-1.0, 0.0, 1.0}) {
        double x = xi + shift;
        if (x > lo + 1e-12 && x < hi - 1e-12) return true;
      }
    }
    return false;
  };
  for (long i = 0; i < n; ++i) {
    const double x = i * h;
    double d;
    if (!kink_inside(x - h, x + h)) {
      d = (at(i + 1) - at(i - 1)) / (2.0 * h);
    } else if (!kink_inside(x - 2.0 * h, x + 1e-9 * h)) {
      d = (3.0 * at(i) - 4.0 * at(i - 1) + at(i - 2)) / (2.0 * h);
    } else if (!kink_inside(x - 1e-9 * h, x + 2.0 * h)) {
      d = (-3.0 * at(i) + 4.0 * at(i + 1) - at(i + 2)) / (2.0 * h);
    } else {
      d = (at(i + 1) - at(i - 1)) / (2.0 * h);
    }
    out.left[i] = out.right[i] = d;
  }
  for (std::size_t k = 0; k < kinks.size(); ++k) {
    const double xi = kinks[k];
    const std::size_t node = idx(std::lround(xi / h));
    out.left[node] = kink_slopes[k].first;
    out.right[node] = kink_slopes[k].second;
    out.singular[node] = true;
    out.kink_location[node] = wrap(xi);
  }
  return out;
}

/// CSV with columns node, left, right, singular.
inline void write_csv(std::ostream& os, const DifferentialData& d) {
  os << "node,left,right,singular\n";
  for (std::size_t i = 0; i < d.size(); ++i)
    os << i << ',' << format_real(d.left[i]) << ',' << format_real(d.right[i]) << ','
       << (d.singular[i] ? 1 : 0) << '\n';
}

/// Contact set of u >= v and the shared-gradient Lipschitz bound on it.
struct ContactLipschitzResult {
  std::vector<std::size_t> contact;
  double max_derivative_gap = 0.0;
  double lipschitz = 0.0;
  double lipschitz_bound = 0.0;
  std::size_t worst_a = 0, worst_b = 0;
  Report report;
};

/// u semiconcave, v semiconvex, u >= v. On A = {u - v <= contact_tol} checks
/// |Du - Dv| <= deriv_tol and that Du restricted to A is 4C(1 + 10%)-Lipschitz.
inline ContactLipschitzResult contact_set_lipschitz_check(const GridFunction& u,
                                                          const GridFunction& v, double c,
                                                          double contact_tol, double deriv_tol,
                                                          double order_eps = 1e-9) {
  u.check_same_grid(v);
  const TorusGrid& g = u.grid();
  if (g.dim() != 1) throw Error("contact_set_lipschitz_check: only dim = 1 is supported");
  double worst_order = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) worst_order = std::max(worst_order, v[k] - u[k]);
  if (worst_order > order_eps)
    throw PreconditionError("contact_set_lipschitz_check: u >= v violated", worst_order);

  ContactLipschitzResult r;
  r.report.name = "contact_set_lipschitz";
  for (std::size_t k = 0; k < u.size(); ++k)
    if (u[k] - v[k] <= contact_tol) r.contact.push_back(k);
  const DifferentialData du = differential_data(u);
  const DifferentialData dv = differential_data(v);
  for (std::size_t k : r.contact)
    r.max_derivative_gap =
        std::max(r.max_derivative_gap, std::abs(du.derivative(k) - dv.derivative(k)));
  for (std::size_t a = 0; a < r.contact.size(); ++a)
    for (std::size_t b = a + 1; b < r.contact.size(); ++b) {
      std::size_t ia = r.contact[a], ib = r.contact[b];
      double dist = periodic_distance(g.coordinate(ia), g.coordinate(ib), 1);
      double q = std::abs(du.derivative(ia) - du.derivative(ib)) / dist;
      if (q > r.lipschitz) {
        r.lipschitz = q;
        r.worst_a = ia;
        r.worst_b = ib;
      }
    }
  r.lipschitz_bound = 4.0 * c * 1.1;
  r.report.expect_le("derivative agreement on contact set", r.max_derivative_gap, deriv_tol);
  r.report.expect_le("Lipschitz constant of shared gradient", r.lipschitz, r.lipschitz_bound);
  r.report.data["contact_nodes"] = r.contact.size();
  r.report.data["worst_pair"] = {r.worst_a, r.worst_b};
  return r;
}

}  // namespace wkam
