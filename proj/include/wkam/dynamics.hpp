#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "wkam/action_kernel.hpp"
#include "wkam/error.hpp"
#include "wkam/hamiltonian.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/nonsmooth_calculus.hpp"
#include "wkam/report.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

/// Sample (s, x(s), p(s)) of a trajectory. x is lifted to the universal cover.
struct ArcSample {
  double s;
  Coord x;
  Coord p;
};

/// Sampled trajectory of the Hamiltonian flow, or a refined minimizer, with its dual arc.
struct CharacteristicArc {
  std::vector<ArcSample> samples;
  double step = 0.0;
  double energy_drift = 0.0;
  bool refined = true;  // false for an unrefined broken path
  int dim = 1;

  const ArcSample& front() const { return samples.front(); }
  const ArcSample& back() const { return samples.back(); }
  /// Position of a sample reduced to the torus.
  Coord wrapped(std::size_t k) const {
    return {wrap(samples[k].x[0]), dim == 2 ? wrap(samples[k].x[1]) : 0.0};
  }
  /// Winding number of the endpoint relative to the start, per axis.
  std::array<long, 2> winding() const {
    std::array<long, 2> w{0, 0};
    for (int a = 0; a < dim; ++a)
      w[a] = std::lround(std::floor(back().x[a]) - std::floor(front().x[a]));
    return w;
  }
};

enum class Integrator {
  automatic,         ///< composition4 for mechanical, implicit_midpoint otherwise
  verlet,            ///< Stormer-Verlet, second order (mechanical only)
  composition4,      ///< triple-jump composition of Stormer-Verlet, fourth order
  implicit_midpoint  ///< any Hamiltonian, second order
};

namespace detail {

inline void verlet_step(const HamiltonianSpec& h, Coord& x, Coord& p, double dt) {
  const int d = h.dim();
  Coord g = h.potential().gradient(x);
  for (int a = 0; a < d; ++a) p[a] -= 0.5 * dt * g[a];
  for (int a = 0; a < d; ++a) x[a] += dt * p[a];
  g = h.potential().gradient(x);
  for (int a = 0; a < d; ++a) p[a] -= 0.5 * dt * g[a];
}

inline void composition4_step(const HamiltonianSpec& h, Coord& x, Coord& p, double dt) {
  static const double cbrt2 = std::cbrt(2.0);
  static const double w1 = 1.0 / (2.0 - cbrt2);
  static const double w0 = -cbrt2 / (2.0 - cbrt2);
  verlet_step(h, x, p, w1 * dt);
  verlet_step(h, x, p, w0 * dt);
  verlet_step(h, x, p, w1 * dt);
}

inline void implicit_midpoint_step(const HamiltonianSpec& h, Coord& x, Coord& p, double dt) {
  const int d = h.dim();
  Coord xn = x, pn = p;
  for (int it = 0; it < 100; ++it) {
    Coord xm{0.5 * (x[0] + xn[0]), 0.5 * (x[1] + xn[1])};
    Coord pm{0.5 * (p[0] + pn[0]), 0.5 * (p[1] + pn[1])};
    Coord v = hamiltonian_dp(h, xm, pm);
    Coord f = hamiltonian_dx(h, xm, pm);
    double change = 0.0;
    for (int a = 0; a < d; ++a) {
      double nx = x[a] + dt * v[a], np = p[a] - dt * f[a];
      change = std::max({change, std::abs(nx - xn[a]), std::abs(np - pn[a])});
      xn[a] = nx;
      pn[a] = np;
    }
    if (change <= 1e-15 * (1.0 + std::abs(xn[0]) + std::abs(pn[0]))) break;
  }
  x = xn;
  p = pn;
}

}  // namespace detail

/// Integrates the Hamiltonian flow from (x0, p0) over signed time t with step about h.
inline CharacteristicArc flow(const HamiltonianSpec& h, const Coord& x0, const Coord& p0, double t,
                              double step, Integrator integ = Integrator::automatic,
                              bool keep_samples = true) {
  if (!(step > 0.0)) throw Error("flow: step must be positive");
  const double count = std::ceil(std::abs(t) / step - 1e-9);
  if (count > 1e7) throw Error("flow: step count exceeds 1e7");
  if (integ == Integrator::automatic)
    integ = h.kind() == HamiltonianKind::mechanical ? Integrator::composition4
                                                    : Integrator::implicit_midpoint;
  if (h.kind() != HamiltonianKind::mechanical && integ != Integrator::implicit_midpoint)
    throw UnsupportedKind("flow: splitting integrators need a mechanical Hamiltonian");
  const auto steps = static_cast<long>(std::max(0.0, count));
  const double dt = steps > 0 ? t / steps : 0.0;

  CharacteristicArc arc;
  arc.dim = h.dim();
  arc.step = std::abs(dt);
  Coord x = x0, p = p0;
  const double e0 = hamiltonian_value(h, x, p);
  arc.samples.push_back({0.0, x, p});
  for (long k = 1; k <= steps; ++k) {
    switch (integ) {
      case Integrator::verlet: detail::verlet_step(h, x, p, dt); break;
      case Integrator::composition4: detail::composition4_step(h, x, p, dt); break;
      default: detail::implicit_midpoint_step(h, x, p, dt); break;
    }
    arc.energy_drift = std::max(arc.energy_drift, std::abs(hamiltonian_value(h, x, p) - e0));
    if (keep_samples || k == steps) arc.samples.push_back({k * dt, x, p});
  }
  return arc;
}

/// Action of the arc, integral of L(x, H_p(x,p)) + c[H] by the composite trapezoid rule
/// over samples ordered by time.
inline double arc_action(const CharacteristicArc& arc, const HamiltonianSpec& h) {
  std::vector<const ArcSample*> order;
  for (const auto& s : arc.samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->s < b->s; });
  auto lag = [&](const ArcSample& s) {
    Coord v = hamiltonian_dp(h, s.x, s.p);
    return s.p[0] * v[0] + (h.dim() == 2 ? s.p[1] * v[1] : 0.0) - hamiltonian_value(h, s.x, s.p);
  };
  double acc = 0.0;
  for (std::size_t k = 1; k < order.size(); ++k)
    acc += 0.5 * (order[k]->s - order[k - 1]->s) * (lag(*order[k]) + lag(*order[k - 1]));
  const double span = order.back()->s - order.front()->s;
  return acc + h.critical_value() * span;
}

/// u(gamma(b)) - u(gamma(a)) - integral of L + c over [a, b]. Nonpositive up to
/// discretization for subsolutions; zero on calibrated arcs.
inline double calibration_defect(const GridFunction& u, const CharacteristicArc& arc,
                                 const HamiltonianSpec& h) {
  auto first = std::min_element(arc.samples.begin(), arc.samples.end(),
                                [](auto& a, auto& b) { return a.s < b.s; });
  auto last = std::max_element(arc.samples.begin(), arc.samples.end(),
                               [](auto& a, auto& b) { return a.s < b.s; });
  return interpolate(u, last->x) - interpolate(u, first->x) - arc_action(arc, h);
}

/// Arc from a broken path of straight segments, momenta set to the segment velocities.
inline CharacteristicArc broken_path_arc(const std::vector<PathVertex>& path, int dim) {
  CharacteristicArc arc;
  arc.dim = dim;
  arc.refined = false;
  for (std::size_t k = 0; k < path.size(); ++k) {
    const std::size_t a = k + 1 < path.size() ? k : k - 1;
    double dt = path[a + 1].t - path[a].t;
    Coord v{(path[a + 1].x[0] - path[a].x[0]) / dt, (path[a + 1].x[1] - path[a].x[1]) / dt};
    arc.samples.push_back({path[k].t, path[k].x, v});
  }
  return arc;
}

struct RefineOptions {
  double step = 1e-3;
  int max_iterations = 50;
  double tolerance = 1e-11;
};

/// Refines a relay path into a smooth minimizer with the same (lifted) endpoints.
///
/// Newton iteration on the discrete Euler-Lagrange equations of the trapezoid discrete
/// Lagrangian L_d(q, q') = dt (|q' - q|^2 / (2 dt^2) - (V(q) + V(q')) / 2), whose flow map
/// is Stormer-Verlet. Endpoints are fixed by construction. Mechanical Hamiltonians only.
/// On failure returns the broken path with refined = false.
inline CharacteristicArc minimizer_refine(const std::vector<PathVertex>& path,
                                          const HamiltonianSpec& h,
                                          const RefineOptions& opt = RefineOptions{}) {
  if (h.kind() != HamiltonianKind::mechanical)
    throw UnsupportedKind("minimizer_refine: mechanical Hamiltonians only");
  if (path.size() < 2) throw Error("minimizer_refine: path needs two vertices");
  const int d = h.dim();
  const double t = path.back().t - path.front().t;
  const auto m = static_cast<long>(std::max(2.0, std::ceil(t / opt.step - 1e-9)));
  const double dt = t / m;

  // Initial guess: the broken path sampled at the uniform times.
  std::vector<Coord> q(m + 1);
  std::size_t seg = 0;
  for (long k = 0; k <= m; ++k) {
    double s = path.front().t + k * dt;
    while (seg + 2 < path.size() && path[seg + 1].t < s) ++seg;
    double w = (s - path[seg].t) / (path[seg + 1].t - path[seg].t);
    w = std::clamp(w, 0.0, 1.0);
    for (int a = 0; a < 2; ++a) q[k][a] = (1 - w) * path[seg].x[a] + w * path[seg + 1].x[a];
  }
  q.front() = path.front().x;
  q.back() = path.back().x;

  auto residual = [&](const std::vector<Coord>& qq, std::vector<Coord>& r) {
    double norm = 0.0;
    for (long k = 1; k < m; ++k) {
      Coord g = h.potential().gradient(qq[k]);
      for (int a = 0; a < d; ++a) {
        r[k][a] = (2.0 * qq[k][a] - qq[k - 1][a] - qq[k + 1][a]) / dt - dt * g[a];
        norm = std::max(norm, std::abs(r[k][a]));
      }
    }
    return norm;
  };

  std::vector<Coord> r(m + 1, Coord{0, 0}), delta(m + 1, Coord{0, 0}), trial;
  std::vector<double> cprime(m + 1), dprime(m + 1);
  double norm = residual(q, r);
  bool ok = false;
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (norm <= opt.tolerance) { ok = true; break; }
    // Per-axis tridiagonal solve: diag 2/dt - dt V_aa, off-diagonals -1/dt.
    for (int a = 0; a < d; ++a) {
      const double off = -1.0 / dt;
      for (long k = 1; k < m; ++k) {
        double diag = 2.0 / dt - dt * h.potential().hessian_diagonal(q[k])[a];
        double rhs = -r[k][a];
        if (k == 1) {
          cprime[k] = off / diag;
          dprime[k] = rhs / diag;
        } else {
          double den = diag - off * cprime[k - 1];
          cprime[k] = off / den;
          dprime[k] = (rhs - off * dprime[k - 1]) / den;
        }
      }
      delta[m - 1][a] = dprime[m - 1];
      for (long k = m - 2; k >= 1; --k) delta[k][a] = dprime[k] - cprime[k] * delta[k + 1][a];
    }
    double lambda = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 20; ++ls) {
      trial = q;
      for (long k = 1; k < m; ++k)
        for (int a = 0; a < d; ++a) trial[k][a] += lambda * delta[k][a];
      std::vector<Coord> rt(m + 1, Coord{0, 0});
      double nt = residual(trial, rt);
      if (std::isfinite(nt) && nt < norm) {
        q.swap(trial);
        r.swap(rt);
        norm = nt;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) break;
  }
  if (!ok && norm <= opt.tolerance) ok = true;
  if (!ok) return broken_path_arc(path, d);

  CharacteristicArc arc;
  arc.dim = d;
  arc.step = dt;
  for (long k = 0; k <= m; ++k) {
    Coord p{0, 0};
    if (k < m) {
      Coord g = h.potential().gradient(q[k]);
      for (int a = 0; a < d; ++a) p[a] = (q[k + 1][a] - q[k][a]) / dt + 0.5 * dt * g[a];
    } else {
      Coord g = h.potential().gradient(q[m]);
      for (int a = 0; a < d; ++a) p[a] = (q[m][a] - q[m - 1][a]) / dt - 0.5 * dt * g[a];
    }
    arc.samples.push_back({path.front().t + k * dt, q[k], p});
  }
  const double e0 = hamiltonian_value(h, q[0], arc.samples[0].p);
  for (const auto& s : arc.samples)
    arc.energy_drift = std::max(arc.energy_drift, std::abs(hamiltonian_value(h, s.x, s.p) - e0));
  return arc;
}

/// max |H(x(s), p(s))| along an arc (distance of the arc from the critical energy level).
inline double max_abs_energy(const CharacteristicArc& arc, const HamiltonianSpec& h) {
  double e = 0.0;
  for (const auto& s : arc.samples) e = std::max(e, std::abs(hamiltonian_value(h, s.x, s.p)));
  return e;
}

/// CSV with columns s, x[, y], p[, q], H.
inline void write_csv(std::ostream& os, const CharacteristicArc& arc, const HamiltonianSpec& h) {
  os << (arc.dim == 1 ? "s,x,p,H\n" : "s,x,y,px,py,H\n");
  for (const auto& s : arc.samples) {
    os << format_real(s.s) << ',' << format_real(s.x[0]) << ',';
    if (arc.dim == 2) os << format_real(s.x[1]) << ',';
    os << format_real(s.p[0]) << ',';
    if (arc.dim == 2) os << format_real(s.p[1]) << ',';
    os << format_real(hamiltonian_value(h, s.x, s.p)) << '\n';
  }
}

/// Point (x, p) of a 1D graph in phase space.
struct PhasePoint {
  double x;
  double p;
};

/// Samples graph(D+ phi): one point per smooth node; at kinks the endpoints of D+ plus
/// `per_corner` interior points, all placed at the kink location.
inline std::vector<PhasePoint> sample_superdifferential_graph(const DifferentialData& dd,
                                                              const TorusGrid& g,
                                                              int per_corner = 16) {
  std::vector<PhasePoint> pts;
  for (std::size_t i = 0; i < dd.size(); ++i) {
    if (!dd.singular[i]) {
      pts.push_back({g.coordinate(i)[0], dd.left[i]});
      continue;
    }
    auto [lo, hi] = dd.superdifferential(i);
    const double x = dd.kink_location[i];
    for (int k = 0; k <= per_corner + 1; ++k)
      pts.push_back({x, lo + (hi - lo) * k / (per_corner + 1.0)});
  }
  return pts;
}

/// Flows each phase point by Phi_H^t (1D) and returns the endpoints with x wrapped.
inline std::vector<PhasePoint> flow_points(const HamiltonianSpec& h,
                                           const std::vector<PhasePoint>& pts, double t,
                                           double step) {
  std::vector<PhasePoint> out(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    auto arc = flow(h, Coord{pts[k].x, 0}, Coord{pts[k].p, 0}, t, step, Integrator::automatic,
                    false);
    out[k] = {wrap(arc.back().x[0]), arc.back().p[0]};
  }
  return out;
}

/// sup over points of the Euclidean distance (x periodic) to the closed polyline through
/// (x_i, slope_i).
inline double one_sided_hausdorff(const std::vector<PhasePoint>& pts, const TorusGrid& g,
                                  const std::vector<double>& slope) {
  const int n = g.n();
  const double dx = g.spacing();
  double worst = 0.0;
  for (const auto& q : pts) {
    double best = kInf;
    for (int i = 0; i < n; ++i) {
      double ax = periodic_delta(q.x, i * dx);  // segment start relative to q
      double ay = slope[i] - q.p;
      double bx = ax + dx;
      double by = slope[(i + 1) % n] - q.p;
      double ex = bx - ax, ey = by - ay;
      double s = std::clamp(-(ax * ex + ay * ey) / (ex * ex + ey * ey), 0.0, 1.0);
      double cx = ax + s * ex, cy = ay + s * ey;
      best = std::min(best, std::sqrt(cx * cx + cy * cy));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

/// First time at which the backward flow of graph(D phi) stops being a graph over the
/// torus (neighboring sample points swap order): the first shock of the backward
/// characteristics. Returns kInf if none occurs before t_max.
inline double first_crossing_time(const GridFunction& phi, const HamiltonianSpec& h, double t_max,
                                  double step) {
  const TorusGrid& g = phi.grid();
  if (g.dim() != 1) throw Error("first_crossing_time: only dim = 1 is supported");
  DifferentialData dd = differential_data(phi);
  const std::size_t n = g.size();
  std::vector<Coord> x(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = {g.coordinate(i)[0], 0};
    p[i] = {dd.derivative(i), 0};
  }
  const auto steps = static_cast<long>(std::ceil(t_max / step));
  for (long k = 1; k <= steps; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (h.kind() == HamiltonianKind::mechanical)
        detail::composition4_step(h, x[i], p[i], -step);
      else
        detail::implicit_midpoint_step(h, x[i], p[i], -step);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double next = x[(i + 1) % n][0] + (i + 1 == n ? 1.0 : 0.0);
      if (next <= x[i][0]) return k * step;
    }
  }
  return kInf;
}

struct GraphEvolutionResult {
  double distance = 0.0;
  bool gradient_graph = true;  // false when t lies beyond the supplied tau_1 estimate
  std::size_t samples = 0;
  Report report;
};

/// One-sided Hausdorff distance from Phi^{-t}(graph D+phi) to graph(D T+_t phi), 1D.
/// With per_corner = 0 only the D* endpoints of corner intervals are flowed. Nodes within
/// `exclusion` of a kink of phi are skipped as starting points.
inline GraphEvolutionResult graph_evolution_check(const GridFunction& phi,
                                                  const KernelLadder& ladder, double t,
                                                  double tol, double tau1 = kInf,
                                                  int per_corner = 16, double exclusion = 0.0,
                                                  double step = 1e-4) {
  const TorusGrid& g = phi.grid();
  if (g.dim() != 1) throw Error("graph_evolution_check: only dim = 1 is supported");
  GraphEvolutionResult r;
  r.report.name = "graph_evolution";
  DifferentialData dd = differential_data(phi);
  std::vector<PhasePoint> pts = sample_superdifferential_graph(dd, g, per_corner);
  if (exclusion > 0.0) {
    std::vector<double> kinks;
    for (auto i : dd.singular_nodes()) kinks.push_back(dd.kink_location[i]);
    std::erase_if(pts, [&](const PhasePoint& q) {
      for (double k : kinks)
        if (std::abs(periodic_delta(q.x, k)) <= exclusion) return true;
      return false;
    });
  }
  r.samples = pts.size();
  auto moved = flow_points(ladder.spec(), pts, -t, step);
  GridFunction tp = t_plus(phi, ladder, t);
  std::vector<double> slope(g.size());
  const double h2 = 2.0 * g.spacing();
  for (std::size_t i = 0; i < g.size(); ++i)
    slope[i] = (tp[g.neighbor(i, 0, 1)] - tp[g.neighbor(i, 0, -1)]) / h2;
  r.distance = one_sided_hausdorff(moved, g, slope);
  r.gradient_graph = t <= tau1;
  if (!r.gradient_graph) r.report.data["diagnostic"] = "graph no longer a gradient graph";
  r.report.expect_le("one-sided Hausdorff distance", r.distance, tol);
  r.report.data["samples"] = r.samples;
  r.report.data["t"] = t;
  return r;
}

}  // namespace wkam
