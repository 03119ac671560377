#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "wkam/action_kernel.hpp"
#include "wkam/dynamics.hpp"
#include "wkam/error.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/nonsmooth_calculus.hpp"
#include "wkam/report.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

/// Largest sup |T-_t u - u| over the given times.
inline double solution_residual(const GridFunction& u, const KernelLadder& ladder,
                                const std::vector<double>& times) {
  double r = 0.0;
  for (double t : times) r = std::max(r, sup_diff(t_minus(u, ladder, t), u));
  return r;
}

/// Default cut-time tolerance: 0.1 (dx + delta) Lip(u).
inline double default_tau_tol(const GridFunction& u, const KernelLadder& ladder) {
  return 0.1 * (u.grid().spacing() + ladder.base_step()) * u.lipschitz();
}

/// Threshold on B(T_max, .) separating the Aubry set from slowly leaving nodes:
/// 0.5 C dx^2 with C the semiconcavity constant of u, plus a rounding floor.
inline double default_aubry_tol(const GridFunction& u) {
  const double dx = u.grid().spacing();
  const double c = semiconcavity_constant(u).constant_estimate;
  return 0.5 * c * dx * dx + 1e-12 * (1.0 + std::max(std::abs(u.min()), std::abs(u.max())));
}

struct BarrierResult {
  SemigroupEvolution evolution;  // B(t, .) = u - T+_t u
  Report report;
};

/// B(t, .) at the given times, with the sign, monotonicity and commutator-identity checks.
/// Throws PreconditionError when u is not a discrete solution within tol.
inline BarrierResult barrier(const GridFunction& u, const KernelLadder& ladder, double tol,
                             std::vector<double> times = {}) {
  if (times.empty()) times = ladder.times();
  const double res = solution_residual(u, ladder, times);
  if (res > tol) throw PreconditionError("barrier: u fails the discrete solution test", res);

  BarrierResult r;
  r.evolution.tag = OperatorTag::t_plus;
  r.report.name = "barrier";
  double min_b = kInf, worst_monotone = 0.0, worst_identity = 0.0;
  for (double t : times) {
    GridFunction tp = t_plus(u, ladder, t);
    GridFunction b = u - tp;
    GridFunction comm = t_minus(tp, ladder, t) - t_plus(t_minus(u, ladder, t), ladder, t);
    min_b = std::min(min_b, b.min());
    worst_identity = std::max(worst_identity, sup_diff(b, comm));
    if (!r.evolution.snapshots.empty()) {
      const GridFunction& prev = r.evolution.snapshots.back();
      for (std::size_t k = 0; k < b.size(); ++k)
        worst_monotone = std::max(worst_monotone, prev[k] - b[k]);
    }
    r.evolution.push(t, std::move(b));
  }
  r.report.expect_le("solution residual", res, tol);
  r.report.expect_le("B >= 0 (negative part)", std::max(0.0, -min_b), 2.0 * tol);
  r.report.expect_le("B non-decreasing in t (worst decrease)", worst_monotone, 2.0 * tol);
  r.report.expect_le("B equals the commutator difference", worst_identity, 2.0 * tol);
  return r;
}

/// Per-node cut time, barrier snapshots and the derived sets of a weak KAM solution.
struct CutProfile {
  GridFunction u;
  SemigroupEvolution barrier;
  std::vector<double> tau;  // kInf for nodes that never fail before T_max
  std::vector<std::size_t> cut_set;
  std::vector<std::size_t> aubry_set;
  std::vector<PhasePoint> gstar;
  std::vector<PhasePoint> gsharp;
  double tol = 0.0;
  double aubry_tol = 0.0;
  double t_max = 0.0;
};

/// G* = reachable gradient pairs and G# = interior directions of corner intervals.
inline std::pair<std::vector<PhasePoint>, std::vector<PhasePoint>> graph_partition(
    const GridFunction& u, int per_corner = 16) {
  const TorusGrid& g = u.grid();
  if (g.dim() != 1) throw Error("graph_partition: only dim = 1 is supported");
  DifferentialData dd = differential_data(u);
  std::vector<PhasePoint> gstar, gsharp;
  for (std::size_t i = 0; i < dd.size(); ++i) {
    if (!dd.singular[i]) {
      gstar.push_back({g.coordinate(i)[0], dd.left[i]});
      continue;
    }
    const double x = dd.kink_location[i];
    auto [lo, hi] = dd.superdifferential(i);
    gstar.push_back({x, lo});
    gstar.push_back({x, hi});
    for (int k = 1; k <= per_corner; ++k)
      gsharp.push_back({x, lo + (hi - lo) * k / (per_corner + 1.0)});
  }
  return {std::move(gstar), std::move(gsharp)};
}

/// tau(x) = sup{t : B(t,x) <= tol}: coarse pass over ladder times, then per-node bisection
/// at multiples of delta. Nodes failing at delta form the cut set (tau = 0). Nodes passing
/// at T_max with B(T_max, x) <= aubry_tol form the Aubry set (tau = kInf); other nodes
/// passing at T_max get tau = T_max.
inline CutProfile cut_time_map(const GridFunction& u, const KernelLadder& ladder, double tol,
                               std::optional<double> aubry_tol = std::nullopt,
                               int bisection_levels = 6, int per_corner = 16) {
  const std::size_t n = u.size();
  const double d = ladder.base_step();
  CutProfile p{u,   {},  std::vector<double>(n, kInf), {}, {}, {}, {}, tol,
               aubry_tol.value_or(default_aubry_tol(u)), ladder.t_max()};
  p.barrier.tag = OperatorTag::t_plus;

  std::map<long, GridFunction> cache;
  auto b_at = [&](long steps) -> const GridFunction& {
    auto it = cache.find(steps);
    if (it == cache.end())
      it = cache.emplace(steps, u - t_plus(u, ladder, static_cast<double>(steps) * d)).first;
    return it->second;
  };

  std::vector<long> lo(n, 0), hi(n, -1);
  for (double t : ladder.times()) {
    const long s = std::lround(t / d);
    const GridFunction& b = b_at(s);
    p.barrier.push(t, b);
    for (std::size_t i = 0; i < n; ++i) {
      if (hi[i] >= 0) continue;
      if (b[i] <= tol) lo[i] = s; else hi[i] = s;
    }
  }
  for (int level = 0; level < bisection_levels; ++level) {
    for (std::size_t i = 0; i < n; ++i) {
      if (hi[i] < 0 || lo[i] == 0 || hi[i] - lo[i] < 2) continue;
      const long mid = (lo[i] + hi[i]) / 2;
      if (b_at(mid)[i] <= tol) lo[i] = mid; else hi[i] = mid;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (hi[i] < 0) {
      if (p.barrier.snapshots.back()[i] <= p.aubry_tol) {
        p.aubry_set.push_back(i);
      } else {
        p.tau[i] = p.t_max;
      }
      continue;
    }
    p.tau[i] = static_cast<double>(lo[i]) * d;
    if (lo[i] == 0) p.cut_set.push_back(i);
  }
  if (u.grid().dim() == 1) std::tie(p.gstar, p.gsharp) = graph_partition(u, per_corner);
  return p;
}

/// CSV with columns node, x, tau, then B at every recorded time.
inline void write_csv(std::ostream& os, const CutProfile& p) {
  const TorusGrid& g = p.u.grid();
  os << "node,x";
  if (g.dim() == 2) os << ",y";
  os << ",tau";
  for (double t : p.barrier.times) os << ",B_" << format_real(t);
  os << '\n';
  for (std::size_t i = 0; i < p.tau.size(); ++i) {
    Coord c = g.coordinate(i);
    os << i << ',' << format_real(c[0]);
    if (g.dim() == 2) os << ',' << format_real(c[1]);
    os << ',' << format_real(p.tau[i]);
    for (const auto& b : p.barrier.snapshots) os << ',' << format_real(b[i]);
    os << '\n';
  }
}

/// Nodes whose cut time lies below both neighbours by more than `slack`: the discrete
/// trace of a failure of upper semicontinuity. 1D only; empty otherwise.
inline std::vector<std::size_t> tau_isolated_dips(const CutProfile& p, double slack) {
  std::vector<std::size_t> out;
  const TorusGrid& g = p.u.grid();
  if (g.dim() != 1) return out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double l = p.tau[g.neighbor(i, 0, -1)], r = p.tau[g.neighbor(i, 0, 1)];
    if (p.tau[i] + slack < std::min(l, r)) out.push_back(i);
  }
  return out;
}

inline nlohmann::json summary_json(const CutProfile& p) {
  const TorusGrid& g = p.u.grid();
  nlohmann::json cut = nlohmann::json::array(), aubry = nlohmann::json::array();
  for (auto i : p.cut_set) cut.push_back({{"node", i}, {"x", g.coordinate(i)[0]}});
  for (auto i : p.aubry_set) aubry.push_back({{"node", i}, {"x", g.coordinate(i)[0]}});
  return {{"schema", 1},
          {"cut_nodes", cut},
          {"aubry_nodes", aubry},
          {"tolerance", p.tol},
          {"aubry_tolerance", p.aubry_tol},
          {"t_max", p.t_max},
          {"gsharp_samples", p.gsharp.size()},
          {"tau_isolated_dips", tau_isolated_dips(p, 2.0 * p.u.grid().spacing())}};
}

/// Cut time at a coordinate: the value at the nearest node.
inline double tau_at(const CutProfile& p, const Coord& x) { return p.tau[p.u.grid().nearest(x)]; }

namespace detail {

// G* samples in branch order: at a kink the left-limit slope closes the branch on the left
// and the right-limit slope opens the next one. joins[k] says sample k continues the
// branch of sample k-1; wrap_join says the last sample continues into the first.
struct BranchSamples {
  std::vector<PhasePoint> pts;
  std::vector<bool> joins;
  bool wrap_join = false;
};

inline BranchSamples branch_samples(const DifferentialData& dd, const TorusGrid& g) {
  BranchSamples b;
  const std::size_t n = dd.size();
  for (std::size_t i = 0; i < n; ++i) {
    b.joins.push_back(!b.pts.empty());
    if (!dd.singular[i]) {
      b.pts.push_back({g.coordinate(i)[0], dd.left[i]});
      continue;
    }
    b.pts.push_back({dd.kink_location[i], dd.left[i]});
    b.joins.push_back(false);
    b.pts.push_back({dd.kink_location[i], dd.right[i]});
  }
  b.wrap_join = !dd.singular[0] && !dd.singular[n - 1];
  return b;
}

// Marks every node between lifted positions a and b, plus the nodes nearest to both.
inline void cover_nodes(std::vector<bool>& mark, const TorusGrid& g, double a, double b) {
  const long n = g.n();
  const double dx = g.spacing();
  const double lo = std::min(a, b), hi = std::max(a, b);
  const long first = std::lround(std::ceil(lo / dx - 1e-9));
  const long last = std::lround(std::floor(hi / dx + 1e-9));
  for (long k = first; k <= last; ++k) mark[static_cast<std::size_t>(((k % n) + n) % n)] = true;
  mark[g.nearest({wrap(a), 0})] = true;
  mark[g.nearest({wrap(b), 0})] = true;
}

// Marks the nodes covered by the images of branch samples; consecutive images on the
// same branch are joined.
inline std::vector<bool> footprint(const BranchSamples& b, const std::vector<double>& img,
                                   const TorusGrid& g) {
  std::vector<bool> mark(g.size(), false);
  for (std::size_t k = 0; k < img.size(); ++k) {
    cover_nodes(mark, g, img[k], img[k]);
    if (k > 0 && b.joins[k]) cover_nodes(mark, g, img[k], img[k] + periodic_delta(img[k], img[k - 1]));
  }
  if (b.wrap_join && img.size() > 1)
    cover_nodes(mark, g, img.back(), img.back() + periodic_delta(img.back(), img.front()));
  return mark;
}

// Nodes covered by pi_x Phi^{-t} of G*. Backward flow is unstable transverse to graph(Du),
// so long flows are split into chunks and the momentum is reset to Du(x) between chunks,
// away from kinks.
inline std::vector<bool> backward_footprint(const CutProfile& p, const HamiltonianSpec& h,
                                            double t, double step) {
  const TorusGrid& g = p.u.grid();
  const std::size_t n = g.size();
  const double dx = g.spacing();
  DifferentialData dd = differential_data(p.u);
  BranchSamples bs = branch_samples(dd, g);
  std::vector<double> slope(n);
  for (std::size_t i = 0; i < n; ++i) slope[i] = dd.derivative(i);
  auto near_kink = [&](double x) {
    for (auto s : dd.singular_nodes())
      if (std::abs(periodic_delta(x, dd.kink_location[s])) <= 3.0 * dx) return true;
    return false;
  };
  auto slope_at = [&](double x) {
    double q = wrap(x) / dx;
    auto i0 = static_cast<std::size_t>(std::floor(q)) % n;
    double w = q - std::floor(q);
    return (1.0 - w) * slope[i0] + w * slope[(i0 + 1) % n];
  };
  const double chunk = 0.0625;
  std::vector<double> img(bs.pts.size());
  parallel_for(bs.pts.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      Coord x{bs.pts[k].x, 0}, mom{bs.pts[k].p, 0};
      for (double done = 0.0; done < t - 1e-12;) {
        const double span = std::min(chunk, t - done);
        auto arc = flow(h, x, mom, -span, step, Integrator::automatic, false);
        x = arc.back().x;
        mom = arc.back().p;
        done += span;
        if (!near_kink(x[0])) mom[0] = slope_at(x[0]);
      }
      img[k] = x[0];
    }
  });
  return footprint(bs, img, g);
}

}  // namespace detail

struct LevelSetResult {
  std::vector<bool> barrier_set;  // B(t,.) <= tol
  std::vector<bool> tau_set;      // tau >= t
  std::vector<bool> flow_set;     // pi_x Phi^{-t}(G*)
  Report report;
};

/// Compares {B(t,.) <= tol}, {tau >= t} and the backward footprint of G* at time t, allowing
/// `slack` cells per boundary point of {tau >= t}, and checks u+ < T+_t u < u on the
/// complement of {tau >= t}, where u+ = S+u shifted to agree with u on the Aubry set.
inline LevelSetResult level_set_identity_check(const CutProfile& p, const KernelLadder& ladder,
                                               double t, double step = 1e-3,
                                               double limit_tol = 1e-3, double slack = 2.0) {
  const GridFunction& u = p.u;
  const std::size_t n = u.size();
  t = ladder.snap(t);
  LevelSetResult r;
  r.report.name = "level_set_identity";
  GridFunction tp = t_plus(u, ladder, t);
  r.barrier_set.resize(n);
  r.tau_set.resize(n);
  const double set_tol = t >= p.t_max ? p.aubry_tol : p.tol;
  for (std::size_t i = 0; i < n; ++i) {
    r.barrier_set[i] = u[i] - tp[i] <= set_tol;
    r.tau_set[i] = p.tau[i] >= t - 1e-12;
    if (t >= p.t_max) r.tau_set[i] = p.tau[i] == kInf;
  }
  r.flow_set = detail::backward_footprint(p, ladder.spec(), t, step);
  auto diff = [&](const std::vector<bool>& a, const std::vector<bool>& b) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i) c += a[i] != b[i];
    return static_cast<double>(c);
  };
  std::size_t boundaries = 0;
  if (u.grid().dim() == 1)
    for (std::size_t i = 0; i < n; ++i) boundaries += r.tau_set[i] != r.tau_set[(i + 1) % n];
  const double allowed = slack * static_cast<double>(std::max<std::size_t>(1, boundaries));
  r.report.expect_le("|{B<=tol} xor {tau>=t}| (cells)", diff(r.barrier_set, r.tau_set), allowed);
  r.report.expect_le("|{tau>=t} xor flow footprint| (cells)", diff(r.tau_set, r.flow_set),
                     allowed);
  r.report.expect_le("|{B<=tol} xor flow footprint| (cells)", diff(r.barrier_set, r.flow_set),
                     allowed);
  r.report.data["boundary_points"] = boundaries;

  if (!p.aubry_set.empty()) {
    LimitResult lim = weak_kam_limit(u, ladder, LimitDirection::plus, limit_tol);
    const GridFunction& s_plus = lim.value;
    const std::size_t a = p.aubry_set.front();
    GridFunction u_plus = s_plus + (u[a] - s_plus[a]);
    double lower = kInf, upper = kInf;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (r.tau_set[i]) continue;
      ++count;
      lower = std::min(lower, tp[i] - u_plus[i]);
      upper = std::min(upper, u[i] - tp[i]);
    }
    // Once T+_t u has reached its limit the lower gap is below resolution.
    if (count > 0 && t < lim.t) r.report.expect_gt("min (T+_t u - u+) off {tau>=t}", lower, 0.0);
    if (count > 0) {
      r.report.expect_gt("min (u - T+_t u) off {tau>=t}", upper, 0.0);
    }
    r.report.data["complement_nodes"] = count;
  }
  r.report.data["t"] = t;
  return r;
}

enum class BilipVariant { gstar, gsharp };

struct BilipResult {
  double forward = 0.0;  // sup |F(a) - F(b)| / |a - b|
  double inverse = 0.0;  // sup |a - b| / |F(a) - F(b)|
  double target_distance = 0.0;
  std::size_t points = 0;
  Report report;
};

/// Empirical Lipschitz constants of F(x) = Phi^t(x, p(x)) and its inverse.
/// gstar: x in {tau >= t}, p = Du(x), F lands in G*.
/// gsharp: x in {tau < t}, p = D T+_t u(x), F lands in G#.
inline BilipResult bilip_diagnostic(const CutProfile& p, const KernelLadder& ladder, double t,
                                    BilipVariant variant = BilipVariant::gstar,
                                    double step = 1e-3) {
  const GridFunction& u = p.u;
  const TorusGrid& g = u.grid();
  if (g.dim() != 1) throw Error("bilip_diagnostic: only dim = 1 is supported");
  const HamiltonianSpec& h = ladder.spec();
  t = ladder.snap(t);
  DifferentialData du = differential_data(u);
  std::optional<DifferentialData> dt;
  if (variant == BilipVariant::gsharp) dt = differential_data(t_plus(u, ladder, t));

  std::vector<double> xs;
  std::vector<PhasePoint> img;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const bool in = p.tau[i] >= t - 1e-12;
    if (variant == BilipVariant::gstar ? (!in || du.singular[i]) : in) continue;
    double x = g.coordinate(i)[0];
    double mom = variant == BilipVariant::gstar ? du.left[i] : dt->derivative(i);
    auto arc = flow(h, Coord{x, 0}, Coord{mom, 0}, t, step, Integrator::automatic, false);
    xs.push_back(x);
    img.push_back({arc.back().x[0], arc.back().p[0]});
  }

  BilipResult r;
  r.report.name = variant == BilipVariant::gstar ? "bilip_gstar" : "bilip_gsharp";
  r.points = xs.size();
  for (std::size_t a = 0; a < xs.size(); ++a)
    for (std::size_t b = a + 1; b < xs.size(); ++b) {
      double dxy = std::abs(periodic_delta(xs[a], xs[b]));
      double dx = periodic_delta(wrap(img[a].x), wrap(img[b].x));
      double dp = img[a].p - img[b].p;
      double dimg = std::sqrt(dx * dx + dp * dp);
      r.forward = std::max(r.forward, dimg / dxy);
      r.inverse = dimg > 0.0 ? std::max(r.inverse, dxy / dimg) : kInf;
    }
  // Distance of the images to the target set.
  auto [gstar, gsharp] = graph_partition(u, 64);
  const auto& target = variant == BilipVariant::gstar ? gstar : gsharp;
  for (const auto& q : img) {
    double best = kInf;
    for (const auto& s : target) {
      double dx = periodic_delta(wrap(q.x), s.x), dp = q.p - s.p;
      best = std::min(best, std::sqrt(dx * dx + dp * dp));
    }
    if (!target.empty()) r.target_distance = std::max(r.target_distance, best);
  }
  r.report.expect("forward constant finite", std::isfinite(r.forward), r.forward, kInf);
  r.report.expect("inverse constant finite", std::isfinite(r.inverse), r.inverse, kInf);
  r.report.data["points"] = r.points;
  r.report.data["target_distance"] = json_real(r.target_distance);
  r.report.data["t"] = t;
  return r;
}

}  // namespace wkam
