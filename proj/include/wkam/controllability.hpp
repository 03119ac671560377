#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "wkam/action_kernel.hpp"
#include "wkam/cut_locus.hpp"
#include "wkam/dynamics.hpp"
#include "wkam/error.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/nonsmooth_calculus.hpp"
#include "wkam/report.hpp"

namespace wkam {

namespace detail {

// Smallest |f| over [c - w, c + w]: a 9-point scan, then golden-section refinement of f
// around the best scan point unless the scan minimum already exceeds `hopeless`.
// f0 = |f(c)|.
template <class F>
double window_minimum(F&& f, double c, double w, double f0, double hopeless = kInf) {
  double best = f0, at = c;
  for (int k = -4; k <= 4; ++k) {
    if (k == 0) continue;
    const double v = std::abs(f(c + w * k / 4.0));
    if (v < best) best = v, at = c + w * k / 4.0;
  }
  if (best > hopeless) return best;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = at - w / 4.0, b = at + w / 4.0;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = std::abs(f(x1)), f2 = std::abs(f(x2));
  for (int it = 0; it < 30; ++it) {
    if (f1 < f2) {
      b = x2, x2 = x1, f2 = f1;
      x1 = b - phi * (b - a), f1 = std::abs(f(x1));
    } else {
      a = x1, x1 = x2, f1 = f2;
      x2 = a + phi * (b - a), f2 = std::abs(f(x2));
    }
  }
  return std::min({best, f1, f2});
}

}  // namespace detail

struct AttainabilityResult {
  double residual[3] = {0.0, 0.0, 0.0};
  double tolerance[3] = {0.0, 0.0, 0.0};
  bool verdict[3] = {false, false, false};
  std::size_t samples = 0;
  std::size_t worst_node = 0;
  bool agree() const { return verdict[0] == verdict[1] && verdict[1] == verdict[2]; }
  bool attainable() const { return verdict[0] && verdict[1] && verdict[2]; }
  Report report;
};

/// The three equivalent conditions for phi to be attained at time t0, evaluated separately:
/// (1) T-_{t0} T+_{t0} phi = phi through the ladder,
/// (2) phi = T-_{t0} psi for psi = T+_{t0} phi, through the single composed kernel at t0,
/// (3) for every node x and p in D*phi(x), the backward arc gamma from (x, p) satisfies
///     T+_{t0}phi(gamma(-t0)) = phi(x) - integral of L along gamma.
/// The report's own pass flag is the agreement of the three verdicts.
inline AttainabilityResult attainability_check(const GridFunction& phi, const KernelLadder& ladder,
                                               double t0, double tol, double step = 1e-3,
                                               double window_cells = 2.0) {
  const TorusGrid& g = phi.grid();
  if (g.dim() != 1) throw Error("attainability_check: only dim = 1 is supported");
  t0 = ladder.snap(t0);
  AttainabilityResult r;
  r.report.name = "attainability";
  for (double& t : r.tolerance) t = tol;

  r.residual[0] = sup_diff(t_minus(t_plus(phi, ladder, t0), ladder, t0), phi);

  auto k = ladder.kernel_at(t0);
  GridFunction psi = t_plus(phi, *k);
  r.residual[1] = sup_diff(t_minus(psi, *k), phi);

  const HamiltonianSpec& h = ladder.spec();
  DifferentialData dd = differential_data(phi);
  struct Sample {
    std::size_t node;
    double x, p;
  };
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < dd.size(); ++i) {
    double x = dd.singular[i] ? dd.kink_location[i] : g.coordinate(i)[0];
    for (double p : dd.reachable(i)) samples.push_back({i, x, p});
  }
  r.samples = samples.size();
  // Node slopes of phi are known only to about dx * C, and backward flow magnifies the
  // error. R(p) >= 0 vanishes at the true reachable gradient, so when R at the node slope
  // exceeds tol / 10, R is minimized over p within the slope uncertainty.
  const double window = std::max(window_cells * g.spacing() * semiconcavity_constant(phi).constant_estimate,
                                 1e-3);
  std::vector<double> res(samples.size());
  parallel_for(samples.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const double x = samples[s].x;
      const double value = interpolate(phi, Coord{x, 0});
      auto residual = [&](double p) {
        auto arc = flow(h, Coord{x, 0}, Coord{p, 0}, -t0, step);
        return interpolate(psi, Coord{wrap(arc.back().x[0]), 0}) - (value - arc_action(arc, h));
      };
      res[s] = residual(samples[s].p);
      if (std::abs(res[s]) <= 0.1 * tol) continue;
      res[s] = detail::window_minimum(residual, samples[s].p, window, std::abs(res[s]), 10.0 * tol);
    }
  });
  for (std::size_t s = 0; s < res.size(); ++s)
    if (std::abs(res[s]) > r.residual[2]) {
      r.residual[2] = std::abs(res[s]);
      r.worst_node = samples[s].node;
    }

  const char* names[3] = {"(1) T-T+ phi = phi", "(2) phi = T- psi for psi = T+ phi",
                          "(3) D* characteristics calibrated back to -t0"};
  nlohmann::json conds = nlohmann::json::array();
  for (int c = 0; c < 3; ++c) {
    r.verdict[c] = r.residual[c] <= r.tolerance[c];
    conds.push_back(to_json(Check{names[c], r.residual[c], r.tolerance[c], r.verdict[c]}));
  }
  r.report.expect("three verdicts agree", r.agree());
  r.report.data["conditions"] = conds;
  r.report.data["t0"] = t0;
  r.report.data["attainable"] = r.attainable();
  r.report.data["d_star_samples"] = r.samples;
  r.report.data["momentum_window"] = window;
  r.report.data["worst_node"] = r.worst_node;
  return r;
}

/// (phi, T+_{t0} phi), after checking that phi is attained at t0.
inline KantorovichPair kantorovich_pair(const GridFunction& phi, const KernelLadder& ladder,
                                        double t0, double tol) {
  t0 = ladder.snap(t0);
  GridFunction psi = t_plus(phi, ladder, t0);
  const double res = sup_diff(t_minus(psi, ladder, t0), phi);
  if (res > tol) throw PreconditionError("kantorovich_pair: phi is not attained at t0", res);
  KantorovichPair p{phi, psi, t0, res, 0.0};
  p.residual_psi = sup_diff(t_plus(phi, ladder, t0), psi);
  return p;
}

enum class ContactVariant { A, A_psi, A_star };

/// Space-time node sets over the slices t_k = -t0 + k dt, k = 0..M.
struct ContactRegion {
  double t0 = 0.0;
  std::vector<double> times;
  std::vector<std::vector<bool>> in_a, in_a_psi, in_a_star;  // [slice][node]
  std::vector<std::size_t> tie_nodes;  // nodes whose backward D* arcs leave in two directions
};

struct EvolutionTriple {
  SemigroupEvolution u_breve;  // T+_{-t} phi
  SemigroupEvolution u;        // T-_{t0+t} T+_{t0} phi
  SemigroupEvolution u_psi;    // T-_{t0+t} psi
};

struct ContactResult {
  EvolutionTriple evolution;
  ContactRegion region;
  std::vector<ContactLipschitzResult> slices;  // interior slices with a non-empty contact set
  double chain_violation = 0.0;                // max of (u_breve - u) and (u - u_psi)
  std::size_t inclusion_violations = 0;        // A* cells farther than the slack from A_psi
  double worst_derivative_gap = 0.0;
  double worst_lipschitz_ratio = 0.0;          // Lip(Du on A) / (4C(1 + 10%))
  Report report;
};

struct ContactOptions {
  int slices = 16;
  double contact_tol = 1e-3;           // A and A_psi; absorbs the discrete solution defect
  double gradient_contact_tol = 1e-5;  // core of A where gradients are compared
  double deriv_tol = 5e-2;
  double chain_tol = 1e-9;
  std::size_t slack_cells = 2;
  double step = 1e-3;
};

/// Evolution triple and contact sets on [-t0, 0], computed with one slice kernel K_dt
/// applied repeatedly so that u_breve <= u holds exactly:
///   u_breve_k = (T+_dt)^{M-k} phi,  u_k = (T-_dt)^k u_breve_0,  u_psi_k = (T-_dt)^k psi.
/// psi defaults to u_breve_0 = T+_{t0} phi. Runs the contact-set gradient check on every
/// interior slice.
inline ContactResult contact_sets(const GridFunction& phi, const std::optional<GridFunction>& psi_in,
                                  const KernelLadder& ladder, double t0,
                                  const ContactOptions& opt = ContactOptions{}) {
  const TorusGrid& g = phi.grid();
  if (g.dim() != 1) throw Error("contact_sets: only dim = 1 is supported");
  const int m = opt.slices;
  const double dt = ladder.snap(t0 / m);
  t0 = dt * m;
  auto k = ladder.kernel_at(dt);

  std::vector<GridFunction> ub(m + 1, phi), uu(m + 1, phi), up(m + 1, phi);
  for (int i = m - 1; i >= 0; --i) ub[i] = t_plus(ub[i + 1], *k);
  uu[0] = ub[0];
  up[0] = psi_in.value_or(ub[0]);
  for (int i = 1; i <= m; ++i) {
    uu[i] = t_minus(uu[i - 1], *k);
    up[i] = t_minus(up[i - 1], *k);
  }

  ContactResult r;
  r.report.name = "contact_sets";
  r.region.t0 = t0;
  r.evolution.u_breve.tag = OperatorTag::t_plus;
  r.evolution.u.tag = OperatorTag::t_minus_t_plus;
  r.evolution.u_psi.tag = OperatorTag::t_minus;
  const std::size_t n = g.size();
  for (int i = 0; i <= m; ++i) {
    const double t = -t0 + i * dt;
    r.region.times.push_back(t);
    r.evolution.u_breve.push(t + t0, ub[i]);
    r.evolution.u.push(t + t0, uu[i]);
    r.evolution.u_psi.push(t + t0, up[i]);
    std::vector<bool> a(n), ap(n);
    for (std::size_t j = 0; j < n; ++j) {
      r.chain_violation = std::max({r.chain_violation, ub[i][j] - uu[i][j], uu[i][j] - up[i][j]});
      a[j] = uu[i][j] - ub[i][j] <= opt.contact_tol;
      ap[j] = a[j] && up[i][j] - uu[i][j] <= opt.contact_tol;
    }
    r.region.in_a.push_back(std::move(a));
    r.region.in_a_psi.push_back(std::move(ap));
  }

  // A*: positions at each slice of the backward D* arcs launched at time 0.
  const HamiltonianSpec& h = ladder.spec();
  DifferentialData dd = differential_data(phi);
  detail::BranchSamples bs = detail::branch_samples(dd, g);
  std::vector<std::vector<double>> img(m + 1, std::vector<double>(bs.pts.size()));
  parallel_for(bs.pts.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      Coord x{bs.pts[s].x, 0}, mom{bs.pts[s].p, 0};
      img[m][s] = x[0];
      for (int i = m - 1; i >= 0; --i) {
        auto arc = flow(h, x, mom, -dt, opt.step, Integrator::automatic, false);
        x = arc.back().x;
        mom = arc.back().p;
        img[i][s] = x[0];
      }
    }
  });
  for (int i = 0; i <= m; ++i) r.region.in_a_star.push_back(detail::footprint(bs, img[i], g));
  for (auto s : dd.singular_nodes()) r.region.tie_nodes.push_back(s);

  // A* within slack of A_psi, slice by slice.
  const long ln = static_cast<long>(n);
  for (int i = 0; i <= m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (!r.region.in_a_star[i][j]) continue;
      bool near = false;
      for (long o = -static_cast<long>(opt.slack_cells); o <= static_cast<long>(opt.slack_cells);
           ++o)
        near = near || r.region.in_a_psi[i][static_cast<std::size_t>(((static_cast<long>(j) + o) % ln + ln) % ln)];
      if (!near) ++r.inclusion_violations;
    }

  for (int i = 1; i < m; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += uu[i][j] - ub[i][j] <= opt.gradient_contact_tol;
    if (count == 0) continue;
    const double c = std::max(semiconcavity_constant(uu[i]).constant_estimate,
                              semiconvexity_constant(ub[i]).constant_estimate);
    auto cl = contact_set_lipschitz_check(uu[i], ub[i], c, opt.gradient_contact_tol, opt.deriv_tol,
                                          opt.chain_tol);
    r.worst_derivative_gap = std::max(r.worst_derivative_gap, cl.max_derivative_gap);
    if (cl.lipschitz_bound > 0.0)
      r.worst_lipschitz_ratio = std::max(r.worst_lipschitz_ratio, cl.lipschitz / cl.lipschitz_bound);
    r.slices.push_back(std::move(cl));
  }

  r.report.expect_le("u_breve <= u <= u_psi (worst violation)", r.chain_violation, opt.chain_tol);
  r.report.expect_le("A* outside A_psi beyond slack (cells)",
                     static_cast<double>(r.inclusion_violations), 0.0);
  r.report.expect_le("derivative agreement on contact slices", r.worst_derivative_gap,
                     opt.deriv_tol);
  r.report.expect_le("shared-gradient Lipschitz ratio to 4C(1+10%)", r.worst_lipschitz_ratio, 1.0);
  r.report.data["t0"] = t0;
  r.report.data["slices"] = m;
  r.report.data["checked_slices"] = r.slices.size();
  r.report.data["tie_nodes"] = r.region.tie_nodes;
  return r;
}

/// Fraction of nodes in A at a slice.
inline double contact_fraction(const ContactRegion& c, std::size_t slice) {
  const auto& a = c.in_a.at(slice);
  return static_cast<double>(std::count(a.begin(), a.end(), true)) / static_cast<double>(a.size());
}

/// CSV with columns time_index, node, in_A, in_Apsi, in_Astar.
inline void write_csv(std::ostream& os, const ContactRegion& c) {
  os << "time_index,node,in_A,in_Apsi,in_Astar\n";
  for (std::size_t i = 0; i < c.times.size(); ++i)
    for (std::size_t j = 0; j < c.in_a[i].size(); ++j)
      os << i << ',' << j << ',' << c.in_a[i][j] << ',' << c.in_a_psi[i][j] << ','
         << c.in_a_star[i][j] << '\n';
}

struct InitialDataResult {
  double residual_a = 0.0;        // sup |T-_{t0} psi - u|
  double residual_equal = 0.0;    // sup |psi - u| on {tau >= t0}
  double residual_below = 0.0;    // sup (T+_{t0} u - psi)^+ on {tau < t0}
  bool verdict_a = false;
  bool verdict_b = false;
  Report report;
};

/// For a weak KAM solution u with cut profile p: u = T-_{t0} psi (a) holds exactly when (b)
/// psi = u on {tau >= t0} and psi >= T+_{t0} u elsewhere. Both verdicts are evaluated and
/// their agreement is the report's pass flag.
inline InitialDataResult initial_data_characterization(const CutProfile& p, const GridFunction& psi,
                                                       const KernelLadder& ladder, double t0,
                                                       double tol) {
  const GridFunction& u = p.u;
  u.check_same_grid(psi);
  t0 = ladder.snap(t0);
  InitialDataResult r;
  r.report.name = "initial_data";
  r.residual_a = sup_diff(t_minus(psi, ladder, t0), u);
  GridFunction tp = t_plus(u, ladder, t0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (p.tau[i] >= t0) r.residual_equal = std::max(r.residual_equal, std::abs(psi[i] - u[i]));
    else r.residual_below = std::max(r.residual_below, tp[i] - psi[i]);
  }
  r.verdict_a = r.residual_a <= tol;
  r.verdict_b = r.residual_equal <= tol && r.residual_below <= tol;
  nlohmann::json conds = nlohmann::json::array();
  conds.push_back(to_json(Check{"(a) T-_{t0} psi = u", r.residual_a, tol, r.verdict_a}));
  conds.push_back(to_json(Check{"(b) psi = u on {tau >= t0}", r.residual_equal, tol,
                                r.residual_equal <= tol}));
  conds.push_back(to_json(Check{"(b) psi >= T+_{t0} u on {tau < t0}", r.residual_below, tol,
                                r.residual_below <= tol}));
  r.report.expect("verdicts agree", r.verdict_a == r.verdict_b);
  r.report.data["conditions"] = conds;
  r.report.data["t0"] = t0;
  return r;
}

/// Random trigonometric polynomial sum_{k=1..modes} a_k cos(2 pi k x) + b_k sin(2 pi k x),
/// coefficients uniform in [-amplitude/k, amplitude/k].
inline GridFunction random_trig(const TorusGrid& g, std::mt19937_64& rng, int modes,
                                double amplitude) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> a(modes), b(modes);
  for (int k = 0; k < modes; ++k) {
    a[k] = amplitude * unit(rng) / (k + 1);
    b[k] = amplitude * unit(rng) / (k + 1);
  }
  return GridFunction::sample(g, [&](const Coord& c) {
    double v = 0.0;
    for (int k = 0; k < modes; ++k)
      v += a[k] * std::cos(kTwoPi * (k + 1) * c[0]) + b[k] * std::sin(kTwoPi * (k + 1) * c[0]);
    return v;
  });
}

struct FamilyMember {
  GridFunction phi;
  double t0;
  bool constructed_attainable;
  std::uint64_t seed;
};

/// Attainable members phi = T-_t rho with t0 = t, and controls: smooth rho tested at a
/// horizon t0 past its first shock.
inline std::vector<FamilyMember> attainability_family(const KernelLadder& ladder,
                                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<FamilyMember> out;
  const TorusGrid& g = ladder.grid();
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::mt19937_64 rng(seeds[s]);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool attainable = s % 2 == 0;
    GridFunction rho = random_trig(g, rng, 4, 0.5 + unit(rng));
    if (attainable) {
      const double t = ladder.snap(0.125 + 0.875 * unit(rng));
      out.push_back({t_minus(rho, ladder, t), t, true, seeds[s]});
    } else {
      const double t0 = ladder.snap(std::min(ladder.t_max(), 2.0 + 2.0 * unit(rng)));
      out.push_back({rho, t0, false, seeds[s]});
    }
  }
  return out;
}

}  // namespace wkam
