#pragma once

#include <cmath>
#include <memory>

#include "wkam/action_kernel.hpp"
#include "wkam/dynamics.hpp"
#include "wkam/report.hpp"

namespace wkam {

struct DerivativeCheck {
  bool ambiguous = false;  // minimizer not unique within the margin: cut/conjugate configuration
  double margin = 0.0;
  Coord fd_dy{0, 0}, fd_dx{0, 0};
  double fd_dt = 0.0;
  Coord p_end{0, 0}, p_start{0, 0};
  double energy = 0.0;
  double err_dy = 0.0, err_dx = 0.0, err_dt = 0.0;
  CharacteristicArc minimizer;
  Report report;
};

/// Compares finite differences of the discrete action at (x_i, x_j, t) with the derivative
/// formulas along the minimizer: D_y A = L_v at the end, D_x A = -L_v at the start and
/// D_t A = -E. Node pairs only; t and t +- t/16 must be multiples of delta.
inline DerivativeCheck kernel_derivative_check(const KernelLadder& ladder, double t,
                                               const Coord& x, const Coord& y,
                                               double tol = 5e-2, double margin_tol = 1e-6) {
  const HamiltonianSpec& h = ladder.spec();
  const TorusGrid& g = ladder.grid();
  const double dx = g.spacing();
  const std::size_t i = g.nearest(x), j = g.nearest(y);
  auto k = ladder.kernel_at(t);

  DerivativeCheck r;
  r.report.name = "kernel_derivative";
  r.margin = relay_margin(*k, i, j, 4.0 * dx);
  if (r.margin < margin_tol) {
    r.ambiguous = true;
    r.report.data["diagnostic"] = "conjugate/cut configuration: minimizer margin below tolerance";
    r.report.data["margin"] = json_real(r.margin);
    return r;
  }

  double tau = t / 16.0;
  const double d = ladder.base_step();
  tau = std::max(d, std::round(tau / d) * d);
  auto kp = ladder.kernel_at(t + tau);
  auto km = ladder.kernel_at(t - tau);
  r.fd_dt = ((*kp)(i, j) - (*km)(i, j)) / (2.0 * tau);
  for (int a = 0; a < g.dim(); ++a) {
    r.fd_dy[a] = ((*k)(i, g.neighbor(j, a, 1)) - (*k)(i, g.neighbor(j, a, -1))) / (2.0 * dx);
    r.fd_dx[a] = ((*k)(g.neighbor(i, a, 1), j) - (*k)(g.neighbor(i, a, -1), j)) / (2.0 * dx);
  }

  if (i == j && r.fd_dy == Coord{0, 0} && r.fd_dx == Coord{0, 0}) {
    r.minimizer = broken_path_arc({{0.0, g.coordinate(i)}, {t, g.coordinate(i)}}, g.dim());
  } else {
    r.minimizer = minimizer_refine(relay_path(*k, i, j), h);
  }
  r.p_start = r.minimizer.front().p;
  r.p_end = r.minimizer.back().p;
  if (i == j && !r.minimizer.refined) {
    r.p_start = r.p_end = Coord{0, 0};
  }
  r.energy = hamiltonian_value(h, r.minimizer.front().x, r.p_start);
  for (int a = 0; a < g.dim(); ++a) {
    r.err_dy = std::max(r.err_dy, std::abs(r.fd_dy[a] - r.p_end[a]));
    r.err_dx = std::max(r.err_dx, std::abs(r.fd_dx[a] + r.p_start[a]));
  }
  r.err_dt = std::abs(r.fd_dt + r.energy);
  r.report.expect_le("D_y A = L_v(end)", r.err_dy, tol);
  r.report.expect_le("D_x A = -L_v(start)", r.err_dx, tol);
  r.report.expect_le("D_t A = -E", r.err_dt, tol);
  r.report.data["margin"] = json_real(r.margin);
  r.report.data["refined"] = r.minimizer.refined;
  return r;
}

}  // namespace wkam
