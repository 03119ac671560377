// Pendulum H = p^2/2 + cos(2 pi x) - 1: the weak KAM solution as a limit of T-, its cut
// time at x = 1/4 and the Cut and Aubry sets.

#include <cmath>
#include <iostream>
#include <numbers>

#include "wkam/wkam.hpp"

int main() {
  using namespace wkam;
  constexpr double pi = std::numbers::pi;
  HamiltonianSpec h = normalize_critical_value(HamiltonianSpec::mechanical(Potential::cosine(1.0)));
  KernelOptions opt;
  opt.base_step = 1.0 / 1024.0;
  opt.t_max = 64.0;
  KernelLadder ladder(h, TorusGrid(1, 512), opt);

  GridFunction zero(ladder.grid(), 0.0);
  GridFunction u = weak_kam_limit(zero, ladder, LimitDirection::minus, 1e-6).value;
  u = u - u.min();
  std::cout << "u-(x) at x = 0, 1/4, 1/2: " << u[0] << ' ' << u[128] << ' ' << u[256]
            << "  (closed form 0, " << 2.0 / pi * (1.0 - std::cos(pi / 4.0)) << ", " << 2.0 / pi
            << ")\n";

  CutProfile p = cut_time_map(u, ladder, default_tau_tol(u, ladder));
  std::cout << "tau(1/4) = " << tau_at(p, Coord{0.25, 0}) << '\n';
  std::cout << "Cut:";
  for (auto i : p.cut_set) std::cout << ' ' << ladder.grid().coordinate(i)[0];
  std::cout << "\nAubry:";
  for (auto i : p.aubry_set) std::cout << ' ' << ladder.grid().coordinate(i)[0];
  std::cout << '\n';
}
