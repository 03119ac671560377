#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wkam/error.hpp"
#include "wkam/hamiltonian.hpp"
#include "wkam/parallel.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

/// How a straight segment of the one-step kernel is charged.
enum class SegmentRule {
  midpoint,  ///< t L(midpoint, v)
  exact,     ///< exact integral of L along the segment (closed-form and 1D sampled V)
};

struct KernelOptions {
  double base_step = 1.0 / 1024.0;  // delta
  int winding = 1;                  // W
  double v_max = 8.0;
  double cost_ceiling = 1e6;
  double t_max = 64.0;
  SegmentRule rule = SegmentRule::exact;
  /// Offer the straight segment as a candidate at every ladder level, not only the first.
  bool direct_every_level = true;
};

/// Relay codes stored per entry besides a relay node index >= 0.
inline constexpr std::int32_t kRelayDirect = -1;
inline constexpr std::int32_t kRelayIdentity = -2;
inline constexpr std::int32_t kRelayNone = -3;

/// Dense matrix K[i][j] ~ A_t(x_i, x_j), an element of the min-plus semigroup.
///
/// Each entry remembers how it was obtained: a straight segment (with its wrap vector),
/// or the relay node m of a product of the two child kernels. The children are shared,
/// so minimizing broken paths can be recovered by backtracking.
class ActionKernel {
 public:
  ActionKernel(const TorusGrid& grid, double t, double base_step, int winding)
      : grid_(grid),
        t_(t),
        base_step_(base_step),
        winding_(winding),
        n_(grid.size()),
        k_(n_ * n_, kInf),
        relay_(n_ * n_, kRelayNone),
        wrap_(n_ * n_, 0) {}

  const TorusGrid& grid() const noexcept { return grid_; }
  double t() const noexcept { return t_; }
  double base_step() const noexcept { return base_step_; }
  int winding() const noexcept { return winding_; }
  std::size_t nodes() const noexcept { return n_; }

  double operator()(std::size_t i, std::size_t j) const noexcept { return k_[i * n_ + j]; }
  const double* row(std::size_t i) const noexcept { return k_.data() + i * n_; }
  std::int32_t relay(std::size_t i, std::size_t j) const noexcept { return relay_[i * n_ + j]; }
  /// Wrap vector of a direct entry, per axis.
  std::array<int, 2> wrap(std::size_t i, std::size_t j) const noexcept {
    int code = wrap_[i * n_ + j];
    int span = 2 * winding_ + 1;
    return {code % span - winding_, code / span - winding_};
  }

  const std::shared_ptr<const ActionKernel>& left() const noexcept { return left_; }
  const std::shared_ptr<const ActionKernel>& right() const noexcept { return right_; }

  double min_entry() const {
    double m = kInf;
    for (double v : k_) m = std::min(m, v);
    return m;
  }
  double max_finite_entry() const {
    double m = -kInf;
    for (double v : k_)
      if (v < kInf) m = std::max(m, v);
    return m;
  }

  // Mutable access for builders in this header.
  double* data() noexcept { return k_.data(); }
  std::int32_t* relay_data() noexcept { return relay_.data(); }
  std::int16_t* wrap_data() noexcept { return wrap_.data(); }
  void set_children(std::shared_ptr<const ActionKernel> l, std::shared_ptr<const ActionKernel> r) {
    left_ = std::move(l);
    right_ = std::move(r);
  }

 private:
  TorusGrid grid_;
  double t_;
  double base_step_;
  int winding_;
  std::size_t n_;
  std::vector<double> k_;
  std::vector<std::int32_t> relay_;
  std::vector<std::int16_t> wrap_;
  std::shared_ptr<const ActionKernel> left_, right_;
};

/// Tropical identity: 0 on the diagonal, +inf elsewhere.
inline ActionKernel identity_kernel(const TorusGrid& grid) {
  ActionKernel k(grid, 0.0, 0.0, 0);
  const std::size_t n = grid.size();
  for (std::size_t i = 0; i < n; ++i) {
    k.data()[i * n + i] = 0.0;
    k.relay_data()[i * n + i] = kRelayIdentity;
  }
  return k;
}

namespace detail {

inline double segment_action(const HamiltonianSpec& h, const Coord& x, const Coord& d, double t,
                             SegmentRule rule) {
  const int dim = h.dim();
  Coord v{d[0] / t, dim == 2 ? d[1] / t : 0.0};
  Coord mid{x[0] + 0.5 * d[0], x[1] + 0.5 * d[1]};
  if (h.kind() == HamiltonianKind::mechanical) {
    double kinetic = 0.5 * (v[0] * v[0] + v[1] * v[1]) * t;
    double mean_v = rule == SegmentRule::exact ? h.potential().segment_mean(x, d)
                                               : h.potential().value(mid);
    return kinetic - t * mean_v + t * h.critical_value();
  }
  if (rule == SegmentRule::midpoint) return t * (lagrangian_value(h, mid, v) + h.critical_value());
  // Two-panel 3-point Gauss-Legendre along the segment.
  static constexpr std::array<double, 3> nodes{-0.7745966692414834, 0.0, 0.7745966692414834};
  static constexpr std::array<double, 3> weights{5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  double acc = 0.0;
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 3; ++q) {
      double s = 0.5 * (p + 0.5 * (1.0 + nodes[q]));
      acc += 0.25 * weights[q] * lagrangian_value(h, Coord{x[0] + s * d[0], x[1] + s * d[1]}, v);
    }
  return t * (acc + h.critical_value());
}

// Straight-segment kernel at time t written into `out` (entries, relay codes, wraps).
inline void fill_direct(const HamiltonianSpec& h, double t, const KernelOptions& opt,
                        ActionKernel& out) {
  const TorusGrid& g = out.grid();
  const int dim = g.dim();
  const int w = opt.winding;
  const int span = 2 * w + 1;
  const std::size_t n = g.size();
  const double reach = opt.v_max * t;
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Coord xi = g.coordinate(i);
      double* row = out.data() + i * n;
      std::int32_t* rel = out.relay_data() + i * n;
      std::int16_t* wr = out.wrap_data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Coord xj = g.coordinate(j);
        double best = kInf;
        int best_code = 0;
        for (int k1 = (dim == 2 ? -w : 0); k1 <= (dim == 2 ? w : 0); ++k1)
          for (int k0 = -w; k0 <= w; ++k0) {
            Coord d{xj[0] + k0 - xi[0], dim == 2 ? xj[1] + k1 - xi[1] : 0.0};
            double len = std::sqrt(d[0] * d[0] + d[1] * d[1]);
            if (len > reach * (1.0 + 1e-12)) continue;
            double c = segment_action(h, xi, d, t, opt.rule);
            if (c < best) {
              best = c;
              best_code = (k0 + w) + span * (k1 + w);
            }
          }
        if (best > opt.cost_ceiling) best = kInf;
        row[j] = best;
        rel[j] = best < kInf ? kRelayDirect : kRelayNone;
        wr[j] = static_cast<std::int16_t>(best_code);
      }
    }
  });
}

// out = min(out, a (x) b) with argmin relays; the relay replaces an existing entry only
// when strictly smaller, and relays are scanned in increasing index order, so the
// smallest relay index wins ties.
inline void relax_product(const ActionKernel& a, const ActionKernel& b, ActionKernel& out) {
  const std::size_t n = a.nodes();
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* row = out.data() + i * n;
      std::int32_t* rel = out.relay_data() + i * n;
      const double* arow = a.row(i);
      for (std::size_t m = 0; m < n; ++m) {
        const double am = arow[m];
        if (am == kInf) continue;
        const double* brow = b.row(m);
        const auto mi = static_cast<std::int32_t>(m);
        for (std::size_t j = 0; j < n; ++j) {
          double c = am + brow[j];
          if (c < row[j]) {
            row[j] = c;
            rel[j] = mi;
          }
        }
      }
    }
  });
}

inline void validate(const KernelOptions& opt) {
  if (!(opt.base_step > 0.0)) throw Error("kernel: base_step must be positive");
  if (opt.winding < 1 || opt.winding > 60) throw Error("kernel: winding must be in [1, 60]");
  if (!(opt.v_max > 0.0)) throw Error("kernel: v_max must be positive");
  if (!(opt.cost_ceiling > 0.0)) throw Error("kernel: cost_ceiling must be positive");
}

inline void require_normalized(const HamiltonianSpec& h) {
  if (!h.normalized())
    throw PreconditionError("kernel: Hamiltonian is not normalized (c[H] must be 0)",
                            h.critical_value());
}

}  // namespace detail

/// Straight-segment kernel over an arbitrary time t > 0 (no bound on t).
inline ActionKernel segment_kernel(const HamiltonianSpec& h, const TorusGrid& grid, double t,
                                   const KernelOptions& opt) {
  detail::validate(opt);
  detail::require_normalized(h);
  if (grid.dim() != h.dim()) throw GridMismatch("kernel: grid and potential dimensions differ");
  ActionKernel k(grid, t, opt.base_step, opt.winding);
  detail::fill_direct(h, t, opt, k);
  return k;
}

/// One-step kernel K_delta[i][j] = min over wraps of the segment action.
inline ActionKernel small_time_kernel(const HamiltonianSpec& h, const TorusGrid& grid,
                                      double delta, int winding,
                                      KernelOptions opt = KernelOptions{}) {
  if (!(delta > 0.0 && delta <= 0.1)) throw Error("small_time_kernel: need 0 < delta <= 0.1");
  if (opt.v_max * delta < grid.spacing() * (1.0 - 1e-12))
    throw PreconditionError(
        "small_time_kernel: no admissible step to a neighboring node (v_max * delta < dx); "
        "increase delta or v_max",
        grid.spacing() / delta);
  opt.base_step = delta;
  opt.winding = winding;
  return segment_kernel(h, grid, delta, opt);
}

/// Min-plus product: K[i][j] = min_m K1[i][m] + K2[m][j], t = t1 + t2.
inline ActionKernel compose(std::shared_ptr<const ActionKernel> k1,
                            std::shared_ptr<const ActionKernel> k2) {
  if (!(k1->grid() == k2->grid())) throw GridMismatch("compose: kernels on different grids");
  ActionKernel out(k1->grid(), k1->t() + k2->t(),
                   k1->base_step() > 0 ? k1->base_step() : k2->base_step(),
                   std::max(k1->winding(), k2->winding()));
  detail::relax_product(*k1, *k2, out);
  out.set_children(std::move(k1), std::move(k2));
  return out;
}

inline ActionKernel compose(const ActionKernel& k1, const ActionKernel& k2) {
  return compose(std::make_shared<const ActionKernel>(k1),
                 std::make_shared<const ActionKernel>(k2));
}

/// min(direct segment at t1 + t2, K1 (x) K2): the step used by the doubling ladder.
inline ActionKernel compose_with_segments(const HamiltonianSpec& h,
                                          std::shared_ptr<const ActionKernel> k1,
                                          std::shared_ptr<const ActionKernel> k2,
                                          const KernelOptions& opt) {
  if (!(k1->grid() == k2->grid())) throw GridMismatch("compose: kernels on different grids");
  ActionKernel out = segment_kernel(h, k1->grid(), k1->t() + k2->t(), opt);
  detail::relax_product(*k1, *k2, out);
  out.set_children(std::move(k1), std::move(k2));
  return out;
}

/// The min-plus 2^m-th power of K by m squarings.
inline ActionKernel kernel_power(const ActionKernel& k, int m,
                                 double t_max = std::numeric_limits<double>::max()) {
  if (m < 0) throw Error("kernel_power: m must be non-negative");
  if (std::ldexp(k.t(), m) > t_max * (1.0 + 1e-12))
    throw Error("kernel_power: 2^m * t exceeds T_max");
  auto cur = std::make_shared<const ActionKernel>(k);
  for (int s = 0; s < m; ++s) cur = std::make_shared<const ActionKernel>(compose(cur, cur));
  return *cur;
}

/// 2^m-th power with the straight segment offered at every squaring, as in the ladder:
/// K_{2s} = min(segment at 2s, K_s (x) K_s).
inline ActionKernel kernel_power(const HamiltonianSpec& h, const ActionKernel& k, int m,
                                 const KernelOptions& opt) {
  if (m < 0) throw Error("kernel_power: m must be non-negative");
  if (std::ldexp(k.t(), m) > opt.t_max * (1.0 + 1e-12))
    throw Error("kernel_power: 2^m * t exceeds T_max");
  auto cur = std::make_shared<const ActionKernel>(k);
  for (int s = 0; s < m; ++s)
    cur = std::make_shared<const ActionKernel>(compose_with_segments(h, cur, cur, opt));
  return *cur;
}

/// Interpolated action A_t(x, y): bilinear in each argument.
inline double action_value(const ActionKernel& k, const Coord& x, const Coord& y) {
  const TorusGrid& g = k.grid();
  const int n = g.n();
  struct Stencil {
    std::size_t idx[4];
    double w[4];
    int count;
  };
  auto stencil = [&](const Coord& p) {
    Stencil s{};
    double sx = wrap(p[0]) * n;
    int i0 = static_cast<int>(std::floor(sx));
    double wx = sx - i0;
    if (g.dim() == 1) {
      s.idx[0] = g.flat_index(i0);
      s.idx[1] = g.flat_index(i0 + 1);
      s.w[0] = 1.0 - wx;
      s.w[1] = wx;
      s.count = 2;
      return s;
    }
    double sy = wrap(p[1]) * n;
    int j0 = static_cast<int>(std::floor(sy));
    double wy = sy - j0;
    s.idx[0] = g.flat_index(i0, j0);
    s.idx[1] = g.flat_index(i0 + 1, j0);
    s.idx[2] = g.flat_index(i0, j0 + 1);
    s.idx[3] = g.flat_index(i0 + 1, j0 + 1);
    s.w[0] = (1 - wx) * (1 - wy);
    s.w[1] = wx * (1 - wy);
    s.w[2] = (1 - wx) * wy;
    s.w[3] = wx * wy;
    s.count = 4;
    return s;
  };
  Stencil sx = stencil(x), sy = stencil(y);
  double acc = 0.0;
  for (int a = 0; a < sx.count; ++a) {
    if (sx.w[a] == 0.0) continue;
    for (int b = 0; b < sy.count; ++b) {
      if (sy.w[b] == 0.0) continue;
      acc += sx.w[a] * sy.w[b] * k(sx.idx[a], sy.idx[b]);
    }
  }
  return acc;
}

/// Vertex of a broken minimizing path, in the universal cover.
struct PathVertex {
  double t;
  Coord x;
};

namespace detail {
inline void backtrack(const ActionKernel& k, std::size_t i, std::size_t j, double t0,
                      std::vector<PathVertex>& out) {
  const std::int32_t r = k.relay(i, j);
  if (r == kRelayIdentity) return;
  if (r == kRelayNone) throw Error("relay_path: entry is unreachable");
  if (r == kRelayDirect) {
    const TorusGrid& g = k.grid();
    Coord xi = g.coordinate(i), xj = g.coordinate(j);
    auto w = k.wrap(i, j);
    Coord start = out.back().x;
    Coord end{start[0] + (xj[0] + w[0] - xi[0]), start[1]};
    if (g.dim() == 2) end[1] = start[1] + (xj[1] + w[1] - xi[1]);
    out.push_back({t0 + k.t(), end});
    return;
  }
  backtrack(*k.left(), i, static_cast<std::size_t>(r), t0, out);
  backtrack(*k.right(), static_cast<std::size_t>(r), j, t0 + k.left()->t(), out);
}
}  // namespace detail

/// Broken path realizing K[i][j], recovered from the stored relays. The first vertex is
/// x_i at time 0; later vertices are lifted so consecutive differences are true
/// displacements.
inline std::vector<PathVertex> relay_path(const ActionKernel& k, std::size_t i, std::size_t j) {
  std::vector<PathVertex> out;
  out.push_back({0.0, k.grid().coordinate(i)});
  detail::backtrack(k, i, j, 0.0, out);
  return out;
}

/// Gap between the best relay and the best relay at least `exclusion` away from it,
/// for the top-level product of a composed kernel. Small margins flag cut/conjugate
/// configurations where the minimizer is not unique.
inline double relay_margin(const ActionKernel& k, std::size_t i, std::size_t j, double exclusion) {
  if (!k.left() || !k.right()) return kInf;
  const TorusGrid& g = k.grid();
  const ActionKernel& a = *k.left();
  const ActionKernel& b = *k.right();
  std::size_t best_m = 0;
  double best = kInf;
  for (std::size_t m = 0; m < k.nodes(); ++m) {
    double c = a(i, m) + b(m, j);
    if (c < best) { best = c; best_m = m; }
  }
  const Coord xb = g.coordinate(best_m);
  double second = kInf;
  for (std::size_t m = 0; m < k.nodes(); ++m) {
    if (periodic_distance(g.coordinate(m), xb, g.dim()) <= exclusion) continue;
    second = std::min(second, a(i, m) + b(m, j));
  }
  return second - best;
}

/// Dyadic ladder K_delta, K_{2 delta}, ..., up to T_max, shared by every operator.
class KernelLadder {
 public:
  KernelLadder(const HamiltonianSpec& h, const TorusGrid& grid, const KernelOptions& opt)
      : spec_(h), grid_(grid), opt_(opt) {
    detail::validate(opt);
    if (!(opt.t_max >= opt.base_step)) throw Error("kernel: T_max must be at least base_step");
    auto cur = std::make_shared<const ActionKernel>(
        small_time_kernel(h, grid, opt.base_step, opt.winding, opt));
    levels_.push_back(cur);
    while (std::ldexp(opt.base_step, static_cast<int>(levels_.size())) <=
           opt.t_max * (1.0 + 1e-12)) {
      cur = std::make_shared<const ActionKernel>(
          opt.direct_every_level ? compose_with_segments(h, cur, cur, opt) : compose(cur, cur));
      levels_.push_back(cur);
    }
  }

  const HamiltonianSpec& spec() const noexcept { return spec_; }
  const TorusGrid& grid() const noexcept { return grid_; }
  const KernelOptions& options() const noexcept { return opt_; }
  double base_step() const noexcept { return opt_.base_step; }
  std::size_t levels() const noexcept { return levels_.size(); }
  double time(std::size_t level) const { return levels_.at(level)->t(); }
  double t_max() const noexcept { return levels_.back()->t(); }
  const ActionKernel& level(std::size_t k) const { return *levels_.at(k); }
  const std::shared_ptr<const ActionKernel>& level_ptr(std::size_t k) const {
    return levels_.at(k);
  }

  /// Ladder times delta * 2^k.
  std::vector<double> times() const {
    std::vector<double> t;
    for (auto& l : levels_) t.push_back(l->t());
    return t;
  }

  /// Level index of a ladder time, or -1.
  int level_of(double t) const {
    for (std::size_t k = 0; k < levels_.size(); ++k)
      if (std::abs(levels_[k]->t() - t) <= 1e-12 * std::max(1.0, t)) return static_cast<int>(k);
    return -1;
  }

  /// Nearest positive multiple of delta.
  double snap(double t) const {
    return std::max(1.0, std::round(t / opt_.base_step)) * opt_.base_step;
  }

  /// Ladder levels whose times sum to t (binary expansion of t / delta), ascending.
  std::vector<std::size_t> decompose(double t) const {
    double q = t / opt_.base_step;
    double r = std::round(q);
    if (t < 0 || std::abs(q - r) > 1e-9 * std::max(1.0, q))
      throw Error("kernel ladder: t must be a non-negative multiple of delta");
    auto m = static_cast<unsigned long long>(r);
    std::vector<std::size_t> parts;
    for (std::size_t k = 0; m != 0; ++k, m >>= 1) {
      if (!(m & 1ULL)) continue;
      if (k >= levels_.size()) throw Error("kernel ladder: t exceeds the ladder span");
      parts.push_back(k);
    }
    return parts;
  }

  /// Kernel at an arbitrary multiple t of delta: ladder levels composed in ascending order,
  /// with straight segments offered at each partial time when the ladder does so.
  std::shared_ptr<const ActionKernel> kernel_at(double t) const {
    auto parts = decompose(t);
    if (parts.empty()) return std::make_shared<const ActionKernel>(identity_kernel(grid_));
    auto acc = levels_[parts[0]];
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const auto& next = levels_[parts[p]];
      acc = std::make_shared<const ActionKernel>(
          opt_.direct_every_level ? compose_with_segments(spec_, acc, next, opt_)
                                  : compose(acc, next));
    }
    return acc;
  }

 private:
  HamiltonianSpec spec_;
  TorusGrid grid_;
  KernelOptions opt_;
  std::vector<std::shared_ptr<const ActionKernel>> levels_;
};

/// Raw row-major doubles plus a JSON sidecar {N, dim, t, delta, W}.
inline void write_kernel_binary(const ActionKernel& k, const std::string& path) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < k.nodes(); ++i)
    bin.write(reinterpret_cast<const char*>(k.row(i)),
              static_cast<std::streamsize>(k.nodes() * sizeof(double)));
  nlohmann::json side{{"schema", 1},
                      {"N", k.grid().n()},
                      {"dim", k.grid().dim()},
                      {"t", k.t()},
                      {"delta", k.base_step()},
                      {"W", k.winding()},
                      {"layout", "row-major float64, K[i][j] at i*nodes+j"}};
  std::ofstream js(path + ".json");
  js << side.dump(2) << '\n';
}

/// Values written by write_kernel_binary. Relays are not stored, so the result supports
/// the operators but not path backtracking.
inline ActionKernel read_kernel_binary(const std::string& path) {
  std::ifstream js(path + ".json");
  std::ifstream bin(path, std::ios::binary);
  if (!js || !bin) throw MissingArtifact("kernel file not found: " + path);
  nlohmann::json side = nlohmann::json::parse(js);
  TorusGrid grid(side.at("dim").get<int>(), side.at("N").get<int>());
  ActionKernel k(grid, side.at("t").get<double>(), side.at("delta").get<double>(),
                 side.at("W").get<int>());
  const auto bytes = static_cast<std::streamsize>(k.nodes() * k.nodes() * sizeof(double));
  bin.read(reinterpret_cast<char*>(k.data()), bytes);
  if (bin.gcount() != bytes) throw Error("kernel file truncated: " + path);
  return k;
}

/// Human-readable matrix; meant for small grids.
inline void write_kernel_csv(std::ostream& os, const ActionKernel& k) {
  for (std::size_t i = 0; i < k.nodes(); ++i) {
    for (std::size_t j = 0; j < k.nodes(); ++j) {
      if (j) os << ',';
      os << format_real(k(i, j));
    }
    os << '\n';
  }
}

}  // namespace wkam
