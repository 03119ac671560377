#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "wkam/error.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class PotentialKind { free, cosine, double_well, sampled };

inline std::string to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::free: return "free";
    case PotentialKind::cosine: return "cosine";
    case PotentialKind::double_well: return "double_well";
    case PotentialKind::sampled: return "sampled";
  }
  return "?";
}

/// Periodic potential V on the torus.
///
/// Closed forms are sums over axes of a one-dimensional profile f plus a constant
/// offset, V(x) = sum_a f(x_a) + offset, with
///   cosine:      f(s) = A cos(2 pi (s - phase))
///   double_well: f(s) = A (cos(4 pi (s - phase)) + b cos(2 pi (s - phase)))
/// A sampled potential is a grid function read with periodic (bi)linear interpolation.
class Potential {
 public:
  static Potential free_particle(int dim = 1) {
    Potential p;
    p.kind_ = PotentialKind::free;
    p.dim_ = dim;
    return p;
  }

  static Potential cosine(double amplitude, double phase = 0.0, int dim = 1) {
    Potential p;
    p.kind_ = PotentialKind::cosine;
    p.dim_ = dim;
    p.amplitude_ = amplitude;
    p.phase_ = phase;
    return p;
  }

  static Potential double_well(double amplitude, double asymmetry, double phase = 0.0,
                               int dim = 1) {
    Potential p;
    p.kind_ = PotentialKind::double_well;
    p.dim_ = dim;
    p.amplitude_ = amplitude;
    p.asymmetry_ = asymmetry;
    p.phase_ = phase;
    return p;
  }

  static Potential sampled(const GridFunction& values) {
    Potential p;
    p.kind_ = PotentialKind::sampled;
    p.dim_ = values.grid().dim();
    p.samples_.emplace(values);
    p.build_prefix();
    return p;
  }

  PotentialKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return dim_; }
  double amplitude() const noexcept { return amplitude_; }
  double asymmetry() const noexcept { return asymmetry_; }
  double phase() const noexcept { return phase_; }
  double offset() const noexcept { return offset_; }
  const std::optional<GridFunction>& samples() const noexcept { return samples_; }

  Potential shifted(double c) const {
    Potential p(*this);
    p.offset_ += c;
    return p;
  }

  double value(const Coord& x) const {
    if (kind_ == PotentialKind::sampled) return interpolate(*samples_, x) + offset_;
    double v = offset_;
    for (int a = 0; a < dim_; ++a) v += profile(x[a]);
    return v;
  }

  Coord gradient(const Coord& x) const {
    Coord g{0.0, 0.0};
    if (kind_ == PotentialKind::sampled) {
      for (int a = 0; a < dim_; ++a) g[a] = interpolate(sampled_derivative(a, 1), x);
      return g;
    }
    for (int a = 0; a < dim_; ++a) g[a] = profile_d1(x[a]);
    return g;
  }

  /// Diagonal of the Hessian. Closed forms are separable, so this is the whole Hessian;
  /// for sampled 2D data the mixed term is neglected.
  Coord hessian_diagonal(const Coord& x) const {
    Coord h{0.0, 0.0};
    if (kind_ == PotentialKind::sampled) {
      for (int a = 0; a < dim_; ++a) h[a] = interpolate(sampled_derivative(a, 2), x);
      return h;
    }
    for (int a = 0; a < dim_; ++a) h[a] = profile_d2(x[a]);
    return h;
  }

  /// Mean of V over the straight segment s -> x + s d, s in [0, 1], taken in the
  /// universal cover. Exact for closed forms and for 1D sampled data.
  double segment_mean(const Coord& x, const Coord& d) const {
    if (kind_ != PotentialKind::sampled) {
      double v = offset_;
      for (int a = 0; a < dim_; ++a) v += profile_mean(x[a], d[a]);
      return v;
    }
    if (dim_ == 1) {
      if (std::abs(d[0]) < 1e-9) return value(Coord{x[0] + 0.5 * d[0], 0.0});
      return (antiderivative(x[0] + d[0]) - antiderivative(x[0])) / d[0] + offset_;
    }
    // Composite 3-point Gauss-Legendre, one panel per grid cell crossed.
    const double len = std::max(std::abs(d[0]), std::abs(d[1]));
    const int panels = 1 + static_cast<int>(len * samples_->grid().n());
    static constexpr std::array<double, 3> nodes{-0.7745966692414834, 0.0, 0.7745966692414834};
    static constexpr std::array<double, 3> weights{5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      for (int q = 0; q < 3; ++q) {
        double s = (p + 0.5 * (1.0 + nodes[q])) / panels;
        acc += 0.5 * weights[q] * value(Coord{x[0] + s * d[0], x[1] + s * d[1]});
      }
    }
    return acc / panels;
  }

  /// Global maximum of V over the torus.
  double maximum() const {
    if (kind_ == PotentialKind::sampled) return samples_->max() + offset_;
    return dim_ * profile_max() + offset_;
  }

  /// A point where V attains its maximum.
  Coord argmax() const {
    Coord c{0.0, 0.0};
    if (kind_ == PotentialKind::sampled) {
      const auto& s = *samples_;
      std::size_t best = 0;
      for (std::size_t k = 1; k < s.size(); ++k)
        if (s[k] > s[best]) best = k;
      return s.grid().coordinate(best);
    }
    double a = profile_argmax();
    for (int k = 0; k < dim_; ++k) c[k] = a;
    return c;
  }

 private:
  Potential() = default;

  double profile(double s) const {
    const double z = kTwoPi * (s - phase_);
    switch (kind_) {
      case PotentialKind::cosine: return amplitude_ * std::cos(z);
      case PotentialKind::double_well:
        return amplitude_ * (std::cos(2.0 * z) + asymmetry_ * std::cos(z));
      default: return 0.0;
    }
  }
  double profile_d1(double s) const {
    const double z = kTwoPi * (s - phase_);
    switch (kind_) {
      case PotentialKind::cosine: return -kTwoPi * amplitude_ * std::sin(z);
      case PotentialKind::double_well:
        return -kTwoPi * amplitude_ * (2.0 * std::sin(2.0 * z) + asymmetry_ * std::sin(z));
      default: return 0.0;
    }
  }
  double profile_d2(double s) const {
    const double z = kTwoPi * (s - phase_);
    const double w2 = kTwoPi * kTwoPi;
    switch (kind_) {
      case PotentialKind::cosine: return -w2 * amplitude_ * std::cos(z);
      case PotentialKind::double_well:
        return -w2 * amplitude_ * (4.0 * std::cos(2.0 * z) + asymmetry_ * std::cos(z));
      default: return 0.0;
    }
  }

  // Mean of cos(k z) over a segment written as cos(k z_mid) sinc(k w / 2), which avoids
  // the cancellation of differencing antiderivatives.
  static double mean_cos(double k, double z_mid, double width) {
    double h = 0.5 * k * width;
    double sinc = std::abs(h) < 1e-8 ? 1.0 - h * h / 6.0 : std::sin(h) / h;
    return std::cos(k * z_mid) * sinc;
  }
  double profile_mean(double s, double d) const {
    const double zm = kTwoPi * (s + 0.5 * d - phase_);
    const double w = kTwoPi * d;
    switch (kind_) {
      case PotentialKind::cosine: return amplitude_ * mean_cos(1.0, zm, w);
      case PotentialKind::double_well:
        return amplitude_ * (mean_cos(2.0, zm, w) + asymmetry_ * mean_cos(1.0, zm, w));
      default: return 0.0;
    }
  }

  double profile_max() const {
    if (kind_ == PotentialKind::free) return 0.0;
    if (kind_ == PotentialKind::cosine) return std::abs(amplitude_);
    return profile(profile_argmax());
  }

  double profile_argmax() const {
    if (kind_ == PotentialKind::free) return 0.0;
    if (kind_ == PotentialKind::cosine) return wrap(amplitude_ >= 0 ? phase_ : phase_ + 0.5);
    // Dense scan, then golden-section refinement of the best bracket.
    constexpr int samples = 4096;
    int best = 0;
    double best_v = profile(0.0);
    for (int k = 1; k < samples; ++k) {
      double v = profile(static_cast<double>(k) / samples);
      if (v > best_v) { best_v = v; best = k; }
    }
    double lo = (best - 1.0) / samples, hi = (best + 1.0) / samples;
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - r * (hi - lo), b = lo + r * (hi - lo);
    for (int it = 0; it < 100; ++it) {
      if (profile(a) > profile(b)) hi = b; else lo = a;
      a = hi - r * (hi - lo);
      b = lo + r * (hi - lo);
    }
    return wrap(0.5 * (lo + hi));
  }

  // Node-centered difference quotients of sampled data, order 1 or 2, along `axis`.
  const GridFunction& sampled_derivative(int axis, int order) const {
    auto& slot = derivative_cache_[axis * 2 + (order - 1)];
    if (!slot) {
      const GridFunction& s = *samples_;
      const TorusGrid& g = s.grid();
      const double h = g.spacing();
      std::vector<double> out(s.size());
      for (std::size_t k = 0; k < s.size(); ++k) {
        double fp = s[g.neighbor(k, axis, 1)], fm = s[g.neighbor(k, axis, -1)];
        out[k] = order == 1 ? (fp - fm) / (2.0 * h) : (fp - 2.0 * s[k] + fm) / (h * h);
      }
      slot.emplace(g, std::move(out));
    }
    return *slot;
  }

  void build_prefix() {
    if (dim_ != 1) return;
    const GridFunction& s = *samples_;
    const int n = s.grid().n();
    const double h = s.grid().spacing();
    prefix_.assign(n + 1, 0.0);
    for (int i = 0; i < n; ++i) prefix_[i + 1] = prefix_[i] + 0.5 * h * (s[i] + s[(i + 1) % n]);
  }

  // Antiderivative of the piecewise-linear interpolant on the universal cover.
  double antiderivative(double x) const {
    const GridFunction& s = *samples_;
    const int n = s.grid().n();
    const double h = s.grid().spacing();
    double periods = std::floor(x);
    double r = (x - periods) * n;
    int i = std::min(static_cast<int>(r), n - 1);
    double w = r - i;
    double vi = s[i], vj = s[(i + 1) % n];
    return periods * prefix_[n] + prefix_[i] + h * (vi * w + 0.5 * (vj - vi) * w * w);
  }

  PotentialKind kind_ = PotentialKind::free;
  int dim_ = 1;
  double amplitude_ = 0.0;
  double asymmetry_ = 0.0;
  double phase_ = 0.0;
  double offset_ = 0.0;
  std::optional<GridFunction> samples_;
  std::vector<double> prefix_;
  mutable std::array<std::optional<GridFunction>, 4> derivative_cache_;
};

enum class HamiltonianKind { mechanical, quadratic_generic };

/// Extra terms of the generic Tonelli family
///   H(x,p) = a(x)|p|^2/2 + <w,p> + kappa (sqrt(1+|p|^2) - 1) + V(x),
///   a(x) = metric_base + metric_ripple cos(2 pi x_0).
struct GenericTerms {
  double metric_base = 1.0;
  double metric_ripple = 0.0;
  double kappa = 0.0;
  Coord drift{0.0, 0.0};
};

/// A Tonelli Hamiltonian together with its critical value.
class HamiltonianSpec {
 public:
  /// H(x,p) = |p|^2/2 + V(x). The critical value of such a system is max V.
  static HamiltonianSpec mechanical(const Potential& v) {
    HamiltonianSpec h(HamiltonianKind::mechanical, v);
    h.critical_value_ = v.maximum();
    h.normalized_ = std::abs(h.critical_value_) <= 1e-12;
    return h;
  }

  static HamiltonianSpec quadratic_generic(const GenericTerms& terms, const Potential& v) {
    if (!(terms.metric_base > std::abs(terms.metric_ripple)))
      throw Error("quadratic_generic: metric must stay positive (base > |ripple|)");
    if (terms.kappa < 0.0) throw Error("quadratic_generic: kappa must be non-negative");
    HamiltonianSpec h(HamiltonianKind::quadratic_generic, v);
    h.terms_ = terms;
    h.critical_value_ = std::numeric_limits<double>::quiet_NaN();
    h.normalized_ = false;
    return h;
  }

  /// Declares a critical value obtained elsewhere and shifts it to zero. This is the only
  /// way to normalize a generic Hamiltonian; no estimate is attempted here.
  HamiltonianSpec with_declared_critical_value(double c) const {
    HamiltonianSpec h(*this);
    h.potential_ = potential_.shifted(-c);
    h.critical_value_ = 0.0;
    h.normalized_ = true;
    return h;
  }

  HamiltonianKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return potential_.dim(); }
  const Potential& potential() const noexcept { return potential_; }
  const GenericTerms& terms() const noexcept { return terms_; }
  double critical_value() const noexcept { return critical_value_; }
  bool normalized() const noexcept { return normalized_; }
  bool reversible() const noexcept {
    return kind_ == HamiltonianKind::mechanical ||
           (terms_.drift[0] == 0.0 && terms_.drift[1] == 0.0);
  }

  double metric(const Coord& x) const {
    return terms_.metric_base + terms_.metric_ripple * std::cos(kTwoPi * x[0]);
  }

 private:
  HamiltonianSpec(HamiltonianKind kind, const Potential& v) : kind_(kind), potential_(v) {}

  HamiltonianKind kind_;
  Potential potential_;
  GenericTerms terms_;
  double critical_value_ = 0.0;
  bool normalized_ = false;
};

namespace detail {
inline double dot(const Coord& a, const Coord& b, int dim) {
  double s = 0.0;
  for (int k = 0; k < dim; ++k) s += a[k] * b[k];
  return s;
}
}  // namespace detail

inline double hamiltonian_value(const HamiltonianSpec& h, const Coord& x, const Coord& p) {
  const int d = h.dim();
  const double p2 = detail::dot(p, p, d);
  if (h.kind() == HamiltonianKind::mechanical) return 0.5 * p2 + h.potential().value(x);
  const auto& t = h.terms();
  return 0.5 * h.metric(x) * p2 + detail::dot(t.drift, p, d) +
         t.kappa * (std::sqrt(1.0 + p2) - 1.0) + h.potential().value(x);
}

/// dH/dp, the velocity of the Hamiltonian vector field.
inline Coord hamiltonian_dp(const HamiltonianSpec& h, const Coord& x, const Coord& p) {
  Coord v{0.0, 0.0};
  const int d = h.dim();
  if (h.kind() == HamiltonianKind::mechanical) {
    for (int k = 0; k < d; ++k) v[k] = p[k];
    return v;
  }
  const auto& t = h.terms();
  const double a = h.metric(x);
  const double s = std::sqrt(1.0 + detail::dot(p, p, d));
  for (int k = 0; k < d; ++k) v[k] = a * p[k] + t.drift[k] + t.kappa * p[k] / s;
  return v;
}

/// dH/dx.
inline Coord hamiltonian_dx(const HamiltonianSpec& h, const Coord& x, const Coord& p) {
  Coord g = h.potential().gradient(x);
  if (h.kind() == HamiltonianKind::quadratic_generic) {
    const double p2 = detail::dot(p, p, h.dim());
    g[0] += -0.5 * kTwoPi * h.terms().metric_ripple * std::sin(kTwoPi * x[0]) * p2;
  }
  return g;
}

/// The Legendre point p = L_v(x, v), i.e. the solution of dH/dp(x, p) = v.
inline Coord legendre_momentum(const HamiltonianSpec& h, const Coord& x, const Coord& v) {
  const int d = h.dim();
  if (h.kind() == HamiltonianKind::mechanical) {
    Coord p{0.0, 0.0};
    for (int k = 0; k < d; ++k) p[k] = v[k];
    return p;
  }
  // Damped Newton on the strictly convex function p -> H(x,p) - <p,v>.
  const auto& t = h.terms();
  const double a = h.metric(x);
  Coord p{0.0, 0.0};
  for (int k = 0; k < d; ++k) p[k] = (v[k] - t.drift[k]) / (a + t.kappa);
  auto objective = [&](const Coord& q) {
    return hamiltonian_value(h, x, q) - detail::dot(q, v, d);
  };
  std::vector<double> history;
  for (int it = 0; it < 50; ++it) {
    Coord g = hamiltonian_dp(h, x, p);
    double res = 0.0;
    for (int k = 0; k < d; ++k) {
      g[k] -= v[k];
      res = std::max(res, std::abs(g[k]));
    }
    history.push_back(res);
    if (res <= 1e-10) return p;
    const double s2 = 1.0 + detail::dot(p, p, d);
    const double s = std::sqrt(s2);
    // Hessian a I + kappa (I/s - p p^T / s^3).
    double h00 = a + t.kappa * (1.0 / s - p[0] * p[0] / (s2 * s));
    Coord step{0.0, 0.0};
    if (d == 1) {
      step[0] = -g[0] / h00;
    } else {
      double h11 = a + t.kappa * (1.0 / s - p[1] * p[1] / (s2 * s));
      double h01 = -t.kappa * p[0] * p[1] / (s2 * s);
      double det = h00 * h11 - h01 * h01;
      step[0] = -(h11 * g[0] - h01 * g[1]) / det;
      step[1] = -(-h01 * g[0] + h00 * g[1]) / det;
    }
    double f0 = objective(p);
    double lambda = 1.0;
    Coord trial = p;
    for (int ls = 0; ls < 30; ++ls) {
      for (int k = 0; k < d; ++k) trial[k] = p[k] + lambda * step[k];
      if (objective(trial) <= f0 + 1e-14 * (1.0 + std::abs(f0))) break;
      lambda *= 0.5;
    }
    p = trial;
  }
  throw NonConvergence("legendre_momentum: Newton did not converge in 50 iterations "
                       "(input is probably not Tonelli)",
                       std::move(history));
}

/// L(x,v) = sup_p { <p,v> - H(x,p) }.
inline double lagrangian_value(const HamiltonianSpec& h, const Coord& x, const Coord& v) {
  if (h.kind() == HamiltonianKind::mechanical)
    return 0.5 * detail::dot(v, v, h.dim()) - h.potential().value(x);
  Coord p = legendre_momentum(h, x, v);
  return detail::dot(p, v, h.dim()) - hamiltonian_value(h, x, p);
}

/// E(x,v) = L_v(x,v) v - L(x,v).
inline double energy(const HamiltonianSpec& h, const Coord& x, const Coord& v) {
  Coord p = legendre_momentum(h, x, v);
  return detail::dot(p, v, h.dim()) - lagrangian_value(h, x, v);
}

/// Shifts V so that c[H] = 0. Mechanical Hamiltonians only: their critical value is max V.
inline HamiltonianSpec normalize_critical_value(const HamiltonianSpec& h) {
  if (h.kind() != HamiltonianKind::mechanical)
    throw UnsupportedKind("normalize_critical_value: only mechanical Hamiltonians have a "
                          "closed-form critical value");
  if (h.normalized()) return h;
  return HamiltonianSpec::mechanical(h.potential().shifted(-h.potential().maximum()));
}

}  // namespace wkam
