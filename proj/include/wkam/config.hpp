#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wkam/action_kernel.hpp"
#include "wkam/error.hpp"
#include "wkam/hamiltonian.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/torus_grid.hpp"

namespace wkam {

/// Experiment parameters, read from an INI file with sections
/// [potential] [grid] [kernel] [tolerances] [times] [function] [output] [run].
/// A tolerance of 0 selects the grid-derived default of the corresponding check.
struct ExperimentConfig {
  struct PotentialSection {
    std::string kind = "cosine";  // free | cosine | double_well
    double amplitude = 1.0;
    double phase = 0.0;
    double asymmetry = 0.0;
    bool operator==(const PotentialSection&) const = default;
  } potential;

  struct GridSection {
    int dim = 1;
    int n = 512;
    bool operator==(const GridSection&) const = default;
  } grid;

  struct KernelSection {
    double delta = 1.0 / 1024.0;
    int winding = 1;
    double t_max = 64.0;
    double v_max = 8.0;
    double cost_ceiling = 1e6;
    bool operator==(const KernelSection&) const = default;
  } kernel;

  struct ToleranceSection {
    double identity = 1e-12;
    double commutator = 0.0;     // 10 dx Lip(phi)
    double tau = 0.0;            // 0.1 (dx + delta) Lip(u)
    double limit = 1e-3;
    double attainability = 0.0;  // 10 dx Lip(phi)
    double contact = 1e-3;
    double gradient_contact = 1e-5;
    double derivative = 5e-2;
    double level_set_slack = 6.0;  // cells per boundary point
    double hausdorff = 0.0;        // 2 dx
    double energy = 5e-2;
    bool operator==(const ToleranceSection&) const = default;
  } tolerances;

  struct TimesSection {
    std::vector<double> ladder{0.5, 1.0, 2.0, 4.0};
    std::vector<double> level_sets{0.0625, 0.125, 0.5};
    double t0 = 1.0;
    int slices = 16;
    double step = 1e-3;
    double long_minimizer = 20.0;
    double graph_evolution = 0.01;
    bool operator==(const TimesSection&) const = default;
  } times;

  struct FunctionSection {
    std::string kind = "weak_kam";  // weak_kam | cos | corner | random | csv
    double frequency = 1.0;
    double level = 0.5;
    std::uint64_t seed = 1;
    std::string path;
    bool operator==(const FunctionSection&) const = default;
  } function;

  struct OutputSection {
    std::string dir = "out";
    bool operator==(const OutputSection&) const = default;
  } output;

  struct RunSection {
    std::vector<std::uint64_t> seeds = default_seeds();
    unsigned workers = 0;  // 0: all cores
    bool operator==(const RunSection&) const = default;
  } run;

  bool operator==(const ExperimentConfig&) const = default;

  static std::vector<std::uint64_t> default_seeds() {
    std::vector<std::uint64_t> s;
    for (std::uint64_t k = 0; k < 20; ++k) s.push_back(1000 + k);
    return s;
  }
};

namespace detail {

template <class T>
std::string config_text(const T& v) {
  if constexpr (std::is_same_v<T, double>) return format_real(v);
  else if constexpr (std::is_same_v<T, std::string>) return v;
  else return std::to_string(v);
}

template <class T>
std::string config_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + config_text(v[k]);
  return s;
}

template <class T>
T parse_scalar(const std::string& field, const std::string& text) {
  std::istringstream is(text);
  T v{};
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, double>) {
    try {
      std::size_t used = 0;
      v = std::stod(text, &used);
      if (text.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ConfigError(field, "expected a number, got '" + text + "'");
    }
    return v;
  } else {
    is >> v;
    if (!is || !(is >> std::ws).eof())
      throw ConfigError(field, "expected an integer, got '" + text + "'");
    return v;
  }
}

template <class T>
std::vector<T> parse_list(const std::string& field, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError(field, "empty list entry");
    out.push_back(parse_scalar<T>(field, item.substr(b, e - b + 1)));
  }
  return out;
}

// Visits every (field, value) pair; `f(name, ref)` with name "section.key".
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("potential.kind", c.potential.kind);
  f("potential.amplitude", c.potential.amplitude);
  f("potential.phase", c.potential.phase);
  f("potential.asymmetry", c.potential.asymmetry);
  f("grid.dim", c.grid.dim);
  f("grid.N", c.grid.n);
  f("kernel.delta", c.kernel.delta);
  f("kernel.winding", c.kernel.winding);
  f("kernel.t_max", c.kernel.t_max);
  f("kernel.v_max", c.kernel.v_max);
  f("kernel.cost_ceiling", c.kernel.cost_ceiling);
  f("tolerances.identity", c.tolerances.identity);
  f("tolerances.commutator", c.tolerances.commutator);
  f("tolerances.tau", c.tolerances.tau);
  f("tolerances.limit", c.tolerances.limit);
  f("tolerances.attainability", c.tolerances.attainability);
  f("tolerances.contact", c.tolerances.contact);
  f("tolerances.gradient_contact", c.tolerances.gradient_contact);
  f("tolerances.derivative", c.tolerances.derivative);
  f("tolerances.level_set_slack", c.tolerances.level_set_slack);
  f("tolerances.hausdorff", c.tolerances.hausdorff);
  f("tolerances.energy", c.tolerances.energy);
  f("times.ladder", c.times.ladder);
  f("times.level_sets", c.times.level_sets);
  f("times.t0", c.times.t0);
  f("times.slices", c.times.slices);
  f("times.step", c.times.step);
  f("times.long_minimizer", c.times.long_minimizer);
  f("times.graph_evolution", c.times.graph_evolution);
  f("function.kind", c.function.kind);
  f("function.frequency", c.function.frequency);
  f("function.level", c.function.level);
  f("function.seed", c.function.seed);
  f("function.path", c.function.path);
  f("output.dir", c.output.dir);
  f("run.seeds", c.run.seeds);
  f("run.workers", c.run.workers);
}

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

}  // namespace detail

/// Rejects out-of-range values with a ConfigError naming the field.
inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(field, what);
  };
  static const std::set<std::string> potentials{"free", "cosine", "double_well"};
  static const std::set<std::string> functions{"weak_kam", "cos", "corner", "random", "csv"};
  need(potentials.count(c.potential.kind) == 1, "potential.kind",
       "must be free, cosine or double_well");
  need(std::isfinite(c.potential.amplitude) && c.potential.amplitude >= 0.0,
       "potential.amplitude", "must be finite and non-negative");
  need(std::isfinite(c.potential.phase), "potential.phase", "must be finite");
  need(std::isfinite(c.potential.asymmetry), "potential.asymmetry", "must be finite");
  need(c.grid.dim == 1 || c.grid.dim == 2, "grid.dim", "must be 1 or 2");
  need(c.grid.n >= TorusGrid::kMinResolution, "grid.N", "must be at least 8");
  need(c.grid.dim == 1 || c.grid.n <= 128, "grid.N", "must be at most 128 when dim = 2");
  need(c.kernel.delta > 0.0 && std::isfinite(c.kernel.delta), "kernel.delta", "must be positive");
  need(c.kernel.winding >= 0, "kernel.winding", "must be non-negative");
  need(c.kernel.t_max >= c.kernel.delta, "kernel.t_max", "must be at least kernel.delta");
  need(c.kernel.v_max > 0.0, "kernel.v_max", "must be positive");
  need(c.kernel.cost_ceiling > 0.0, "kernel.cost_ceiling", "must be positive");
  const std::pair<const char*, double> tols[] = {
      {"tolerances.identity", c.tolerances.identity},
      {"tolerances.commutator", c.tolerances.commutator},
      {"tolerances.tau", c.tolerances.tau},
      {"tolerances.limit", c.tolerances.limit},
      {"tolerances.attainability", c.tolerances.attainability},
      {"tolerances.contact", c.tolerances.contact},
      {"tolerances.gradient_contact", c.tolerances.gradient_contact},
      {"tolerances.derivative", c.tolerances.derivative},
      {"tolerances.level_set_slack", c.tolerances.level_set_slack},
      {"tolerances.hausdorff", c.tolerances.hausdorff},
      {"tolerances.energy", c.tolerances.energy}};
  for (auto [name, v] : tols) need(std::isfinite(v) && v >= 0.0, name, "must be non-negative");
  need(c.tolerances.limit > 0.0, "tolerances.limit", "must be positive");
  need(!c.times.ladder.empty(), "times.ladder", "must list at least one time");
  for (double t : c.times.ladder)
    need(t > 0.0 && t <= c.kernel.t_max, "times.ladder", "times must lie in (0, kernel.t_max]");
  for (double t : c.times.level_sets)
    need(t > 0.0 && t <= c.kernel.t_max, "times.level_sets",
         "times must lie in (0, kernel.t_max]");
  need(c.times.t0 > 0.0 && c.times.t0 <= c.kernel.t_max, "times.t0",
       "must lie in (0, kernel.t_max]");
  need(c.times.slices >= 2, "times.slices", "must be at least 2");
  need(c.times.step > 0.0 && c.times.step <= 0.1, "times.step", "must lie in (0, 0.1]");
  need(c.times.long_minimizer > 0.0 && c.times.long_minimizer <= c.kernel.t_max,
       "times.long_minimizer", "must lie in (0, kernel.t_max]");
  need(c.times.graph_evolution > 0.0 && c.times.graph_evolution <= c.kernel.t_max,
       "times.graph_evolution", "must lie in (0, kernel.t_max]");
  need(functions.count(c.function.kind) == 1, "function.kind",
       "must be weak_kam, cos, corner, random or csv");
  need(c.function.kind != "csv" || !c.function.path.empty(), "function.path",
       "required when function.kind = csv");
  need(std::isfinite(c.function.frequency), "function.frequency", "must be finite");
  need(std::isfinite(c.function.level), "function.level", "must be finite");
  need(!c.output.dir.empty(), "output.dir", "must not be empty");
  need(!c.run.seeds.empty(), "run.seeds", "must list at least one seed");
}

/// Parses INI text; unknown sections or keys are errors. The result is validated.
inline ExperimentConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", e.message() + " at line " + std::to_string(e.line()));
  }
  ExperimentConfig c;
  std::set<std::string> known;
  detail::visit_fields(c, [&](const std::string& name, auto& ref) {
    known.insert(name);
    auto text = tree.get_optional<std::string>(pt::ptree::path_type(name, '.'));
    if (!text) return;
    using T = std::decay_t<decltype(ref)>;
    if constexpr (detail::is_vector<T>::value)
      ref = detail::parse_list<typename T::value_type>(name, *text);
    else
      ref = detail::parse_scalar<T>(name, *text);
  });
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "unknown top-level key");
    for (const auto& [key, value] : body) {
      (void)value;
      if (!known.count(section + "." + key)) throw ConfigError(section + "." + key, "unknown key");
    }
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("config file not found: " + path);
  return parse_config(in);
}

/// INI text that parses back to an equal config.
inline std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  std::string section;
  detail::visit_fields(c, [&](const std::string& name, const auto& ref) {
    const auto dot = name.find('.');
    const std::string s = name.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    using T = std::decay_t<decltype(ref)>;
    os << name.substr(dot + 1) << " = ";
    if constexpr (detail::is_vector<T>::value) os << detail::config_list(ref);
    else os << detail::config_text(ref);
    os << '\n';
  });
  return os.str();
}

/// The configured Hamiltonian |p|^2/2 + V with c[H] normalized to 0.
inline HamiltonianSpec make_hamiltonian(const ExperimentConfig& c) {
  const auto& p = c.potential;
  const int dim = c.grid.dim;
  Potential v = p.kind == "free"     ? Potential::free_particle(dim)
                : p.kind == "cosine" ? Potential::cosine(p.amplitude, p.phase, dim)
                                     : Potential::double_well(p.amplitude, p.asymmetry, p.phase, dim);
  return normalize_critical_value(HamiltonianSpec::mechanical(v));
}

inline TorusGrid make_grid(const ExperimentConfig& c) { return TorusGrid(c.grid.dim, c.grid.n); }

inline KernelOptions make_kernel_options(const ExperimentConfig& c) {
  KernelOptions o;
  o.base_step = c.kernel.delta;
  o.winding = c.kernel.winding;
  o.t_max = c.kernel.t_max;
  o.v_max = c.kernel.v_max;
  o.cost_ceiling = c.kernel.cost_ceiling;
  return o;
}

/// Grid function with i.i.d. uniform values in [-amplitude, amplitude].
inline GridFunction random_grid_function(const TorusGrid& g, std::uint64_t seed,
                                         double amplitude = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  std::vector<double> v(g.size());
  for (double& x : v) x = u(rng);
  return GridFunction(g, std::move(v));
}

/// The configured initial function:
///   weak_kam  S-0 = lim T-_t 0 along the ladder,
///   cos       cos(2 pi k x) summed over axes,
///   corner    min(cos(2 pi k x), level),
///   random    uniform random node values,
///   csv       read from function.path.
inline GridFunction make_function(const ExperimentConfig& c, const KernelLadder& ladder) {
  const TorusGrid& g = ladder.grid();
  const auto& f = c.function;
  auto wave = [&](const Coord& x) {
    double s = 0.0;
    for (int a = 0; a < g.dim(); ++a) s += std::cos(kTwoPi * f.frequency * x[a]);
    return s;
  };
  if (f.kind == "weak_kam")
    return weak_kam_limit(GridFunction(g), ladder, LimitDirection::minus, c.tolerances.limit).value;
  if (f.kind == "cos") return GridFunction::sample(g, wave);
  if (f.kind == "corner")
    return GridFunction::sample(g, [&](const Coord& x) { return std::min(wave(x), f.level); });
  if (f.kind == "random") return random_grid_function(g, f.seed);
  std::ifstream in(f.path);
  if (!in) throw MissingArtifact("function.path not found: " + f.path);
  GridFunction phi = read_csv(in);
  if (phi.grid() != g) throw ConfigError("function.path", "grid does not match [grid]");
  return phi;
}

}  // namespace wkam
