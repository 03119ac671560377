#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "wkam/action_kernel.hpp"
#include "wkam/config.hpp"
#include "wkam/controllability.hpp"
#include "wkam/cut_locus.hpp"
#include "wkam/dynamics.hpp"
#include "wkam/error.hpp"
#include "wkam/kernel_diagnostics.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/parallel.hpp"
#include "wkam/report.hpp"

namespace wkam {

enum ExitCode : int { kExitPass = 0, kExitFail = 1, kExitConfig = 2, kExitMissing = 3 };

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> s{"adjunction", "attainability", "cutlocus",
                                          "controllability", "dynamics"};
  return s;
}

inline const std::vector<std::string>& export_targets() {
  static const std::vector<std::string> s{"function", "kernel", "cutprofile", "arcs"};
  return s;
}

namespace detail {

namespace fs = std::filesystem;

inline fs::path out_dir(const ExperimentConfig& c) {
  fs::path p(c.output.dir);
  fs::create_directories(p);
  return p;
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
}

template <class Writer>
void write_with(const fs::path& p, Writer&& w) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  w(os);
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw MissingArtifact("missing artifact " + p.string());
  return nlohmann::json::parse(is);
}

// The timestamp is the only non-deterministic field of any output.
inline nlohmann::json metadata(const ExperimentConfig& c) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  return {{"generated", ts.str()}, {"config", to_ini(c)}};
}

inline void write_reports(const fs::path& json_path, const fs::path& csv_path,
                          const std::string& suite, const std::vector<Report>& reports,
                          const ExperimentConfig& c) {
  nlohmann::json arr = nlohmann::json::array();
  bool pass = true;
  for (const auto& r : reports) {
    arr.push_back(r.to_json());
    pass = pass && r.pass();
  }
  nlohmann::json j{{"schema", 1}, {"suite", suite}, {"pass", pass}, {"reports", arr},
                   {"meta", metadata(c)}};
  write_file(json_path, j.dump(2) + "\n");
  write_with(csv_path, [&](std::ostream& os) {
    os << "report,condition,residual,tolerance,verdict\n";
    for (const auto& r : reports)
      for (const auto& ch : r.checks)
        os << r.name << ",\"" << ch.name << "\"," << format_real(ch.residual) << ','
           << format_real(ch.tolerance) << ',' << (ch.pass ? "PASS" : "FAIL") << '\n';
  });
}

inline std::string short_real(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline bool all_pass(const std::vector<Report>& reports) {
  for (const auto& r : reports)
    if (!r.pass()) return false;
  return true;
}

inline KernelLadder build_ladder(const ExperimentConfig& c, std::ostream& log) {
  set_worker_count(c.run.workers);
  const auto start = std::chrono::steady_clock::now();
  KernelLadder ladder(make_hamiltonian(c), make_grid(c), make_kernel_options(c));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "ladder: " << ladder.levels() << " levels up to t = " << ladder.t_max() << " in "
      << std::fixed << std::setprecision(2) << secs << " s\n"
      << std::defaultfloat;
  return ladder;
}

inline double or_default(double configured, double fallback) {
  return configured > 0.0 ? configured : fallback;
}

inline nlohmann::json json_list(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(json_real(x));
  return a;
}

inline double json_number(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw Error("unexpected value " + s);
  }
  return j.get<double>();
}

inline nlohmann::json to_json(const CutProfile& p) {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& s : p.barrier.snapshots)
    b.push_back(std::vector<double>(s.values().begin(), s.values().end()));
  return {{"schema", 1},
          {"u", wkam::to_json(p.u)},
          {"tau", json_list(p.tau)},
          {"cut_set", p.cut_set},
          {"aubry_set", p.aubry_set},
          {"tolerance", p.tol},
          {"aubry_tolerance", p.aubry_tol},
          {"t_max", p.t_max},
          {"barrier_times", p.barrier.times},
          {"barrier", b}};
}

inline CutProfile cut_profile_from_json(const nlohmann::json& j) {
  CutProfile p{grid_function_from_json(j.at("u")), {}, {}, {}, {}, {}, {}, 0.0, 0.0, 0.0};
  for (const auto& v : j.at("tau")) p.tau.push_back(json_number(v));
  p.cut_set = j.at("cut_set").get<std::vector<std::size_t>>();
  p.aubry_set = j.at("aubry_set").get<std::vector<std::size_t>>();
  p.tol = j.at("tolerance").get<double>();
  p.aubry_tol = j.at("aubry_tolerance").get<double>();
  p.t_max = j.at("t_max").get<double>();
  p.barrier.tag = OperatorTag::t_plus;
  const auto times = j.at("barrier_times").get<std::vector<double>>();
  const auto& vals = j.at("barrier");
  for (std::size_t k = 0; k < times.size(); ++k)
    p.barrier.push(times[k], GridFunction(p.u.grid(), vals.at(k).get<std::vector<double>>()));
  if (p.u.grid().dim() == 1) std::tie(p.gstar, p.gsharp) = graph_partition(p.u);
  return p;
}

inline CutProfile compute_cut_profile(const ExperimentConfig& c, const KernelLadder& ladder,
                                      const GridFunction& u) {
  const double tol = or_default(c.tolerances.tau, default_tau_tol(u, ladder));
  return cut_time_map(u, ladder, tol);
}

// Calibrated arcs of u: backward flows from (x, D*u(x)) at every N/16-th node, for
// min(1, T_max) time units.
inline std::vector<std::pair<std::size_t, CharacteristicArc>> calibrated_arcs(
    const CutProfile& p, const HamiltonianSpec& h, double step) {
  const TorusGrid& g = p.u.grid();
  if (g.dim() != 1) throw Error("arcs: only dim = 1 is supported");
  DifferentialData dd = differential_data(p.u);
  const std::size_t stride = std::max<std::size_t>(1, g.size() / 16);
  const double span = std::min(1.0, p.t_max);
  std::vector<std::pair<std::size_t, CharacteristicArc>> arcs;
  for (std::size_t i = 0; i < g.size(); i += stride) {
    const double x = dd.singular[i] ? dd.kink_location[i] : g.coordinate(i)[0];
    arcs.emplace_back(i, flow(h, Coord{x, 0}, Coord{dd.reachable(i).front(), 0}, -span, step));
  }
  return arcs;
}

inline std::vector<Report> suite_adjunction(const ExperimentConfig& c, const KernelLadder& ladder,
                                            std::ostream& log) {
  Report r;
  r.name = "adjunction";
  double order = 0.0, triple_plus = 0.0, triple_minus = 0.0;
  for (double t : c.times.ladder) {
    auto k = ladder.kernel_at(ladder.snap(t));
    for (auto seed : c.run.seeds) {
      GridFunction phi = random_grid_function(ladder.grid(), seed);
      GridFunction mp = t_minus(t_plus(phi, *k), *k);
      GridFunction pm = t_plus(t_minus(phi, *k), *k);
      for (std::size_t i = 0; i < phi.size(); ++i)
        order = std::max({order, phi[i] - mp[i], pm[i] - phi[i]});
      TripleIdentity tri = triple_identity_check(phi, *k);
      triple_plus = std::max(triple_plus, tri.plus);
      triple_minus = std::max(triple_minus, tri.minus);
    }
  }
  const double tol = c.tolerances.identity;
  r.expect_le("T-T+ phi >= phi >= T+T- phi (worst violation)", order, tol);
  r.expect_le("T+T-T+ phi = T+ phi", triple_plus, tol);
  r.expect_le("T-T+T- phi = T- phi", triple_minus, tol);
  r.data["functions"] = c.run.seeds.size();
  r.data["times"] = c.times.ladder;
  log << "adjunction: worst residual " << std::max({order, triple_plus, triple_minus}) << '\n';
  return {r};
}

inline std::vector<Report> suite_attainability(const ExperimentConfig& c,
                                               const KernelLadder& ladder, std::ostream& log,
                                               const std::filesystem::path& dir) {
  auto family = attainability_family(ladder, c.run.seeds);
  Report summary;
  summary.name = "attainability_family";
  std::vector<Report> out;
  std::size_t agree = 0;
  std::ostringstream csv;
  csv << "seed,constructed_attainable,t0,residual_1,residual_2,residual_3,tolerance,verdict_1,"
         "verdict_2,verdict_3,agree\n";
  for (const auto& m : family) {
    const double tol = or_default(c.tolerances.attainability, default_commutator_tol(m.phi));
    AttainabilityResult a = attainability_check(m.phi, ladder, m.t0, tol, c.times.step);
    agree += a.agree();
    csv << m.seed << ',' << m.constructed_attainable << ',' << format_real(m.t0);
    for (double v : a.residual) csv << ',' << format_real(v);
    csv << ',' << format_real(tol);
    for (bool v : a.verdict) csv << ',' << (v ? "PASS" : "FAIL");
    csv << ',' << a.agree() << '\n';
    a.report.name = "attainability_seed_" + std::to_string(m.seed);
    a.report.data["constructed_attainable"] = m.constructed_attainable;
    out.push_back(std::move(a.report));
    log << "attainability seed " << m.seed << (m.constructed_attainable ? " (built)" : " (control)")
        << ": verdicts agree = " << a.agree() << '\n';
  }
  write_file(dir / "attainability_family.csv", csv.str());
  summary.expect_le("members whose verdicts disagree",
                    static_cast<double>(family.size() - agree), 0.0);
  out.insert(out.begin(), std::move(summary));
  return out;
}

inline std::vector<Report> suite_cutlocus(const ExperimentConfig& c, const KernelLadder& ladder,
                                          std::ostream& log, const std::filesystem::path& dir) {
  GridFunction u = make_function(c, ladder);
  CutProfile p = compute_cut_profile(c, ladder, u);
  std::vector<Report> out;
  out.push_back(barrier(u, ladder, p.tol).report);
  Report sets;
  sets.name = "cut_structure";
  sets.expect("cut set non-empty", !p.cut_set.empty(), static_cast<double>(p.cut_set.size()));
  sets.expect("Aubry set non-empty", !p.aubry_set.empty(),
              static_cast<double>(p.aubry_set.size()));
  sets.data = summary_json(p);
  if (u.grid().dim() == 1) {
    const double tau_quarter = tau_at(p, Coord{0.25, 0});
    sets.data["tau_at_0.25"] = json_real(tau_quarter);
    log << "cutlocus: tau(0.25) = " << format_real(tau_quarter) << '\n';
  }
  out.push_back(std::move(sets));
  if (u.grid().dim() == 1) {
    for (double t : c.times.level_sets) {
      LevelSetResult ls = level_set_identity_check(p, ladder, t, c.times.step, c.tolerances.limit,
                                                   c.tolerances.level_set_slack);
      ls.report.name = "level_set_t_" + short_real(ladder.snap(t));
      out.push_back(std::move(ls.report));
      for (auto v : {BilipVariant::gstar, BilipVariant::gsharp}) {
        BilipResult b = bilip_diagnostic(p, ladder, t, v, c.times.step);
        b.report.name += "_t_" + short_real(ladder.snap(t));
        b.report.data["forward"] = json_real(b.forward);
        b.report.data["inverse"] = json_real(b.inverse);
        out.push_back(std::move(b.report));
      }
    }
  }
  write_with(dir / "cutprofile.csv", [&](std::ostream& os) { write_csv(os, p); });
  write_file(dir / "cutprofile.json", to_json(p).dump() + "\n");
  return out;
}

inline std::vector<Report> suite_controllability(const ExperimentConfig& c,
                                                 const KernelLadder& ladder, std::ostream& log,
                                                 const std::filesystem::path& dir) {
  GridFunction phi = make_function(c, ladder);
  const double t0 = ladder.snap(c.times.t0);
  const double tol = or_default(c.tolerances.attainability, default_commutator_tol(phi));
  std::vector<Report> out;
  AttainabilityResult a = attainability_check(phi, ladder, t0, tol, c.times.step);
  out.push_back(a.report);
  if (a.verdict[0]) {
    KantorovichPair kp = kantorovich_pair(phi, ladder, t0, tol);
    Report k;
    k.name = "kantorovich_pair";
    k.expect_le("phi = T-_{t0} psi", kp.residual_phi, tol);
    k.expect_le("psi = T+_{t0} phi", kp.residual_psi, 1e-12);
    out.push_back(std::move(k));
  }
  if (phi.grid().dim() == 1) {
    ContactOptions co;
    co.slices = c.times.slices;
    co.contact_tol = c.tolerances.contact;
    co.gradient_contact_tol = c.tolerances.gradient_contact;
    co.deriv_tol = c.tolerances.derivative;
    co.step = c.times.step;
    ContactResult cs = contact_sets(phi, std::nullopt, ladder, t0, co);
    out.push_back(cs.report);
    write_with(dir / "contact_region.csv", [&](std::ostream& os) { write_csv(os, cs.region); });
    log << "controllability: contact fraction at time 0 = "
        << contact_fraction(cs.region, cs.region.times.size() - 1) << '\n';

    // Initial-data characterizations need a weak KAM solution.
    const double sol_tol = default_tau_tol(phi, ladder);
    if (solution_residual(phi, ladder, ladder.times()) <= sol_tol) {
      CutProfile p = cut_time_map(phi, ladder, sol_tol);
      GridFunction canonical = t_plus(phi, ladder, t0);
      std::vector<double> bump(canonical.values().begin(), canonical.values().end());
      std::vector<double> dip = bump;
      for (std::size_t i = 0; i < bump.size(); ++i)
        if (p.tau[i] < 0.5 * t0) bump[i] += 0.05;
      std::size_t deep = p.aubry_set.empty() ? 0 : p.aubry_set.front();
      dip[deep] -= 0.1;
      struct Case {
        const char* name;
        GridFunction psi;
        bool expect_attained;
      };
      const Case cases[] = {{"canonical", canonical, true},
                            {"bump_off_superlevel", GridFunction(phi.grid(), bump), true},
                            {"dip_on_superlevel", GridFunction(phi.grid(), dip), false}};
      for (const auto& cs_case : cases) {
        InitialDataResult r = initial_data_characterization(p, cs_case.psi, ladder, t0, tol);
        r.report.name = std::string("initial_data_") + cs_case.name;
        r.report.expect("verdict matches the construction", r.verdict_a == cs_case.expect_attained);
        out.push_back(std::move(r.report));
      }
    }
  }
  return out;
}

inline std::vector<Report> suite_dynamics(const ExperimentConfig& c, const KernelLadder& ladder,
                                          std::ostream& log, const std::filesystem::path& dir) {
  const HamiltonianSpec& h = ladder.spec();
  const TorusGrid& g = ladder.grid();
  std::vector<Report> out;
  if (g.dim() != 1) {
    Report r;
    r.name = "dynamics";
    r.expect("dim = 1 required", false);
    return {r};
  }
  const double t0 = ladder.snap(c.times.t0);
  const std::pair<double, double> pairs[] = {{0.0, 0.25}, {0.25, 0.5}, {0.1, 0.3}};
  for (auto [x, y] : pairs) {
    DerivativeCheck d = kernel_derivative_check(ladder, t0, Coord{x, 0}, Coord{y, 0},
                                                c.tolerances.derivative);
    d.report.name = "kernel_derivative_" + short_real(x) + "_" + short_real(y);
    out.push_back(std::move(d.report));
  }

  const double tl = ladder.snap(c.times.long_minimizer);
  auto k = ladder.kernel_at(tl);
  CharacteristicArc arc =
      minimizer_refine(relay_path(*k, g.nearest({0.25, 0}), g.nearest({0.75, 0})), h);
  Report energy;
  energy.name = "long_minimizer_energy";
  energy.expect("refined", arc.refined);
  energy.expect_le("max |H| along the minimizer", max_abs_energy(arc, h), c.tolerances.energy);
  energy.data["t"] = tl;
  out.push_back(std::move(energy));
  write_with(dir / "long_minimizer.csv", [&](std::ostream& os) { write_csv(os, arc, h); });

  // Graph evolution always uses the corner function min(cos 2 pi k x, level).
  ExperimentConfig corner = c;
  corner.function.kind = "corner";
  GridFunction phi = make_function(corner, ladder);
  const double tg = ladder.snap(c.times.graph_evolution);
  const double tau1 = tau1_estimate(phi, ladder, default_c_bound(g)).tau;
  GraphEvolutionResult ge = graph_evolution_check(
      phi, ladder, tg, or_default(c.tolerances.hausdorff, 2.0 * g.spacing()), tau1);
  ge.report.data["tau1"] = json_real(tau1);
  ge.report.data["function"] = "corner";
  log << "dynamics: graph evolution distance " << ge.distance << " at t = " << tg << '\n';
  out.push_back(std::move(ge.report));
  return out;
}

}  // namespace detail

/// Builds the ladder, writes every level (binary plus JSON sidecar) and a report with
/// derivative checks, the free-particle closed-form error table or the Peierls
/// convergence log.
inline int cmd_kernel(const ExperimentConfig& c, std::ostream& log) {
  namespace fs = std::filesystem;
  const fs::path dir = detail::out_dir(c) / "kernel";
  fs::create_directories(dir);
  KernelLadder ladder = detail::build_ladder(c, log);
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t k = 0; k < ladder.levels(); ++k) {
    const std::string name = "level_" + std::to_string(k) + ".bin";
    write_kernel_binary(ladder.level(k), (dir / name).string());
    levels.push_back({{"level", k},
                      {"t", ladder.time(k)},
                      {"file", name},
                      {"min", json_real(ladder.level(k).min_entry())},
                      {"max_finite", json_real(ladder.level(k).max_finite_entry())}});
  }
  std::vector<Report> reports;
  const HamiltonianSpec& h = ladder.spec();
  const TorusGrid& g = ladder.grid();
  if (g.dim() == 1) {
    const double t0 = ladder.snap(c.times.t0);
    DerivativeCheck d = kernel_derivative_check(ladder, t0, Coord{0.0, 0}, Coord{0.25, 0},
                                                c.tolerances.derivative);
    d.report.name = "kernel_derivative";
    reports.push_back(d.report);
  }
  if (c.potential.kind == "free" || c.potential.amplitude == 0.0) {
    detail::write_with(dir / "free_particle_error.csv", [&](std::ostream& os) {
      // Pairs beyond the speed cap are +inf by construction and left out.
      os << "t,max_abs_error,finite_fraction\n";
      for (std::size_t k = 0; k < ladder.levels(); ++k) {
        const ActionKernel& a = ladder.level(k);
        double err = 0.0;
        std::size_t finite = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
          for (std::size_t j = 0; j < g.size(); ++j) {
            if (a(i, j) == kInf) continue;
            ++finite;
            const double d2 = std::pow(periodic_distance(g.coordinate(i), g.coordinate(j), g.dim()), 2);
            err = std::max(err, std::abs(a(i, j) - d2 / (2.0 * a.t())));
          }
        os << format_real(a.t()) << ',' << format_real(err) << ','
           << format_real(static_cast<double>(finite) / static_cast<double>(g.size() * g.size()))
           << '\n';
      }
    });
  } else {
    detail::write_with(dir / "peierls_log.csv", [&](std::ostream& os) {
      os << "t,sup_change\n";
      std::vector<double> history;
      try {
        history = peierls_barrier(ladder, c.tolerances.limit).history;
      } catch (const NonConvergence& e) {
        history = e.history();
        log << "kernel: Peierls barrier not converged by T_max\n";
      }
      for (std::size_t k = 0; k < history.size(); ++k)
        os << format_real(ladder.time(k + 1)) << ',' << format_real(history[k]) << '\n';
    });
  }
  nlohmann::json j{{"schema", 1},
                   {"hamiltonian", to_string(h.potential().kind())},
                   {"N", g.n()},
                   {"dim", g.dim()},
                   {"delta", ladder.base_step()},
                   {"levels", levels},
                   {"reports", nlohmann::json::array()},
                   {"meta", detail::metadata(c)}};
  for (const auto& r : reports) j["reports"].push_back(r.to_json());
  detail::write_file(dir / "kernel.json", j.dump(2) + "\n");
  log << "kernel: wrote " << ladder.levels() << " levels to " << dir.string() << '\n';
  return detail::all_pass(reports) ? kExitPass : kExitFail;
}

/// Runs one property suite; verify_<suite>.json is always written, with a CSV of every
/// check next to it. Exit 0 iff all checks pass.
inline int cmd_verify(const ExperimentConfig& c, const std::string& suite, std::ostream& log) {
  const auto& known = verify_suites();
  if (std::find(known.begin(), known.end(), suite) == known.end())
    throw ConfigError("suite", "unknown suite '" + suite + "'");
  const auto dir = detail::out_dir(c);
  if (!std::filesystem::exists(dir / "kernel" / "kernel.json"))
    log << "warning: no saved ladder in " << (dir / "kernel").string() << ", building one\n";
  KernelLadder ladder = detail::build_ladder(c, log);
  std::vector<Report> reports;
  if (suite == "adjunction") reports = detail::suite_adjunction(c, ladder, log);
  else if (suite == "attainability") reports = detail::suite_attainability(c, ladder, log, dir);
  else if (suite == "cutlocus") reports = detail::suite_cutlocus(c, ladder, log, dir);
  else if (suite == "controllability") reports = detail::suite_controllability(c, ladder, log, dir);
  else reports = detail::suite_dynamics(c, ladder, log, dir);
  detail::write_reports(dir / ("verify_" + suite + ".json"), dir / ("verify_" + suite + ".csv"),
                        suite, reports, c);
  const bool pass = detail::all_pass(reports);
  log << "verify " << suite << ": " << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitPass : kExitFail;
}

/// Cut-time profile of the configured function: cutprofile.csv, cutprofile.json and
/// cuttime_summary.json, plus function.json.
inline int cmd_cuttime(const ExperimentConfig& c, std::ostream& log) {
  const auto dir = detail::out_dir(c);
  KernelLadder ladder = detail::build_ladder(c, log);
  GridFunction u = make_function(c, ladder);
  detail::write_file(dir / "function.json", to_json(u).dump() + "\n");
  CutProfile p = detail::compute_cut_profile(c, ladder, u);
  detail::write_with(dir / "cutprofile.csv", [&](std::ostream& os) { write_csv(os, p); });
  detail::write_file(dir / "cutprofile.json", detail::to_json(p).dump() + "\n");
  nlohmann::json s = summary_json(p);
  if (u.grid().dim() == 1) s["tau_at_0.25"] = json_real(tau_at(p, Coord{0.25, 0}));
  s["meta"] = detail::metadata(c);
  detail::write_file(dir / "cuttime_summary.json", s.dump(2) + "\n");
  log << "cuttime: " << p.cut_set.size() << " cut nodes, " << p.aubry_set.size()
      << " Aubry nodes\n";
  return kExitPass;
}

/// T-, T+ and T-T+ of the configured function at times.ladder: evolution_*.csv, plus
/// function.json and evolve.json with the commutator gaps.
inline int cmd_evolve(const ExperimentConfig& c, std::ostream& log) {
  const auto dir = detail::out_dir(c);
  KernelLadder ladder = detail::build_ladder(c, log);
  GridFunction phi = make_function(c, ladder);
  detail::write_file(dir / "function.json", to_json(phi).dump() + "\n");
  std::vector<double> times;
  for (double t : c.times.ladder) times.push_back(ladder.snap(t));
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  nlohmann::json gaps = nlohmann::json::array();
  for (auto tag : {OperatorTag::t_minus, OperatorTag::t_plus, OperatorTag::t_minus_t_plus}) {
    SemigroupEvolution ev = evolve(phi, ladder, times, tag);
    detail::write_with(dir / ("evolution_" + to_string(tag) + ".csv"),
                       [&](std::ostream& os) { write_csv(os, ev); });
  }
  for (double t : times) {
    auto [first, second] = commutator_gap(phi, ladder, t);
    gaps.push_back({{"t", t}, {"gap_t_minus_t_plus", json_real(first.max())},
                    {"gap_t_plus_t_minus", json_real(second.max())}});
  }
  nlohmann::json j{{"schema", 1}, {"times", times}, {"commutator_gaps", gaps},
                   {"meta", detail::metadata(c)}};
  detail::write_file(dir / "evolve.json", j.dump(2) + "\n");
  log << "evolve: " << times.size() << " times\n";
  return kExitPass;
}

/// Converts stored artifacts to CSV. Missing inputs raise MissingArtifact (exit 3).
///   function    function.json -> function.csv
///   kernel      kernel/level_k.bin of the largest ladder time <= t0 -> kernel_matrix.csv
///   cutprofile  cutprofile.json -> cutprofile.csv
///   arcs        cutprofile.json -> arcs/arc_<node>.csv (calibrated arcs of u)
inline int cmd_export(const ExperimentConfig& c, const std::string& what, std::ostream& log) {
  namespace fs = std::filesystem;
  const auto& known = export_targets();
  if (std::find(known.begin(), known.end(), what) == known.end())
    throw ConfigError("what", "unknown export target '" + what + "'");
  const fs::path dir(c.output.dir);
  if (what == "function") {
    GridFunction f = grid_function_from_json(detail::read_json(dir / "function.json"));
    detail::write_with(dir / "function.csv", [&](std::ostream& os) { write_csv(os, f); });
  } else if (what == "kernel") {
    nlohmann::json meta = detail::read_json(dir / "kernel" / "kernel.json");
    std::string file;
    for (const auto& l : meta.at("levels"))
      if (l.at("t").get<double>() <= c.times.t0 * (1.0 + 1e-12) || file.empty())
        file = l.at("file").get<std::string>();
    ActionKernel k = read_kernel_binary((dir / "kernel" / file).string());
    detail::write_with(dir / "kernel_matrix.csv", [&](std::ostream& os) { write_kernel_csv(os, k); });
    log << "export: kernel at t = " << k.t() << '\n';
  } else {
    CutProfile p = detail::cut_profile_from_json(detail::read_json(dir / "cutprofile.json"));
    if (what == "cutprofile") {
      detail::write_with(dir / "cutprofile.csv", [&](std::ostream& os) { write_csv(os, p); });
    } else {
      const HamiltonianSpec h = make_hamiltonian(c);
      fs::create_directories(dir / "arcs");
      for (const auto& [node, arc] : detail::calibrated_arcs(p, h, c.times.step))
        detail::write_with(dir / "arcs" / ("arc_" + std::to_string(node) + ".csv"),
                           [&](std::ostream& os) { write_csv(os, arc, h); });
    }
  }
  log << "export " << what << ": done\n";
  return kExitPass;
}

}  // namespace wkam
