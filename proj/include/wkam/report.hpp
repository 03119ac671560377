#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace wkam {

/// One numeric verdict: residual compared with a tolerance.
struct Check {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline nlohmann::json json_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline nlohmann::json to_json(const Check& c) {
  return {{"condition", c.name},
          {"residual", json_real(c.residual)},
          {"tolerance", json_real(c.tolerance)},
          {"verdict", c.pass ? "PASS" : "FAIL"}};
}

/// A named list of checks plus free-form data.
struct Report {
  std::string name;
  std::vector<Check> checks;
  nlohmann::json data = nlohmann::json::object();

  /// Records residual <= tolerance.
  Check& expect_le(std::string what, double residual, double tolerance) {
    checks.push_back({std::move(what), residual, tolerance, residual <= tolerance});
    return checks.back();
  }
  /// Records residual > tolerance (the check passes when the quantity exceeds the bound).
  Check& expect_gt(std::string what, double residual, double tolerance) {
    checks.push_back({std::move(what), residual, tolerance, residual > tolerance});
    return checks.back();
  }
  Check& expect(std::string what, bool ok, double residual = 0.0, double tolerance = 0.0) {
    checks.push_back({std::move(what), residual, tolerance, ok});
    return checks.back();
  }

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) arr.push_back(wkam::to_json(c));
    return {{"schema", 1}, {"report", name}, {"pass", pass()}, {"checks", arr}, {"data", data}};
  }
};

}  // namespace wkam
