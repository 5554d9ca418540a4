#pragma once

// Strict JSON config reading. Every object is read through an ObjectReader,
// which rejects keys nobody asked for.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "flowjac/distributions.hpp"
#include "flowjac/errors.hpp"
#include "flowjac/integrator.hpp"
#include "flowjac/jvp.hpp"
#include "flowjac/linalg.hpp"
#include "flowjac/neural_flow.hpp"

namespace flowjac {

using json = nlohmann::json;

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline bool is_non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  ObjectReader(const ObjectReader&) = delete;
  ObjectReader& operator=(const ObjectReader&) = delete;

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(path(key) + ": missing required field");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), key);
  }

  template <class T>
  T require(const std::string& key) {
    return convert<T>(raw(key), key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  /// Throws on any key that was never read.
  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : j_.items())
      if (!seen_.contains(key)) unknown.push_back(key);
    if (unknown.empty()) return;
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError(where_ + ": unknown field(s): " + list);
  }

 private:
  template <class T>
  T convert(const json& v, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
        return v.get<double>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
        return v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!is_non_negative_integer(v)) {
          throw ConfigError(path(key) + ": expected a non-negative integer");
        }
        return v.get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
        return v.get<std::string>();
      } else {
        return v.get<T>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Vector parse_vector(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

/// Row-major array of arrays.
inline Matrix parse_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError(where + ": rows must be non-empty arrays");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw ConfigError(where + ": ragged matrix");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw ConfigError(where + ": expected numbers");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
    }
  }
  return m;
}

inline json matrix_rows_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// {"mean": [...], "cov": [[...], ...]}. A covariance that is not SPD raises
/// NotSpd (a numerical failure), every other defect ConfigError.
inline GaussianSpec parse_gaussian(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  Vector mean = parse_vector(r.raw("mean"), r.path("mean"));
  Matrix cov = parse_matrix(r.raw("cov"), r.path("cov"));
  r.finish();
  if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
    throw ConfigError(where + ": cov must be square with the same dimension as mean");
  }
  return {std::move(mean), SpdMatrix(std::move(cov))};
}

inline json gaussian_json(const GaussianSpec& g) {
  return {{"mean", vector_json(g.mean)}, {"cov", matrix_rows_json(g.cov.matrix())}};
}

/// {"weights": [...], "components": [gaussian, ...]}.
inline MixtureSpec parse_mixture(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  Vector w = parse_vector(r.raw("weights"), r.path("weights"));
  const json& comps = r.raw("components");
  if (!comps.is_array() || comps.empty()) throw ConfigError(where + ".components: expected a non-empty array");
  std::vector<GaussianSpec> specs;
  for (std::size_t k = 0; k < comps.size(); ++k)
    specs.push_back(parse_gaussian(comps[k], where + ".components[" + std::to_string(k) + "]"));
  r.finish();
  try {
    return {std::move(w), std::move(specs)};
  } catch (const DimensionMismatch& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline json mixture_json(const MixtureSpec& m) {
  json comps = json::array();
  for (const auto& c : m.components) comps.push_back(gaussian_json(c));
  return {{"weights", vector_json(m.weights)}, {"components", std::move(comps)}};
}

struct SolverConfig {
  std::size_t steps = kDefaultSteps;
  Scheme scheme = kDefaultScheme;

  std::string label() const { return std::string(to_string(scheme)) + "/" + std::to_string(steps); }
};

inline SolverConfig parse_solver(const json& j, const std::string& where, SolverConfig fallback = {}) {
  ObjectReader r(j, where);
  SolverConfig s;
  s.steps = r.get<std::size_t>("steps", fallback.steps);
  s.scheme = parse_scheme(r.get<std::string>("scheme", std::string(to_string(fallback.scheme))));
  r.finish();
  if (s.steps < 1) throw ConfigError(where + ".steps must be >= 1");
  return s;
}

inline json solver_json(const SolverConfig& s) { return {{"steps", s.steps}, {"scheme", to_string(s.scheme)}}; }

inline TrainConfig parse_training(const json& j, const std::string& where, TrainConfig fallback) {
  ObjectReader r(j, where);
  TrainConfig c = fallback;
  c.steps = r.get<std::size_t>("steps", fallback.steps);
  c.batch_size = r.get<std::size_t>("batch_size", fallback.batch_size);
  c.learning_rate = r.get<double>("learning_rate", fallback.learning_rate);
  c.beta1 = r.get<double>("beta1", fallback.beta1);
  c.beta2 = r.get<double>("beta2", fallback.beta2);
  c.eps_opt = r.get<double>("eps_opt", fallback.eps_opt);
  const std::string schedule = r.get<std::string>("lr_schedule", std::string(to_string(fallback.schedule)));
  if (schedule == "constant") {
    c.schedule = LrSchedule::constant;
  } else if (schedule == "cosine") {
    c.schedule = LrSchedule::cosine;
  } else {
    throw ConfigError(where + ".lr_schedule: expected constant or cosine");
  }
  r.finish();
  if (c.batch_size < 1) throw ConfigError(where + ".batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError(where + ".learning_rate must be > 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ConfigError(where + ": beta1 and beta2 must lie in [0, 1)");
  }
  if (!(c.eps_opt > 0.0)) throw ConfigError(where + ".eps_opt must be > 0");
  return c;
}

inline json training_json(const TrainConfig& c) {
  return {{"steps", c.steps}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"beta1", c.beta1}, {"beta2", c.beta2},           {"eps_opt", c.eps_opt},
          {"lr_schedule", to_string(c.schedule)}};
}

inline std::vector<std::size_t> parse_widths(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of widths");
  std::vector<std::size_t> out;
  for (const auto& w : j) {
    if (!is_non_negative_integer(w) || w.get<std::size_t>() == 0) throw ConfigError(where + ": widths must be >= 1");
    out.push_back(w.get<std::size_t>());
  }
  return out;
}

inline DifferenceMode parse_difference_mode(const std::string& name, const std::string& where) {
  if (name == "forward") return DifferenceMode::forward;
  if (name == "central") return DifferenceMode::central;
  throw ConfigError(where + ": expected forward or central");
}

inline std::string_view to_string(DifferenceMode m) { return m == DifferenceMode::forward ? "forward" : "central"; }

}  // namespace flowjac
