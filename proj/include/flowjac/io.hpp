#pragma once

// JSON / CSV serialization of reports. CSV files are UTF-8 with LF line
// endings, '.' decimals and a leading '#' provenance comment.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "flowjac/causal_bench.hpp"
#include "flowjac/config.hpp"
#include "flowjac/jvp.hpp"
#include "flowjac/linalg.hpp"
#include "flowjac/neural_flow.hpp"

namespace flowjac {

inline constexpr std::string_view kToolName = "flowjac";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// Shortest round-trippable decimal form.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

/// Provenance stamped into every CSV header comment.
struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string solver;  // e.g. "rk4/100"; empty when no ODE is integrated

  std::string comment() const {
    std::string s = "# tool=" + std::string(kToolName) + " version=" + std::string(kToolVersion) +
                    " config_hash=" + config_hash + " seed=" + std::to_string(seed);
    if (!solver.empty()) s += " solver=" + solver;
    return s;
  }
};

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const Provenance& prov, std::initializer_list<std::string_view> columns)
      : out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("cannot open " + path.string() + " for writing");
    out_ << prov.comment() << '\n';
    bool first = true;
    for (auto c : columns) {
      out_ << (first ? "" : ",") << c;
      first = false;
    }
    out_ << '\n';
  }

  /// Cells are strings or doubles; doubles are printed with format_double.
  template <class... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  std::ofstream out_;
};

inline json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ConfigError("matrix JSON: wrong entry count");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)].get<double>();
  return m;
}

inline json to_json(const CorrelationReport& r) {
  json j{{"second_moment", matrix_to_json(r.second_moment)},
         {"correlation", matrix_to_json(r.correlation)},
         {"n_probes", r.n_probes},
         {"n_base_points", r.n_base_points},
         {"epsilon", r.epsilon},
         {"probe_seed", r.seed}};
  if (r.conditioning) {
    const auto& c = *r.conditioning;
    j["conditioning"] = {{"attribute_index", c.attribute_index},
                         {"mode", c.mode == Conditioning::Mode::quantile ? "quantile" : "absolute"},
                         {"threshold", c.threshold},
                         {"quantile", c.quantile ? json(*c.quantile) : json(nullptr)},
                         {"kept_fraction", c.kept_fraction},
                         {"kept_base_points", c.kept_base_points},
                         {"total_base_points", c.total_base_points}};
  } else {
    j["conditioning"] = nullptr;
  }
  return j;
}

inline CorrelationReport correlation_report_from_json(const json& j) {
  CorrelationReport r;
  r.second_moment = matrix_from_json(j.at("second_moment"));
  r.correlation = matrix_from_json(j.at("correlation"));
  r.n_probes = j.at("n_probes").get<std::size_t>();
  r.n_base_points = j.at("n_base_points").get<std::size_t>();
  r.epsilon = j.at("epsilon").get<double>();
  r.seed = j.at("probe_seed").get<std::uint64_t>();
  if (const auto& c = j.at("conditioning"); !c.is_null()) {
    ConditioningMeta m;
    m.attribute_index = c.at("attribute_index").get<std::size_t>();
    m.mode = c.at("mode").get<std::string>() == "quantile" ? Conditioning::Mode::quantile : Conditioning::Mode::absolute;
    m.threshold = c.at("threshold").get<double>();
    if (!c.at("quantile").is_null()) m.quantile = c.at("quantile").get<double>();
    m.kept_fraction = c.at("kept_fraction").get<double>();
    m.kept_base_points = c.at("kept_base_points").get<std::size_t>();
    m.total_base_points = c.at("total_base_points").get<std::size_t>();
    r.conditioning = m;
  }
  return r;
}

/// Long form: one row per matrix entry.
inline void write_matrix_csv(const std::filesystem::path& path, const Provenance& prov, const Matrix& m) {
  CsvWriter csv(path, prov, {"i", "j", "value"});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      csv.row(static_cast<std::size_t>(i), static_cast<std::size_t>(j), m(i, j));
}

inline json to_json(const BenchResult& r) {
  return {{"scenario", r.scenario},
          {"target_pair", {r.target_pair.first, r.target_pair.second}},
          {"conditioned_on", r.conditioned_on},
          {"corr_full_pair", r.full_pair()},
          {"corr_conditioned_pair", r.conditioned_pair()},
          {"reduction_ratio", r.reduction_ratio},
          {"no_effect", r.no_effect},
          {"analytic_correlation", r.analytic_correlation},
          {"label_oracle_full", r.oracle_full},
          {"label_oracle_conditioned", r.oracle_conditioned},
          {"final_training_loss", r.final_loss},
          {"procedure", r.procedure},
          {"corr_full", to_json(r.corr_full)},
          {"corr_conditioned", to_json(r.corr_conditioned)}};
}

inline json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},         {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"seed", c.seed},           {"beta1", c.beta1},           {"beta2", c.beta2},
          {"eps_opt", c.eps_opt},     {"weight_decay", 0.0},        {"lr_schedule", to_string(c.schedule)}};
}

/// JSON sidecar written next to a binary model container.
inline json model_sidecar(const MlpField& field, const TrainConfig& cfg) {
  return {{"format", "flowjac-mlp"},
          {"version", kModelVersion},
          {"widths", field.widths()},
          {"activation", "tanh"},
          {"time_input", "concatenated"},
          {"byte_order", "little-endian"},
          {"train_config", to_json(cfg)}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace flowjac
