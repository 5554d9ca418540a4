#pragma once

// The command-line experiments. Each one is a pure function of its config:
// parse → run → write reports into an output directory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowjac/analytic_flow.hpp"
#include "flowjac/causal_bench.hpp"
#include "flowjac/config.hpp"
#include "flowjac/diffeo.hpp"
#include "flowjac/integrator.hpp"
#include "flowjac/io.hpp"
#include "flowjac/jvp.hpp"
#include "flowjac/neural_flow.hpp"
#include "flowjac/parallel.hpp"

namespace flowjac {

namespace fs = std::filesystem;

struct CommandResult {
  std::vector<fs::path> files;
  std::vector<std::string> failures;  // violated acceptance properties
  std::vector<std::string> warnings;
  std::string table;                  // human-readable summary for stdout

  bool check_passed() const { return failures.empty(); }
};

struct Check {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  std::string relation;  // "<=", ">=", "<"
  bool pass = false;

  json to_json() const {
    return {{"name", name}, {"value", value}, {"bound", bound}, {"relation", relation}, {"pass", pass}};
  }
};

inline Check check_le(std::string name, double value, double bound) {
  return {std::move(name), value, bound, "<=", value <= bound};
}
inline Check check_lt(std::string name, double value, double bound) {
  return {std::move(name), value, bound, "<", value < bound};
}
inline Check check_ge(std::string name, double value, double bound) {
  return {std::move(name), value, bound, ">=", value >= bound};
}

inline json checks_json(const std::vector<Check>& checks, CommandResult& result) {
  json arr = json::array();
  for (const auto& c : checks) {
    arr.push_back(c.to_json());
    if (!c.pass) result.failures.push_back(c.name + ": " + format_double(c.value) + " not " + c.relation + " " +
                                           format_double(c.bound));
  }
  return arr;
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

/// Experiment-independent top-level fields.
struct CommonConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string output_dir;
};

inline CommonConfig read_common(ObjectReader& r, const std::string& experiment) {
  CommonConfig c;
  c.experiment = r.get<std::string>("experiment", experiment);
  if (c.experiment != experiment) {
    throw ConfigError("config is for experiment '" + c.experiment + "', not '" + experiment + "'");
  }
  c.seed = r.get<std::uint64_t>("seed", 0);
  c.output_dir = r.get<std::string>("output_dir", "");
  return c;
}

inline const json& empty_object() {
  static const json j = json::object();
  return j;
}

/// Nested object if present, else an empty object so defaults apply.
inline const json& section(ObjectReader& r, const std::string& key) {
  return r.has(key) ? r.raw(key) : empty_object();
}

/// The effective config plus its hash, written next to every report.
struct Effective {
  json config;
  std::string hash;
  Provenance prov;
};

inline Effective effective(json config, std::uint64_t seed, const std::string& solver) {
  Effective e;
  e.hash = hex64(fnv1a64(config.dump()));
  e.prov = {e.hash, seed, solver};
  e.config = std::move(config);
  return e;
}

inline fs::path prepare_output(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ConfigError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

inline void write_effective(const fs::path& out, const Effective& e, CommandResult& result) {
  write_json(out / "config.effective.json", e.config);
  result.files.push_back(out / "config.effective.json");
}

inline void write_loss_csv(const fs::path& path, const Provenance& prov, const std::vector<double>& loss) {
  CsvWriter csv(path, prov, {"step", "loss"});
  for (std::size_t i = 0; i < loss.size(); ++i) csv.row(i, loss[i]);
}

inline void write_model(const fs::path& out, const MlpField& field, const TrainConfig& cfg, CommandResult& result) {
  save_model(field, (out / "model.bin").string());
  write_json(out / "model.json", model_sidecar(field, cfg));
  result.files.push_back(out / "model.bin");
  result.files.push_back(out / "model.json");
}

/// Endpoints of many initial states, integrated in fixed 64-column chunks.
template <VelocityField F>
Matrix parallel_endpoints(const F& field, const Matrix& x0s, const SolverConfig& solver, unsigned threads) {
  Matrix out(x0s.rows(), x0s.cols());
  for_each_chunk(static_cast<std::size_t>(x0s.cols()), 64, threads, [&](std::size_t begin, std::size_t end) {
    const auto b = static_cast<Eigen::Index>(begin);
    const auto n = static_cast<Eigen::Index>(end - begin);
    out.middleCols(b, n) = integrate_batch(field, Matrix(x0s.middleCols(b, n)), solver.steps, solver.scheme);
  });
  return out;
}

inline TrainResult train_flow(const GaussianSpec& src, const MixtureSpec& tgt, const std::vector<std::size_t>& hidden,
                              TrainConfig cfg, std::size_t train_samples, std::uint64_t seed) {
  cfg.seed = derive_seed(seed, 2);
  if (train_samples == 0) return train(src, tgt, hidden, cfg);
  Rng data_rng(derive_seed(seed, 1), 0);
  const std::vector<Vector> data = sample_mixture(tgt, data_rng, train_samples).samples;
  return train(src, DatasetSampler{&data}, hidden, cfg);
}

// ---------------------------------------------------------------------------
// gaussian1d

struct Gaussian1dConfig {
  CommonConfig common;
  GaussianSpec source = GaussianSpec::standard(1);
  GaussianSpec target = GaussianSpec::standard(1);
  std::vector<std::size_t> hidden{128, 128};
  TrainConfig training{.learning_rate = 3e-3, .schedule = LrSchedule::cosine};
  std::size_t train_samples = 10000;
  SolverConfig solver{};
  std::size_t trajectories = 16;
  std::vector<double> grid_times{0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95};
  std::size_t grid_points = 17;
  double grid_halfwidth = 2.0;  // in marginal standard deviations
  double rms_tolerance = 0.05;
};

inline std::vector<double> parse_times(const json& j, const std::string& where) {
  const Vector v = parse_vector(j, where);
  std::vector<double> out(v.data(), v.data() + v.size());
  for (double t : out)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError(where + ": times must lie in [0, 1]");
  return out;
}

inline json times_json(const std::vector<double>& ts) {
  json out = json::array();
  for (double t : ts) out.push_back(t);
  return out;
}

inline json widths_json(const std::vector<std::size_t>& w) {
  json out = json::array();
  for (auto v : w) out.push_back(v);
  return out;
}

inline Gaussian1dConfig parse_gaussian1d(const json& root) {
  ObjectReader r(root, "config");
  Gaussian1dConfig c;
  c.common = read_common(r, "gaussian1d");
  if (r.has("source")) c.source = parse_gaussian(r.raw("source"), "config.source");
  if (r.has("target")) c.target = parse_gaussian(r.raw("target"), "config.target");
  if (c.source.dim() != 1 || c.target.dim() != 1) throw ConfigError("gaussian1d: source and target must be 1D");
  if (r.has("hidden")) c.hidden = parse_widths(r.raw("hidden"), "config.hidden");
  c.training = parse_training(section(r, "training"), "config.training", c.training);
  c.train_samples = r.get<std::size_t>("train_samples", c.train_samples);
  c.solver = parse_solver(section(r, "solver"), "config.solver");
  c.trajectories = r.get<std::size_t>("trajectories", c.trajectories);
  if (r.has("grid_times")) c.grid_times = parse_times(r.raw("grid_times"), "config.grid_times");
  c.grid_points = r.get<std::size_t>("grid_points", c.grid_points);
  c.grid_halfwidth = r.get<double>("grid_halfwidth", c.grid_halfwidth);
  c.rms_tolerance = r.get<double>("rms_tolerance", c.rms_tolerance);
  r.finish();
  if (c.grid_points < 2) throw ConfigError("config.grid_points must be >= 2");
  if (c.trajectories < 1) throw ConfigError("config.trajectories must be >= 1");
  return c;
}

inline json to_json(const Gaussian1dConfig& c) {
  return {{"experiment", "gaussian1d"},
          {"seed", c.common.seed},
          {"source", gaussian_json(c.source)},
          {"target", gaussian_json(c.target)},
          {"hidden", widths_json(c.hidden)},
          {"training", training_json(c.training)},
          {"train_samples", c.train_samples},
          {"solver", solver_json(c.solver)},
          {"trajectories", c.trajectories},
          {"grid_times", times_json(c.grid_times)},
          {"grid_points", c.grid_points},
          {"grid_halfwidth", c.grid_halfwidth},
          {"rms_tolerance", c.rms_tolerance}};
}

/// Closed-form 1D transport path m(t) + sqrt(v(t) / v0) (x0 - m0).
inline double gaussian_path_1d(const GaussianSpec& src, const GaussianSpec& tgt, double x0, double t) {
  const double v0 = src.cov.matrix()(0, 0);
  const double v1 = tgt.cov.matrix()(0, 0);
  const double vt = (1 - t) * (1 - t) * v0 + t * t * v1;
  const double mt = (1 - t) * src.mean(0) + t * tgt.mean(0);
  return mt + std::sqrt(vt / v0) * (x0 - src.mean(0));
}

inline CommandResult run_gaussian1d(const Gaussian1dConfig& c, const fs::path& out_dir, unsigned /*threads*/) {
  CommandResult result;
  const fs::path out = prepare_output(out_dir);
  const Effective eff = effective(to_json(c), c.common.seed, c.solver.label());
  write_effective(out, eff, result);

  const MixtureSpec target = MixtureSpec::single(c.target);
  const TrainResult trained = train_flow(c.source, target, c.hidden, c.training, c.train_samples, c.common.seed);
  TrainConfig used = c.training;
  used.seed = derive_seed(c.common.seed, 2);

  // Trajectories from shared starting points.
  Rng start_rng(derive_seed(c.common.seed, 3), 0);
  double endpoint_sq = 0.0;
  {
    CsvWriter csv(out / "trajectories.csv", eff.prov, {"trajectory", "t", "x_analytic", "x_learned"});
    for (std::size_t k = 0; k < c.trajectories; ++k) {
      const Vector x0 = draw_gaussian(c.source, start_rng);
      const Trajectory traj = integrate(trained.field, x0, c.solver.steps, c.solver.scheme);
      for (std::size_t i = 0; i < traj.times.size(); ++i) {
        csv.row(k, traj.times[i], gaussian_path_1d(c.source, c.target, x0(0), traj.times[i]), traj.states[i](0));
      }
      const double diff = traj.endpoint()(0) - gaussian_path_1d(c.source, c.target, x0(0), 1.0);
      endpoint_sq += diff * diff;
    }
  }
  result.files.push_back(out / "trajectories.csv");

  // Drift on a grid standardized by the marginal spread at each t.
  double drift_sq = 0.0;
  std::size_t drift_n = 0;
  {
    CsvWriter csv(out / "drift_grid.csv", eff.prov, {"t", "x", "v_analytic", "v_learned"});
    const double v0 = c.source.cov.matrix()(0, 0), v1 = c.target.cov.matrix()(0, 0);
    for (double t : c.grid_times) {
      const MixtureFlowAt at(c.source, target, t);
      const double sd = std::sqrt((1 - t) * (1 - t) * v0 + t * t * v1);
      const double centre = (1 - t) * c.source.mean(0) + t * c.target.mean(0);
      for (std::size_t i = 0; i < c.grid_points; ++i) {
        const double s = -c.grid_halfwidth + 2.0 * c.grid_halfwidth * static_cast<double>(i) /
                                                 static_cast<double>(c.grid_points - 1);
        const Vector x = Vector::Constant(1, centre + s * sd);
        const double va = at.drift(x)(0);
        const double vl = trained.field(x, t)(0);
        csv.row(t, x(0), va, vl);
        drift_sq += (va - vl) * (va - vl);
        ++drift_n;
      }
    }
  }
  result.files.push_back(out / "drift_grid.csv");

  write_loss_csv(out / "loss.csv", eff.prov, trained.loss_curve);
  result.files.push_back(out / "loss.csv");
  write_model(out, trained.field, used, result);

  const double rms = std::sqrt(drift_sq / static_cast<double>(std::max<std::size_t>(drift_n, 1)));
  const double rms_endpoint = std::sqrt(endpoint_sq / static_cast<double>(c.trajectories));
  const bool warning = !(rms <= c.rms_tolerance);
  if (warning) {
    result.warnings.push_back("learned drift RMS " + format_double(rms) + " exceeds " +
                              format_double(c.rms_tolerance));
  }
  std::vector<Check> checks{check_le("rms_drift", rms, c.rms_tolerance)};
  json summary{{"experiment", "gaussian1d"},
               {"config_hash", eff.hash},
               {"seed", c.common.seed},
               {"solver", c.solver.label()},
               {"rms_drift", rms},
               {"rms_endpoint", rms_endpoint},
               {"grid_size", drift_n},
               {"final_loss", finite_or_null(trained.loss_curve.empty() ? NAN : trained.loss_curve.back())},
               {"training_steps", trained.loss_curve.size()},
               {"warning", warning},
               {"checks", checks_json(checks, result)}};
  write_json(out / "summary.json", summary);
  result.files.push_back(out / "summary.json");
  std::ostringstream table;
  table << "gaussian1d: rms_drift=" << format_double(rms) << " rms_endpoint=" << format_double(rms_endpoint)
        << (warning ? " [warning]" : "") << "\n";
  result.table = table.str();
  return result;
}

// ---------------------------------------------------------------------------
// gaussian2d

inline GaussianSpec default_correlated_target() {
  Matrix cov(2, 2);
  cov << 1.0, 0.55, 0.55, 1.0;
  return {Vector::Zero(2), cov};
}

struct Gaussian2dConfig {
  CommonConfig common;
  GaussianSpec source = GaussianSpec::standard(2);
  GaussianSpec target = default_correlated_target();
  std::vector<std::size_t> hidden{128, 128, 128, 128};
  TrainConfig training{.steps = 1000, .schedule = LrSchedule::cosine};
  std::size_t train_samples = 0;
  SolverConfig solver{};
  std::size_t samples = 10000;
  double correlation_tolerance = 0.05;
};

inline Gaussian2dConfig parse_gaussian2d(const json& root) {
  ObjectReader r(root, "config");
  Gaussian2dConfig c;
  c.common = read_common(r, "gaussian2d");
  if (r.has("source")) c.source = parse_gaussian(r.raw("source"), "config.source");
  if (r.has("target")) c.target = parse_gaussian(r.raw("target"), "config.target");
  if (c.source.dim() != 2 || c.target.dim() != 2) throw ConfigError("gaussian2d: source and target must be 2D");
  if (r.has("hidden")) c.hidden = parse_widths(r.raw("hidden"), "config.hidden");
  c.training = parse_training(section(r, "training"), "config.training", c.training);
  c.train_samples = r.get<std::size_t>("train_samples", c.train_samples);
  c.solver = parse_solver(section(r, "solver"), "config.solver");
  c.samples = r.get<std::size_t>("samples", c.samples);
  c.correlation_tolerance = r.get<double>("correlation_tolerance", c.correlation_tolerance);
  r.finish();
  if (c.samples < 3) throw ConfigError("config.samples must be >= 3");
  return c;
}

inline json to_json(const Gaussian2dConfig& c) {
  return {{"experiment", "gaussian2d"},
          {"seed", c.common.seed},
          {"source", gaussian_json(c.source)},
          {"target", gaussian_json(c.target)},
          {"hidden", widths_json(c.hidden)},
          {"training", training_json(c.training)},
          {"train_samples", c.train_samples},
          {"solver", solver_json(c.solver)},
          {"samples", c.samples},
          {"correlation_tolerance", c.correlation_tolerance}};
}

inline Matrix column_covariance(const Matrix& xs) {
  const Vector mean = xs.rowwise().mean();
  const Matrix centred = xs.colwise() - mean;
  return centred * centred.transpose() / static_cast<double>(xs.cols() - 1);
}

inline CommandResult run_gaussian2d(const Gaussian2dConfig& c, const fs::path& out_dir, unsigned threads) {
  CommandResult result;
  const fs::path out = prepare_output(out_dir);
  const Effective eff = effective(to_json(c), c.common.seed, c.solver.label());
  write_effective(out, eff, result);

  const MixtureSpec target = MixtureSpec::single(c.target);
  const TrainResult trained = train_flow(c.source, target, c.hidden, c.training, c.train_samples, c.common.seed);
  TrainConfig used = c.training;
  used.seed = derive_seed(c.common.seed, 2);

  Rng start_rng(derive_seed(c.common.seed, 3), 0);
  Matrix x0s(2, static_cast<Eigen::Index>(c.samples));
  for (Eigen::Index i = 0; i < x0s.cols(); ++i) x0s.col(i) = draw_gaussian(c.source, start_rng);
  const Matrix learned = parallel_endpoints(trained.field, x0s, c.solver, threads);
  const Matrix analytic = parallel_endpoints(MixtureDriftField{c.source, target}, x0s, c.solver, threads);
  {
    CsvWriter csv(out / "samples.csv", eff.prov, {"sample", "x0_0", "x0_1", "learned_0", "learned_1", "analytic_0",
                                                   "analytic_1"});
    for (Eigen::Index i = 0; i < x0s.cols(); ++i) {
      csv.row(static_cast<std::size_t>(i), x0s(0, i), x0s(1, i), learned(0, i), learned(1, i), analytic(0, i),
              analytic(1, i));
    }
  }
  result.files.push_back(out / "samples.csv");
  write_loss_csv(out / "loss.csv", eff.prov, trained.loss_curve);
  result.files.push_back(out / "loss.csv");
  write_model(out, trained.field, used, result);

  const Matrix learned_cov = column_covariance(learned);
  const Matrix analytic_cov = column_covariance(analytic);
  const double target_corr = covariance_to_correlation(c.target.cov.matrix(), 0, 1);
  const double learned_corr = covariance_to_correlation(learned_cov, 0, 1);
  const double analytic_corr = covariance_to_correlation(analytic_cov, 0, 1);
  std::vector<Check> checks{
      check_le("correlation_error", std::abs(learned_corr - target_corr), c.correlation_tolerance)};
  json summary{{"experiment", "gaussian2d"},
               {"config_hash", eff.hash},
               {"seed", c.common.seed},
               {"solver", c.solver.label()},
               {"target_correlation", target_corr},
               {"generated_correlation", learned_corr},
               {"analytic_flow_correlation", analytic_corr},
               {"generated_mean", vector_json(learned.rowwise().mean())},
               {"generated_covariance", matrix_rows_json(learned_cov)},
               {"final_loss", finite_or_null(trained.loss_curve.empty() ? NAN : trained.loss_curve.back())},
               {"checks", checks_json(checks, result)}};
  write_json(out / "summary.json", summary);
  result.files.push_back(out / "summary.json");
  std::ostringstream table;
  table << "gaussian2d: target_corr=" << format_double(target_corr) << " generated_corr=" << format_double(learned_corr)
        << " analytic_flow_corr=" << format_double(analytic_corr) << "\n";
  result.table = table.str();
  return result;
}

// ---------------------------------------------------------------------------
// mixture2d

inline MixtureSpec default_mixture() {
  Matrix c0(2, 2), c1(2, 2), c2(2, 2);
  c0 << 0.30, 0.05, 0.05, 0.20;
  c1 << 0.20, -0.04, -0.04, 0.30;
  c2 << 0.25, 0.0, 0.0, 0.15;
  Vector m0(2), m1(2), m2(2);
  m0 << -4.0, 0.0;
  m1 << 4.0, 0.0;
  m2 << 0.0, 4.0;
  Vector w(3);
  w << 0.3, 0.3, 0.4;
  return {w, {{m0, c0}, {m1, c1}, {m2, c2}}};
}

struct Mixture2dConfig {
  CommonConfig common;
  GaussianSpec source = GaussianSpec::standard(2);
  MixtureSpec target = default_mixture();
  std::vector<double> times{0.0, 0.25, 0.5, 0.75, 0.99};
  std::size_t samples_per_time = 2000;
  double fd_epsilon = kDefaultEpsilon;
  double endpoint_tolerance = 1e-3;
  double mid_ratio = 10.0;
};

inline Mixture2dConfig parse_mixture2d(const json& root) {
  ObjectReader r(root, "config");
  Mixture2dConfig c;
  c.common = read_common(r, "mixture2d");
  if (r.has("source")) c.source = parse_gaussian(r.raw("source"), "config.source");
  if (r.has("target")) c.target = parse_mixture(r.raw("target"), "config.target");
  if (c.source.dim() != c.target.dim()) throw ConfigError("mixture2d: source and target dimensions differ");
  if (r.has("times")) c.times = parse_times(r.raw("times"), "config.times");
  c.samples_per_time = r.get<std::size_t>("samples_per_time", c.samples_per_time);
  c.fd_epsilon = r.get<double>("fd_epsilon", c.fd_epsilon);
  c.endpoint_tolerance = r.get<double>("endpoint_tolerance", c.endpoint_tolerance);
  c.mid_ratio = r.get<double>("mid_ratio", c.mid_ratio);
  r.finish();
  if (c.samples_per_time < 1) throw ConfigError("config.samples_per_time must be >= 1");
  if (!(c.fd_epsilon > 0.0)) throw ConfigError("config.fd_epsilon must be > 0");
  return c;
}

inline json to_json(const Mixture2dConfig& c) {
  return {{"experiment", "mixture2d"},
          {"seed", c.common.seed},
          {"source", gaussian_json(c.source)},
          {"target", mixture_json(c.target)},
          {"times", times_json(c.times)},
          {"samples_per_time", c.samples_per_time},
          {"fd_epsilon", c.fd_epsilon},
          {"endpoint_tolerance", c.endpoint_tolerance},
          {"mid_ratio", c.mid_ratio}};
}

struct MixtureTableRow {
  double t = 0.0;
  double numerical_vs_analytical = 0.0;
  double interventional_vs_analytical = 0.0;
};

/// Mean Frobenius discrepancies at one time over sampled (x_t, K).
inline MixtureTableRow mixture_row(const GaussianSpec& src, const MixtureSpec& mix, double t, std::size_t n,
                                   double eps, Rng& rng) {
  const MixtureFlowAt at(src, mix, t);
  const Eigen::Index d = at.dim();
  const auto samples = sample_interpolant(src, mix, rng, n, FixedTime{t});
  MixtureTableRow row{t, 0.0, 0.0};
  for (const auto& s : samples) {
    const Matrix obs = at.observational_jacobian(s.xt);
    const Vector base = at.drift(s.xt);
    Matrix numerical(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
      Vector x = s.xt;
      x(c) += eps;
      numerical.col(c) = (at.drift(x) - base) / eps;
    }
    row.numerical_vs_analytical += (numerical - obs).norm();
    row.interventional_vs_analytical += (at.affine_map(s.label) - obs).norm();
  }
  row.numerical_vs_analytical /= static_cast<double>(n);
  row.interventional_vs_analytical /= static_cast<double>(n);
  return row;
}

inline CommandResult run_mixture2d(const Mixture2dConfig& c, const fs::path& out_dir, unsigned /*threads*/) {
  CommandResult result;
  const fs::path out = prepare_output(out_dir);
  const Effective eff = effective(to_json(c), c.common.seed, "");
  write_effective(out, eff, result);

  std::vector<MixtureTableRow> rows;
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    Rng rng(derive_seed(c.common.seed, 10), i);
    rows.push_back(mixture_row(c.source, c.target, c.times[i], c.samples_per_time, c.fd_epsilon, rng));
  }
  {
    CsvWriter csv(out / "table.csv", eff.prov, {"t", "numerical_vs_analytical", "interventional_vs_analytical"});
    for (const auto& r : rows) csv.row(r.t, r.numerical_vs_analytical, r.interventional_vs_analytical);
  }
  result.files.push_back(out / "table.csv");

  std::vector<Check> checks;
  if (!rows.empty()) {
    const double first = rows.front().interventional_vs_analytical;
    const double last = rows.back().interventional_vs_analytical;
    checks.push_back(check_lt("interventional_at_t=" + format_double(rows.front().t), first, c.endpoint_tolerance));
    if (rows.size() > 1) {
      checks.push_back(check_lt("interventional_at_t=" + format_double(rows.back().t), last, c.endpoint_tolerance));
    }
    const double endpoint = std::max(first, last);
    for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
      checks.push_back(check_ge("mid_over_endpoint_at_t=" + format_double(rows[i].t),
                                rows[i].interventional_vs_analytical, c.mid_ratio * endpoint));
    }
  }
  json table = json::array();
  for (const auto& r : rows) {
    table.push_back({{"t", r.t},
                     {"numerical_vs_analytical", r.numerical_vs_analytical},
                     {"interventional_vs_analytical", r.interventional_vs_analytical}});
  }
  json summary{{"experiment", "mixture2d"}, {"config_hash", eff.hash}, {"seed", c.common.seed},
               {"rows", table},             {"checks", checks_json(checks, result)}};
  write_json(out / "summary.json", summary);
  result.files.push_back(out / "summary.json");

  std::ostringstream text;
  text << "t, numerical_vs_analytical, interventional_vs_analytical\n";
  for (const auto& r : rows) {
    text << format_double(r.t) << ", " << format_double(r.numerical_vs_analytical) << ", "
         << format_double(r.interventional_vs_analytical) << "\n";
  }
  result.table = text.str();
  return result;
}

// ---------------------------------------------------------------------------
// diffeo-check

inline GaussianSpec default_diffeo_source() {
  Matrix s(3, 3);
  s << 1.0, 0.3, -0.2, 0.3, 0.8, 0.1, -0.2, 0.1, 1.5;
  Vector m(3);
  m << 0.5, -1.0, 0.0;
  return {m, s};
}

inline GaussianSpec default_diffeo_target() {
  Matrix s(3, 3);
  s << 2.0, -0.6, 0.4, -0.6, 0.7, 0.2, 0.4, 0.2, 0.5;
  Vector m(3);
  m << -1.0, 2.0, 0.5;
  return {m, s};
}

struct DiffeoConfig {
  CommonConfig common;
  GaussianSpec source = default_diffeo_source();
  GaussianSpec target = default_diffeo_target();
  SolverConfig solver{};
  std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t start_points = 16;
  double epsilon = 1e-3;
  std::size_t probes = 10000;
  double wiggle_time = 1.0;
  double cov_tolerance = 1e-8;
  double integrator_tolerance = 1e-6;
  double wiggle_exact_tolerance = 1e-6;
};

inline DiffeoConfig parse_diffeo(const json& root) {
  ObjectReader r(root, "config");
  DiffeoConfig c;
  c.common = read_common(r, "diffeo-check");
  if (r.has("source")) c.source = parse_gaussian(r.raw("source"), "config.source");
  if (r.has("target")) c.target = parse_gaussian(r.raw("target"), "config.target");
  if (c.source.dim() != c.target.dim()) throw ConfigError("diffeo-check: source and target dimensions differ");
  c.solver = parse_solver(section(r, "solver"), "config.solver");
  if (r.has("times")) c.times = parse_times(r.raw("times"), "config.times");
  c.start_points = r.get<std::size_t>("start_points", c.start_points);
  c.epsilon = r.get<double>("epsilon", c.epsilon);
  c.probes = r.get<std::size_t>("probes", c.probes);
  c.wiggle_time = r.get<double>("wiggle_time", c.wiggle_time);
  c.cov_tolerance = r.get<double>("cov_tolerance", c.cov_tolerance);
  c.integrator_tolerance = r.get<double>("integrator_tolerance", c.integrator_tolerance);
  c.wiggle_exact_tolerance = r.get<double>("wiggle_exact_tolerance", c.wiggle_exact_tolerance);
  r.finish();
  if (!(c.epsilon > 0.0)) throw ConfigError("config.epsilon must be > 0");
  if (c.probes < 2) throw ConfigError("config.probes must be >= 2");
  if (c.start_points < 1) throw ConfigError("config.start_points must be >= 1");
  if (!(c.wiggle_time >= 0.0 && c.wiggle_time <= 1.0)) throw ConfigError("config.wiggle_time must lie in [0, 1]");
  return c;
}

inline json to_json(const DiffeoConfig& c) {
  return {{"experiment", "diffeo-check"},
          {"seed", c.common.seed},
          {"source", gaussian_json(c.source)},
          {"target", gaussian_json(c.target)},
          {"solver", solver_json(c.solver)},
          {"times", times_json(c.times)},
          {"start_points", c.start_points},
          {"epsilon", c.epsilon},
          {"probes", c.probes},
          {"wiggle_time", c.wiggle_time},
          {"cov_tolerance", c.cov_tolerance},
          {"integrator_tolerance", c.integrator_tolerance},
          {"wiggle_exact_tolerance", c.wiggle_exact_tolerance}};
}

inline CommandResult run_diffeo(const DiffeoConfig& c, const fs::path& out_dir, unsigned /*threads*/) {
  CommandResult result;
  const fs::path out = prepare_output(out_dir);
  const Effective eff = effective(to_json(c), c.common.seed, c.solver.label());
  write_effective(out, eff, result);

  const LinearGaussianFlow flow = build_flow(c.source, c.target);
  const Eigen::Index d = flow.dim();

  {
    CsvWriter csv(out / "pushforward.csv", eff.prov, {"t", "i", "j", "value"});
    for (double t : c.times) {
      const Matrix s = pushforward_cov(flow, t).matrix();
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) csv.row(t, static_cast<std::size_t>(i), static_cast<std::size_t>(j), s(i, j));
    }
  }
  result.files.push_back(out / "pushforward.csv");

  const double cov_residual = relative_error(pushforward_cov(flow, 1.0).matrix(), c.target.cov.matrix());

  Rng start_rng(derive_seed(c.common.seed, 3), 0);
  const DiffeoVelocityField field{flow};
  double integrator_residual = 0.0;
  for (std::size_t k = 0; k < c.start_points; ++k) {
    const Vector x0 = draw_gaussian(c.source, start_rng);
    const Vector numeric = flow_endpoint(field, x0, c.solver.steps, c.solver.scheme);
    integrator_residual = std::max(integrator_residual, (numeric - flow_map(flow, x0, 1.0)).norm());
  }

  // Wiggle: outputs of φ_t(x0 + εz) for standard-normal z.
  Rng wiggle_rng(derive_seed(c.common.seed, 4), 0);
  const Vector x0 = draw_gaussian(c.source, wiggle_rng);
  const auto n = static_cast<Eigen::Index>(c.probes);
  Matrix zs(d, n), outs(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    zs.col(i) = wiggle_rng.normal_vector(d);
    outs.col(i) = flow_map(flow, Vector(x0 + c.epsilon * zs.col(i)), c.wiggle_time);
  }
  const Matrix y = flow_jacobian(flow, c.wiggle_time);
  const Matrix empirical = column_covariance(outs);
  const Matrix predicted = c.epsilon * c.epsilon * y * y.transpose();
  const Matrix predicted_sample = c.epsilon * c.epsilon * y * column_covariance(zs) * y.transpose();
  const double wiggle_population = relative_error(empirical, predicted);
  const double wiggle_exact = relative_error(empirical, predicted_sample);
  const double population_bound = 5.0 / std::sqrt(static_cast<double>(c.probes));
  {
    CsvWriter csv(out / "wiggle.csv", eff.prov, {"i", "j", "empirical", "predicted"});
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        csv.row(static_cast<std::size_t>(i), static_cast<std::size_t>(j), empirical(i, j), predicted(i, j));
  }
  result.files.push_back(out / "wiggle.csv");

  std::vector<Check> checks{check_le("pushforward_cov_relative", cov_residual, c.cov_tolerance),
                            check_le("integrator_endpoint", integrator_residual, c.integrator_tolerance),
                            check_le("wiggle_exact_relative", wiggle_exact, c.wiggle_exact_tolerance),
                            check_le("wiggle_population_relative", wiggle_population, population_bound)};
  json report{{"experiment", "diffeo-check"},
              {"config_hash", eff.hash},
              {"seed", c.common.seed},
              {"solver", c.solver.label()},
              {"checks", checks_json(checks, result)},
              {"pass", result.failures.empty()},
              {"A", matrix_rows_json(flow.a.matrix())},
              {"L", matrix_rows_json(flow.l)},
              {"Y_wiggle_time", matrix_rows_json(y)},
              {"sigma_at_1", matrix_rows_json(pushforward_cov(flow, 1.0).matrix())}};
  write_json(out / "diffeo_check.json", report);
  result.files.push_back(out / "diffeo_check.json");
  std::ostringstream text;
  for (const auto& ch : checks)
    text << ch.name << " = " << format_double(ch.value) << " (" << ch.relation << " " << format_double(ch.bound)
         << ") " << (ch.pass ? "ok" : "FAIL") << "\n";
  result.table = text.str();
  return result;
}

// ---------------------------------------------------------------------------
// jvp-sweep

struct JvpSweepConfig {
  CommonConfig common;
  double epsilon_min = 1e-14;
  double epsilon_max = 1e-1;
  std::size_t epsilon_count = 27;
  DifferenceMode mode = DifferenceMode::forward;
  Matrix linear = (Matrix(2, 2) << 2.0, -1.0, 0.5, 3.0).finished();
  GaussianSpec source = GaussianSpec::standard(2);
  MixtureSpec target = default_mixture();
  double time = 0.5;
  SolverConfig solver{};
  std::vector<std::size_t> mlp_hidden{32, 32};
  TrainConfig mlp_training{.steps = 300, .batch_size = 128, .learning_rate = 3e-3};
  double linear_tolerance = 1e-12;
};

inline JvpSweepConfig parse_jvp_sweep(const json& root) {
  ObjectReader r(root, "config");
  JvpSweepConfig c;
  c.common = read_common(r, "jvp-sweep");
  {
    ObjectReader e(section(r, "epsilon"), "config.epsilon");
    c.epsilon_min = e.get<double>("min", c.epsilon_min);
    c.epsilon_max = e.get<double>("max", c.epsilon_max);
    c.epsilon_count = e.get<std::size_t>("count", c.epsilon_count);
    e.finish();
  }
  c.mode = parse_difference_mode(r.get<std::string>("mode", "forward"), "config.mode");
  if (r.has("linear")) c.linear = parse_matrix(r.raw("linear"), "config.linear");
  if (r.has("source")) c.source = parse_gaussian(r.raw("source"), "config.source");
  if (r.has("target")) c.target = parse_mixture(r.raw("target"), "config.target");
  c.time = r.get<double>("time", c.time);
  c.solver = parse_solver(section(r, "solver"), "config.solver");
  if (r.has("mlp_hidden")) c.mlp_hidden = parse_widths(r.raw("mlp_hidden"), "config.mlp_hidden");
  c.mlp_training = parse_training(section(r, "mlp_training"), "config.mlp_training", c.mlp_training);
  c.linear_tolerance = r.get<double>("linear_tolerance", c.linear_tolerance);
  r.finish();
  if (!(c.epsilon_min > 0.0 && c.epsilon_max > c.epsilon_min)) {
    throw ConfigError("config.epsilon: need 0 < min < max");
  }
  if (c.epsilon_count < 3) throw ConfigError("config.epsilon.count must be >= 3");
  if (c.linear.rows() != c.linear.cols()) throw ConfigError("config.linear must be square");
  if (c.source.dim() != c.target.dim()) throw ConfigError("jvp-sweep: source and target dimensions differ");
  if (!(c.time >= 0.0 && c.time <= 1.0)) throw ConfigError("config.time must lie in [0, 1]");
  return c;
}

inline json to_json(const JvpSweepConfig& c) {
  return {{"experiment", "jvp-sweep"},
          {"seed", c.common.seed},
          {"epsilon", {{"min", c.epsilon_min}, {"max", c.epsilon_max}, {"count", c.epsilon_count}}},
          {"mode", to_string(c.mode)},
          {"linear", matrix_rows_json(c.linear)},
          {"source", gaussian_json(c.source)},
          {"target", mixture_json(c.target)},
          {"time", c.time},
          {"solver", solver_json(c.solver)},
          {"mlp_hidden", widths_json(c.mlp_hidden)},
          {"mlp_training", training_json(c.mlp_training)},
          {"linear_tolerance", c.linear_tolerance}};
}

struct SweepCase {
  std::string name;
  std::vector<SweepRow> rows;
  bool nonlinear = true;
};

inline CommandResult run_jvp_sweep(const JvpSweepConfig& c, const fs::path& out_dir, unsigned /*threads*/) {
  CommandResult result;
  const fs::path out = prepare_output(out_dir);
  const Effective eff = effective(to_json(c), c.common.seed, c.solver.label());
  write_effective(out, eff, result);

  const auto eps = log_spaced(c.epsilon_min, c.epsilon_max, c.epsilon_count);
  Rng rng(derive_seed(c.common.seed, 20), 0);
  std::vector<SweepCase> cases;

  {
    const Eigen::Index d = c.linear.rows();
    const Vector z = rng.normal_vector(d);
    auto map = [&](const Vector& x) -> Vector { return c.linear * x; };
    cases.push_back({"linear", epsilon_sweep(map, Vector::Zero(d), z, eps, Vector(c.linear * z), c.mode), false});
  }

  const Eigen::Index d = c.source.dim();
  const Vector x0 = draw_gaussian(c.source, rng);
  const Vector z = rng.normal_vector(d);

  TrainConfig mlp_cfg = c.mlp_training;
  mlp_cfg.seed = derive_seed(c.common.seed, 21);
  const TrainResult trained = train(c.source, c.target, c.mlp_hidden, mlp_cfg);
  {
    auto map = [&](const Vector& x) -> Vector { return trained.field(x, c.time); };
    cases.push_back({"mlp", epsilon_sweep(map, x0, z, eps, mlp_jvp(trained.field, x0, c.time, z), c.mode)});
  }
  {
    const MixtureFlowAt at(c.source, c.target, c.time);
    auto map = [&](const Vector& x) -> Vector { return at.drift(x); };
    const Vector ref = at.observational_jacobian(x0) * z;
    cases.push_back({"mixture_drift", epsilon_sweep(map, x0, z, eps, ref, c.mode)});
  }
  {
    const MixtureDriftField field{c.source, c.target};
    auto map = [&](const Vector& x) -> Vector { return flow_endpoint(field, x, c.solver.steps, c.solver.scheme); };
    const Vector ref = integrate_tangent(field, x0, z, c.solver.steps, c.solver.scheme).tangent;
    cases.push_back({"mixture_flow", epsilon_sweep(map, x0, z, eps, ref, c.mode)});
  }

  {
    CsvWriter csv(out / "sweep.csv", eff.prov, {"case", "epsilon", "error"});
    for (const auto& sc : cases)
      for (const auto& row : sc.rows) csv.row(sc.name, row.epsilon, row.error);
  }
  result.files.push_back(out / "sweep.csv");

  std::vector<Check> checks;
  json case_json = json::array();
  std::ostringstream text;
  text << "case, argmin_epsilon, min_error\n";
  for (const auto& sc : cases) {
    const std::size_t best = sweep_minimum(sc.rows);
    double worst = 0.0;
    for (const auto& row : sc.rows) worst = std::max(worst, row.error);
    const bool interior = best > 0 && best + 1 < sc.rows.size();
    case_json.push_back({{"case", sc.name},
                         {"argmin_epsilon", sc.rows[best].epsilon},
                         {"min_error", sc.rows[best].error},
                         {"max_error", worst},
                         {"interior_minimum", interior}});
    if (sc.nonlinear) {
      checks.push_back({sc.name + "_interior_minimum_index", static_cast<double>(best),
                        static_cast<double>(sc.rows.size() - 1), "strictly inside (0, n-1)", interior});
    } else {
      checks.push_back(check_lt(sc.name + "_max_error", worst, c.linear_tolerance));
    }
    text << sc.name << ", " << format_double(sc.rows[best].epsilon) << ", " << format_double(sc.rows[best].error)
         << "\n";
  }
  json summary{{"experiment", "jvp-sweep"},
               {"config_hash", eff.hash},
               {"seed", c.common.seed},
               {"solver", c.solver.label()},
               {"mode", to_string(c.mode)},
               {"cases", case_json},
               {"checks", checks_json(checks, result)}};
  write_json(out / "summary.json", summary);
  result.files.push_back(out / "summary.json");
  result.table = text.str();
  return result;
}

// ---------------------------------------------------------------------------
// causal-bench

struct ScenarioConfig {
  std::string name;
  std::string kind;  // "fork" or "collider"
  double coef_x = 1.0;
  double coef_y = 1.0;

  bool null_effect() const { return coef_x == 0.0 && coef_y == 0.0; }
};

struct CausalBenchConfig {
  CommonConfig common;
  std::vector<ScenarioConfig> scenarios{
      {"fork", "fork", 1.0, 1.0}, {"collider", "collider", 1.0, 1.0}, {"null", "fork", 0.0, 0.0}};
  BenchSettings bench{};
  SolverConfig solver{};
  double analytic_tolerance = 0.1;
  double max_reduction_ratio = 0.5;
  double min_collider_increase = 0.05;
};

inline CausalBenchConfig parse_causal_bench(const json& root) {
  ObjectReader r(root, "config");
  CausalBenchConfig c;
  c.common = read_common(r, "causal-bench");
  if (r.has("scenarios")) {
    const json& arr = r.raw("scenarios");
    if (!arr.is_array() || arr.empty()) throw ConfigError("config.scenarios: expected a non-empty array");
    c.scenarios.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ObjectReader s(arr[i], "config.scenarios[" + std::to_string(i) + "]");
      ScenarioConfig sc;
      sc.name = s.require<std::string>("name");
      sc.kind = s.require<std::string>("kind");
      sc.coef_x = s.get<double>("coef_x", 1.0);
      sc.coef_y = s.get<double>("coef_y", 1.0);
      s.finish();
      if (sc.kind != "fork" && sc.kind != "collider") throw ConfigError(s.path("kind") + ": expected fork or collider");
      if (sc.name.empty() || sc.name.find_first_of("/\\. ") != std::string::npos) {
        throw ConfigError(s.path("name") + ": must be a plain non-empty identifier");
      }
      for (const auto& prev : c.scenarios)
        if (prev.name == sc.name) throw ConfigError(s.path("name") + ": duplicate scenario name");
      c.scenarios.push_back(sc);
    }
  }
  BenchSettings& b = c.bench;
  if (r.has("hidden")) b.hidden = parse_widths(r.raw("hidden"), "config.hidden");
  b.training = parse_training(section(r, "training"), "config.training", b.training);
  b.train_samples = r.get<std::size_t>("train_samples", b.train_samples);
  c.solver = parse_solver(section(r, "solver"), "config.solver");
  {
    ObjectReader j(section(r, "jvp"), "config.jvp");
    b.jvp.epsilon = j.get<double>("epsilon", b.jvp.epsilon);
    b.jvp.probes_per_point = j.get<std::size_t>("probes_per_point", b.jvp.probes_per_point);
    b.jvp.min_samples = j.get<std::size_t>("min_samples", b.jvp.min_samples);
    b.jvp.mode = parse_difference_mode(j.get<std::string>("mode", "forward"), "config.jvp.mode");
    j.finish();
  }
  b.base_points = r.get<std::size_t>("base_points", b.base_points);
  {
    ObjectReader k(section(r, "conditioning"), "config.conditioning");
    const std::string mode = k.get<std::string>("mode", "quantile");
    if (mode == "quantile") {
      b.mode = Conditioning::Mode::quantile;
    } else if (mode == "absolute") {
      b.mode = Conditioning::Mode::absolute;
    } else {
      throw ConfigError("config.conditioning.mode: expected quantile or absolute");
    }
    b.cutoff = k.get<double>("value", b.cutoff);
    k.finish();
  }
  b.oracle_samples = r.get<std::size_t>("oracle_samples", b.oracle_samples);
  b.no_effect_threshold = r.get<double>("no_effect_threshold", b.no_effect_threshold);
  c.analytic_tolerance = r.get<double>("analytic_tolerance", c.analytic_tolerance);
  c.max_reduction_ratio = r.get<double>("max_reduction_ratio", c.max_reduction_ratio);
  c.min_collider_increase = r.get<double>("min_collider_increase", c.min_collider_increase);
  r.finish();
  b.solver_steps = c.solver.steps;
  b.scheme = c.solver.scheme;
  b.seed = c.common.seed;
  if (b.jvp.probes_per_point < 1) throw ConfigError("config.jvp.probes_per_point must be >= 1");
  if (!(b.jvp.epsilon > 0.0)) throw ConfigError("config.jvp.epsilon must be > 0");
  if (b.base_points < 2) throw ConfigError("config.base_points must be >= 2");
  if (b.oracle_samples < 10) throw ConfigError("config.oracle_samples must be >= 10");
  if (b.mode == Conditioning::Mode::quantile && !(b.cutoff > 0.0 && b.cutoff <= 1.0)) {
    throw ConfigError("config.conditioning.value must lie in (0, 1] in quantile mode");
  }
  return c;
}

inline json to_json(const CausalBenchConfig& c) {
  json scenarios = json::array();
  for (const auto& s : c.scenarios)
    scenarios.push_back({{"name", s.name}, {"kind", s.kind}, {"coef_x", s.coef_x}, {"coef_y", s.coef_y}});
  const BenchSettings& b = c.bench;
  return {{"experiment", "causal-bench"},
          {"seed", c.common.seed},
          {"scenarios", scenarios},
          {"hidden", widths_json(b.hidden)},
          {"training", training_json(b.training)},
          {"train_samples", b.train_samples},
          {"solver", solver_json(c.solver)},
          {"jvp",
           {{"epsilon", b.jvp.epsilon},
            {"probes_per_point", b.jvp.probes_per_point},
            {"min_samples", b.jvp.min_samples},
            {"mode", to_string(b.jvp.mode)}}},
          {"base_points", b.base_points},
          {"conditioning",
           {{"mode", b.mode == Conditioning::Mode::quantile ? "quantile" : "absolute"}, {"value", b.cutoff}}},
          {"oracle_samples", b.oracle_samples},
          {"no_effect_threshold", b.no_effect_threshold},
          {"analytic_tolerance", c.analytic_tolerance},
          {"max_reduction_ratio", c.max_reduction_ratio},
          {"min_collider_increase", c.min_collider_increase}};
}

inline int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

inline CommandResult run_causal_bench(const CausalBenchConfig& c, const fs::path& out_dir, unsigned threads) {
  CommandResult result;
  const fs::path out = prepare_output(out_dir);
  const Effective eff = effective(to_json(c), c.common.seed, c.solver.label());
  write_effective(out, eff, result);

  BenchSettings settings = c.bench;
  settings.jvp.threads = threads;
  const auto classifier = AttributeClassifier::identity(3);

  std::vector<Check> checks;
  std::vector<std::pair<ScenarioConfig, BenchResult>> runs;
  for (std::size_t i = 0; i < c.scenarios.size(); ++i) {
    const ScenarioConfig& sc = c.scenarios[i];
    BenchSettings s = settings;
    s.seed = derive_seed(c.common.seed, 100 + i);
    BenchResult r = sc.kind == "fork" ? run_common_cause_bench(fork_scm(sc.coef_x, sc.coef_y), classifier, s)
                                      : run_collider_bench(collider_scm(sc.coef_x, sc.coef_y), classifier, s);
    r.scenario = sc.name;

    json j = to_json(r);
    j["kind"] = sc.kind;
    j["config_hash"] = eff.hash;
    j["seed"] = s.seed;
    write_json(out / (sc.name + ".json"), j);
    write_matrix_csv(out / ("corr_" + sc.name + "_full.csv"), eff.prov, r.corr_full.correlation);
    write_matrix_csv(out / ("corr_" + sc.name + "_conditioned.csv"), eff.prov, r.corr_conditioned.correlation);
    result.files.push_back(out / (sc.name + ".json"));
    result.files.push_back(out / ("corr_" + sc.name + "_full.csv"));
    result.files.push_back(out / ("corr_" + sc.name + "_conditioned.csv"));

    const double full = r.full_pair();
    const double cond = r.conditioned_pair();
    const double jvp_direction = sign_of(std::abs(cond) - std::abs(full));
    const double oracle_direction = sign_of(std::abs(r.oracle_conditioned) - std::abs(r.oracle_full));
    if (sc.null_effect()) {
      checks.push_back({sc.name + "_no_effect", std::max(std::abs(full), std::abs(cond)),
                        c.bench.no_effect_threshold, "<", r.no_effect});
    } else if (sc.kind == "fork") {
      checks.push_back(check_le(sc.name + "_analytic_error", std::abs(full - r.analytic_correlation),
                                c.analytic_tolerance));
      checks.push_back(check_le(sc.name + "_reduction_ratio", r.reduction_ratio, c.max_reduction_ratio));
      checks.push_back({sc.name + "_oracle_direction", jvp_direction, oracle_direction, "==",
                        jvp_direction == oracle_direction});
    } else {
      checks.push_back(check_ge(sc.name + "_increase", std::abs(cond) - std::abs(full), c.min_collider_increase));
      checks.push_back({sc.name + "_oracle_direction", jvp_direction, oracle_direction, "==",
                        jvp_direction == oracle_direction});
      checks.push_back({sc.name + "_oracle_sign", static_cast<double>(sign_of(cond)),
                        static_cast<double>(sign_of(r.oracle_conditioned)), "==",
                        sign_of(cond) == sign_of(r.oracle_conditioned)});
    }
    runs.emplace_back(sc, std::move(r));
  }

  std::ostringstream text;
  {
    CsvWriter csv(out / "table.csv", eff.prov,
                  {"scenario", "pair", "ground_truth", "ground_truth_samples", "estimated", "estimated_samples",
                   "estimated_conditional", "conditional_samples", "reduction_ratio", "label_oracle_full",
                   "label_oracle_conditioned", "no_effect"});
    text << "scenario | ground truth (analytic) | estimated | estimated conditional | ratio\n";
    for (const auto& [sc, r] : runs) {
      const std::string pair = std::to_string(r.target_pair.first) + "-" + std::to_string(r.target_pair.second);
      const auto& meta = *r.corr_conditioned.conditioning;
      csv.row(sc.name, pair, r.analytic_correlation, std::string("analytic"), r.full_pair(), r.corr_full.n_base_points,
              r.conditioned_pair(), meta.kept_base_points, r.reduction_ratio, r.oracle_full, r.oracle_conditioned,
              std::string(r.no_effect ? "true" : "false"));
      char line[256];
      std::snprintf(line, sizeof line, "%-9s | %+.3f | %+.3f (%zu) | %+.3f (%zu) | %.3f%s\n", sc.name.c_str(),
                    r.analytic_correlation, r.full_pair(), r.corr_full.n_base_points, r.conditioned_pair(),
                    meta.kept_base_points, r.reduction_ratio, r.no_effect ? " no_effect" : "");
      text << line;
    }
  }
  result.files.push_back(out / "table.csv");
  json summary{{"experiment", "causal-bench"},
               {"config_hash", eff.hash},
               {"seed", c.common.seed},
               {"solver", c.solver.label()},
               {"procedure", BenchResult{}.procedure},
               {"checks", checks_json(checks, result)}};
  write_json(out / "summary.json", summary);
  result.files.push_back(out / "summary.json");
  result.table = text.str();
  return result;
}

// ---------------------------------------------------------------------------
// Dispatch

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"gaussian1d", "gaussian2d",   "mixture2d",
                                              "diffeo-check", "jvp-sweep", "causal-bench"};
  return names;
}

/// A parsed, validated experiment ready to run.
struct PreparedExperiment {
  std::string name;
  fs::path out_dir;
  std::function<CommandResult(unsigned threads)> run;
};

/// Parses `root` for `experiment` and applies the seed override. The output
/// directory is `out` if given, else the config's output_dir, else
/// "out/<experiment>". Any error thrown here is a config error.
inline PreparedExperiment prepare_experiment(const std::string& experiment, const json& root,
                                             const std::optional<std::uint64_t>& seed_override,
                                             const std::optional<fs::path>& out) {
  auto make = [&](auto cfg, auto runner) {
    if (seed_override) cfg.common.seed = *seed_override;
    PreparedExperiment p;
    p.name = experiment;
    p.out_dir = out ? *out : fs::path(cfg.common.output_dir.empty() ? "out/" + experiment : cfg.common.output_dir);
    p.run = [cfg = std::move(cfg), dir = p.out_dir, runner](unsigned threads) { return runner(cfg, dir, threads); };
    return p;
  };
  try {
    if (experiment == "gaussian1d") return make(parse_gaussian1d(root), run_gaussian1d);
    if (experiment == "gaussian2d") return make(parse_gaussian2d(root), run_gaussian2d);
    if (experiment == "mixture2d") return make(parse_mixture2d(root), run_mixture2d);
    if (experiment == "diffeo-check") return make(parse_diffeo(root), run_diffeo);
    if (experiment == "jvp-sweep") return make(parse_jvp_sweep(root), run_jvp_sweep);
    if (experiment == "causal-bench") return make(parse_causal_bench(root), run_causal_bench);
  } catch (const DimensionMismatch& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("unknown experiment '" + experiment + "'");
}

inline CommandResult run_experiment(const std::string& experiment, const json& root,
                                    const std::optional<std::uint64_t>& seed_override,
                                    const std::optional<fs::path>& out, unsigned threads) {
  return prepare_experiment(experiment, root, seed_override, out).run(threads);
}

}  // namespace flowjac
