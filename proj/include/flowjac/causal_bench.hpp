#pragma once

// Synthetic structural-causal-model benchmark. A linear-Gaussian SCM
// generates data, a neural flow is trained on it, a fixed affine read-out maps
// generated samples to attribute scores, and the JVP correlation estimate of
// an attribute pair is compared with and without conditioning on a small
// Jacobian norm for a third attribute. The conditioning is a selection of
// base points, not a do-operation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowjac/integrator.hpp"
#include "flowjac/jvp.hpp"
#include "flowjac/linalg.hpp"
#include "flowjac/neural_flow.hpp"
#include "flowjac/random.hpp"

namespace flowjac {

/// V_i = intercept + Σ coef · V_parent + U_i,  U_i ~ N(0, noise_variance).
struct StructuralAssignment {
  std::string name;
  std::vector<std::pair<std::size_t, double>> parents;
  double intercept = 0.0;
  double noise_variance = 1.0;
};

/// Variables are stored in topological order: every parent index is smaller
/// than the index of the variable it feeds.
class ScmSpec {
 public:
  explicit ScmSpec(std::vector<StructuralAssignment> vars) : vars_(std::move(vars)) {
    if (vars_.empty()) throw ConfigError("ScmSpec: no variables");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      for (const auto& [parent, coef] : vars_[i].parents) {
        if (parent >= i) throw ConfigError("ScmSpec: parent of '" + vars_[i].name + "' does not precede it");
        if (!std::isfinite(coef)) throw ConfigError("ScmSpec: non-finite coefficient");
      }
      if (!(vars_[i].noise_variance > 0.0)) throw ConfigError("ScmSpec: noise variance must be positive");
    }
  }

  std::size_t size() const { return vars_.size(); }
  const std::vector<StructuralAssignment>& variables() const { return vars_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].name == name) return i;
    throw ConfigError("ScmSpec: unknown variable '" + name + "'");
  }

  /// Path-coefficient matrix B with B(child, parent) = coef.
  Matrix coefficients() const {
    const auto n = static_cast<Eigen::Index>(size());
    Matrix b = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < vars_.size(); ++i)
      for (const auto& [parent, coef] : vars_[i].parents)
        b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(parent)) += coef;
    return b;
  }

  Vector draw(Rng& rng) const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      double value = vars_[i].intercept + std::sqrt(vars_[i].noise_variance) * rng.normal();
      for (const auto& [parent, coef] : vars_[i].parents) value += coef * v(static_cast<Eigen::Index>(parent));
      v(static_cast<Eigen::Index>(i)) = value;
    }
    return v;
  }

 private:
  std::vector<StructuralAssignment> vars_;
};

/// H → X, H → Y with unit noise everywhere.
inline ScmSpec fork_scm(double coef_x = 1.0, double coef_y = 1.0) {
  return ScmSpec({{"H", {}, 0.0, 1.0}, {"X", {{0, coef_x}}, 0.0, 1.0}, {"Y", {{0, coef_y}}, 0.0, 1.0}});
}

/// X → C ← Y with unit noise everywhere.
inline ScmSpec collider_scm(double coef_x = 1.0, double coef_y = 1.0) {
  return ScmSpec({{"X", {}, 0.0, 1.0}, {"Y", {}, 0.0, 1.0}, {"C", {{0, coef_x}, {1, coef_y}}, 0.0, 1.0}});
}

/// Ancestral sampling in topological order.
inline std::vector<Vector> scm_sample(const ScmSpec& spec, Rng& rng, std::size_t n) {
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(spec.draw(rng));
  return out;
}

inline Vector analytic_scm_mean(const ScmSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.size());
  Vector c(n);
  for (Eigen::Index i = 0; i < n; ++i) c(i) = spec.variables()[static_cast<std::size_t>(i)].intercept;
  const Matrix i_minus_b = Matrix::Identity(n, n) - spec.coefficients();
  return i_minus_b.triangularView<Eigen::Lower>().solve(c);
}

/// (I - B)⁻¹ D (I - B)⁻ᵀ.
inline SpdMatrix analytic_scm_covariance(const ScmSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.size());
  Vector noise(n);
  for (Eigen::Index i = 0; i < n; ++i) noise(i) = spec.variables()[static_cast<std::size_t>(i)].noise_variance;
  const Matrix i_minus_b = Matrix::Identity(n, n) - spec.coefficients();
  const Matrix inv = i_minus_b.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  return SpdMatrix::symmetrized(inv * noise.asDiagonal() * inv.transpose());
}

inline double covariance_to_correlation(const Matrix& cov, std::size_t i, std::size_t j) {
  const auto a = static_cast<Eigen::Index>(i);
  const auto b = static_cast<Eigen::Index>(j);
  return cov(a, b) / std::sqrt(cov(a, a) * cov(b, b));
}

/// Pearson correlation of two coordinates over the selected samples.
inline double sample_correlation(const std::vector<Vector>& xs, std::size_t i, std::size_t j,
                                 const std::vector<std::size_t>& rows) {
  const auto a = static_cast<Eigen::Index>(i);
  const auto b = static_cast<Eigen::Index>(j);
  double ma = 0.0, mb = 0.0;
  for (auto r : rows) {
    ma += xs[r](a);
    mb += xs[r](b);
  }
  const double n = static_cast<double>(rows.size());
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (auto r : rows) {
    const double da = xs[r](a) - ma;
    const double db = xs[r](b) - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  return sab / std::sqrt(saa * sbb);
}

/// C(x) = weight · x + bias, one row per attribute.
struct AttributeClassifier {
  Matrix weight;
  Vector bias;

  AttributeClassifier(Matrix w, Vector b) : weight(std::move(w)), bias(std::move(b)) {
    if (bias.size() != weight.rows()) throw DimensionMismatch("AttributeClassifier: bias/weight mismatch");
    if (weight.rows() < 3) throw DimensionMismatch("AttributeClassifier: need at least 3 attributes");
    if (!weight.allFinite() || !bias.allFinite()) throw NonFiniteState("AttributeClassifier: non-finite parameter");
  }

  /// Reads every coordinate out as its own attribute.
  static AttributeClassifier identity(Eigen::Index d) { return {Matrix::Identity(d, d), Vector::Zero(d)}; }

  Vector operator()(const Vector& x) const { return weight * x + bias; }
  Matrix apply_batch(const Matrix& xs) const {
    Matrix out = weight * xs;
    out.colwise() += bias;
    return out;
  }
};

/// x0 ↦ C(f(x0)) where f integrates the learned field from t = 0 to 1.
struct ComposedFlowMap {
  const MlpField* field;
  const AttributeClassifier* classifier;
  std::size_t steps = kDefaultSteps;
  Scheme scheme = kDefaultScheme;

  Vector operator()(const Vector& x0) const { return (*classifier)(flow_endpoint(*field, x0, steps, scheme)); }
  Matrix apply_batch(const Matrix& x0s) const {
    return classifier->apply_batch(integrate_batch(*field, x0s, steps, scheme));
  }
};

struct BenchSettings {
  TrainConfig training{};
  std::vector<std::size_t> hidden{64, 64, 64};
  std::size_t train_samples = 10000;  // 0 = fresh SCM samples every step
  std::size_t solver_steps = kDefaultSteps;
  Scheme scheme = kDefaultScheme;
  JvpSettings jvp{.probes_per_point = 2};
  std::size_t base_points = 2000;
  Conditioning::Mode mode = Conditioning::Mode::quantile;
  double cutoff = 0.17;  // quantile q, or absolute threshold
  std::size_t oracle_samples = 100000;
  double no_effect_threshold = 0.1;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::string scenario;
  CorrelationReport corr_full;
  CorrelationReport corr_conditioned;
  std::pair<std::size_t, std::size_t> target_pair{0, 0};
  std::size_t conditioned_on = 0;
  double reduction_ratio = 0.0;
  bool no_effect = false;
  double analytic_correlation = 0.0;
  double oracle_full = 0.0;         // raw SCM samples
  double oracle_conditioned = 0.0;  // raw SCM samples with |V_cond| small
  double final_loss = 0.0;
  std::string procedure = "conditioning on small attribute-Jacobian norm (selection), not a do-operation";

  double full_pair() const {
    return corr_full.correlation(static_cast<Eigen::Index>(target_pair.first),
                                 static_cast<Eigen::Index>(target_pair.second));
  }
  double conditioned_pair() const {
    return corr_conditioned.correlation(static_cast<Eigen::Index>(target_pair.first),
                                        static_cast<Eigen::Index>(target_pair.second));
  }
};

/// Trains a flow on SCM samples and returns the trained field plus final loss.
inline TrainResult train_on_scm(const ScmSpec& scm, const BenchSettings& s) {
  Rng data_rng(derive_seed(s.seed, 1), 0);
  const GaussianSpec source = GaussianSpec::standard(static_cast<Eigen::Index>(scm.size()));
  TrainConfig cfg = s.training;
  cfg.seed = derive_seed(s.seed, 2);
  if (s.train_samples == 0) {
    auto fresh = [&scm](Rng& rng) { return scm.draw(rng); };
    return train(source, fresh, s.hidden, cfg);
  }
  const std::vector<Vector> data = scm_sample(scm, data_rng, s.train_samples);
  return train(source, DatasetSampler{&data}, s.hidden, cfg);
}

namespace detail {

inline double label_space_oracle(const ScmSpec& scm, const BenchSettings& s, std::pair<std::size_t, std::size_t> pair,
                                 std::size_t conditioned_on, double kept_fraction, bool conditioned) {
  Rng rng(derive_seed(s.seed, 5), 0);
  const auto xs = scm_sample(scm, rng, s.oracle_samples);
  std::vector<std::size_t> rows(xs.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (conditioned) {
    const double centre = analytic_scm_mean(scm)(static_cast<Eigen::Index>(conditioned_on));
    std::vector<double> dist(xs.size());
    for (std::size_t r = 0; r < xs.size(); ++r) {
      dist[r] = std::abs(xs[r](static_cast<Eigen::Index>(conditioned_on)) - centre);
    }
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    const auto kept = std::max<std::size_t>(
        3, static_cast<std::size_t>(std::llround(kept_fraction * static_cast<double>(xs.size()))));
    rows.resize(std::min(kept, rows.size()));
  }
  return sample_correlation(xs, pair.first, pair.second, rows);
}

}  // namespace detail

/// Shared pipeline: train → probe C∘f → reduce with and without conditioning.
inline BenchResult run_scm_bench(const std::string& scenario, const ScmSpec& scm, const AttributeClassifier& classifier,
                                 const BenchSettings& s, std::pair<std::size_t, std::size_t> pair,
                                 std::size_t conditioned_on) {
  const auto n_attr = static_cast<std::size_t>(classifier.weight.rows());
  if (pair.first >= n_attr || pair.second >= n_attr || conditioned_on >= n_attr || pair.first == pair.second ||
      conditioned_on == pair.first || conditioned_on == pair.second) {
    throw ConfigError("bench: target pair and conditioning attribute must be distinct valid attributes");
  }
  if (classifier.weight.cols() != static_cast<Eigen::Index>(scm.size())) {
    throw DimensionMismatch("bench: classifier input width differs from SCM size");
  }
  const TrainResult trained = train_on_scm(scm, s);
  const ComposedFlowMap map{&trained.field, &classifier, s.solver_steps, s.scheme};

  Rng base_rng(derive_seed(s.seed, 3), 0);
  std::vector<Vector> base(s.base_points);
  for (auto& x : base) x = base_rng.normal_vector(static_cast<Eigen::Index>(scm.size()));

  JvpSettings jvp = s.jvp;
  jvp.seed = derive_seed(s.seed, 4);
  const auto probes = collect_probes(map, std::span<const Vector>(base), jvp);
  const Conditioning rule{conditioned_on, s.mode, s.cutoff};

  BenchResult r;
  r.scenario = scenario;
  r.corr_full = report_from_probes(probes, std::nullopt, jvp.min_samples);
  r.corr_conditioned = report_from_probes(probes, rule, jvp.min_samples);
  r.corr_full.seed = r.corr_conditioned.seed = jvp.seed;
  r.target_pair = pair;
  r.conditioned_on = conditioned_on;
  r.reduction_ratio = std::abs(r.conditioned_pair()) / std::max(std::abs(r.full_pair()), 1e-12);
  r.no_effect = std::max(std::abs(r.full_pair()), std::abs(r.conditioned_pair())) < s.no_effect_threshold;
  const SpdMatrix cov = analytic_scm_covariance(scm);
  const Matrix attr_cov = classifier.weight * cov.matrix() * classifier.weight.transpose();
  r.analytic_correlation = covariance_to_correlation(attr_cov, pair.first, pair.second);
  if (classifier.weight.isIdentity()) {
    const double kept = r.corr_conditioned.conditioning->kept_fraction;
    r.oracle_full = detail::label_space_oracle(scm, s, pair, conditioned_on, kept, false);
    r.oracle_conditioned = detail::label_space_oracle(scm, s, pair, conditioned_on, kept, true);
  }
  r.final_loss = trained.loss_curve.empty() ? 0.0 : trained.loss_curve.back();
  return r;
}

/// Common-cause benchmark on a fork H → X, H → Y (attributes ordered H, X, Y).
inline BenchResult run_common_cause_bench(const ScmSpec& scm, const AttributeClassifier& classifier,
                                          const BenchSettings& s, std::pair<std::size_t, std::size_t> pair = {1, 2},
                                          std::size_t conditioned_on = 0) {
  return run_scm_bench("common_cause", scm, classifier, s, pair, conditioned_on);
}

/// Collider benchmark on X → C ← Y (attributes ordered X, Y, C).
inline BenchResult run_collider_bench(const ScmSpec& scm, const AttributeClassifier& classifier, const BenchSettings& s,
                                      std::pair<std::size_t, std::size_t> pair = {0, 1},
                                      std::size_t conditioned_on = 2) {
  return run_scm_bench("collider", scm, classifier, s, pair, conditioned_on);
}

}  // namespace flowjac
