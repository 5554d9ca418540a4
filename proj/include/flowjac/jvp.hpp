#pragma once

// Finite-difference Jacobian-vector products, ε-sensitivity sweeps and the
// probe-based second-moment / correlation estimator
//   S = E[Δy Δyᵀ],  Corr = D^{-1/2} S D^{-1/2},  D = diag(S),
// where Δy = (f(x0 + εz) - f(x0)) / ε for standard-normal directions z.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowjac/linalg.hpp"
#include "flowjac/parallel.hpp"
#include "flowjac/random.hpp"

namespace flowjac {

template <class F>
concept VectorMap = requires(const F& f, const Vector& x) {
  { f(x) } -> std::convertible_to<Vector>;
};

/// Maps that can be applied to many inputs (one per column) at once.
template <class F>
concept BatchVectorMap = VectorMap<F> && requires(const F& f, const Matrix& xs) {
  { f.apply_batch(xs) } -> std::convertible_to<Matrix>;
};

template <VectorMap F>
Matrix apply_columns(const F& map, const Matrix& xs) {
  if constexpr (BatchVectorMap<F>) {
    return map.apply_batch(xs);
  } else {
    Matrix out;
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
      const Vector y = map(Vector(xs.col(i)));
      if (i == 0) out.resize(y.size(), xs.cols());
      out.col(i) = y;
    }
    return out;
  }
}

enum class DifferenceMode { forward, central };

inline constexpr double kDefaultEpsilon = 1e-3;

template <VectorMap F>
Vector fd_jvp(const F& map, const Vector& x0, const Vector& z, double epsilon,
              DifferenceMode mode = DifferenceMode::forward) {
  if (!(epsilon > 0.0)) throw DimensionMismatch("fd_jvp: epsilon must be positive");
  if (z.size() != x0.size()) throw DimensionMismatch("fd_jvp: direction dimension mismatch");
  Vector out;
  if (mode == DifferenceMode::forward) {
    out = (Vector(map(Vector(x0 + epsilon * z))) - Vector(map(x0))) / epsilon;
  } else {
    out = (Vector(map(Vector(x0 + epsilon * z))) - Vector(map(Vector(x0 - epsilon * z)))) / (2.0 * epsilon);
  }
  if (!out.allFinite()) throw NonFiniteState("fd_jvp: non-finite difference quotient");
  return out;
}

/// Richardson-extrapolated central difference, (4 D(h/2) - D(h)) / 3.
template <VectorMap F>
Vector richardson_jvp(const F& map, const Vector& x0, const Vector& z, double h) {
  const Vector coarse = fd_jvp(map, x0, z, h, DifferenceMode::central);
  const Vector fine = fd_jvp(map, x0, z, 0.5 * h, DifferenceMode::central);
  return (4.0 * fine - coarse) / 3.0;
}

struct SweepRow {
  double epsilon = 0.0;
  double error = 0.0;
};

/// Per-ε Euclidean error of the difference quotient against a reference JVP.
template <VectorMap F>
std::vector<SweepRow> epsilon_sweep(const F& map, const Vector& x0, const Vector& z, std::span<const double> epsilons,
                                    const Vector& reference, DifferenceMode mode = DifferenceMode::forward) {
  std::vector<SweepRow> rows;
  rows.reserve(epsilons.size());
  for (const double eps : epsilons) rows.push_back({eps, (fd_jvp(map, x0, z, eps, mode) - reference).norm()});
  return rows;
}

/// Index of the smallest error; lowest index on ties.
inline std::size_t sweep_minimum(std::span<const SweepRow> rows) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].error < rows[best].error) best = i;
  return best;
}

inline std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  std::vector<double> out;
  out.reserve(count);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    out.push_back(std::pow(10.0, a + f * (b - a)));
  }
  return out;
}

struct JvpProbe {
  Vector x0;
  Vector z;
  double epsilon = 0.0;
  Vector delta;
};

using ProbeSet = std::vector<JvpProbe>;

/// Root-mean-square of one output component of Δy over a base point's probes.
inline double jacobian_norm(std::span<const JvpProbe> probes, std::size_t attribute_index) {
  if (probes.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : probes) {
    if (static_cast<Eigen::Index>(attribute_index) >= p.delta.size()) {
      throw DimensionMismatch("jacobian_norm: attribute index out of range");
    }
    const double c = p.delta(static_cast<Eigen::Index>(attribute_index));
    sum += c * c;
  }
  return std::sqrt(sum / static_cast<double>(probes.size()));
}

struct JvpSettings {
  std::size_t probes_per_point = 8;
  double epsilon = kDefaultEpsilon;
  std::size_t min_samples = 100;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  DifferenceMode mode = DifferenceMode::forward;
};

/// Keep base points whose jacobian_norm for `attribute` is small: either
/// strictly below an absolute threshold, or the lowest `value` fraction.
struct Conditioning {
  enum class Mode { absolute, quantile };
  std::size_t attribute = 0;
  Mode mode = Mode::quantile;
  double value = 0.17;

  static Conditioning below(std::size_t attribute, double threshold) { return {attribute, Mode::absolute, threshold}; }
  static Conditioning lowest_fraction(std::size_t attribute, double q) { return {attribute, Mode::quantile, q}; }
};

struct ConditioningMeta {
  std::size_t attribute_index = 0;
  Conditioning::Mode mode = Conditioning::Mode::quantile;
  double threshold = 0.0;  // effective cut-off on jacobian_norm
  std::optional<double> quantile;
  double kept_fraction = 0.0;
  std::size_t kept_base_points = 0;
  std::size_t total_base_points = 0;
};

struct CorrelationReport {
  Matrix second_moment;
  Matrix correlation;
  std::size_t n_probes = 0;
  std::size_t n_base_points = 0;
  std::optional<ConditioningMeta> conditioning;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
};

/// D^{-1/2} S D^{-1/2}; coordinates with zero response get a unit diagonal
/// and zero off-diagonals.
inline Matrix normalize_second_moment(const Matrix& s) {
  const Eigen::Index n = s.rows();
  Vector scale(n);
  for (Eigen::Index i = 0; i < n; ++i) scale(i) = s(i, i) > 0.0 ? 1.0 / std::sqrt(s(i, i)) : 0.0;
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) c(i, j) = i == j ? 1.0 : s(i, j) * scale(i) * scale(j);
  }
  return c;
}

/// Which base points survive the conditioning rule, plus its metadata.
inline std::vector<bool> select_base_points(std::span<const ProbeSet> sets, const Conditioning& rule,
                                            ConditioningMeta& meta) {
  const std::size_t n = sets.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = jacobian_norm(sets[i], rule.attribute);
  std::vector<bool> keep(n, false);
  meta = ConditioningMeta{};
  meta.attribute_index = rule.attribute;
  meta.mode = rule.mode;
  meta.total_base_points = n;
  if (rule.mode == Conditioning::Mode::absolute) {
    meta.threshold = rule.value;
    for (std::size_t i = 0; i < n; ++i) keep[i] = norms[i] < rule.value;
  } else {
    if (!(rule.value > 0.0 && rule.value <= 1.0)) throw DimensionMismatch("conditioning quantile must lie in (0, 1]");
    meta.quantile = rule.value;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
    const auto kept = static_cast<std::size_t>(std::llround(rule.value * static_cast<double>(n)));
    for (std::size_t r = 0; r < kept; ++r) keep[order[r]] = true;
    meta.threshold = kept > 0 ? norms[order[kept - 1]] : 0.0;
  }
  meta.kept_base_points = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  meta.kept_fraction = n == 0 ? 0.0 : static_cast<double>(meta.kept_base_points) / static_cast<double>(n);
  return keep;
}

/// Reduces probe sets into a report. Reduction runs in base-point order, so
/// the result does not depend on how the probes were produced.
inline CorrelationReport report_from_probes(std::span<const ProbeSet> sets, const std::optional<Conditioning>& rule,
                                            std::size_t min_samples = 100) {
  std::vector<bool> keep(sets.size(), true);
  std::optional<ConditioningMeta> meta;
  if (rule) {
    meta.emplace();
    keep = select_base_points(sets, *rule, *meta);
  }
  CorrelationReport report;
  report.conditioning = meta;
  Eigen::Index dim = -1;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!keep[i]) continue;
    for (const auto& p : sets[i]) {
      if (dim < 0) {
        dim = p.delta.size();
        report.second_moment = Matrix::Zero(dim, dim);
        report.epsilon = p.epsilon;
      }
      if (p.delta.size() != dim) throw DimensionMismatch("report_from_probes: inconsistent output dimension");
      report.second_moment.noalias() += p.delta * p.delta.transpose();
      ++report.n_probes;
    }
    ++report.n_base_points;
  }
  if (report.n_base_points < 2 || report.n_probes < std::max<std::size_t>(min_samples, 1)) {
    throw InsufficientSamples("estimate_correlation: " + std::to_string(report.n_probes) + " probes from " +
                              std::to_string(report.n_base_points) + " base points survive (need >= " +
                              std::to_string(min_samples) + " probes and >= 2 base points)");
  }
  if (dim < 2) throw DimensionMismatch("estimate_correlation: output dimension must be >= 2");
  report.second_moment /= static_cast<double>(report.n_probes);
  report.correlation = normalize_second_moment(report.second_moment);
  return report;
}

/// Runs probes_per_point finite-difference probes at every base point. Base
/// point i draws its directions from Rng(seed, i), so the probes are the same
/// for any thread count.
template <VectorMap F>
std::vector<ProbeSet> collect_probes(const F& map, std::span<const Vector> base_points, const JvpSettings& settings) {
  if (!(settings.epsilon > 0.0)) throw DimensionMismatch("collect_probes: epsilon must be positive");
  const std::size_t n = base_points.size();
  const std::size_t per = settings.probes_per_point;
  std::vector<ProbeSet> sets(n);
  constexpr std::size_t kChunk = 64;
  const bool central = settings.mode == DifferenceMode::central;
  for_each_chunk(n, kChunk, settings.threads, [&](std::size_t begin, std::size_t end) {
    const std::size_t cols_per_point = central ? 2 * per : 1 + per;
    if (begin == end) return;
    const Eigen::Index d = base_points[begin].size();
    Matrix inputs(d, static_cast<Eigen::Index>((end - begin) * cols_per_point));
    std::vector<std::vector<Vector>> directions(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng(settings.seed, i);
      const Vector& x0 = base_points[i];
      if (x0.size() != d) throw DimensionMismatch("collect_probes: base point dimension mismatch");
      auto col = static_cast<Eigen::Index>((i - begin) * cols_per_point);
      if (!central) inputs.col(col++) = x0;
      for (std::size_t p = 0; p < per; ++p) {
        Vector z = rng.normal_vector(d);
        inputs.col(col++) = x0 + settings.epsilon * z;
        if (central) inputs.col(col++) = x0 - settings.epsilon * z;
        directions[i - begin].push_back(std::move(z));
      }
    }
    const Matrix outputs = apply_columns(map, inputs);
    if (!outputs.allFinite()) throw NonFiniteState("collect_probes: map produced non-finite output");
    for (std::size_t i = begin; i < end; ++i) {
      const auto base = static_cast<Eigen::Index>((i - begin) * cols_per_point);
      ProbeSet& set = sets[i];
      set.reserve(per);
      for (std::size_t p = 0; p < per; ++p) {
        Vector delta;
        if (central) {
          const auto c = base + static_cast<Eigen::Index>(2 * p);
          delta = (outputs.col(c) - outputs.col(c + 1)) / (2.0 * settings.epsilon);
        } else {
          delta = (outputs.col(base + 1 + static_cast<Eigen::Index>(p)) - outputs.col(base)) / settings.epsilon;
        }
        set.push_back(JvpProbe{base_points[i], std::move(directions[i - begin][p]), settings.epsilon, std::move(delta)});
      }
    }
  });
  return sets;
}

template <VectorMap F>
CorrelationReport estimate_correlation(const F& map, std::span<const Vector> base_points, const JvpSettings& settings,
                                       const std::optional<Conditioning>& rule = std::nullopt) {
  const auto sets = collect_probes(map, base_points, settings);
  CorrelationReport report = report_from_probes(sets, rule, settings.min_samples);
  report.seed = settings.seed;
  return report;
}

}  // namespace flowjac
