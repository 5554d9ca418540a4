#include <gtest/gtest.h>

#include <cmath>

#include "flowjac/jvp.hpp"
#include "test_util.hpp"

namespace flowjac {
namespace {

struct LinearMap {
  Matrix m;
  Vector operator()(const Vector& x) const { return m * x; }
};

struct SinMap {
  Vector operator()(const Vector& x) const { return x.array().sin().matrix(); }
};

struct QuadraticMap {
  Vector operator()(const Vector& x) const {
    Vector y(2);
    y << x(0) * x(0), x(0) * x(1);
    return y;
  }
};

std::vector<Vector> gaussian_points(Rng& rng, std::size_t n, Eigen::Index d) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.normal_vector(d));
  return out;
}

TEST(FdJvp, LinearMapIsExactUpToRounding) {
  Matrix m(2, 3);
  m << 1, 2, 3, -1, 0.5, 4;
  Vector z(3);
  z << 0.3, -1.0, 2.0;
  const Vector got = fd_jvp(LinearMap{m}, Vector::Zero(3), z, 1e-3);
  EXPECT_LE((got - m * z).norm(), 1e-12);
}

TEST(FdJvp, ForwardErrorIsFirstOrderCentralIsExactOnQuadratics) {
  Vector x(2), z(2);
  x << 0.5, -1.0;
  z << 1.0, 2.0;
  Vector exact(2);
  exact << 2 * x(0) * z(0), x(0) * z(1) + x(1) * z(0);
  const double eps = 1e-3;
  // Forward remainder of a quadratic is eps * (z0², z0 z1).
  Vector remainder(2);
  remainder << z(0) * z(0), z(0) * z(1);
  EXPECT_LE((fd_jvp(QuadraticMap{}, x, z, eps) - exact - eps * remainder).norm(), 1e-10);
  EXPECT_LE((fd_jvp(QuadraticMap{}, x, z, eps, DifferenceMode::central) - exact).norm(), 1e-10);
  EXPECT_LE((richardson_jvp(QuadraticMap{}, x, z, 1e-2) - exact).norm(), 1e-10);
}

TEST(FdJvp, RejectsBadArguments) {
  EXPECT_THROW(fd_jvp(SinMap{}, Vector::Zero(2), Vector::Ones(2), 0.0), DimensionMismatch);
  EXPECT_THROW(fd_jvp(SinMap{}, Vector::Zero(2), Vector::Ones(3), 1e-3), DimensionMismatch);
}

TEST(EpsilonSweep, NonlinearMapHasInteriorMinimum) {
  Vector x(2), z(2);
  x << 0.3, 1.1;
  z << 1.0, -0.5;
  const Vector ref = x.array().cos().matrix().cwiseProduct(z);
  const auto eps = log_spaced(1e-14, 1e-1, 27);
  const auto rows = epsilon_sweep(SinMap{}, x, z, eps, ref);
  const std::size_t best = sweep_minimum(rows);
  EXPECT_GT(best, 0u);
  EXPECT_LT(best, rows.size() - 1);
  EXPECT_GT(rows.front().error, 10 * rows[best].error);
  EXPECT_GT(rows.back().error, 10 * rows[best].error);
}

TEST(LogSpaced, EndpointsAndCount) {
  const auto v = log_spaced(1e-14, 1e-1, 14);
  ASSERT_EQ(v.size(), 14u);
  EXPECT_NEAR(v.front(), 1e-14, 1e-28);
  EXPECT_NEAR(v.back(), 1e-1, 1e-15);
  EXPECT_NEAR(v[1] / v[0], 10.0, 1e-10);
}

TEST(JacobianNorm, IsRootMeanSquare) {
  ProbeSet set;
  for (double c : {3.0, 4.0}) set.push_back({Vector::Zero(2), Vector::Zero(2), 1e-3, Vector::Constant(2, c)});
  EXPECT_NEAR(jacobian_norm(set, 1), std::sqrt(12.5), 1e-15);
  EXPECT_THROW(jacobian_norm(set, 2), DimensionMismatch);
}

TEST(NormalizeSecondMoment, UnitDiagonalAndZeroVariance) {
  Matrix s(3, 3);
  s << 4, 2, 0, 2, 9, 0, 0, 0, 0;
  const Matrix c = normalize_second_moment(s);
  EXPECT_EQ(c(0, 0), 1.0);
  EXPECT_EQ(c(2, 2), 1.0);
  EXPECT_NEAR(c(0, 1), 2.0 / 6.0, 1e-15);
  EXPECT_EQ(c(0, 2), 0.0);
}

TEST(NormalizeSecondMoment, InvariantToPositiveOutputScaling) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = testing::random_spd(4, rng);
    Vector scale(4);
    for (Eigen::Index i = 0; i < 4; ++i) scale(i) = std::exp(3 * rng.normal());
    const Matrix scaled = scale.asDiagonal() * s * scale.asDiagonal();
    EXPECT_LE((normalize_second_moment(scaled) - normalize_second_moment(s)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(EstimateCorrelation, LinearMapMatchesSampleGram) {
  Rng rng(2);
  Matrix m(3, 3);
  m << 1, 0.5, 0, 0, 1, -0.3, 0.2, 0, 2;
  auto points = gaussian_points(rng, 200, 3);
  JvpSettings settings;
  settings.seed = 17;
  settings.threads = 1;
  const auto sets = collect_probes(LinearMap{m}, std::span<const Vector>(points), settings);
  Matrix zz = Matrix::Zero(3, 3);
  std::size_t count = 0;
  for (const auto& set : sets)
    for (const auto& p : set) {
      zz += p.z * p.z.transpose();
      ++count;
    }
  const auto report = report_from_probes(sets, std::nullopt);
  EXPECT_EQ(report.n_probes, count);
  EXPECT_EQ(report.n_base_points, 200u);
  EXPECT_LE(relative_error(report.second_moment, m * (zz / count) * m.transpose()), 1e-9);
  EXPECT_LE((report.correlation.diagonal() - Vector::Ones(3)).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix population = normalize_second_moment(m * m.transpose());
  EXPECT_LE((report.correlation - population).cwiseAbs().maxCoeff(), 0.1);
}

TEST(EstimateCorrelation, ProbeDirectionsFollowBasePointStreams) {
  auto points = std::vector<Vector>(3, Vector::Zero(2));
  JvpSettings settings;
  settings.seed = 5;
  settings.probes_per_point = 2;
  const auto sets = collect_probes(SinMap{}, std::span<const Vector>(points), settings);
  Rng r(5, 1);
  const Vector z0 = r.normal_vector(2);
  EXPECT_EQ(sets[1][0].z, z0);
}

TEST(EstimateCorrelation, ThreadCountDoesNotChangeResult) {
  Rng rng(3);
  auto points = gaussian_points(rng, 300, 3);
  JvpSettings settings;
  settings.seed = 8;
  settings.threads = 1;
  const auto one = estimate_correlation(SinMap{}, std::span<const Vector>(points), settings);
  settings.threads = 4;
  const auto four = estimate_correlation(SinMap{}, std::span<const Vector>(points), settings);
  EXPECT_EQ(one.second_moment, four.second_moment);
  settings.mode = DifferenceMode::central;
  const auto central = estimate_correlation(SinMap{}, std::span<const Vector>(points), settings);
  EXPECT_LE((central.second_moment - one.second_moment).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Conditioning, QuantileKeepsRoundedCount) {
  std::vector<ProbeSet> sets;
  for (int i = 0; i < 10; ++i)
    sets.push_back({{Vector::Zero(2), Vector::Zero(2), 1e-3, Vector::Constant(2, 10.0 - i)}});
  ConditioningMeta meta;
  const auto keep = select_base_points(sets, Conditioning::lowest_fraction(0, 0.17), meta);
  EXPECT_EQ(meta.kept_base_points, 2u);
  EXPECT_TRUE(keep[9]);
  EXPECT_TRUE(keep[8]);
  EXPECT_FALSE(keep[7]);
  EXPECT_DOUBLE_EQ(meta.threshold, 2.0);
  EXPECT_DOUBLE_EQ(meta.kept_fraction, 0.2);
  ASSERT_TRUE(meta.quantile.has_value());

  const auto abs_keep = select_base_points(sets, Conditioning::below(0, 3.0), meta);
  EXPECT_EQ(meta.kept_base_points, 2u);  // strictly below 3
  EXPECT_FALSE(abs_keep[7]);
  EXPECT_THROW(select_base_points(sets, Conditioning::lowest_fraction(0, 1.5), meta), DimensionMismatch);
}

TEST(Conditioning, InsufficientSamplesIsRaised) {
  Rng rng(4);
  auto points = gaussian_points(rng, 40, 2);  // 80 probes
  JvpSettings settings;
  settings.probes_per_point = 2;
  EXPECT_THROW(estimate_correlation(SinMap{}, std::span<const Vector>(points), settings), InsufficientSamples);
  settings.min_samples = 10;
  EXPECT_THROW(estimate_correlation(SinMap{}, std::span<const Vector>(points), settings,
                                    Conditioning::below(0, 0.0)),
               InsufficientSamples);
  EXPECT_NO_THROW(estimate_correlation(SinMap{}, std::span<const Vector>(points), settings));
}

}  // namespace
}  // namespace flowjac
