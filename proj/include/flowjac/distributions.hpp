#pragma once

// Source / target distribution specs and samplers for the linear interpolant
// x_t = (1 - t) x0 + t x1.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <variant>
#include <vector>

#include "flowjac/linalg.hpp"
#include "flowjac/random.hpp"

namespace flowjac {

struct GaussianSpec {
  Vector mean;
  SpdMatrix cov;

  GaussianSpec(Vector m, SpdMatrix c) : mean(std::move(m)), cov(std::move(c)) {
    if (mean.size() != cov.dim()) throw DimensionMismatch("GaussianSpec: mean/cov dimension mismatch");
    if (!mean.allFinite()) throw DimensionMismatch("GaussianSpec: non-finite mean");
  }
  GaussianSpec(Vector m, Matrix c) : GaussianSpec(std::move(m), SpdMatrix(std::move(c))) {}

  static GaussianSpec standard(Eigen::Index d) { return {Vector::Zero(d), SpdMatrix::identity(d)}; }

  Eigen::Index dim() const { return mean.size(); }
};

struct MixtureSpec {
  Vector weights;
  std::vector<GaussianSpec> components;

  MixtureSpec(Vector w, std::vector<GaussianSpec> comps) : weights(std::move(w)), components(std::move(comps)) {
    if (components.empty()) throw DimensionMismatch("MixtureSpec: no components");
    if (weights.size() != static_cast<Eigen::Index>(components.size())) {
      throw DimensionMismatch("MixtureSpec: weight count differs from component count");
    }
    for (const auto& c : components) {
      if (c.dim() != components.front().dim()) throw DimensionMismatch("MixtureSpec: component dimensions differ");
    }
    if ((weights.array() <= 0.0).any() || !weights.allFinite()) {
      throw DimensionMismatch("MixtureSpec: weights must be positive");
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12) throw DimensionMismatch("MixtureSpec: weights must sum to 1");
  }

  static MixtureSpec single(GaussianSpec g) {
    std::vector<GaussianSpec> comps;
    comps.push_back(std::move(g));
    return {Vector::Ones(1), std::move(comps)};
  }

  std::size_t size() const { return components.size(); }
  Eigen::Index dim() const { return components.front().dim(); }

  Vector mean() const {
    Vector m = Vector::Zero(dim());
    for (std::size_t k = 0; k < size(); ++k) m += weights(static_cast<Eigen::Index>(k)) * components[k].mean;
    return m;
  }
};

inline Vector draw_gaussian(const GaussianSpec& spec, Rng& rng) {
  return spec.mean + spec.cov.cholesky_factor() * rng.normal_vector(spec.dim());
}

inline std::vector<Vector> sample_gaussian(const GaussianSpec& spec, Rng& rng, std::size_t n) {
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_gaussian(spec, rng));
  return out;
}

/// Component index drawn from the mixture weights.
inline std::size_t draw_component(const MixtureSpec& spec, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (std::size_t k = 0; k + 1 < spec.size(); ++k) {
    cumulative += spec.weights(static_cast<Eigen::Index>(k));
    if (u < cumulative) return k;
  }
  return spec.size() - 1;
}

struct MixtureSamples {
  std::vector<Vector> samples;
  std::vector<std::size_t> labels;
};

inline MixtureSamples sample_mixture(const MixtureSpec& spec, Rng& rng, std::size_t n) {
  MixtureSamples out;
  out.samples.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = draw_component(spec, rng);
    out.labels.push_back(k);
    out.samples.push_back(draw_gaussian(spec.components[k], rng));
  }
  return out;
}

struct InterpolantSample {
  Vector x0;
  Vector x1;
  double t = 0.0;
  Vector xt;
  std::size_t label = 0;  // mixture component of x1
};

struct UniformTime {};
struct FixedTime {
  double t = 0.0;
};
using TimeMode = std::variant<UniformTime, FixedTime>;

inline Vector interpolate(const Vector& x0, const Vector& x1, double t) { return (1.0 - t) * x0 + t * x1; }

/// Draw order per sample: x0, component, x1, t.
inline std::vector<InterpolantSample> sample_interpolant(const GaussianSpec& src, const MixtureSpec& tgt, Rng& rng,
                                                         std::size_t n, TimeMode mode) {
  if (src.dim() != tgt.dim()) throw DimensionMismatch("sample_interpolant: source/target dimension mismatch");
  std::vector<InterpolantSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    InterpolantSample s;
    s.x0 = draw_gaussian(src, rng);
    s.label = draw_component(tgt, rng);
    s.x1 = draw_gaussian(tgt.components[s.label], rng);
    s.t = std::holds_alternative<FixedTime>(mode) ? std::get<FixedTime>(mode).t : rng.uniform();
    s.xt = interpolate(s.x0, s.x1, s.t);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace flowjac
