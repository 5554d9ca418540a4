#pragma once

// Closed-form optimal drifts v(x_t, t) = E[x1 - x0 | x_t] and their Jacobians
// for Gaussian and Gaussian-mixture targets under the linear interpolant.
//
// Every bracketed inverse is applied through a Cholesky solve. Times 0 and 1
// are accepted: the formulas stay finite for SPD inputs.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "flowjac/distributions.hpp"
#include "flowjac/linalg.hpp"

namespace flowjac {

/// The affine field x ↦ a·x + b at a fixed time.
struct AffineFieldAt {
  double t = 0.0;
  Matrix a;
  Vector b;

  Vector apply(const Vector& x) const { return a * x + b; }
};

struct Responsibilities {
  Vector gamma;
  Vector xt;
  double t = 0.0;
};

struct JacobianPair {
  Matrix observational;
  std::vector<Matrix> interventional_per_component;
};

namespace detail {

inline void require_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) throw DimensionMismatch(std::string(what) + ": t must lie in [0, 1]");
}

inline SpdMatrix spd_or_singular(Matrix m, const char* what) {
  try {
    return SpdMatrix(std::move(m));
  } catch (const NotSpd& e) {
    throw SingularSystem(std::string(what) + ": " + e.what());
  }
}

/// numerator · bracket⁻¹ for a symmetric bracket, via (bracket⁻¹ numeratorᵀ)ᵀ.
inline Matrix right_solve(const Matrix& numerator, const SpdMatrix& bracket) {
  return bracket.solve(Matrix(numerator.transpose())).transpose();
}

}  // namespace detail

/// E[x | x_t] for x = A z̃ and x_t = (1-t) z + t x with z, z̃ standard normal.
inline Vector linear_map_conditional_mean(const Matrix& a, const Vector& xt, double t) {
  require_square(a, "linear_map_conditional_mean");
  detail::require_time(t, "linear_map_conditional_mean");
  if (xt.size() != a.rows()) throw DimensionMismatch("linear_map_conditional_mean: dimension mismatch");
  const Eigen::Index d = a.rows();
  const Matrix aat = a * a.transpose();
  Matrix bracket = (1.0 - t) * (1.0 - t) * Matrix::Identity(d, d) + t * t * aat;
  bracket = 0.5 * (bracket + bracket.transpose());
  const SpdMatrix m = detail::spd_or_singular(std::move(bracket), "linear_map_conditional_mean");
  return t * (aat * m.solve(xt));
}

/// A(t) = (tΣ - (1-t)I)[(1-t)²I + t²Σ]⁻¹ for source N(0, I), target N(0, Σ).
inline AffineFieldAt gaussian_affine_map(const SpdMatrix& sigma, double t) {
  detail::require_time(t, "gaussian_affine_map");
  const Eigen::Index d = sigma.dim();
  const Matrix id = Matrix::Identity(d, d);
  const Matrix numerator = t * sigma.matrix() - (1.0 - t) * id;
  const SpdMatrix bracket =
      detail::spd_or_singular((1.0 - t) * (1.0 - t) * id + t * t * sigma.matrix(), "gaussian_affine_map");
  return {t, detail::right_solve(numerator, bracket), Vector::Zero(d)};
}

inline Vector gaussian_drift(const SpdMatrix& sigma, const Vector& xt, double t) {
  detail::require_time(t, "gaussian_drift");
  if (xt.size() != sigma.dim()) throw DimensionMismatch("gaussian_drift: dimension mismatch");
  const Eigen::Index d = sigma.dim();
  const Matrix id = Matrix::Identity(d, d);
  const SpdMatrix bracket =
      detail::spd_or_singular((1.0 - t) * (1.0 - t) * id + t * t * sigma.matrix(), "gaussian_drift");
  return (t * sigma.matrix() - (1.0 - t) * id) * bracket.solve(xt);
}

/// Per-time quantities of the mixture field: component means m_k = μ_{t,k},
/// covariances S_k = Σ_{t,k} and affine maps A_k(t). Built once per t and
/// reused for every x_t evaluated at that time.
class MixtureFlowAt {
 public:
  MixtureFlowAt(const GaussianSpec& src, const MixtureSpec& mix, double t) : t_(t) {
    detail::require_time(t, "MixtureFlowAt");
    if (src.dim() != mix.dim()) throw DimensionMismatch("MixtureFlowAt: source/target dimension mismatch");
    const double a0 = (1.0 - t) * (1.0 - t);
    const double a1 = t * t;
    log_weights_ = mix.weights.array().log();
    components_.reserve(mix.size());
    for (const auto& c : mix.components) {
      Matrix s = a0 * src.cov.matrix() + a1 * c.cov.matrix();
      SpdMatrix cov(0.5 * (s + s.transpose()));
      Vector mean = (1.0 - t) * src.mean + t * c.mean;
      const Matrix numerator = t * c.cov.matrix() - (1.0 - t) * src.cov.matrix();
      Matrix a = detail::right_solve(numerator, cov);
      components_.push_back(Component{std::move(mean), std::move(cov), std::move(a), c.mean - src.mean});
    }
  }

  double t() const { return t_; }
  std::size_t size() const { return components_.size(); }
  Eigen::Index dim() const { return components_.front().mean.size(); }
  const Matrix& affine_map(std::size_t k) const { return components_[k].a; }
  const Vector& mean(std::size_t k) const { return components_[k].mean; }
  const SpdMatrix& cov(std::size_t k) const { return components_[k].cov; }

  /// Conditional drift of component k: μ_k - μ_0 + A_k(t)(x - μ_{t,k}).
  Vector component_drift(std::size_t k, const Vector& x) const {
    const auto& c = components_[k];
    return c.mean_shift + c.a * (x - c.mean);
  }

  AffineFieldAt component_field(std::size_t k) const {
    const auto& c = components_[k];
    return {t_, c.a, c.mean_shift - c.a * c.mean};
  }

  /// Softmax over log π_k + log N(x; μ_{t,k}, Σ_{t,k}); entries below 1e-300
  /// are flushed to exact zero.
  Vector gamma(const Vector& x) const {
    const Eigen::Index k_count = static_cast<Eigen::Index>(size());
    Vector logits(k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto& c = components_[static_cast<std::size_t>(k)];
      logits(k) = log_weights_(k) + gaussian_logpdf(x, c.mean, c.cov);
    }
    const double top = logits.maxCoeff();
    if (!std::isfinite(top)) throw NonFiniteState("responsibilities: non-finite log density");
    Vector g = (logits.array() - top).exp();
    g /= g.sum();
    for (Eigen::Index k = 0; k < k_count; ++k)
      if (g(k) < 1e-300) g(k) = 0.0;
    return g;
  }

  Vector drift(const Vector& x) const {
    const Vector g = gamma(x);
    Vector v = Vector::Zero(dim());
    for (std::size_t k = 0; k < size(); ++k) {
      const double gk = g(static_cast<Eigen::Index>(k));
      if (gk != 0.0) v += gk * component_drift(k, x);
    }
    return v;
  }

  /// Observational Jacobian Σ_k γ_k A_k + Σ_k b_k (∇γ_k)ᵀ with
  /// b_k = μ_k - μ_0 + A_k Δ_k; row index = drift component, column index =
  /// derivative direction.
  Matrix observational_jacobian(const Vector& x) const {
    const Vector g = gamma(x);
    const Eigen::Index d = dim();
    std::vector<Vector> pulls;  // S_k⁻¹(m_k - x)
    pulls.reserve(size());
    Vector mean_pull = Vector::Zero(d);
    for (std::size_t k = 0; k < size(); ++k) {
      pulls.push_back(components_[k].cov.solve(Vector(components_[k].mean - x)));
      mean_pull += g(static_cast<Eigen::Index>(k)) * pulls.back();
    }
    Matrix j = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < size(); ++k) {
      const double gk = g(static_cast<Eigen::Index>(k));
      if (gk == 0.0) continue;
      const Vector grad_gamma = gk * (pulls[k] - mean_pull);
      j += gk * components_[k].a + component_drift(k, x) * grad_gamma.transpose();
    }
    return j;
  }

  double log_density(const Vector& x) const {
    const Eigen::Index k_count = static_cast<Eigen::Index>(size());
    Vector logits(k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto& c = components_[static_cast<std::size_t>(k)];
      logits(k) = log_weights_(k) + gaussian_logpdf(x, c.mean, c.cov);
    }
    const double top = logits.maxCoeff();
    return top + std::log((logits.array() - top).exp().sum());
  }

 private:
  struct Component {
    Vector mean;
    SpdMatrix cov;
    Matrix a;
    Vector mean_shift;  // μ_k - μ_0
  };

  double t_;
  Vector log_weights_;
  std::vector<Component> components_;
};

inline Responsibilities responsibilities(const GaussianSpec& src, const MixtureSpec& mix, const Vector& xt, double t) {
  return {MixtureFlowAt(src, mix, t).gamma(xt), xt, t};
}

inline Vector mixture_drift(const GaussianSpec& src, const MixtureSpec& mix, const Vector& xt, double t) {
  return MixtureFlowAt(src, mix, t).drift(xt);
}

inline JacobianPair mixture_jacobian(const GaussianSpec& src, const MixtureSpec& mix, const Vector& xt, double t) {
  const MixtureFlowAt at(src, mix, t);
  JacobianPair out;
  out.observational = at.observational_jacobian(xt);
  out.interventional_per_component.reserve(at.size());
  for (std::size_t k = 0; k < at.size(); ++k) out.interventional_per_component.push_back(at.affine_map(k));
  return out;
}

inline double mixture_time_density(const GaussianSpec& src, const MixtureSpec& mix, const Vector& x, double t) {
  return std::exp(MixtureFlowAt(src, mix, t).log_density(x));
}

/// Argmax of γ, lowest index on exact ties.
inline std::size_t dominant_component(const Responsibilities& r) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < r.gamma.size(); ++k)
    if (r.gamma(k) > r.gamma(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
  return best;
}

/// Velocity field adapters.
struct GaussianDriftField {
  SpdMatrix sigma;
  Vector operator()(const Vector& x, double t) const { return gaussian_drift(sigma, x, t); }
  Matrix eval_batch(const Matrix& xs, double t) const { return gaussian_affine_map(sigma, t).a * xs; }
};

struct MixtureDriftField {
  GaussianSpec source;
  MixtureSpec target;
  Vector operator()(const Vector& x, double t) const { return mixture_drift(source, target, x, t); }
  Matrix eval_batch(const Matrix& xs, double t) const {
    const MixtureFlowAt at(source, target, t);
    Matrix out(xs.rows(), xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out.col(i) = at.drift(xs.col(i));
    return out;
  }
  Matrix jacobian(const Vector& x, double t) const { return MixtureFlowAt(source, target, t).observational_jacobian(x); }
};

}  // namespace flowjac
