#pragma once

// Explicit flow map between two Gaussians:
//   φ_t(x0) = m(t) + exp(tL)(x0 - m0),  L = log A,
//   A = Σ0^{-1/2} (Σ0^{1/2} Σ1 Σ0^{1/2})^{1/2} Σ0^{-1/2}.

#include "flowjac/distributions.hpp"
#include "flowjac/linalg.hpp"

namespace flowjac {

struct LinearGaussianFlow {
  Vector m0;
  Vector m1;
  SpdMatrix sigma0;
  SpdMatrix sigma1;
  SpdMatrix a;
  Matrix l;
  Matrix sigma0_sqrt;
  Matrix sigma0_inv_sqrt;

  Eigen::Index dim() const { return m0.size(); }
  Vector mean_at(double t) const { return (1.0 - t) * m0 + t * m1; }
};

inline LinearGaussianFlow build_flow(const GaussianSpec& src, const GaussianSpec& tgt) {
  if (src.dim() != tgt.dim()) throw DimensionMismatch("build_flow: dimension mismatch");
  const Matrix root0 = spd_sqrt(src.cov).matrix();
  const Matrix inv_root0 = spd_inv_sqrt(src.cov);
  const SpdMatrix inner = SpdMatrix::symmetrized(root0 * tgt.cov.matrix() * root0);
  const Matrix inner_root = spd_sqrt(inner).matrix();
  SpdMatrix a = SpdMatrix::symmetrized(inv_root0 * inner_root * inv_root0);
  Matrix l = spd_log(a);
  return {src.mean, tgt.mean, src.cov, tgt.cov, std::move(a), std::move(l), root0, inv_root0};
}

/// Y(t) = exp(tL), the Jacobian of φ_t.
inline Matrix flow_jacobian(const LinearGaussianFlow& flow, double t) { return mat_exp(t * flow.l); }

inline Vector flow_map(const LinearGaussianFlow& flow, const Vector& x0, double t) {
  if (x0.size() != flow.dim()) throw DimensionMismatch("flow_map: dimension mismatch");
  return flow.mean_at(t) + flow_jacobian(flow, t) * (x0 - flow.m0);
}

/// Σ(t) = Y(t) Σ0 Y(t)ᵀ.
inline SpdMatrix pushforward_cov(const LinearGaussianFlow& flow, double t) {
  const Matrix y = flow_jacobian(flow, t);
  return SpdMatrix::symmetrized(y * flow.sigma0.matrix() * y.transpose());
}

/// ẋ = L(x - m(t)) + (m1 - m0).
inline Vector flow_velocity(const LinearGaussianFlow& flow, const Vector& x, double t) {
  return flow.l * (x - flow.mean_at(t)) + (flow.m1 - flow.m0);
}

struct DiffeoVelocityField {
  LinearGaussianFlow flow;
  Vector operator()(const Vector& x, double t) const { return flow_velocity(flow, x, t); }
  Matrix eval_batch(const Matrix& xs, double t) const {
    Matrix out = flow.l * (xs.colwise() - flow.mean_at(t));
    out.colwise() += flow.m1 - flow.m0;
    return out;
  }
  Matrix jacobian(const Vector&, double) const { return flow.l; }
};

}  // namespace flowjac
