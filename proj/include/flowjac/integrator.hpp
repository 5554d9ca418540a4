#pragma once

// Fixed-step integration of dx/dt = v(x, t) from t = 0 to t = 1.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "flowjac/linalg.hpp"

namespace flowjac {

/// Anything evaluable as v(x, t) -> Vector of the same dimension.
template <class F>
concept VelocityField = requires(const F& f, const Vector& x, double t) {
  { f(x, t) } -> std::convertible_to<Vector>;
};

/// Fields that can evaluate a whole batch of states (one per column) at once.
template <class F>
concept BatchVelocityField = VelocityField<F> && requires(const F& f, const Matrix& xs, double t) {
  { f.eval_batch(xs, t) } -> std::convertible_to<Matrix>;
};

/// Fields that expose their spatial Jacobian ∂v/∂x.
template <class F>
concept DifferentiableField = VelocityField<F> && requires(const F& f, const Vector& x, double t) {
  { f.jacobian(x, t) } -> std::convertible_to<Matrix>;
};

enum class Scheme { euler, rk4 };

inline std::string_view to_string(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

inline Scheme parse_scheme(std::string_view name) {
  if (name == "euler") return Scheme::euler;
  if (name == "rk4") return Scheme::rk4;
  throw ConfigError("unknown integration scheme '" + std::string(name) + "' (expected euler or rk4)");
}

inline constexpr std::size_t kDefaultSteps = 100;
inline constexpr Scheme kDefaultScheme = Scheme::rk4;
inline constexpr double kTimeClamp = 1e-9;

/// Field evaluations inside the integrator never see exactly 0 or 1.
inline double clamp_time(double t) { return std::clamp(t, kTimeClamp, 1.0 - kTimeClamp); }

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;

  const Vector& endpoint() const { return states.back(); }
};

namespace detail {

inline void require_finite_state(const auto& x, double t) {
  if (!x.allFinite()) throw NonFiniteState("integrate: state became non-finite at t=" + std::to_string(t));
}

inline double grid_time(std::size_t i, std::size_t steps) {
  return i == steps ? 1.0 : static_cast<double>(i) / static_cast<double>(steps);
}

template <class State, class Eval>
State step(const Eval& eval, const State& x, double t, double h, Scheme scheme) {
  if (scheme == Scheme::euler) return x + h * eval(x, clamp_time(t));
  const State k1 = eval(x, clamp_time(t));
  const State k2 = eval(State(x + 0.5 * h * k1), clamp_time(t + 0.5 * h));
  const State k3 = eval(State(x + 0.5 * h * k2), clamp_time(t + 0.5 * h));
  const State k4 = eval(State(x + h * k3), clamp_time(t + h));
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

template <VelocityField F>
Trajectory integrate(const F& field, const Vector& x0, std::size_t steps, Scheme scheme = kDefaultScheme) {
  if (steps < 1) throw DimensionMismatch("integrate: steps must be >= 1");
  const double h = 1.0 / static_cast<double>(steps);
  auto eval = [&](const Vector& x, double t) -> Vector { return field(x, t); };
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  detail::require_finite_state(x0, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = detail::grid_time(i, steps);
    Vector next = detail::step(eval, traj.states.back(), t, h, scheme);
    const double t_next = detail::grid_time(i + 1, steps);
    detail::require_finite_state(next, t_next);
    traj.times.push_back(t_next);
    traj.states.push_back(std::move(next));
  }
  return traj;
}

template <VelocityField F>
Vector flow_endpoint(const F& field, const Vector& x0, std::size_t steps, Scheme scheme = kDefaultScheme) {
  return integrate(field, x0, steps, scheme).states.back();
}

/// Evaluates the field on every column of xs.
template <VelocityField F>
Matrix evaluate_batch(const F& field, const Matrix& xs, double t) {
  if constexpr (BatchVelocityField<F>) {
    return field.eval_batch(xs, t);
  } else {
    Matrix out(xs.rows(), xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out.col(i) = field(Vector(xs.col(i)), t);
    return out;
  }
}

/// Endpoints for a batch of initial states (one per column). Each column
/// follows the same arithmetic as flow_endpoint up to the field's batch
/// evaluation.
template <VelocityField F>
Matrix integrate_batch(const F& field, const Matrix& x0s, std::size_t steps, Scheme scheme = kDefaultScheme) {
  if (steps < 1) throw DimensionMismatch("integrate_batch: steps must be >= 1");
  const double h = 1.0 / static_cast<double>(steps);
  auto eval = [&](const Matrix& xs, double t) -> Matrix { return evaluate_batch(field, xs, t); };
  Matrix x = x0s;
  detail::require_finite_state(x, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = detail::grid_time(i, steps);
    x = detail::step(eval, x, t, h, scheme);
    detail::require_finite_state(x, detail::grid_time(i + 1, steps));
  }
  return x;
}

struct TangentEndpoint {
  Vector state;
  Vector tangent;
};

/// Integrates the state together with its variational equation
/// ẇ = ∂v/∂x(x, t) w, w(0) = z. The returned tangent is the exact directional
/// derivative of the discrete endpoint map along z.
template <DifferentiableField F>
TangentEndpoint integrate_tangent(const F& field, const Vector& x0, const Vector& z, std::size_t steps,
                                  Scheme scheme = kDefaultScheme) {
  if (steps < 1) throw DimensionMismatch("integrate_tangent: steps must be >= 1");
  if (z.size() != x0.size()) throw DimensionMismatch("integrate_tangent: direction dimension mismatch");
  const Eigen::Index d = x0.size();
  const double h = 1.0 / static_cast<double>(steps);
  auto eval = [&](const Vector& y, double t) -> Vector {
    const Vector x = y.head(d);
    Vector out(2 * d);
    out.head(d) = field(x, t);
    out.tail(d) = field.jacobian(x, t) * y.tail(d);
    return out;
  };
  Vector y(2 * d);
  y << x0, z;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = detail::grid_time(i, steps);
    y = detail::step(eval, y, t, h, scheme);
    detail::require_finite_state(y, detail::grid_time(i + 1, steps));
  }
  return {y.head(d), y.tail(d)};
}

}  // namespace flowjac
