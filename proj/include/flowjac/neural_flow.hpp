#pragma once

// A tanh multilayer perceptron velocity field v_θ(x, t) with time concatenated
// to the input, trained on the flow-matching regression loss
//   L(θ) = E ‖v_θ(x_t, t) - (x1 - x0)‖²
// with Adam, plus an exact forward-mode JVP and a flat binary container.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "flowjac/distributions.hpp"
#include "flowjac/linalg.hpp"
#include "flowjac/random.hpp"

namespace flowjac {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  LrSchedule schedule = LrSchedule::constant;

  /// Step size for 0-based step k; cosine decays to zero over `steps`.
  double lr_at(std::size_t k) const {
    if (schedule == LrSchedule::constant || steps == 0) return learning_rate;
    const double progress = static_cast<double>(k) / static_cast<double>(steps);
    return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

inline std::string_view to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

class MlpField {
 public:
  MlpField() = default;

  MlpField(std::vector<Matrix> weights, std::vector<Vector> biases)
      : weights_(std::move(weights)), biases_(std::move(biases)) {
    if (weights_.empty() || weights_.size() != biases_.size()) {
      throw DimensionMismatch("MlpField: need one bias per weight layer and at least one layer");
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (biases_[l].size() != weights_[l].rows()) throw DimensionMismatch("MlpField: bias/weight shape mismatch");
      if (l > 0 && weights_[l].cols() != weights_[l - 1].rows()) {
        throw DimensionMismatch("MlpField: layer shapes do not chain");
      }
      if (!weights_[l].allFinite() || !biases_[l].allFinite()) throw NonFiniteState("MlpField: non-finite parameter");
    }
    if (weights_.front().cols() != weights_.back().rows() + 1) {
      throw DimensionMismatch("MlpField: input width must be output width + 1 (time input)");
    }
  }

  static MlpField zeros(const std::vector<std::size_t>& widths) {
    require_widths(widths);
    std::vector<Matrix> w;
    std::vector<Vector> b;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      w.push_back(Matrix::Zero(to_index(widths[l + 1]), to_index(widths[l])));
      b.push_back(Vector::Zero(to_index(widths[l + 1])));
    }
    return {std::move(w), std::move(b)};
  }

  /// Uniform(-1/√fan_in, 1/√fan_in) weights and biases from Rng(seed, 0).
  static MlpField initialized(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    MlpField field = zeros(widths);
    Rng rng(seed, 0);
    for (std::size_t l = 0; l < field.weights_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(field.weights_[l].cols()));
      auto draw = [&] { return bound * (2.0 * rng.uniform() - 1.0); };
      for (Eigen::Index i = 0; i < field.weights_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < field.weights_[l].cols(); ++j) field.weights_[l](i, j) = draw();
      for (Eigen::Index i = 0; i < field.biases_[l].size(); ++i) field.biases_[l](i) = draw();
    }
    return field;
  }

  /// [input, hidden..., output].
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{static_cast<std::size_t>(weights_.front().cols())};
    for (const auto& m : weights_) w.push_back(static_cast<std::size_t>(m.rows()));
    return w;
  }

  Eigen::Index dim() const { return weights_.back().rows(); }
  std::size_t layers() const { return weights_.size(); }
  const std::vector<Matrix>& weights() const { return weights_; }
  const std::vector<Vector>& biases() const { return biases_; }
  std::vector<Matrix>& weights() { return weights_; }
  std::vector<Vector>& biases() { return biases_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return n;
  }

  /// Forward pass on stacked inputs [x; t], one column per sample.
  Matrix forward(const Matrix& inputs) const {
    Matrix a = inputs;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Matrix z = weights_[l] * a;
      z.colwise() += biases_[l];
      a = l + 1 < weights_.size() ? Matrix(z.array().tanh()) : std::move(z);
    }
    return a;
  }

  Matrix eval_batch(const Matrix& xs, double t) const {
    Matrix inputs(xs.rows() + 1, xs.cols());
    inputs.topRows(xs.rows()) = xs;
    inputs.row(xs.rows()).setConstant(t);
    return forward(inputs);
  }

  Vector operator()(const Vector& x, double t) const {
    if (x.size() != dim()) throw DimensionMismatch("MlpField: input dimension mismatch");
    return eval_batch(x, t).col(0);
  }

  /// Directional derivative ∂v/∂x · z by propagating (value, tangent) pairs.
  Vector jvp(const Vector& x, double t, const Vector& z) const {
    if (x.size() != dim() || z.size() != dim()) throw DimensionMismatch("MlpField::jvp: dimension mismatch");
    Vector a(x.size() + 1);
    a << x, t;
    Vector da(x.size() + 1);
    da << z, 0.0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Vector pre = weights_[l] * a + biases_[l];
      Vector dpre = weights_[l] * da;
      if (l + 1 < weights_.size()) {
        a = pre.array().tanh();
        da = (1.0 - a.array().square()) * dpre.array();
      } else {
        a = std::move(pre);
        da = std::move(dpre);
      }
    }
    return da;
  }

  /// Full spatial Jacobian ∂v/∂x (d×d).
  Matrix jacobian(const Vector& x, double t) const {
    const Eigen::Index d = dim();
    Vector a(d + 1);
    a << x, t;
    Matrix da = Matrix::Zero(d + 1, d);
    da.topRows(d) = Matrix::Identity(d, d);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Vector pre = weights_[l] * a + biases_[l];
      Matrix dpre = weights_[l] * da;
      if (l + 1 < weights_.size()) {
        a = pre.array().tanh();
        da = (1.0 - a.array().square()).matrix().asDiagonal() * dpre;
      } else {
        a = std::move(pre);
        da = std::move(dpre);
      }
    }
    return da;
  }

 private:
  static Eigen::Index to_index(std::size_t n) { return static_cast<Eigen::Index>(n); }
  static void require_widths(const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) throw DimensionMismatch("MlpField: need at least input and output widths");
    for (auto w : widths)
      if (w == 0) throw DimensionMismatch("MlpField: zero layer width");
    if (widths.front() != widths.back() + 1) {
      throw DimensionMismatch("MlpField: input width must be output width + 1 (time input)");
    }
  }

  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

struct MlpGradient {
  double loss = 0.0;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

/// Mean over columns of ‖v(input) - target‖² and its gradient by backprop.
inline MlpGradient loss_and_gradient(const MlpField& field, const Matrix& inputs, const Matrix& targets) {
  const std::size_t layers = field.layers();
  const auto& w = field.weights();
  const auto& b = field.biases();
  std::vector<Matrix> acts;
  acts.reserve(layers + 1);
  acts.push_back(inputs);
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = w[l] * acts.back();
    z.colwise() += b[l];
    acts.push_back(l + 1 < layers ? Matrix(z.array().tanh()) : std::move(z));
  }
  const double n = static_cast<double>(inputs.cols());
  const Matrix residual = acts.back() - targets;
  MlpGradient g;
  g.loss = residual.squaredNorm() / n;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix delta = (2.0 / n) * residual;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) delta = delta.cwiseProduct(Matrix(1.0 - acts[l + 1].array().square()));
    g.weights[l].noalias() = delta * acts[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) delta = w[l].transpose() * delta;
  }
  return g;
}

/// Adam over every weight and bias of an MlpField.
class AdamState {
 public:
  AdamState(const MlpField& field, const TrainConfig& cfg) : cfg_(cfg) {
    for (std::size_t l = 0; l < field.layers(); ++l) {
      mw_.push_back(Matrix::Zero(field.weights()[l].rows(), field.weights()[l].cols()));
      vw_.push_back(mw_.back());
      mb_.push_back(Vector::Zero(field.biases()[l].size()));
      vb_.push_back(mb_.back());
    }
  }

  void apply(MlpField& field, const MlpGradient& g) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double lr = cfg_.lr_at(step_ - 1);
    for (std::size_t l = 0; l < field.layers(); ++l) {
      update(field.weights()[l], mw_[l], vw_[l], g.weights[l], lr, c1, c2);
      update(field.biases()[l], mb_[l], vb_[l], g.biases[l], lr, c1, c2);
    }
  }

 private:
  template <class P>
  void update(P& param, P& m, P& v, const P& grad, double lr, double c1, double c2) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps_opt);
  }

  TrainConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Matrix> mw_, vw_;
  std::vector<Vector> mb_, vb_;
};

/// Draws one target sample x1.
template <class S>
concept TargetSampler = requires(S& s, Rng& rng) {
  { s(rng) } -> std::convertible_to<Vector>;
};

struct MixtureSampler {
  const MixtureSpec* spec;
  Vector operator()(Rng& rng) const { return draw_gaussian(spec->components[draw_component(*spec, rng)], rng); }
};

/// Resamples uniformly (with replacement) from a fixed training set.
struct DatasetSampler {
  const std::vector<Vector>* data;
  Vector operator()(Rng& rng) const {
    const auto n = data->size();
    auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
    return (*data)[std::min(i, n - 1)];
  }
};

struct TrainResult {
  MlpField field;
  std::vector<double> loss_curve;
};

/// Flow-matching regression from source N(src) to target samples. Each step
/// draws a fresh minibatch of (x0, x1, t) from Rng(seed, 1); initialization
/// uses Rng(seed, 0).
template <TargetSampler S>
TrainResult train(const GaussianSpec& src, S sampler, const std::vector<std::size_t>& hidden, const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  const Eigen::Index d = src.dim();
  std::vector<std::size_t> widths{static_cast<std::size_t>(d + 1)};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(static_cast<std::size_t>(d));
  TrainResult result{MlpField::initialized(widths, cfg.seed), {}};
  result.loss_curve.reserve(cfg.steps);
  AdamState adam(result.field, cfg);
  Rng rng(cfg.seed, 1);
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  Matrix inputs(d + 1, batch);
  Matrix targets(d, batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (Eigen::Index i = 0; i < batch; ++i) {
      const Vector x0 = draw_gaussian(src, rng);
      const Vector x1 = sampler(rng);
      if (x1.size() != d) throw DimensionMismatch("train: target sample dimension mismatch");
      const double t = rng.uniform();
      inputs.col(i).head(d) = interpolate(x0, x1, t);
      inputs(d, i) = t;
      targets.col(i) = x1 - x0;
    }
    const MlpGradient g = loss_and_gradient(result.field, inputs, targets);
    if (!std::isfinite(g.loss)) {
      throw NonFiniteState("train: loss became non-finite at step " + std::to_string(step));
    }
    result.loss_curve.push_back(g.loss);
    adam.apply(result.field, g);
  }
  return result;
}

inline TrainResult train(const GaussianSpec& src, const MixtureSpec& tgt, const std::vector<std::size_t>& hidden,
                         const TrainConfig& cfg) {
  if (src.dim() != tgt.dim()) throw DimensionMismatch("train: source/target dimension mismatch");
  return train(src, MixtureSampler{&tgt}, hidden, cfg);
}

inline TrainResult train(const GaussianSpec& src, const GaussianSpec& tgt, const std::vector<std::size_t>& hidden,
                         const TrainConfig& cfg) {
  return train(src, MixtureSpec::single(tgt), hidden, cfg);
}

inline Vector mlp_eval(const MlpField& field, const Vector& x, double t) { return field(x, t); }
inline Vector mlp_jvp(const MlpField& field, const Vector& x, double t, const Vector& z) { return field.jvp(x, t, z); }

// ---------------------------------------------------------------------------
// Binary container: magic "FLOWJMLP", u32 version, u32 layer count L,
// (L + 1) u64 widths, then per layer the weight matrix (row-major) followed by
// the bias, all as little-endian IEEE-754 doubles.

inline constexpr std::array<char, 8> kModelMagic{'F', 'L', 'O', 'W', 'J', 'M', 'L', 'P'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_le(std::vector<unsigned char>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  std::uint64_t get_le(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) throw ConfigError("model file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double get_double() { return std::bit_cast<double>(get_le(8)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> model_to_bytes(const MlpField& field) {
  std::vector<unsigned char> out(kModelMagic.begin(), kModelMagic.end());
  detail::put_le(out, kModelVersion, 4);
  detail::put_le(out, field.layers(), 4);
  for (auto w : field.widths()) detail::put_le(out, w, 8);
  for (std::size_t l = 0; l < field.layers(); ++l) {
    const Matrix& w = field.weights()[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) detail::put_le(out, std::bit_cast<std::uint64_t>(w(i, j)), 8);
    for (Eigen::Index i = 0; i < field.biases()[l].size(); ++i)
      detail::put_le(out, std::bit_cast<std::uint64_t>(field.biases()[l](i)), 8);
  }
  return out;
}

inline MlpField model_from_bytes(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kModelMagic.size() || !std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin())) {
    throw ConfigError("model file: bad magic bytes");
  }
  detail::ByteReader in(bytes);
  for (std::size_t i = 0; i < kModelMagic.size(); ++i) in.get_le(1);
  if (in.get_le(4) != kModelVersion) throw ConfigError("model file: unsupported version");
  const auto layers = static_cast<std::size_t>(in.get_le(4));
  if (layers == 0 || layers > 1024) throw ConfigError("model file: implausible layer count");
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i <= layers; ++i) widths.push_back(static_cast<std::size_t>(in.get_le(8)));
  const std::size_t header = kModelMagic.size() + 8 + 8 * (layers + 1);
  std::size_t params = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    if (widths[l] == 0 || widths[l] > (1u << 20) || widths[l + 1] == 0 || widths[l + 1] > (1u << 20)) {
      throw ConfigError("model file: implausible layer width");
    }
    params += widths[l + 1] * (widths[l] + 1);
  }
  if (bytes.size() != header + 8 * params) throw ConfigError("model file: size does not match the declared widths");
  std::vector<Matrix> w;
  std::vector<Vector> b;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto rows = static_cast<Eigen::Index>(widths[l + 1]);
    const auto cols = static_cast<Eigen::Index>(widths[l]);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = in.get_double();
    Vector v(rows);
    for (Eigen::Index i = 0; i < rows; ++i) v(i) = in.get_double();
    w.push_back(std::move(m));
    b.push_back(std::move(v));
  }
  if (!in.done()) throw ConfigError("model file: trailing bytes");
  return {std::move(w), std::move(b)};
}

inline void save_model(const MlpField& field, const std::string& path) {
  const auto bytes = model_to_bytes(field);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write model file " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline MlpField load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read model file " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return model_from_bytes(bytes);
}

}  // namespace flowjac
