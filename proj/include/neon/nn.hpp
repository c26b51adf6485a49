#pragma once

// Dense neural-network substrate: linear layers, ReLU, batch normalization,
// softmax and an adaptive-moment optimizer. Everything is templated on the
// scalar type and operates on Eigen dense matrices laid out as
// [batch x features].

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace neon::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << "[" << rows << " x " << cols << "]";
  return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

enum class Mode { kTrain, kInfer };

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Fully-connected layer y = x W^T + b. weight is [out x in].
template <typename Scalar>
struct Linear {
  Matrix<Scalar> weight;
  Vector<Scalar> bias;

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out)
      : weight(Matrix<Scalar>::Zero(out, in)), bias(Vector<Scalar>::Zero(out)) {}

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  void set_zero() {
    weight.setZero();
    bias.setZero();
  }
};

template <typename Scalar, typename Derived>
Matrix<Scalar> linear_forward(const Linear<Scalar>& layer,
                              const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != layer.in_dim()) {
    throw DimensionError("linear_forward: input " +
                         shape_string(x.rows(), x.cols()) +
                         " does not match weight " +
                         shape_string(layer.weight.rows(), layer.weight.cols()));
  }
  Matrix<Scalar> y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return y;
}

/// Accumulates parameter gradients into `grad` and returns d(loss)/dx.
template <typename Scalar, typename DerivedX, typename DerivedDy>
Matrix<Scalar> linear_backward(const Linear<Scalar>& layer,
                               const Eigen::MatrixBase<DerivedX>& x,
                               const Eigen::MatrixBase<DerivedDy>& dy,
                               Linear<Scalar>& grad) {
  if (dy.cols() != layer.out_dim() || dy.rows() != x.rows()) {
    throw DimensionError("linear_backward: upstream gradient " +
                         shape_string(dy.rows(), dy.cols()) +
                         " does not match output " +
                         shape_string(x.rows(), layer.out_dim()));
  }
  grad.weight.noalias() += dy.transpose() * x;
  grad.bias += dy.colwise().sum().transpose();
  return dy * layer.weight;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

/// Gradient through ReLU given the layer's output (zero where output was 0).
template <typename DerivedY, typename DerivedDy>
auto relu_backward(const Eigen::MatrixBase<DerivedY>& y,
                   const Eigen::MatrixBase<DerivedDy>& dy) {
  using Scalar = typename DerivedY::Scalar;
  return (y.array() > Scalar(0)).select(dy, Scalar(0));
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNorm {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);

  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index dim)
      : gamma(Vector<Scalar>::Ones(dim)),
        beta(Vector<Scalar>::Zero(dim)),
        running_mean(Vector<Scalar>::Zero(dim)),
        running_var(Vector<Scalar>::Ones(dim)) {}

  Eigen::Index dim() const { return gamma.size(); }
};

template <typename Scalar>
struct BatchNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> inv_std;
  Mode mode = Mode::kInfer;
};

/// Per-feature batch mean and (biased) variance observed in a train-mode pass.
template <typename Scalar>
struct BatchStatistics {
  Vector<Scalar> mean;
  Vector<Scalar> var;
  Eigen::Index count = 0;
};

/// Normalizes x. Train mode uses batch statistics (returned through `stats`
/// when non-null); infer mode uses the running estimates. Running estimates
/// are not touched here, see update_running_statistics.
template <typename Scalar, typename Derived>
Matrix<Scalar> batchnorm_forward(const BatchNorm<Scalar>& layer,
                                 const Eigen::MatrixBase<Derived>& x, Mode mode,
                                 BatchNormCache<Scalar>* cache = nullptr,
                                 BatchStatistics<Scalar>* stats = nullptr) {
  if (x.cols() != layer.dim()) {
    throw DimensionError("batchnorm_forward: input " +
                         shape_string(x.rows(), x.cols()) +
                         " does not match feature dimension " +
                         std::to_string(layer.dim()));
  }
  Vector<Scalar> mean;
  Vector<Scalar> var;
  if (mode == Mode::kTrain) {
    if (x.rows() < 2) {
      throw DimensionError(
          "batchnorm_forward: train mode needs a batch of at least 2 rows, got " +
          std::to_string(x.rows()));
    }
    mean = x.colwise().mean().transpose();
    var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  } else {
    mean = layer.running_mean;
    var = layer.running_var;
  }
  Vector<Scalar> inv_std = (var.array() + layer.eps).rsqrt().matrix();
  Matrix<Scalar> xhat =
      ((x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array())
          .matrix();
  Matrix<Scalar> y =
      (xhat.array().rowwise() * layer.gamma.transpose().array()).matrix();
  y.rowwise() += layer.beta.transpose();
  if (stats != nullptr && mode == Mode::kTrain) {
    stats->mean = mean;
    stats->var = var;
    stats->count = x.rows();
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

/// Momentum update of the running estimates; the stored variance is the
/// unbiased batch variance.
template <typename Scalar>
void update_running_statistics(BatchNorm<Scalar>& layer,
                               const BatchStatistics<Scalar>& stats) {
  if (stats.count < 2) return;
  const Scalar n = static_cast<Scalar>(stats.count);
  const Scalar m = layer.momentum;
  layer.running_mean = (Scalar(1) - m) * layer.running_mean + m * stats.mean;
  layer.running_var =
      (Scalar(1) - m) * layer.running_var + m * (stats.var * (n / (n - Scalar(1))));
}

template <typename Scalar, typename DerivedDy>
Matrix<Scalar> batchnorm_backward(const BatchNorm<Scalar>& layer,
                                  const BatchNormCache<Scalar>& cache,
                                  const Eigen::MatrixBase<DerivedDy>& dy,
                                  BatchNorm<Scalar>& grad) {
  if (dy.rows() != cache.xhat.rows() || dy.cols() != cache.xhat.cols()) {
    throw DimensionError("batchnorm_backward: upstream gradient " +
                         shape_string(dy.rows(), dy.cols()) +
                         " does not match cached activations " +
                         shape_string(cache.xhat.rows(), cache.xhat.cols()));
  }
  grad.gamma += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  grad.beta += dy.colwise().sum().transpose();
  Matrix<Scalar> dxhat = (dy.array().rowwise() * layer.gamma.transpose().array()).matrix();
  if (cache.mode == Mode::kInfer) {
    return (dxhat.array().rowwise() * cache.inv_std.transpose().array()).matrix();
  }
  const Scalar n = static_cast<Scalar>(dy.rows());
  RowVector<Scalar> sum_dxhat = dxhat.colwise().sum();
  RowVector<Scalar> sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();
  Matrix<Scalar> dx = (n * dxhat.array()).matrix();
  dx.rowwise() -= sum_dxhat;
  dx -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  dx = (dx.array().rowwise() * (cache.inv_std.transpose().array() / n)).matrix();
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw DimensionError("softmax: empty input");
  if (v.hasNaN()) throw NumericalError("softmax: NaN input");
  const Scalar max = v.maxCoeff();
  Vector<Scalar> e = (v.array() - max).exp().matrix();
  return e / e.sum();
}

/// Row-wise softmax of a [batch x classes] matrix.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.hasNaN()) throw NumericalError("softmax_rows: NaN input");
  Matrix<Scalar> e = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  Vector<Scalar> sums = e.rowwise().sum();
  return (e.array().colwise() / sums.array()).matrix();
}

/// Backward through a row-wise softmax given its output and upstream grad.
template <typename DerivedP, typename DerivedDp>
Matrix<typename DerivedP::Scalar> softmax_rows_backward(
    const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedDp>& dp) {
  using Scalar = typename DerivedP::Scalar;
  Vector<Scalar> dot = (p.array() * dp.array()).rowwise().sum().matrix();
  return (p.array() * (dp.colwise() - dot).array()).matrix();
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform fan-in/fan-out scaling for weights, zero biases. `uniform01` must
/// return reals in [0, 1).
template <typename Scalar, typename Uniform01>
void init_uniform_fan(Matrix<Scalar>& w, Uniform01&& uniform01) {
  const Scalar limit = std::sqrt(Scalar(6) / static_cast<Scalar>(w.rows() + w.cols()));
  // Column-major fill order, fixed for determinism.
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      w(i, j) = (Scalar(2) * static_cast<Scalar>(uniform01()) - Scalar(1)) * limit;
}

template <typename Scalar, typename Uniform01>
void init_linear(Linear<Scalar>& layer, Uniform01&& uniform01) {
  init_uniform_fan(layer.weight, uniform01);
  layer.bias.setZero();
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// A named view onto one parameter tensor's storage.
template <typename Scalar>
struct ParamView {
  std::string name;
  Scalar* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<Vector<Scalar>> flat() const { return {data, size()}; }
};

template <typename Scalar>
struct AdamConfig {
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

template <typename Scalar>
struct AdamState {
  AdamConfig<Scalar> config;
  std::vector<std::string> names;
  std::vector<Vector<Scalar>> first_moment;
  std::vector<Vector<Scalar>> second_moment;
  long step = 0;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const std::vector<ParamView<Scalar>>& params,
                                  AdamConfig<Scalar> config = {}) {
  AdamState<Scalar> state;
  state.config = config;
  for (const auto& p : params) {
    state.names.push_back(p.name);
    state.first_moment.push_back(Vector<Scalar>::Zero(p.size()));
    state.second_moment.push_back(Vector<Scalar>::Zero(p.size()));
  }
  return state;
}

/// One bias-corrected adaptive-moment update, applied in place to `params`.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, const std::vector<ParamView<Scalar>>& params,
               const std::vector<ParamView<Scalar>>& grads) {
  if (params.size() != grads.size() || params.size() != state.names.size()) {
    throw DimensionError("adam_step: expected " + std::to_string(state.names.size()) +
                         " parameters, got " + std::to_string(params.size()) +
                         " parameters and " + std::to_string(grads.size()) +
                         " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != state.names[i] || grads[i].name != state.names[i] ||
        params[i].size() != state.first_moment[i].size() ||
        grads[i].size() != params[i].size()) {
      throw DimensionError("adam_step: parameter '" + params[i].name + "' " +
                           shape_string(params[i].rows, params[i].cols) +
                           " does not match gradient '" + grads[i].name + "' " +
                           shape_string(grads[i].rows, grads[i].cols));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar correction1 = Scalar(1) - std::pow(c.beta1, t);
  const Scalar correction2 = Scalar(1) - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads[i].flat();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = c.beta1 * m + (Scalar(1) - c.beta1) * g;
    v = c.beta2 * v + (Scalar(1) - c.beta2) * g.cwiseProduct(g);
    auto p = params[i].flat();
    p.array() -= c.learning_rate * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + c.eps);
  }
}

}  // namespace neon::nn
