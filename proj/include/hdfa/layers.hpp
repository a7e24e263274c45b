#pragma once

#include <functional>
#include <string>

#include "hdfa/autodiff.hpp"
#include "hdfa/rng.hpp"

namespace hdfa {

enum class Activation { kIdentity, kTanh };

template <typename T>
struct DenseLayer {
  MatX<T> weight;  // [out, in]
  VecX<T> bias;    // [out]
  Activation activation = Activation::kIdentity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// Single-head self attention; query/key/value are square projections so the
/// output dimension equals the input dimension.
template <typename T>
struct SelfAttentionLayer {
  DenseLayer<T> query;
  DenseLayer<T> key;
  DenseLayer<T> value;

  Eigen::Index dim() const { return value.in_dim(); }
};

template <typename T>
VecX<T> dense_forward(const DenseLayer<T>& layer, const VecX<T>& x) {
  using std::tanh;
  if (x.size() != layer.in_dim()) {
    throw std::invalid_argument("dense_forward: shape mismatch");
  }
  VecX<T> y = layer.weight * x + layer.bias;
  if (layer.activation == Activation::kTanh) {
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = tanh(y[i]);
  }
  return y;
}

/// Row-wise application: rows of x are items.
template <typename T>
MatX<T> dense_forward(const DenseLayer<T>& layer, const MatX<T>& x) {
  using std::tanh;
  if (x.cols() != layer.in_dim()) {
    throw std::invalid_argument("dense_forward: shape mismatch");
  }
  MatX<T> y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  if (layer.activation == Activation::kTanh) {
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, j) = tanh(y(i, j));
  }
  return y;
}

/// Softmax with max subtraction; the subtracted entry is a tracked value,
/// which leaves the derivative unchanged by shift invariance.
template <typename T>
VecX<T> softmax(const VecX<T>& logits) {
  using std::exp;
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (primal(logits[i]) > primal(logits[arg])) arg = i;
  }
  VecX<T> e(logits.size());
  T total(0.0);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    e[i] = exp(logits[i] - logits[arg]);
    total += e[i];
  }
  return e / total;
}

template <typename T>
T log_sum_exp(const VecX<T>& logits) {
  using std::exp;
  using std::log;
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (primal(logits[i]) > primal(logits[arg])) arg = i;
  }
  T total(0.0);
  for (Eigen::Index i = 0; i < logits.size(); ++i) total += exp(logits[i] - logits[arg]);
  return logits[arg] + log(total);
}

/// softmax(Q K^T / sqrt(dim)) V over the rows of xs, with query = key = value
/// source. A single row reduces to its value projection.
template <typename T>
MatX<T> attention_forward(const SelfAttentionLayer<T>& layer, const MatX<T>& xs) {
  if (xs.rows() < 1) {
    throw std::invalid_argument("attention_forward: need at least one row");
  }
  if (xs.cols() != layer.dim()) {
    throw std::invalid_argument("attention_forward: shape mismatch");
  }
  const MatX<T> v = dense_forward(layer.value, xs);
  if (xs.rows() == 1) {
    return v;  // softmax over one element is 1 and carries no gradient
  }
  const MatX<T> q = dense_forward(layer.query, xs);
  const MatX<T> k = dense_forward(layer.key, xs);
  const double scale = 1.0 / std::sqrt(static_cast<double>(layer.dim()));
  MatX<T> scores = q * k.transpose() * scale;
  MatX<T> out(xs.rows(), xs.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const VecX<T> alpha = softmax<T>(scores.row(i).transpose());
    out.row(i) = (alpha.transpose() * v).row(0);
  }
  return out;
}

/// Classical fixed-step RK4 from t = 0 to t = horizon.
template <typename T>
VecX<T> rk4_solve(const VecX<T>& state0,
                  const std::function<VecX<T>(const VecX<T>&, double)>& flow,
                  double horizon, int steps) {
  if (steps < 1) {
    throw std::invalid_argument("rk4_solve: steps must be >= 1");
  }
  if (!(horizon > 0.0)) {
    throw std::invalid_argument("rk4_solve: horizon must be positive");
  }
  const double h = horizon / steps;
  VecX<T> y = state0;
  for (int i = 0; i < steps; ++i) {
    const double t = h * i;
    const VecX<T> k1 = flow(y, t);
    const VecX<T> k2 = flow(y + (h / 2.0) * k1, t + h / 2.0);
    const VecX<T> k3 = flow(y + (h / 2.0) * k2, t + h / 2.0);
    const VecX<T> k4 = flow(y + h * k3, t + h);
    y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!all_finite(y)) {
      throw NumericalError("rk4_solve: non-finite state at step " + std::to_string(i));
    }
  }
  return y;
}

/// Dense layer with N(0, scale^2) weights and zero bias.
template <typename T>
DenseLayer<T> random_dense(Eigen::Index in, Eigen::Index out, Activation act,
                           NormalSampler& rng, double scale) {
  DenseLayer<T> layer;
  layer.weight = MatX<T>(out, in);
  for (Eigen::Index i = 0; i < out; ++i)
    for (Eigen::Index j = 0; j < in; ++j) layer.weight(i, j) = T(scale * rng());
  layer.bias = VecX<T>(VecX<T>::Zero(out));
  layer.activation = act;
  return layer;
}

template <typename T>
DenseLayer<T> zero_dense(Eigen::Index in, Eigen::Index out, Activation act) {
  return DenseLayer<T>{MatX<T>(MatX<T>::Zero(out, in)), VecX<T>(VecX<T>::Zero(out)), act};
}

}  // namespace hdfa
