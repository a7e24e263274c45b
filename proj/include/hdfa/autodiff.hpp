#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hdfa {

/// Thrown when a computation leaves the finite range (surfaces as exit code 3
/// in the CLI, in contrast to usage errors which map to exit code 2).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ad {

class Tape;

/// Scalar tracked by reverse-mode differentiation.
///
/// A default-constructed or double-constructed Var is an untracked constant;
/// arithmetic between constants stays off the tape. Tracked Vars reference a
/// node on their Tape, and mixing Vars from two different tapes is undefined.
struct Var {
  double v = 0.0;
  Tape* tape = nullptr;
  std::int32_t idx = -1;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constants are the point
  Var(double value, Tape* t, std::int32_t i) : v(value), tape(t), idx(i) {}

  double value() const { return v; }
  bool tracked() const { return tape != nullptr; }
};

inline double primal(const Var& x) { return x.v; }

/// Arena of dependency records. Node partials are fixed at forward time, so
/// the tape supports first-order reverse sweeps only; anything that needs
/// higher-order terms (the unrolled inner loop) must be expressed as a
/// first-order computation of explicit gradient formulas.
class Tape {
 public:
  struct Node {
    std::int32_t a;
    std::int32_t b;
    double wa;
    double wb;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

  void reserve(std::size_t n) { nodes_.reserve(n); }

  Var var(double value) {
    return Var(value, this, push(-1, 0.0, -1, 0.0));
  }

  std::int32_t push(std::int32_t a, double wa, std::int32_t b, double wb) {
    nodes_.push_back(Node{a, b, wa, wb});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  /// Reverse sweep seeding d(seed)/d(seed) = 1. Grads of earlier sweeps are
  /// discarded.
  void backward(const Var& seed) {
    if (!seed.tracked() || seed.tape != this) {
      throw std::invalid_argument("backward: seed is not tracked on this tape");
    }
    if (!std::isfinite(seed.v)) {
      throw NumericalError("backward: seed value is not finite");
    }
    grads_.assign(nodes_.size(), 0.0);
    grads_[static_cast<std::size_t>(seed.idx)] = 1.0;
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      const double g = grads_[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.a >= 0) grads_[static_cast<std::size_t>(n.a)] += n.wa * g;
      if (n.b >= 0) grads_[static_cast<std::size_t>(n.b)] += n.wb * g;
    }
  }

  double grad(const Var& x) const {
    if (!x.tracked() || x.tape != this) {
      throw std::invalid_argument("grad: variable is not tracked on this tape");
    }
    return grads_.at(static_cast<std::size_t>(x.idx));
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> grads_;
};

namespace detail {

inline Var unary(const Var& x, double value, double dx) {
  if (!x.tracked()) return Var(value);
  return Var(value, x.tape, x.tape->push(x.idx, dx, -1, 0.0));
}

inline Var binary(const Var& a, const Var& b, double value, double da, double db) {
  Tape* t = a.tracked() ? a.tape : b.tape;
  if (t == nullptr) return Var(value);
  assert(!a.tracked() || !b.tracked() || a.tape == b.tape);
  return Var(value, t,
             t->push(a.tracked() ? a.idx : -1, da, b.tracked() ? b.idx : -1, db));
}

}  // namespace detail

// --- arithmetic ---

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a, b, a.v + b.v, 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a, b, a.v - b.v, 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, a.v * b.v, b.v, a.v);
}
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.v;
  return detail::binary(a, b, a.v * inv, inv, -a.v * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(a, -a.v, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
inline bool operator==(const Var& a, const Var& b) { return a.v == b.v; }
inline bool operator!=(const Var& a, const Var& b) { return a.v != b.v; }

// --- elementary functions ---

inline Var exp(const Var& x) {
  const double e = std::exp(x.v);
  return detail::unary(x, e, e);
}
inline Var log(const Var& x) { return detail::unary(x, std::log(x.v), 1.0 / x.v); }
inline Var log1p(const Var& x) {
  return detail::unary(x, std::log1p(x.v), 1.0 / (1.0 + x.v));
}
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.v);
  return detail::unary(x, s, 0.5 / s);
}
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.v);
  return detail::unary(x, t, 1.0 - t * t);
}
inline Var sinh(const Var& x) {
  return detail::unary(x, std::sinh(x.v), std::cosh(x.v));
}
inline Var cosh(const Var& x) {
  return detail::unary(x, std::cosh(x.v), std::sinh(x.v));
}
inline Var atanh(const Var& x) {
  return detail::unary(x, std::atanh(x.v), 1.0 / (1.0 - x.v * x.v));
}
inline Var pow(const Var& x, double p) {
  return detail::unary(x, std::pow(x.v, p), p * std::pow(x.v, p - 1.0));
}
inline Var abs(const Var& x) {
  return x.v < 0.0 ? -x : x;
}
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }

inline bool isfinite(const Var& x) { return std::isfinite(x.v); }

// Eigen hooks for Matrix<Var, ...>.
inline const Var& conj(const Var& x) { return x; }
inline const Var& real(const Var& x) { return x; }
inline Var imag(const Var&) { return Var(0.0); }
inline Var abs2(const Var& x) { return x * x; }

}  // namespace ad

inline double primal(double x) { return x; }
using ad::primal;

template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Lifts plain values into the scalar type of the surrounding computation;
/// for Var the result is an untracked constant.
template <typename T>
VecX<T> to_scalar(const Eigen::VectorXd& x) {
  VecX<T> out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = T(x[i]);
  return out;
}

template <typename T>
MatX<T> to_scalar_matrix(const Eigen::MatrixXd& x) {
  MatX<T> out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, j) = T(x(i, j));
  return out;
}

template <typename T>
Eigen::VectorXd to_double(const VecX<T>& x) {
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = primal(x[i]);
  return out;
}

template <typename T>
Eigen::MatrixXd to_double_matrix(const MatX<T>& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, j) = primal(x(i, j));
  return out;
}

template <typename T>
bool all_finite(const VecX<T>& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(primal(x[i]))) return false;
  return true;
}

template <typename T>
bool all_finite(const MatX<T>& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (!std::isfinite(primal(x(i, j)))) return false;
  return true;
}

}  // namespace hdfa

namespace Eigen {

template <>
struct NumTraits<hdfa::ad::Var> : NumTraits<double> {
  typedef hdfa::ad::Var Real;
  typedef hdfa::ad::Var NonInteger;
  typedef hdfa::ad::Var Nested;
  typedef hdfa::ad::Var Literal;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3,
  };
  static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
  static inline Real dummy_precision() {
    return Real(NumTraits<double>::dummy_precision());
  }
  static inline Real highest() { return Real(NumTraits<double>::highest()); }
  static inline Real lowest() { return Real(NumTraits<double>::lowest()); }
};

}  // namespace Eigen
