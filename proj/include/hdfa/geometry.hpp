#pragma once

#include <cmath>
#include <stdexcept>

#include "hdfa/autodiff.hpp"

namespace hdfa {

/// Radial margin kept between any point and the ball boundary. artanh and
/// cosh^-1 blow up at the boundary, so every operation that can push a point
/// outward re-projects to radius (1 - kBallEps) / sqrt(|c|).
inline constexpr double kBallEps = 1e-5;

template <typename T>
struct Curvature {
  T value;  // strictly negative

  Curvature() : value(T(-1.0)) {}
  explicit Curvature(T c) : value(c) {
    if (!(primal(value) < 0.0)) {
      throw std::invalid_argument("Curvature: c must be strictly negative");
    }
  }

  T abs() const { return -value; }
};

template <typename T>
T ball_radius(const Curvature<T>& c) {
  using std::sqrt;
  return T(1.0) / sqrt(c.abs());
}

template <typename T>
struct BallPoint {
  VecX<T> coords;
  Curvature<T> curv;

  Eigen::Index dim() const { return coords.size(); }
};

template <typename T>
struct TangentVector {
  VecX<T> coords;
  BallPoint<T> base;

  Eigen::Index dim() const { return coords.size(); }
};

namespace detail {

template <typename T>
void check_pair(const BallPoint<T>& x, const BallPoint<T>& y, const char* op) {
  if (x.dim() != y.dim()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch");
  }
  if (primal(x.curv.value) != primal(y.curv.value)) {
    throw std::invalid_argument(std::string(op) + ": curvature mismatch");
  }
}

template <typename T>
void check_finite(const VecX<T>& v, const char* op) {
  if (!all_finite(v)) {
    throw std::invalid_argument(std::string(op) + ": non-finite input");
  }
}

// tanh(s)/s extended smoothly through s = 0; s2 is s squared.
template <typename T>
T tanh_over_x_from_sq(const T& s2) {
  using std::sqrt;
  using std::tanh;
  if (primal(s2) < 1e-12) {
    return T(1.0) - s2 / 3.0 + s2 * s2 * (2.0 / 15.0);
  }
  const T s = sqrt(s2);
  return tanh(s) / s;
}

// atanh(s)/s extended smoothly through s = 0; s2 is s squared.
template <typename T>
T atanh_over_x_from_sq(const T& s2) {
  using std::atanh;
  using std::sqrt;
  if (primal(s2) < 1e-12) {
    return T(1.0) + s2 / 3.0 + s2 * s2 / 5.0;
  }
  const T s = sqrt(s2);
  return atanh(s) / s;
}

// cosh^-1(1 + delta) for delta >= 0, stable near delta = 0. At delta = 0 the
// true derivative is infinite; the subgradient 0 is returned instead so that
// coincident points do not poison a reverse sweep.
template <typename T>
T acosh_1p(const T& delta) {
  using std::log1p;
  using std::sqrt;
  if (!(primal(delta) > 0.0)) return 0.0 * delta;
  return log1p(delta + sqrt(delta * (delta + 2.0)));
}

}  // namespace detail

/// Projects a raw vector onto the closed ball of radius (1-kBallEps)/sqrt(|c|).
/// Interior points pass through unchanged.
template <typename T>
BallPoint<T> project_to_ball(const VecX<T>& x, const Curvature<T>& c,
                             double eps = kBallEps) {
  using std::sqrt;
  detail::check_finite(x, "project_to_ball");
  const T sq = x.squaredNorm();
  const T max_norm = (1.0 - eps) * ball_radius(c);
  if (primal(sq) >= primal(max_norm) * primal(max_norm)) {
    const T scale = max_norm / sqrt(sq);
    return BallPoint<T>{x * scale, c};
  }
  return BallPoint<T>{x, c};
}

template <typename T>
BallPoint<T> origin(Eigen::Index dim, const Curvature<T>& c) {
  return BallPoint<T>{VecX<T>::Zero(dim), c};
}

/// Conformal factor lambda_x = 2 / (1 + c |x|^2).
template <typename T>
T conformal_factor(const BallPoint<T>& x) {
  return T(2.0) / (T(1.0) + x.curv.value * x.coords.squaredNorm());
}

template <typename T>
BallPoint<T> mobius_neg(const BallPoint<T>& x) {
  return BallPoint<T>{-x.coords, x.curv};
}

/// Mobius addition, boundary-projected.
template <typename T>
BallPoint<T> mobius_add(const BallPoint<T>& x, const BallPoint<T>& y) {
  detail::check_pair(x, y, "mobius_add");
  detail::check_finite(x.coords, "mobius_add");
  detail::check_finite(y.coords, "mobius_add");
  const T c = x.curv.value;
  const T xy = x.coords.dot(y.coords);
  const T xx = x.coords.squaredNorm();
  const T yy = y.coords.squaredNorm();
  const T ax = T(1.0) - 2.0 * c * xy - c * yy;
  const T ay = T(1.0) + c * xx;
  const T den = T(1.0) - 2.0 * c * xy + c * c * xx * yy;
  VecX<T> out = (ax * x.coords + ay * y.coords) / den;
  return project_to_ball(out, x.curv);
}

/// Geodesic distance, evaluated through cosh^-1(1 + delta) with delta computed
/// directly so no precision is lost near coincident points.
template <typename T>
T distance(const BallPoint<T>& x, const BallPoint<T>& y) {
  using std::sqrt;
  detail::check_pair(x, y, "distance");
  const T c = x.curv.value;
  const T diff = (x.coords - y.coords).squaredNorm();
  const T delta =
      -2.0 * c * diff /
      ((T(1.0) + c * x.coords.squaredNorm()) * (T(1.0) + c * y.coords.squaredNorm()));
  return detail::acosh_1p(delta) / sqrt(-c);
}

template <typename T>
T distance_to_origin(const BallPoint<T>& x) {
  return distance(x, origin(x.dim(), x.curv));
}

/// Exponential map at `base` of tangent coordinates `u`.
template <typename T>
BallPoint<T> expm(const BallPoint<T>& base, const VecX<T>& u) {
  if (u.size() != base.dim()) {
    throw std::invalid_argument("expm: dimension mismatch");
  }
  detail::check_finite(u, "expm");
  const T q = u.squaredNorm();
  if (primal(q) == 0.0) return base;
  const T c_abs = base.curv.abs();
  const T lam = conformal_factor(base);
  // second Mobius operand: tanh(sqrt|c| lam |u| / 2) * u / (sqrt|c| |u|)
  //                      = tanh_over_x(s) * (lam / 2) * u  with s^2 = |c| lam^2 q / 4.
  const T s2 = c_abs * lam * lam * q * 0.25;
  const VecX<T> second = (detail::tanh_over_x_from_sq(s2) * (lam * 0.5)) * u;
  return mobius_add(base, BallPoint<T>{second, base.curv});
}

template <typename T>
BallPoint<T> expm(const BallPoint<T>& base, const TangentVector<T>& u) {
  if (to_double(u.base.coords) != to_double(base.coords)) {
    throw std::invalid_argument("expm: tangent vector is based at another point");
  }
  return expm(base, u.coords);
}

/// Logarithmic map, the local inverse of expm.
template <typename T>
TangentVector<T> logm(const BallPoint<T>& base, const BallPoint<T>& y) {
  detail::check_pair(base, y, "logm");
  const BallPoint<T> w = mobius_add(mobius_neg(base), y);
  const T q = w.coords.squaredNorm();
  const T c_abs = base.curv.abs();
  const T lam = conformal_factor(base);
  // (2 / (sqrt|c| lam)) atanh(sqrt|c| |w|) * w / |w| = (2/lam) atanh_over_x(s) * w,
  // s^2 = |c| q.
  const T s2 = c_abs * q;
  VecX<T> out = (detail::atanh_over_x_from_sq(s2) * (T(2.0) / lam)) * w.coords;
  return TangentVector<T>{out, base};
}

/// Transport of a tangent vector from the origin to p: v -> (lambda_0 / lambda_p) v.
template <typename T>
TangentVector<T> parallel_transport_from_origin(const BallPoint<T>& p,
                                                const VecX<T>& v) {
  if (v.size() != p.dim()) {
    throw std::invalid_argument("parallel_transport_from_origin: dimension mismatch");
  }
  detail::check_finite(v, "parallel_transport_from_origin");
  // lambda_0 = 2, so the ratio is (1 + c |p|^2).
  const T ratio = T(1.0) + p.curv.value * p.coords.squaredNorm();
  return TangentVector<T>{ratio * v, p};
}

template <typename T>
TangentVector<T> parallel_transport_from_origin(const BallPoint<T>& p,
                                                const TangentVector<T>& v) {
  if (primal(v.base.coords.squaredNorm()) != 0.0) {
    throw std::invalid_argument(
        "parallel_transport_from_origin: vector is not based at the origin");
  }
  return parallel_transport_from_origin(p, v.coords);
}

/// expm at the origin (the simplified form).
template <typename T>
BallPoint<T> expm0(const VecX<T>& u, const Curvature<T>& c) {
  return expm(origin<T>(u.size(), c), u);
}

/// logm at the origin (the simplified form).
template <typename T>
VecX<T> logm0(const BallPoint<T>& y) {
  return logm(origin<T>(y.dim(), y.curv), y).coords;
}

/// Moves a point to a ball of another curvature through the shared tangent
/// space at the origin.
template <typename T>
BallPoint<T> reembed(const BallPoint<T>& x, const Curvature<T>& target) {
  return expm0(logm0(x), target);
}

}  // namespace hdfa
