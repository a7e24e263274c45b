#pragma once

#include <numbers>
#include <vector>

#include "hdfa/geometry.hpp"

namespace hdfa {

/// Diagonal floor for scale factors. One-sample classes produce a zero
/// covariance; the sampler and the density need L L^T positive definite.
inline constexpr double kSigmaMin = 1e-6;

/// Wrapped normal on the Poincare ball: a Gaussian N(mu, L L^T) in the tangent
/// space at the origin, transported to the prototype and pushed through expm.
template <typename T>
struct WrappedNormal {
  Curvature<T> curv;
  BallPoint<T> prototype;
  VecX<T> mean;        // tangent units at the origin
  MatX<T> scale_tril;  // lower triangular, diagonal >= kSigmaMin

  Eigen::Index dim() const { return mean.size(); }
};

namespace detail {

// Lower-triangular Cholesky factor, plain forward elimination. Eigen's LLT is
// not instantiable over tracked scalars, and d stays desk-scale here.
template <typename T>
MatX<T> cholesky_lower(const MatX<T>& a) {
  using std::sqrt;
  const Eigen::Index d = a.rows();
  MatX<T> l = MatX<T>::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      T s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(primal(s) > 0.0)) {
          throw NumericalError("cholesky_lower: matrix is not positive definite");
        }
        l(i, j) = sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

template <typename T>
VecX<T> forward_substitute(const MatX<T>& l, const VecX<T>& b) {
  const Eigen::Index d = b.size();
  VecX<T> x(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    T s = b[i];
    for (Eigen::Index k = 0; k < i; ++k) s -= l(i, k) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

// log N(z | mu, L L^T) with L lower triangular.
template <typename T>
T gaussian_log_density(const VecX<T>& z, const VecX<T>& mu, const MatX<T>& l) {
  using std::log;
  const Eigen::Index d = z.size();
  T log_det = T(0.0);
  for (Eigen::Index i = 0; i < d; ++i) log_det += log(l(i, i));
  const VecX<T> w = forward_substitute<T>(l, z - mu);
  return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - log_det -
         0.5 * w.squaredNorm();
}

// log(sinh(s)/s) extended smoothly through s = 0.
template <typename T>
T log_sinh_over_x(const T& s) {
  using std::log;
  using std::sinh;
  const T s2 = s * s;
  if (primal(s2) < 1e-12) {
    return log(T(1.0) + s2 / 6.0 + s2 * s2 / 120.0);
  }
  return log(sinh(s) / s);
}

}  // namespace detail

/// Floors the diagonal of a lower-triangular factor at kSigmaMin and discards
/// any upper-triangular content.
template <typename T>
MatX<T> clamp_scale_tril(const MatX<T>& l) {
  using ad::max;
  using std::max;
  const Eigen::Index d = l.rows();
  MatX<T> out = MatX<T>::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) out(i, j) = l(i, j);
    out(i, i) = max(l(i, i), T(kSigmaMin));
  }
  return out;
}

/// Reparameterized draw: expm_p(PT_{0->p}(mu + L eps)). Deterministic in eps.
template <typename T>
BallPoint<T> sample(const WrappedNormal<T>& dist, const Eigen::VectorXd& eps) {
  if (eps.size() != dist.dim()) {
    throw std::invalid_argument("sample: eps dimension mismatch");
  }
  const VecX<T> v_hat = dist.mean + dist.scale_tril * to_scalar<T>(eps);
  const TangentVector<T> v = parallel_transport_from_origin(dist.prototype, v_hat);
  return expm(dist.prototype, v.coords);
}

/// Log of the wrapped normal density:
/// log N(lambda_p logm_p(x) | mu, Sigma) + log(sqrt|c| d(p,x) / sinh(sqrt|c| d(p,x))).
template <typename T>
T log_density(const WrappedNormal<T>& dist, const BallPoint<T>& x) {
  using std::sqrt;
  detail::check_pair(dist.prototype, x, "log_density");
  const T lam = conformal_factor(dist.prototype);
  const VecX<T> z = lam * logm(dist.prototype, x).coords;
  const T g = detail::gaussian_log_density<T>(z, dist.mean, dist.scale_tril);
  const T s = sqrt(dist.curv.abs()) * distance(dist.prototype, x);
  return g - detail::log_sinh_over_x(s);
}

template <typename T>
struct InitialFit {
  VecX<T> mean;        // tangent-space mean at the origin
  MatX<T> scale_tril;  // Cholesky factor of the empirical covariance
  BallPoint<T> prototype;
};

/// Tangent-space statistics of a class: mean of logm_0(x_i), prototype
/// expm_0(mean), and the Cholesky factor of the (1/N) covariance with a
/// kSigmaMin^2 jitter. A single sample degenerates to L = kSigmaMin I.
template <typename T>
InitialFit<T> fit_initial(const std::vector<BallPoint<T>>& features) {
  if (features.empty()) {
    throw std::invalid_argument("fit_initial: empty class");
  }
  const Eigen::Index d = features.front().dim();
  const Curvature<T> c = features.front().curv;
  for (const auto& f : features) detail::check_pair(features.front(), f, "fit_initial");

  MatX<T> tangent(static_cast<Eigen::Index>(features.size()), d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    tangent.row(static_cast<Eigen::Index>(i)) = logm0(features[i]).transpose();
  }
  const VecX<T> mu = tangent.colwise().mean().transpose();

  MatX<T> l;
  if (features.size() == 1) {
    l = MatX<T>(MatX<T>::Identity(d, d) * T(kSigmaMin));
  } else {
    MatX<T> centered = tangent.rowwise() - mu.transpose();
    MatX<T> cov = (centered.transpose() * centered) / static_cast<double>(features.size());
    cov += MatX<T>(MatX<T>::Identity(d, d) * T(kSigmaMin * kSigmaMin));
    l = detail::cholesky_lower<T>(cov);
  }
  return InitialFit<T>{mu, clamp_scale_tril<T>(l), expm0(mu, c)};
}

}  // namespace hdfa
