#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "hdfa/distributions.hpp"
#include "hdfa/layers.hpp"
#include "hdfa/rng.hpp"

namespace hdfa {

/// Distance-based classifier: one ball point per class, seen classes first.
template <typename T>
struct HyperbolicClassifier {
  Curvature<T> curv;
  std::vector<std::string> labels;
  std::vector<VecX<T>> weights;  // ambient coordinates

  Eigen::Index size() const { return static_cast<Eigen::Index>(weights.size()); }

  BallPoint<T> weight_point(std::size_t j) const {
    return BallPoint<T>{weights[j], curv};
  }

  Eigen::Index label_index(const std::string& label) const {
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] == label) return static_cast<Eigen::Index>(j);
    }
    throw std::invalid_argument("classifier: unknown label " + label);
  }
};

template <typename T>
HyperbolicClassifier<T> classifier_from_prototypes(const ClassDistributions<T>& dists) {
  HyperbolicClassifier<T> clf;
  clf.curv = dists.curv;
  for (const auto& e : dists.entries) {
    clf.labels.push_back(e.label);
    clf.weights.push_back(e.prototype);
  }
  return clf;
}

/// softmax_j of -d^c(x, w_j).
template <typename T>
VecX<T> class_probability(const HyperbolicClassifier<T>& clf, const BallPoint<T>& x) {
  VecX<T> logits(clf.size());
  for (Eigen::Index j = 0; j < clf.size(); ++j) {
    logits[j] = -distance(x, clf.weight_point(static_cast<std::size_t>(j)));
  }
  return softmax<T>(logits);
}

/// Mean over classes of the mean negative log probability of the true class.
template <typename T>
T finite_sample_loss(
    const HyperbolicClassifier<T>& clf,
    const std::vector<std::pair<std::string, std::vector<BallPoint<T>>>>& samples_by_class) {
  T total(0.0);
  for (const auto& [label, samples] : samples_by_class) {
    const Eigen::Index j = clf.label_index(label);
    T class_total(0.0);
    for (const auto& s : samples) {
      VecX<T> logits(clf.size());
      for (Eigen::Index r = 0; r < clf.size(); ++r) {
        logits[r] = -distance(s, clf.weight_point(static_cast<std::size_t>(r)));
      }
      class_total += log_sum_exp<T>(logits) - logits[j];
    }
    total += class_total / static_cast<double>(samples.size());
  }
  return total / static_cast<double>(samples_by_class.size());
}

struct McLossStats {
  double mean = 0.0;
  double stderr_of_mean = 0.0;
  int draws = 0;
};

namespace detail {

// One Monte-Carlo draw of the infinite-augmentation cross entropy: a single
// sampled feature per class through the finite-sample loss.
template <typename T>
T mc_draw(const HyperbolicClassifier<T>& clf, const ClassDistributions<T>& dists,
          NormalSampler& rng) {
  const Eigen::Index d = dists.dim();
  T per_draw(0.0);
  for (std::size_t j = 0; j < dists.entries.size(); ++j) {
    const BallPoint<T> s = sample(dists.wrapped(j), rng.vector(d));
    VecX<T> logits(clf.size());
    for (Eigen::Index r = 0; r < clf.size(); ++r) {
      logits[r] = -distance(s, clf.weight_point(static_cast<std::size_t>(r)));
    }
    const Eigen::Index j_clf = clf.label_index(dists.entries[j].label);
    per_draw += log_sum_exp<T>(logits) - logits[j_clf];
  }
  return per_draw / static_cast<double>(dists.entries.size());
}

}  // namespace detail

/// Monte-Carlo estimate of the infinite-augmentation cross entropy: each draw
/// samples one feature per class and evaluates the finite-sample loss on that
/// set; the estimate is the mean over draws. Reproducible given the seed and
/// differentiable through the reparameterized sampler.
template <typename T>
T mc_infinite_loss(const HyperbolicClassifier<T>& clf, const ClassDistributions<T>& dists,
                   int draws, std::uint64_t seed) {
  if (draws < 1) {
    throw std::invalid_argument("mc_infinite_loss: draws must be >= 1");
  }
  NormalSampler rng(mix_seed(seed, 0x9c));
  T total(0.0);
  for (int t = 0; t < draws; ++t) total += detail::mc_draw(clf, dists, rng);
  return total / static_cast<double>(draws);
}

/// Estimate plus the Monte-Carlo standard error of its mean (plain values).
inline McLossStats mc_infinite_loss_stats(const HyperbolicClassifier<double>& clf,
                                          const ClassDistributions<double>& dists,
                                          int draws, std::uint64_t seed) {
  if (draws < 1) {
    throw std::invalid_argument("mc_infinite_loss: draws must be >= 1");
  }
  NormalSampler rng(mix_seed(seed, 0x9c));
  double sum = 0.0, sum_sq = 0.0;
  for (int t = 0; t < draws; ++t) {
    const double v = detail::mc_draw(clf, dists, rng);
    sum += v;
    sum_sq += v * v;
  }
  McLossStats out;
  out.draws = draws;
  out.mean = sum / draws;
  const double var = std::max(0.0, sum_sq / draws - out.mean * out.mean);
  out.stderr_of_mean = std::sqrt(var / draws);
  return out;
}

/// Exponents and per-class normalizers of the closed-form bound.
template <typename T>
struct BoundTerms {
  MatX<T> exponents;  // (j, j') entry of the xi_j sum
  VecX<T> log_xi;
  VecX<T> xi;
  T loss;
};

namespace detail {

template <typename T>
void check_bound_inputs(const HyperbolicClassifier<T>& clf,
                        const ClassDistributions<T>& dists) {
  if (primal(clf.curv.value) != primal(dists.curv.value)) {
    throw std::invalid_argument("upper_bound_loss: curvature mismatch");
  }
  if (clf.size() != dists.size()) {
    throw std::invalid_argument("upper_bound_loss: class count mismatch");
  }
  for (Eigen::Index j = 0; j < dists.size(); ++j) {
    if (clf.labels[static_cast<std::size_t>(j)] !=
        dists.entries[static_cast<std::size_t>(j)].label) {
      throw std::invalid_argument("upper_bound_loss: label order mismatch");
    }
  }
}

// Shared state of the bound and its closed-form gradient.
template <typename T>
struct BoundWork {
  std::vector<VecX<T>> s;              // p_hat_j + mu_j
  std::vector<MatX<T>> cov;            // L_j L_j^T
  std::vector<std::vector<VecX<T>>> cw;  // cov_j * (w_r - w_j)
  MatX<T> exponents;
  T loss;
};

template <typename T>
BoundWork<T> bound_forward(const HyperbolicClassifier<T>& clf,
                           const ClassDistributions<T>& dists) {
  check_bound_inputs(clf, dists);
  const Eigen::Index m = dists.size();
  BoundWork<T> w;
  w.s.reserve(static_cast<std::size_t>(m));
  w.cov.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& e = dists.entries[static_cast<std::size_t>(j)];
    w.s.push_back(logm0(dists.prototype_point(static_cast<std::size_t>(j))) + e.mean);
    w.cov.push_back(e.scale_tril * e.scale_tril.transpose());
  }
  w.cw.assign(static_cast<std::size_t>(m), {});
  w.exponents = MatX<T>(m, m);
  w.loss = T(0.0);
  for (Eigen::Index j = 0; j < m; ++j) {
    auto& row_cw = w.cw[static_cast<std::size_t>(j)];
    row_cw.reserve(static_cast<std::size_t>(m));
    const VecX<T>& wj = clf.weights[static_cast<std::size_t>(j)];
    const T wj_sq = wj.squaredNorm();
    for (Eigen::Index r = 0; r < m; ++r) {
      const VecX<T>& wr = clf.weights[static_cast<std::size_t>(r)];
      const VecX<T> diff = wr - wj;
      row_cw.push_back(w.cov[static_cast<std::size_t>(j)] * diff);
      w.exponents(j, r) = wr.dot(w.s[static_cast<std::size_t>(j)]) +
                          (wr.squaredNorm() - wj_sq) +
                          0.5 * diff.dot(row_cw.back());
    }
    // log-space with the j' = j term factored out: the diagonal exponent is
    // exactly w_j . s_j, so the per-class loss is LSE_r(a_jr - a_jj).
    w.loss += log_sum_exp<T>(VecX<T>(w.exponents.row(j).transpose().array() -
                                     w.exponents(j, j))
                                 .matrix());
  }
  w.loss = w.loss / static_cast<double>(m);
  return w;
}

}  // namespace detail

template <typename T>
BoundTerms<T> upper_bound_terms(const HyperbolicClassifier<T>& clf,
                                const ClassDistributions<T>& dists) {
  using std::exp;
  auto w = detail::bound_forward(clf, dists);
  const Eigen::Index m = dists.size();
  BoundTerms<T> out;
  out.exponents = std::move(w.exponents);
  out.log_xi = VecX<T>(m);
  out.xi = VecX<T>(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    out.log_xi[j] = log_sum_exp<T>(VecX<T>(out.exponents.row(j).transpose()));
    out.xi[j] = exp(out.log_xi[j]);
  }
  out.loss = w.loss;
  return out;
}

/// Closed-form upper bound of the infinite-augmentation loss, evaluated in
/// log space. Classifier weights enter as ambient vectors.
template <typename T>
T upper_bound_loss(const HyperbolicClassifier<T>& clf,
                   const ClassDistributions<T>& dists) {
  return detail::bound_forward(clf, dists).loss;
}

/// Bound value plus its exact gradient in the weights' ambient coordinates.
/// The gradient is an explicit formula (not a tape sweep) so the inner
/// training loop stays differentiable end to end when T is a tracked scalar.
template <typename T>
std::pair<T, std::vector<VecX<T>>> upper_bound_loss_and_grad(
    const HyperbolicClassifier<T>& clf, const ClassDistributions<T>& dists) {
  auto work = detail::bound_forward(clf, dists);
  const Eigen::Index m = dists.size();
  const Eigen::Index d = dists.dim();
  const double inv_m = 1.0 / static_cast<double>(m);

  // sigma(j, .) = softmax over the j-th exponent row
  std::vector<VecX<T>> sigma(static_cast<std::size_t>(m));
  std::vector<VecX<T>> wbar(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    sigma[static_cast<std::size_t>(j)] =
        softmax<T>(VecX<T>(work.exponents.row(j).transpose()));
    VecX<T> acc = VecX<T>::Zero(d);
    for (Eigen::Index r = 0; r < m; ++r) {
      acc += sigma[static_cast<std::size_t>(j)][r] * clf.weights[static_cast<std::size_t>(r)];
    }
    wbar[static_cast<std::size_t>(j)] = acc;
  }

  std::vector<VecX<T>> grad(static_cast<std::size_t>(m));
  for (Eigen::Index r = 0; r < m; ++r) {
    const VecX<T>& wr = clf.weights[static_cast<std::size_t>(r)];
    VecX<T> g = -work.s[static_cast<std::size_t>(r)] - 2.0 * wr -
                work.cov[static_cast<std::size_t>(r)] *
                    (wbar[static_cast<std::size_t>(r)] - wr);
    for (Eigen::Index j = 0; j < m; ++j) {
      g += sigma[static_cast<std::size_t>(j)][r] *
           (work.s[static_cast<std::size_t>(j)] + 2.0 * wr +
            work.cw[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)]);
    }
    grad[static_cast<std::size_t>(r)] = inv_m * g;
  }
  return {work.loss, std::move(grad)};
}

/// 2 d(p_k,0) - d(p_i,0) - d(p_j,0) + max(0, gamma (d(p_i,0)+d(p_j,0)) - d(p_k,0)):
/// negative when the synthesized prototype sits closer to the origin than its
/// parents, with a hinge floor at gamma times their combined distance.
template <typename T>
T hierarchy_regularizer(const BallPoint<T>& p_i, const BallPoint<T>& p_j,
                        const BallPoint<T>& p_k, double gamma) {
  using ad::max;
  using std::max;
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("hierarchy_regularizer: gamma out of (0, 1)");
  }
  detail::check_pair(p_i, p_j, "hierarchy_regularizer");
  detail::check_pair(p_i, p_k, "hierarchy_regularizer");
  const T di = distance_to_origin(p_i);
  const T dj = distance_to_origin(p_j);
  const T dk = distance_to_origin(p_k);
  return 2.0 * dk - di - dj + max(T(0.0), gamma * (di + dj) - dk);
}

/// Validation cross entropy over all n+m logits (targets are seen labels)
/// plus beta times the mean hierarchy regularizer over synthesized triples.
/// An empty triple list contributes zero.
template <typename T>
T total_meta_loss(const HyperbolicClassifier<T>& clf_star,
                  const std::vector<std::pair<std::string, BallPoint<T>>>& validation,
                  const std::vector<std::array<BallPoint<T>, 3>>& unseen_triples,
                  double beta, double gamma) {
  if (beta < 0.0) {
    throw std::invalid_argument("total_meta_loss: beta must be >= 0");
  }
  if (validation.empty()) {
    throw std::invalid_argument("total_meta_loss: empty validation set");
  }
  T ce(0.0);
  for (const auto& [label, x] : validation) {
    const Eigen::Index y = clf_star.label_index(label);
    VecX<T> logits(clf_star.size());
    for (Eigen::Index r = 0; r < clf_star.size(); ++r) {
      logits[r] = -distance(x, clf_star.weight_point(static_cast<std::size_t>(r)));
    }
    ce += log_sum_exp<T>(logits) - logits[y];
  }
  ce = ce / static_cast<double>(validation.size());
  if (beta == 0.0 || unseen_triples.empty()) return ce;

  T reg(0.0);
  for (const auto& t : unseen_triples) {
    reg += hierarchy_regularizer(t[0], t[1], t[2], gamma);
  }
  return ce + beta * (reg / static_cast<double>(unseen_triples.size()));
}

}  // namespace hdfa
