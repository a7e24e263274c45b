#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hdfa/estimator.hpp"
#include "hdfa/losses.hpp"

namespace hdfa {

struct InnerConfig {
  int steps = 50;              // K
  double learning_rate = 0.1;  // eta
  double tolerance = 1e-6;     // stop once the loss decrease falls below this;
                               // <= 0 disables early stopping
};

struct MetaConfig {
  int outer_iterations = 100;
  double outer_learning_rate = 1e-3;
  double beta = 10.0;   // strength of the hierarchy regularizer
  double gamma = 0.1;   // uncertainty level, in [0.01, 0.25]
  int split_train = 1;  // D_t : D_v ratio
  int split_val = 1;
  std::uint64_t seed = 0;
  InnerConfig inner;

  void validate() const {
    if (outer_iterations < 0) throw std::invalid_argument("meta: iterations < 0");
    if (!(outer_learning_rate > 0)) throw std::invalid_argument("meta: bad outer lr");
    if (beta < 0) throw std::invalid_argument("meta: beta must be >= 0");
    if (!(gamma >= 0.01 && gamma <= 0.25)) {
      throw std::invalid_argument("meta: gamma outside [0.01, 0.25]");
    }
    if (split_train < 1 || split_val < 1) throw std::invalid_argument("meta: bad split");
    if (inner.steps < 1) throw std::invalid_argument("meta: inner steps must be >= 1");
    if (!(inner.learning_rate >= 0)) throw std::invalid_argument("meta: bad inner lr");
  }
};

/// One Riemannian gradient step on every classifier weight: the Euclidean
/// gradient is rescaled by the inverse conformal metric ((1 + c|w|^2)/2)^2
/// and applied through the exponential map at w.
template <typename T>
HyperbolicClassifier<T> riemannian_step(const HyperbolicClassifier<T>& clf,
                                        const std::vector<VecX<T>>& euclidean_grads,
                                        double eta) {
  if (euclidean_grads.size() != clf.weights.size()) {
    throw std::invalid_argument("riemannian_step: one gradient per weight required");
  }
  HyperbolicClassifier<T> out = clf;
  for (std::size_t j = 0; j < clf.weights.size(); ++j) {
    if (!all_finite(euclidean_grads[j])) {
      throw NumericalError("riemannian_step: non-finite gradient");
    }
    const BallPoint<T> w = clf.weight_point(j);
    const T metric = T(1.0) + clf.curv.value * w.coords.squaredNorm();
    const T scale = (metric * 0.5) * (metric * 0.5);
    out.weights[j] = expm(w, VecX<T>((-eta) * scale * euclidean_grads[j])).coords;
  }
  return out;
}

/// Inner loop: weights start at the class prototypes and descend the
/// upper-bound loss for up to cfg.steps Riemannian steps.
template <typename T>
HyperbolicClassifier<T> train_inner(const ClassDistributions<T>& dists,
                                    const InnerConfig& cfg) {
  if (dists.entries.empty()) {
    throw std::invalid_argument("train_inner: empty distribution set");
  }
  if (cfg.steps < 1) {
    throw std::invalid_argument("train_inner: steps must be >= 1");
  }
  HyperbolicClassifier<T> clf = classifier_from_prototypes(dists);
  double prev_loss = 0.0;
  for (int k = 0; k < cfg.steps; ++k) {
    auto [loss, grads] = upper_bound_loss_and_grad(clf, dists);
    if (!std::isfinite(primal(loss))) {
      throw NumericalError("train_inner: non-finite loss at step " + std::to_string(k));
    }
    if (k > 0 && cfg.tolerance > 0.0 && prev_loss - primal(loss) < cfg.tolerance) {
      break;
    }
    prev_loss = primal(loss);
    clf = riemannian_step(clf, grads, cfg.learning_rate);
  }
  return clf;
}

namespace detail {

template <typename T>
FeaturesByClass<T> lift_features(const FeaturesByClass<double>& features) {
  FeaturesByClass<T> out;
  out.reserve(features.size());
  for (const auto& [label, feats] : features) {
    std::vector<BallPoint<T>> lifted;
    lifted.reserve(feats.size());
    for (const auto& x : feats) {
      lifted.push_back(
          BallPoint<T>{to_scalar<T>(x.coords), Curvature<T>(T(x.curv.value))});
    }
    out.emplace_back(label, std::move(lifted));
  }
  return out;
}

struct Split {
  FeaturesByClass<double> train;
  std::vector<std::pair<std::string, BallPoint<double>>> validation;
};

/// Label-stratified split at the configured ratio; every class keeps at least
/// one sample on each side.
inline Split split_dataset(const FeaturesByClass<double>& dataset, int ratio_train,
                           int ratio_val, NormalSampler& rng) {
  Split out;
  for (const auto& [label, feats] : dataset) {
    const std::size_t n = feats.size();
    if (n < 2) {
      throw std::invalid_argument("meta_train: class " + label +
                                  " needs at least 2 samples to split");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    const double frac =
        static_cast<double>(ratio_train) / static_cast<double>(ratio_train + ratio_val);
    std::size_t n_train = static_cast<std::size_t>(std::lround(frac * n));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    std::vector<BallPoint<double>> train;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train) {
        train.push_back(feats[idx[i]]);
      } else {
        out.validation.emplace_back(label, feats[idx[i]]);
      }
    }
    out.train.emplace_back(label, std::move(train));
  }
  return out;
}

/// Triples (p_i, p_j, p_k) for the hierarchy regularizer. Only the synthesized
/// prototype p_k stays connected to the computation graph: with the seen
/// prototypes and the shared curvature also tracked, the regularizer is
/// unbounded below through the curvature (inflating |c| grows -d(p_i,0) -
/// d(p_j,0) without limit) and meta-training mines that channel instead of
/// improving the estimate. The regularizer's role is to place the unseen
/// prototypes, which is exactly the surviving gradient path.
template <typename T>
std::vector<std::array<BallPoint<T>, 3>> hierarchy_triples(
    const ClassDistributions<T>& seen, const ClassDistributions<T>& unseen) {
  const auto pairs = unseen_parent_pairs(seen);
  const Curvature<T> frozen_curv{T(primal(seen.curv.value))};
  std::vector<std::array<BallPoint<T>, 3>> triples;
  triples.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    triples.push_back(
        {BallPoint<T>{to_scalar<T>(to_double(seen.entries[pairs[k].first].prototype)),
                      frozen_curv},
         BallPoint<T>{to_scalar<T>(to_double(seen.entries[pairs[k].second].prototype)),
                      frozen_curv},
         BallPoint<T>{unseen.entries[k].prototype, frozen_curv}});
  }
  return triples;
}

}  // namespace detail

struct MetaTrainResult {
  EstimatorBank<double> bank;
  std::vector<double> loss_trace;  // meta-loss per outer iteration, pre-update
};

/// Bi-level meta-training. Each outer iteration re-splits the dataset with the
/// iteration-seeded sampler, estimates seen + unseen distributions on D_t,
/// trains the classifier on the bound (inner loop fully unrolled on the tape),
/// and takes one gradient step on all six flow networks from the validation
/// meta-loss. All randomness flows from cfg.seed.
inline MetaTrainResult meta_train(
    const EstimatorBank<double>& bank0, const FeaturesByClass<double>& dataset,
    const MetaConfig& cfg,
    const std::function<void(int, double)>& per_iteration = {}) {
  using ad::Var;
  cfg.validate();
  if (dataset.size() < 2) {
    throw std::invalid_argument("meta_train: need at least 2 classes");
  }

  MetaTrainResult result{bank0, {}};
  Eigen::VectorXd theta = flatten_params(bank0);
  ad::Tape tape;

  for (int it = 0; it < cfg.outer_iterations; ++it) {
    NormalSampler split_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(it)));
    const auto split =
        detail::split_dataset(dataset, cfg.split_train, cfg.split_val, split_rng);

    tape.clear();
    VecX<Var> leaves(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) leaves[i] = tape.var(theta[i]);
    auto bank = bank_cast<Var>(result.bank);
    assign_params(bank, leaves);

    const auto train_feats = detail::lift_features<Var>(split.train);
    const auto seen = estimate_seen(bank, train_feats);
    const auto unseen = synthesize_unseen(bank, seen);
    const auto combined = concatenate(seen, unseen);
    const auto clf_star = train_inner(combined, cfg.inner);

    // validation features live at the estimated curvature: their tangent rows
    // are re-projected through expm_0 at c^T, so the outer gradient also sees
    // how the curvature moves the data
    std::vector<std::pair<std::string, BallPoint<Var>>> validation;
    validation.reserve(split.validation.size());
    for (const auto& [label, x] : split.validation) {
      const BallPoint<Var> lifted{to_scalar<Var>(x.coords),
                                  Curvature<Var>(Var(x.curv.value))};
      validation.emplace_back(label, reembed(lifted, seen.curv));
    }
    const auto triples = detail::hierarchy_triples(seen, unseen);
    const Var loss =
        total_meta_loss(clf_star, validation, triples, cfg.beta, cfg.gamma);
    if (!std::isfinite(loss.value())) {
      throw NumericalError("meta_train: non-finite meta-loss at iteration " +
                           std::to_string(it));
    }

    tape.backward(loss);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      theta[i] -= cfg.outer_learning_rate * tape.grad(leaves[i]);
    }
    set_params(result.bank, theta);

    result.loss_trace.push_back(loss.value());
    if (per_iteration) per_iteration(it, loss.value());
  }
  return result;
}

struct AugmentedFeature {
  std::string label;
  BallPoint<double> point;
  Provenance provenance;
};

/// Estimates seen (and, when possible, unseen) distributions and draws
/// per_class_draws samples from each, labeled and provenance-flagged.
/// Deterministic given the seed.
inline std::vector<AugmentedFeature> augment(const EstimatorBank<double>& bank,
                                             const FeaturesByClass<double>& features_by_class,
                                             int per_class_draws, std::uint64_t seed) {
  if (per_class_draws < 1) {
    throw std::invalid_argument("augment: per_class_draws must be >= 1");
  }
  auto dists = estimate_seen(bank, features_by_class);
  if (dists.size() >= 2) {
    dists = concatenate(dists, synthesize_unseen(bank, dists));
  }
  NormalSampler rng(mix_seed(seed, 0xa06));
  std::vector<AugmentedFeature> out;
  out.reserve(dists.entries.size() * static_cast<std::size_t>(per_class_draws));
  for (std::size_t j = 0; j < dists.entries.size(); ++j) {
    const auto wn = dists.wrapped(j);
    for (int s = 0; s < per_class_draws; ++s) {
      out.push_back(AugmentedFeature{dists.entries[j].label,
                                     sample(wn, rng.vector(bank.dim)),
                                     dists.entries[j].provenance});
    }
  }
  return out;
}

}  // namespace hdfa
