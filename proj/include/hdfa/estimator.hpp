#pragma once

#include <algorithm>
#include <atomic>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "hdfa/distributions.hpp"
#include "hdfa/layers.hpp"

namespace hdfa {

/// Packs the lower triangle (diagonal included) row by row.
template <typename T>
VecX<T> pack_tril(const MatX<T>& l) {
  const Eigen::Index d = l.rows();
  VecX<T> out(d * (d + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) out[k++] = l(i, j);
  return out;
}

template <typename T>
MatX<T> unpack_tril(const VecX<T>& v, Eigen::Index d) {
  if (v.size() != d * (d + 1) / 2) {
    throw std::invalid_argument("unpack_tril: packed size mismatch");
  }
  MatX<T> out = MatX<T>::Zero(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) out(i, j) = v[k++];
  return out;
}

enum class AttentionMode {
  kNone,    // single global quantity, no class interaction
  kJoint,   // attention across all class rows
  kPerRow,  // each row on its own (value projection)
};

/// f1 -> f2 -> f3 network producing the time derivative of one distribution
/// parameter. The time t enters as one extra input scalar of f1.
template <typename T>
struct GradientFlowNet {
  DenseLayer<T> embed;             // f1, tanh
  SelfAttentionLayer<T> interact;  // f2
  DenseLayer<T> output;            // f3, identity
  AttentionMode mode = AttentionMode::kJoint;

  /// states: [n, state_dim], contexts: [n, ctx_dim] (ctx_dim may be 0).
  MatX<T> forward(const MatX<T>& states, const MatX<T>& contexts, double t) const {
    const Eigen::Index n = states.rows();
    MatX<T> e0(n, states.cols() + contexts.cols() + 1);
    e0.leftCols(states.cols()) = states;
    if (contexts.cols() > 0) e0.middleCols(states.cols(), contexts.cols()) = contexts;
    e0.col(e0.cols() - 1).setConstant(T(t));

    MatX<T> e1 = dense_forward(embed, e0);
    MatX<T> e2;
    switch (mode) {
      case AttentionMode::kNone:
        e2 = std::move(e1);
        break;
      case AttentionMode::kJoint:
        e2 = attention_forward(interact, e1);
        break;
      case AttentionMode::kPerRow:
        e2 = dense_forward(interact.value, e1);  // singleton attention
        break;
    }
    return dense_forward(output, e2);
  }
};

namespace detail {

// Copyable atomic counter; estimation treats the bank as read-only.
struct CallCounter {
  std::atomic<std::uint64_t> n{0};
  CallCounter() = default;
  CallCounter(const CallCounter& o) : n(o.n.load()) {}
  CallCounter& operator=(const CallCounter& o) {
    n.store(o.n.load());
    return *this;
  }
};

}  // namespace detail

/// The meta-learned object: six flow networks plus estimation hyperparameters.
template <typename T>
struct EstimatorBank {
  GradientFlowNet<T> curvature_flow;    // F1: dc/dt
  GradientFlowNet<T> mean_flow;         // F2: dmu_i/dt
  GradientFlowNet<T> scale_flow;        // F3: dL_i/dt (packed)
  GradientFlowNet<T> proto_delta_flow;  // F4: d delta_p/dt
  GradientFlowNet<T> mean_delta_flow;   // F5: d delta_mu/dt
  GradientFlowNet<T> scale_delta_flow;  // F6: d delta_L/dt (packed)

  double horizon = 1.0;  // ODE end time T
  int steps = 10;        // RK4 steps
  double c0 = -1.0;      // initial curvature
  Eigen::Index dim = 0;
  Eigen::Index hidden = 64;

  mutable detail::CallCounter flow_evals;  // call accounting for ablations

  Eigen::Index packed_dim() const { return dim * (dim + 1) / 2; }
};

/// Fixed parameter traversal order; serialization, flattening and tracked
/// materialization all rely on it.
template <typename T, class F>
void for_each_param(EstimatorBank<T>& bank, F&& f) {
  auto net = [&](GradientFlowNet<T>& g) {
    f(g.embed.weight);
    f(g.embed.bias);
    f(g.interact.query.weight);
    f(g.interact.query.bias);
    f(g.interact.key.weight);
    f(g.interact.key.bias);
    f(g.interact.value.weight);
    f(g.interact.value.bias);
    f(g.output.weight);
    f(g.output.bias);
  };
  net(bank.curvature_flow);
  net(bank.mean_flow);
  net(bank.scale_flow);
  net(bank.proto_delta_flow);
  net(bank.mean_delta_flow);
  net(bank.scale_delta_flow);
}

template <typename T, class F>
void for_each_param(const EstimatorBank<T>& bank, F&& f) {
  for_each_param(const_cast<EstimatorBank<T>&>(bank),
                 [&](auto& m) { f(const_cast<const std::decay_t<decltype(m)>&>(m)); });
}

template <typename T>
Eigen::Index param_count(const EstimatorBank<T>& bank) {
  Eigen::Index n = 0;
  for_each_param(bank, [&](const auto& m) { n += m.size(); });
  return n;
}

template <typename T>
Eigen::VectorXd flatten_params(const EstimatorBank<T>& bank) {
  Eigen::VectorXd out(param_count(bank));
  Eigen::Index k = 0;
  for_each_param(bank, [&](const auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) out[k++] = primal(m(i, j));
  });
  return out;
}

template <typename T>
void set_params(EstimatorBank<T>& bank, const Eigen::VectorXd& values) {
  if (values.size() != param_count(bank)) {
    throw std::invalid_argument("set_params: size mismatch");
  }
  Eigen::Index k = 0;
  for_each_param(bank, [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = T(values[k++]);
  });
}

/// set_params over an already-typed parameter vector (tracked scalars keep
/// their tape identity).
template <typename T>
void assign_params(EstimatorBank<T>& bank, const VecX<T>& values) {
  if (values.size() != param_count(bank)) {
    throw std::invalid_argument("assign_params: size mismatch");
  }
  Eigen::Index k = 0;
  for_each_param(bank, [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = values[k++];
  });
}

namespace detail {

template <typename T>
GradientFlowNet<T> make_flow_net(Eigen::Index state_dim, Eigen::Index ctx_dim,
                                 Eigen::Index hidden, AttentionMode mode,
                                 NormalSampler& rng) {
  GradientFlowNet<T> net;
  const Eigen::Index in = state_dim + ctx_dim + 1;  // + time scalar
  net.embed = random_dense<T>(in, hidden, Activation::kTanh, rng,
                              1.0 / std::sqrt(static_cast<double>(in)));
  const double h_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  net.interact.query = random_dense<T>(hidden, hidden, Activation::kIdentity, rng, h_scale);
  net.interact.key = random_dense<T>(hidden, hidden, Activation::kIdentity, rng, h_scale);
  net.interact.value = random_dense<T>(hidden, hidden, Activation::kIdentity, rng, h_scale);
  // f3 starts at zero so a fresh bank is the identity on initial statistics.
  net.output = zero_dense<T>(hidden, state_dim, Activation::kIdentity);
  net.mode = mode;
  return net;
}

}  // namespace detail

/// Fresh bank: random f1/f2, zero f3 (zero flows freeze the ODEs).
template <typename T>
EstimatorBank<T> make_bank(Eigen::Index dim, Eigen::Index hidden, double horizon,
                           int steps, double c0, std::uint64_t seed) {
  if (!(c0 < 0.0)) {
    throw std::invalid_argument("make_bank: c0 must be negative");
  }
  if (dim < 1 || hidden < 1 || steps < 1 || !(horizon > 0.0)) {
    throw std::invalid_argument("make_bank: invalid configuration");
  }
  NormalSampler rng(mix_seed(seed, 0xba7c));
  EstimatorBank<T> bank;
  bank.horizon = horizon;
  bank.steps = steps;
  bank.c0 = c0;
  bank.dim = dim;
  bank.hidden = hidden;
  const Eigen::Index packed = bank.packed_dim();
  bank.curvature_flow =
      detail::make_flow_net<T>(1, 1, hidden, AttentionMode::kNone, rng);
  bank.mean_flow = detail::make_flow_net<T>(dim, dim, hidden, AttentionMode::kJoint, rng);
  bank.scale_flow =
      detail::make_flow_net<T>(packed, dim, hidden, AttentionMode::kJoint, rng);
  bank.proto_delta_flow =
      detail::make_flow_net<T>(dim, 0, hidden, AttentionMode::kPerRow, rng);
  bank.mean_delta_flow =
      detail::make_flow_net<T>(dim, 0, hidden, AttentionMode::kPerRow, rng);
  bank.scale_delta_flow =
      detail::make_flow_net<T>(packed, 0, hidden, AttentionMode::kPerRow, rng);
  return bank;
}

/// Rebuilds the bank over another scalar type (untracked constants for Var).
template <typename To, typename From>
EstimatorBank<To> bank_cast(const EstimatorBank<From>& bank) {
  EstimatorBank<To> out =
      make_bank<To>(bank.dim, bank.hidden, bank.horizon, bank.steps, bank.c0, 0);
  set_params(out, flatten_params(bank));
  return out;
}

/// Curvature clamp window; the distance degenerates as c -> 0 and the ball radius
/// collapses as |c| grows.
inline constexpr double kCurvatureMin = 1e-3;
inline constexpr double kCurvatureMax = 10.0;

template <typename T>
using FeaturesByClass = std::vector<std::pair<std::string, std::vector<BallPoint<T>>>>;

namespace detail {

template <typename T>
VecX<T> stack_rows(const MatX<T>& m) {
  VecX<T> out(m.rows() * m.cols());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
  return out;
}

template <typename T>
MatX<T> unstack_rows(const VecX<T>& v, Eigen::Index rows, Eigen::Index cols) {
  MatX<T> out(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = v[k++];
  return out;
}

// Solves the per-class parameter ODE with the class contexts held fixed.
template <typename T>
MatX<T> solve_parameter_ode(const GradientFlowNet<T>& net, const MatX<T>& state0,
                            const MatX<T>& contexts, double horizon, int steps) {
  const Eigen::Index rows = state0.rows();
  const Eigen::Index cols = state0.cols();
  std::function<VecX<T>(const VecX<T>&, double)> flow = [&](const VecX<T>& y, double t) {
    return stack_rows<T>(net.forward(unstack_rows<T>(y, rows, cols), contexts, t));
  };
  return unstack_rows<T>(rk4_solve<T>(stack_rows<T>(state0), flow, horizon, steps),
                         rows, cols);
}

}  // namespace detail

/// Seen-class estimation: initial statistics from fit_initial and c0, then
/// three neural ODEs refine the shared curvature and the per-class mean and
/// scale factor. The returned curvature is clamped into
/// [-kCurvatureMax, -kCurvatureMin].
template <typename T>
ClassDistributions<T> estimate_seen(const EstimatorBank<T>& bank,
                                    const FeaturesByClass<T>& features_by_class) {
  using ad::max;
  using ad::min;
  using std::max;
  using std::min;
  if (features_by_class.empty()) {
    throw std::invalid_argument("estimate_seen: no classes");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(features_by_class.size());
  const Eigen::Index d = bank.dim;
  const Eigen::Index packed = bank.packed_dim();

  std::vector<InitialFit<T>> fits;
  fits.reserve(static_cast<std::size_t>(n));
  MatX<T> feature_means(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& [label, feats] = features_by_class[static_cast<std::size_t>(i)];
    if (feats.empty()) {
      throw std::invalid_argument("estimate_seen: empty class " + label);
    }
    for (const auto& f : feats) {
      if (f.dim() != d) {
        throw std::invalid_argument("estimate_seen: dimension mismatch in " + label);
      }
    }
    fits.push_back(fit_initial<T>(feats));
    VecX<T> mean = VecX<T>::Zero(d);
    for (const auto& f : feats) mean += f.coords;
    feature_means.row(i) = (mean / static_cast<double>(feats.size())).transpose();
  }
  bank.flow_evals.n.fetch_add(1, std::memory_order_relaxed);

  // shared curvature: scalar state with a scalar activity summary as context
  MatX<T> c_state(1, 1), c_ctx(1, 1);
  c_state(0, 0) = T(bank.c0);
  T activity(0.0);
  for (Eigen::Index i = 0; i < n; ++i) activity += feature_means.row(i).squaredNorm();
  c_ctx(0, 0) = activity / static_cast<double>(n);
  const T c_raw = detail::solve_parameter_ode<T>(bank.curvature_flow, c_state, c_ctx,
                                                 bank.horizon, bank.steps)(0, 0);
  const T c_clamped = -min(max(-c_raw, T(kCurvatureMin)), T(kCurvatureMax));
  const Curvature<T> curv(c_clamped);

  // per-class mean and packed scale factor, attention across all classes
  MatX<T> mu0(n, d), l0(n, packed);
  for (Eigen::Index i = 0; i < n; ++i) {
    mu0.row(i) = fits[static_cast<std::size_t>(i)].mean.transpose();
    l0.row(i) = pack_tril<T>(fits[static_cast<std::size_t>(i)].scale_tril).transpose();
  }
  const MatX<T> mu_final = detail::solve_parameter_ode<T>(bank.mean_flow, mu0,
                                                          feature_means, bank.horizon,
                                                          bank.steps);
  const MatX<T> l_final = detail::solve_parameter_ode<T>(bank.scale_flow, l0,
                                                         feature_means, bank.horizon,
                                                         bank.steps);

  ClassDistributions<T> out{curv, {}};
  out.entries.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ClassEntry<T> e;
    e.label = features_by_class[static_cast<std::size_t>(i)].first;
    e.provenance = Provenance::kSeen;
    // prototype = expm_0 of the tangent data mean, taken at the estimated
    // curvature so logm_0(p) recovers the mean exactly in the bound
    e.prototype = expm0<T>(fits[static_cast<std::size_t>(i)].mean, curv).coords;
    e.mean = mu_final.row(i).transpose();
    e.scale_tril =
        clamp_scale_tril<T>(unpack_tril<T>(l_final.row(i).transpose(), d));
    out.entries.push_back(std::move(e));
  }
  return out;
}

/// Unseen-class synthesis: for every unordered pair (i, j), i < j by label
/// order, the parameter differences seed perturbation ODEs and the perturbed
/// class-i parameters define a fresh class. Exactly n(n-1)/2 classes.
template <typename T>
ClassDistributions<T> synthesize_unseen(const EstimatorBank<T>& bank,
                                        const ClassDistributions<T>& seen) {
  const Eigen::Index n = seen.size();
  if (n < 2) {
    throw std::invalid_argument("synthesize_unseen: need at least two seen classes");
  }
  const Eigen::Index d = bank.dim;
  const Eigen::Index packed = bank.packed_dim();
  const Eigen::Index m = n * (n - 1) / 2;
  bank.flow_evals.n.fetch_add(1, std::memory_order_relaxed);

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return seen.entries[a].label < seen.entries[b].label;
  });

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      pairs.emplace_back(order[static_cast<std::size_t>(a)],
                         order[static_cast<std::size_t>(b)]);
    }
  }

  MatX<T> dp0(m, d), dmu0(m, d), dl0(m, packed);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& ei = seen.entries[pairs[static_cast<std::size_t>(k)].first];
    const auto& ej = seen.entries[pairs[static_cast<std::size_t>(k)].second];
    dp0.row(k) = (ej.prototype - ei.prototype).transpose();
    dmu0.row(k) = (ej.mean - ei.mean).transpose();
    dl0.row(k) = (pack_tril<T>(ej.scale_tril) - pack_tril<T>(ei.scale_tril)).transpose();
  }

  const MatX<T> empty_ctx(m, 0);
  const MatX<T> dp = detail::solve_parameter_ode<T>(bank.proto_delta_flow, dp0,
                                                    empty_ctx, bank.horizon, bank.steps);
  const MatX<T> dmu = detail::solve_parameter_ode<T>(bank.mean_delta_flow, dmu0,
                                                     empty_ctx, bank.horizon, bank.steps);
  const MatX<T> dl = detail::solve_parameter_ode<T>(bank.scale_delta_flow, dl0,
                                                    empty_ctx, bank.horizon, bank.steps);

  ClassDistributions<T> out{seen.curv, {}};
  out.entries.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& ei = seen.entries[pairs[static_cast<std::size_t>(k)].first];
    const auto& ej = seen.entries[pairs[static_cast<std::size_t>(k)].second];
    ClassEntry<T> e;
    e.label = "u(" + ei.label + "," + ej.label + ")";
    e.provenance = Provenance::kUnseen;
    e.prototype =
        project_to_ball<T>(VecX<T>(ei.prototype + dp.row(k).transpose()), seen.curv)
            .coords;
    e.mean = ei.mean + dmu.row(k).transpose();
    e.scale_tril = clamp_scale_tril<T>(
        unpack_tril<T>(VecX<T>(pack_tril<T>(ei.scale_tril) + dl.row(k).transpose()), d));
    out.entries.push_back(std::move(e));
  }
  return out;
}

/// Parent indices (into `seen`) of each synthesized class, in synthesis order.
template <typename T>
std::vector<std::pair<std::size_t, std::size_t>> unseen_parent_pairs(
    const ClassDistributions<T>& seen) {
  const Eigen::Index n = seen.size();
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return seen.entries[a].label < seen.entries[b].label;
  });
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      pairs.emplace_back(order[static_cast<std::size_t>(a)],
                         order[static_cast<std::size_t>(b)]);
    }
  }
  return pairs;
}

/// Checkpoint io (JSON document, format_version 1).
void save_bank(const EstimatorBank<double>& bank, const std::string& path);
EstimatorBank<double> load_bank(const std::string& path);

}  // namespace hdfa
