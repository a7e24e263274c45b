// Acceptance suite: one checkable criterion per function, one PASS/FAIL line
// per criterion on stdout. Exit code = number of failed criteria.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hdfa/harness.hpp"
#include "hdfa/selfcheck.hpp"
#include "testutil.hpp"

using namespace hdfa;

namespace {

struct Criterion {
  int id;
  std::string description;
  std::function<bool(std::string&)> run;
};

std::string g_cli_path;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------- criterion 1

bool criterion_geometry(std::string& detail) {
  const double t0 = now_seconds();
  const auto res = selfcheck::geometry_suite(2026, 1000000);
  const double dt = now_seconds() - t0;
  std::ostringstream s;
  s << res.checks << " randomized checks, " << res.failures << " failures, " << dt
    << " s";
  detail = s.str();
  return res.pass && dt < 60.0;
}

// ---------------------------------------------------------------- criterion 2

bool criterion_rk4(std::string& detail) {
  const double t0 = now_seconds();
  const auto res = selfcheck::rk4_suite();
  const double dt = now_seconds() - t0;
  detail = res.detail + ", " + std::to_string(dt) + " s";
  return res.pass && dt < 1.0;
}

// ---------------------------------------------------------------- criterion 3

using ParamFn = std::function<testutil::GradCheckResult(NormalSampler&)>;

template <class F>
testutil::GradCheckResult run_grad_instance(F&& f, const Eigen::VectorXd& params) {
  return testutil::check_gradient(std::forward<F>(f), params, 1e-4, 1e-8);
}

bool criterion_gradients(std::string& detail) {
  const double t0 = now_seconds();
  std::vector<std::pair<std::string, ParamFn>> ops;

  auto ball_params = [](NormalSampler& rng, int d, double scale) {
    return Eigen::VectorXd(scale * rng.vector(d));
  };

  ops.emplace_back("mobius_add", [&](NormalSampler& rng) {
    const int d = 3;
    Eigen::VectorXd probe = rng.vector(d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-0.7));
      BallPoint<T> x{p.segment(0, d), c}, y{p.segment(d, d), c};
      return T(mobius_add(x, y).coords.dot(to_scalar<T>(probe)));
    };
    Eigen::VectorXd params(2 * d);
    params << ball_params(rng, d, 0.3), ball_params(rng, d, 0.3);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("distance", [&](NormalSampler& rng) {
    const int d = 3;
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-1.0));
      return distance(BallPoint<T>{p.segment(0, d), c}, BallPoint<T>{p.segment(d, d), c});
    };
    Eigen::VectorXd params(2 * d);
    params << ball_params(rng, d, 0.4), ball_params(rng, d, 0.4);
    params.segment(d, d).array() += 0.25;  // keep the points apart
    return run_grad_instance(f, params);
  });

  ops.emplace_back("expm", [&](NormalSampler& rng) {
    const int d = 3;
    Eigen::VectorXd probe = rng.vector(d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-0.5));
      BallPoint<T> base{p.segment(0, d), c};
      return T(expm(base, VecX<T>(p.segment(d, d))).coords.dot(to_scalar<T>(probe)));
    };
    Eigen::VectorXd params(2 * d);
    params << ball_params(rng, d, 0.3), ball_params(rng, d, 0.4);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("logm", [&](NormalSampler& rng) {
    const int d = 3;
    Eigen::VectorXd probe = rng.vector(d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-1.0));
      BallPoint<T> base{p.segment(0, d), c}, y{p.segment(d, d), c};
      return T(logm(base, y).coords.dot(to_scalar<T>(probe)));
    };
    Eigen::VectorXd params(2 * d);
    params << ball_params(rng, d, 0.3), ball_params(rng, d, 0.35);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("conformal_factor", [&](NormalSampler& rng) {
    const int d = 4;
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      return conformal_factor(BallPoint<T>{p, Curvature<T>(T(-0.8))});
    };
    return run_grad_instance(f, Eigen::VectorXd(ball_params(rng, d, 0.4)));
  });

  ops.emplace_back("parallel_transport_from_origin", [&](NormalSampler& rng) {
    const int d = 3;
    Eigen::VectorXd probe = rng.vector(d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-1.0));
      BallPoint<T> base{p.segment(0, d), c};
      return T(parallel_transport_from_origin(base, VecX<T>(p.segment(d, d)))
                   .coords.dot(to_scalar<T>(probe)));
    };
    Eigen::VectorXd params(2 * d);
    params << ball_params(rng, d, 0.4), rng.vector(d);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("project_to_ball(interior)", [&](NormalSampler& rng) {
    const int d = 3;
    Eigen::VectorXd probe = rng.vector(d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      return T(project_to_ball(VecX<T>(p), Curvature<T>(T(-1.0)))
                   .coords.dot(to_scalar<T>(probe)));
    };
    return run_grad_instance(f, Eigen::VectorXd(ball_params(rng, d, 0.4)));
  });

  ops.emplace_back("wrapped_normal sample", [&](NormalSampler& rng) {
    const int d = 3;
    Eigen::VectorXd probe = rng.vector(d);
    Eigen::VectorXd eps = rng.vector(d);
    auto f = [&, probe, eps](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-1.0));
      Eigen::Index k = 0;
      BallPoint<T> proto{p.segment(k, d), c};
      k += d;
      VecX<T> mu = p.segment(k, d);
      k += d;
      MatX<T> l = MatX<T>::Zero(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) l(i, j) = p[k++];
      WrappedNormal<T> wn{c, proto, mu, l};
      return T(sample(wn, eps).coords.dot(to_scalar<T>(probe)));
    };
    Eigen::VectorXd params(d + d + d * (d + 1) / 2);
    params.segment(0, d) = ball_params(rng, d, 0.3);
    params.segment(d, d) = 0.2 * rng.vector(d);
    Eigen::Index k = 2 * d;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) params[k++] = (i == j ? 0.4 : 0.05) + 0.02 * rng();
    return run_grad_instance(f, params);
  });

  ops.emplace_back("log_density", [&](NormalSampler& rng) {
    const int d = 2;
    auto x_fixed = testutil::random_ball_point(rng, d, -1.0, 0.5);
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-1.0));
      Eigen::Index k = 0;
      BallPoint<T> proto{p.segment(k, d), c};
      k += d;
      VecX<T> mu = p.segment(k, d);
      k += d;
      MatX<T> l = MatX<T>::Zero(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) l(i, j) = p[k++];
      WrappedNormal<T> wn{c, proto, mu, l};
      return log_density(wn, BallPoint<T>{to_scalar<T>(x_fixed.coords), c});
    };
    Eigen::VectorXd params(2 * d + d * (d + 1) / 2);
    params.segment(0, d) = ball_params(rng, d, 0.3);
    params.segment(d, d) = 0.2 * rng.vector(d);
    Eigen::Index k = 2 * d;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) params[k++] = (i == j ? 0.5 : 0.1) + 0.02 * rng();
    return run_grad_instance(f, params);
  });

  ops.emplace_back("dense_forward", [&](NormalSampler& rng) {
    const int in = 3, out = 2;
    Eigen::VectorXd x = rng.vector(in);
    Eigen::VectorXd probe = rng.vector(out);
    auto f = [&, x, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      DenseLayer<T> layer;
      layer.weight = MatX<T>(out, in);
      Eigen::Index k = 0;
      for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) layer.weight(i, j) = p[k++];
      layer.bias = p.segment(k, out);
      layer.activation = Activation::kTanh;
      return T(dense_forward(layer, to_scalar<T>(x)).dot(to_scalar<T>(probe)));
    };
    return run_grad_instance(f, Eigen::VectorXd(rng.vector(out * in + out)));
  });

  ops.emplace_back("attention_forward", [&](NormalSampler& rng) {
    const int d = 2, n = 3;
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) x.row(i) = rng.vector(d).transpose();
    Eigen::VectorXd probe = rng.vector(n * d);
    auto f = [&, x, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      SelfAttentionLayer<T> att;
      Eigen::Index k = 0;
      for (DenseLayer<T>* l : {&att.query, &att.key, &att.value}) {
        l->weight = MatX<T>(d, d);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) l->weight(i, j) = p[k++];
        l->bias = VecX<T>(VecX<T>::Zero(d));
        l->activation = Activation::kIdentity;
      }
      MatX<T> out = attention_forward(att, to_scalar_matrix<T>(x));
      T acc(0.0);
      Eigen::Index m = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) acc += out(i, j) * probe[m++];
      return acc;
    };
    return run_grad_instance(f, Eigen::VectorXd(0.5 * rng.vector(3 * d * d)));
  });

  ops.emplace_back("rk4_solve", [&](NormalSampler& rng) {
    const int d = 2;
    Eigen::VectorXd probe = rng.vector(d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      MatX<T> a(d, d);
      Eigen::Index k = 0;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = p[k++];
      VecX<T> y0 = p.segment(k, d);
      std::function<VecX<T>(const VecX<T>&, double)> flow =
          [&](const VecX<T>& y, double t) { return VecX<T>(a * y * (1.0 + 0.5 * t)); };
      return T(rk4_solve<T>(y0, flow, 1.0, 4).dot(to_scalar<T>(probe)));
    };
    return run_grad_instance(f, Eigen::VectorXd(0.5 * rng.vector(d * d + d)));
  });

  ops.emplace_back("class_probability", [&](NormalSampler& rng) {
    const int d = 2, m = 3;
    auto x = testutil::random_ball_point(rng, d, -1.0, 0.5);
    Eigen::VectorXd probe = rng.vector(m);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      HyperbolicClassifier<T> clf;
      clf.curv = Curvature<T>(T(-1.0));
      for (int j = 0; j < m; ++j) {
        clf.labels.push_back("c" + std::to_string(j));
        clf.weights.push_back(p.segment(j * d, d));
      }
      return T(class_probability(clf, BallPoint<T>{to_scalar<T>(x.coords), clf.curv})
                   .dot(to_scalar<T>(probe)));
    };
    Eigen::VectorXd params(m * d);
    for (int j = 0; j < m; ++j) params.segment(j * d, d) = ball_params(rng, d, 0.4);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("finite_sample_loss", [&](NormalSampler& rng) {
    const int d = 2, m = 2;
    std::vector<BallPoint<double>> xs{testutil::random_ball_point(rng, d, -1.0, 0.5),
                                      testutil::random_ball_point(rng, d, -1.0, 0.5)};
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      HyperbolicClassifier<T> clf;
      clf.curv = Curvature<T>(T(-1.0));
      std::vector<std::pair<std::string, std::vector<BallPoint<T>>>> samples;
      for (int j = 0; j < m; ++j) {
        clf.labels.push_back("c" + std::to_string(j));
        clf.weights.push_back(p.segment(j * d, d));
        samples.emplace_back(
            "c" + std::to_string(j),
            std::vector<BallPoint<T>>{BallPoint<T>{to_scalar<T>(xs[j].coords), clf.curv}});
      }
      return finite_sample_loss(clf, samples);
    };
    Eigen::VectorXd params(m * d);
    for (int j = 0; j < m; ++j) params.segment(j * d, d) = ball_params(rng, d, 0.4);
    return run_grad_instance(f, params);
  });

  auto make_dists_params = [](NormalSampler& rng, int m, int d, Eigen::VectorXd& out) {
    const int per = d + d + d * (d + 1) / 2;
    out.resize(m * per + m * d);
    Eigen::Index k = 0;
    for (int j = 0; j < m; ++j) {
      out.segment(k, d) = 0.25 * rng.vector(d);  // tangent prototype
      k += d;
      out.segment(k, d) = 0.15 * rng.vector(d);  // mu
      k += d;
      for (int i = 0; i < d; ++i)
        for (int jj = 0; jj <= i; ++jj) out[k++] = (i == jj ? 0.3 : 0.05) + 0.02 * rng();
    }
    for (int j = 0; j < m; ++j) {
      out.segment(k, d) = 0.3 * rng.vector(d);  // weights
      k += d;
    }
  };

  auto dists_from_params = [](const auto& p, int m, int d) {
    using T = std::decay_t<decltype(p[0])>;
    Curvature<T> c(T(-1.0));
    ClassDistributions<T> dists{c, {}};
    HyperbolicClassifier<T> clf;
    clf.curv = c;
    Eigen::Index k = 0;
    for (int j = 0; j < m; ++j) {
      ClassEntry<T> e;
      e.label = "c" + std::to_string(j);
      e.prototype = expm0(VecX<T>(p.segment(k, d)), c).coords;
      k += d;
      e.mean = p.segment(k, d);
      k += d;
      e.scale_tril = MatX<T>::Zero(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index jj = 0; jj <= i; ++jj) e.scale_tril(i, jj) = p[k++];
      dists.entries.push_back(e);
      clf.labels.push_back(e.label);
    }
    for (int j = 0; j < m; ++j) {
      clf.weights.push_back(p.segment(k, d));
      k += d;
    }
    return std::pair{clf, dists};
  };

  ops.emplace_back("mc_infinite_loss", [&, dists_from_params, make_dists_params](
                       NormalSampler& rng) {
    const int d = 2, m = 2;
    auto f = [&](const auto& p) {
      auto [clf, dists] = dists_from_params(p, m, d);
      return mc_infinite_loss(clf, dists, 3, 71);
    };
    Eigen::VectorXd params;
    make_dists_params(rng, m, d, params);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("upper_bound_loss", [&, dists_from_params, make_dists_params](
                       NormalSampler& rng) {
    const int d = 3, m = 3;
    auto f = [&](const auto& p) {
      auto [clf, dists] = dists_from_params(p, m, d);
      return upper_bound_loss(clf, dists);
    };
    Eigen::VectorXd params;
    make_dists_params(rng, m, d, params);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("hierarchy_regularizer", [&](NormalSampler& rng) {
    const int d = 2;
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      Curvature<T> c(T(-1.0));
      return hierarchy_regularizer(BallPoint<T>{p.segment(0, d), c},
                                   BallPoint<T>{p.segment(d, d), c},
                                   BallPoint<T>{p.segment(2 * d, d), c}, 0.1);
    };
    Eigen::VectorXd params(3 * d);
    params << ball_params(rng, d, 0.5), ball_params(rng, d, 0.5),
        ball_params(rng, d, 0.4).array() + 0.2;  // keep the hinge inactive
    return run_grad_instance(f, params);
  });

  ops.emplace_back("total_meta_loss", [&, dists_from_params, make_dists_params](
                       NormalSampler& rng) {
    const int d = 2, m = 2;
    std::vector<std::pair<std::string, BallPoint<double>>> validation;
    for (int i = 0; i < 4; ++i) {
      validation.emplace_back("c" + std::to_string(i % m),
                              testutil::random_ball_point(rng, d, -1.0, 0.5));
    }
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      auto [clf, dists] = dists_from_params(p, m, d);
      std::vector<std::pair<std::string, BallPoint<T>>> val;
      for (const auto& [label, x] : validation) {
        val.emplace_back(label, BallPoint<T>{to_scalar<T>(x.coords), clf.curv});
      }
      std::vector<std::array<BallPoint<T>, 3>> triples{
          {dists.prototype_point(0), dists.prototype_point(1),
           BallPoint<T>{to_scalar<T>(Eigen::VectorXd::Zero(d).eval()), clf.curv}}};
      return total_meta_loss(clf, val, triples, 10.0, 0.1);
    };
    Eigen::VectorXd params;
    make_dists_params(rng, m, d, params);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("riemannian_step + train_inner", [&, dists_from_params,
                                                     make_dists_params](NormalSampler& rng) {
    const int d = 2, m = 2;
    Eigen::VectorXd probe = rng.vector(m * d);
    auto f = [&, probe](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      auto [clf, dists] = dists_from_params(p, m, d);
      auto trained = train_inner(dists, InnerConfig{2, 0.1, 0.0});
      T acc(0.0);
      Eigen::Index k = 0;
      for (int j = 0; j < m; ++j)
        for (int i = 0; i < d; ++i) acc += trained.weights[j][i] * probe[k++];
      return acc;
    };
    Eigen::VectorXd params;
    make_dists_params(rng, m, d, params);
    return run_grad_instance(f, params);
  });

  ops.emplace_back("estimate_seen + synthesize_unseen", [&](NormalSampler& rng) {
    const int d = 2;
    auto ref = make_bank<double>(d, 3, 1.0, 2, -1.0, rng.integer(1 << 20));
    Eigen::VectorXd theta = flatten_params(ref);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.05 * rng();
    FeaturesByClass<double> classes;
    for (int j = 0; j < 2; ++j) {
      std::vector<BallPoint<double>> feats;
      for (int s = 0; s < 2; ++s) feats.push_back(testutil::random_ball_point(rng, d, -1.0, 0.5));
      classes.emplace_back("c" + std::to_string(j), feats);
    }
    Eigen::VectorXd probe_mu = rng.vector(d), probe_p = rng.vector(d);
    auto f = [&](const auto& p) {
      using T = std::decay_t<decltype(p[0])>;
      auto bank = bank_cast<T>(ref);
      assign_params(bank, p);
      auto lifted = hdfa::detail::lift_features<T>(classes);
      auto seen = estimate_seen(bank, lifted);
      auto unseen = synthesize_unseen(bank, seen);
      T acc = seen.curv.value;
      for (const auto& e : seen.entries) acc += e.mean.dot(to_scalar<T>(probe_mu));
      for (const auto& e : unseen.entries) acc += e.prototype.dot(to_scalar<T>(probe_p));
      return acc;
    };
    return run_grad_instance(f, theta);
  });

  long failures = 0;
  std::string first_failure;
  for (const auto& [name, instance] : ops) {
    for (int rep = 0; rep < 20; ++rep) {
      NormalSampler rng(mix_seed(9000 + rep, std::hash<std::string>{}(name)));
      const auto res = instance(rng);
      if (!res.ok) {
        ++failures;
        if (first_failure.empty()) {
          first_failure = name + " rep " + std::to_string(rep) + ": " + res.message;
        }
        break;
      }
    }
  }
  const double dt = now_seconds() - t0;
  std::ostringstream s;
  s << ops.size() << " operations x 20 instances, " << failures << " failing ops";
  if (!first_failure.empty()) s << " (" << first_failure << ")";
  s << ", " << dt << " s";
  detail = s.str();
  return failures == 0 && dt < 120.0;
}

// ---------------------------------------------------------------- criterion 4

bool criterion_dominance(std::string& detail) {
  const double t0 = now_seconds();
  int pass = 0;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    if (selfcheck::dominance_trial(mix_seed(4444, static_cast<std::uint64_t>(i)), 100000)
            .holds_at_3_sigma()) {
      ++pass;
    }
  }
  const double dt = now_seconds() - t0;
  std::ostringstream s;
  s << pass << "/" << trials << " trials dominate at 3 sigma, " << dt << " s";
  detail = s.str();
  return pass >= 197 && dt < 600.0;
}

// ---------------------------------------------------------------- criterion 5

bool criterion_count_law(std::string& detail) {
  auto bank = make_bank<double>(2, 4, 1.0, 2, -1.0, 5);
  NormalSampler rng(3);
  for (int n = 2; n <= 12; ++n) {
    FeaturesByClass<double> classes;
    for (int j = 0; j < n; ++j) {
      std::vector<BallPoint<double>> feats{testutil::random_ball_point(rng, 2, -1.0, 0.5),
                                           testutil::random_ball_point(rng, 2, -1.0, 0.5)};
      classes.emplace_back("c" + std::to_string(j), feats);
    }
    auto unseen = synthesize_unseen(bank, estimate_seen(bank, classes));
    if (unseen.size() != n * (n - 1) / 2) {
      detail = "n = " + std::to_string(n) + " gave " + std::to_string(unseen.size());
      return false;
    }
  }
  detail = "n(n-1)/2 classes for every n in [2, 12]";
  return true;
}

// ---------------------------------------------------------------- criterion 6

bool criterion_bilevel_gradient(std::string& detail) {
  const double t0 = now_seconds();
  const int d = 2;
  auto ref = make_bank<double>(d, 4, 1.0, 2, -1.0, 61);
  NormalSampler rng(91);
  Eigen::VectorXd theta = flatten_params(ref);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.05 * rng();

  Curvature<double> c(-1.0);
  FeaturesByClass<double> train_data, val_data;
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(d);
    center[j] = 0.6;
    std::vector<BallPoint<double>> tr, va;
    for (int s = 0; s < 3; ++s) tr.push_back(expm0(VecX<double>(center + 0.15 * rng.vector(d)), c));
    for (int s = 0; s < 2; ++s) va.push_back(expm0(VecX<double>(center + 0.15 * rng.vector(d)), c));
    train_data.emplace_back("c" + std::to_string(j), tr);
    val_data.emplace_back("c" + std::to_string(j), va);
  }

  auto pipeline = [&](const auto& params) {
    using T = std::decay_t<decltype(params[0])>;
    auto bank = bank_cast<T>(ref);
    assign_params(bank, params);
    const auto seen = estimate_seen(bank, hdfa::detail::lift_features<T>(train_data));
    const auto unseen = synthesize_unseen(bank, seen);
    const auto combined = concatenate(seen, unseen);
    const auto clf = train_inner(combined, InnerConfig{3, 0.1, 0.0});  // K = 3
    std::vector<std::pair<std::string, BallPoint<T>>> validation;
    for (const auto& [label, feats] : val_data) {
      for (const auto& x : feats) {
        const BallPoint<T> lifted{to_scalar<T>(x.coords), Curvature<T>(T(-1.0))};
        validation.emplace_back(label, reembed(lifted, seen.curv));
      }
    }
    std::vector<std::array<BallPoint<T>, 3>> triples;
    const auto pairs = unseen_parent_pairs(seen);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      triples.push_back({seen.prototype_point(pairs[k].first),
                         seen.prototype_point(pairs[k].second),
                         unseen.prototype_point(k)});
    }
    return total_meta_loss(clf, validation, triples, 10.0, 0.1);
  };

  const auto res = testutil::check_gradient(pipeline, theta, 1e-3, 1e-8);
  const double dt = now_seconds() - t0;
  std::ostringstream s;
  s << theta.size() << " bank parameters vs central differences, " << dt << " s";
  if (!res.ok) s << " (" << res.message << ")";
  detail = s.str();
  return res.ok && dt < 60.0;
}

// ---------------------------------------------------------------- criterion 7

SyntheticTreeSpec default_benchmark() {
  SyntheticTreeSpec spec;  // the default synthetic tree benchmark
  spec.leaf_classes = 8;
  spec.dimension = 16;
  spec.samples_per_class = 20;
  spec.seed = 11;
  return spec;
}

MetaConfig benchmark_meta_config() {
  MetaConfig cfg;
  cfg.outer_iterations = 40;
  cfg.outer_learning_rate = 1e-4;
  cfg.beta = 10.0;
  cfg.gamma = 0.1;
  cfg.split_train = 1;   // 1-shot regime, as in the evaluation episodes
  cfg.split_val = 15;
  cfg.seed = 1;
  cfg.inner = InnerConfig{15, 0.1, 1e-6};
  return cfg;
}

bool criterion_ablation_direction(std::string& detail) {
  const double t0 = now_seconds();
  const auto table = generate_tree_data(default_benchmark());
  const auto dataset = group_by_class(ingest_features(table, -1.0));
  auto bank = make_bank<double>(16, 32, 1.0, 5, -1.0, 1);
  bank = meta_train(bank, dataset, benchmark_meta_config()).bank;

  EpisodeSpec spec;
  spec.ways = 5;
  spec.shots = 1;
  spec.queries = 15;
  spec.episodes = 200;
  spec.seed = 99;
  EvalOptions opts;
  opts.inner = InnerConfig{50, 0.1, 1e-6};
  opts.threads = 2;

  const double no_aug = run_episodes(nullptr, table, spec, AugMode::kNone, opts).mean_acc;
  const double seen = run_episodes(&bank, table, spec, AugMode::kSeen, opts).mean_acc;
  const double dual = run_episodes(&bank, table, spec, AugMode::kDual, opts).mean_acc;
  const double dt = now_seconds() - t0;

  std::ostringstream s;
  s << "no_aug " << no_aug << " <= seen_aug " << seen << " <= dual_aug " << dual
    << ", dual - no = " << 100.0 * (dual - no_aug) << " points, " << dt << " s";
  detail = s.str();
  return dual >= seen && seen >= no_aug && (dual - no_aug) >= 0.01 && dt < 600.0;
}

// ---------------------------------------------------------------- criterion 8

bool criterion_hierarchy_effect(std::string& detail) {
  const double t0 = now_seconds();
  // gentler scales than the accuracy benchmark: the curvature stays moderate,
  // which keeps the prototype geometry away from the projection margin and
  // makes the regularizer's placement effect observable
  SyntheticTreeSpec gen = default_benchmark();
  gen.class_spread = 0.05;
  gen.within_spread = 0.25;
  const auto table = generate_tree_data(gen);
  const auto dataset = group_by_class(ingest_features(table, -1.0));
  auto bank = make_bank<double>(16, 32, 1.0, 5, -1.0, 1);
  bank = meta_train(bank, dataset, benchmark_meta_config()).bank;  // beta 10, gamma 0.1

  const auto by_class = group_by_class(ingest_features(table, bank.c0));
  double d_seen = 0.0, d_unseen = 0.0;
  long n_seen = 0, n_unseen = 0;
  for (int e = 0; e < 50; ++e) {  // held-out episodes, fresh seed stream
    NormalSampler rng(mix_seed(777, static_cast<std::uint64_t>(e)));
    std::vector<std::size_t> cls(by_class.size());
    std::iota(cls.begin(), cls.end(), 0);
    rng.shuffle(cls);
    cls.resize(5);
    std::sort(cls.begin(), cls.end());
    FeaturesByClass<double> support;
    for (auto ci : cls) {
      const auto& [label, feats] = by_class[ci];
      std::vector<std::size_t> idx(feats.size());
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(idx);
      support.emplace_back(label, std::vector<BallPoint<double>>{feats[idx[0]]});
    }
    const auto sd = estimate_seen(bank, support);
    const auto ud = synthesize_unseen(bank, sd);
    for (std::size_t j = 0; j < sd.entries.size(); ++j) {
      d_seen += distance_to_origin(sd.prototype_point(j));
      ++n_seen;
    }
    for (std::size_t j = 0; j < ud.entries.size(); ++j) {
      d_unseen += distance_to_origin(ud.prototype_point(j));
      ++n_unseen;
    }
  }
  d_seen /= static_cast<double>(n_seen);
  d_unseen /= static_cast<double>(n_unseen);
  const double dt = now_seconds() - t0;
  std::ostringstream s;
  s << "mean origin distance: unseen " << d_unseen << " < seen " << d_seen << ", " << dt
    << " s";
  detail = s.str();
  return d_unseen < d_seen && dt < 120.0;
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool criterion_determinism(std::string& detail) {
  if (g_cli_path.empty()) {
    detail = "no --cli path given";
    return false;
  }
  const std::string dir = "/tmp/hdfa_acceptance";
  std::system(("mkdir -p " + dir).c_str());

  auto run = [&](const std::string& args) {
    const std::string cmd = g_cli_path + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };

  // gen twice
  if (run("gen --classes 4 --dim 6 --samples 8 --seed 13 --out " + dir + "/a.tsv") != 0 ||
      run("gen --classes 4 --dim 6 --samples 8 --seed 13 --out " + dir + "/b.tsv") != 0) {
    detail = "gen invocation failed";
    return false;
  }
  if (slurp(dir + "/a.tsv") != slurp(dir + "/b.tsv") || slurp(dir + "/a.tsv").empty()) {
    detail = "gen artifacts differ between identical runs";
    return false;
  }

  // meta-train twice on that data
  const std::string train_flags = " --data " + dir + "/a.tsv --iters 6 --hidden 8 "
                                  "--ode-steps 3 --inner-k 8 --outer-lr 1e-4 --seed 7 --out ";
  if (run("meta-train" + train_flags + dir + "/ck_a.json") != 0 ||
      run("meta-train" + train_flags + dir + "/ck_b.json") != 0) {
    detail = "meta-train invocation failed";
    return false;
  }
  if (slurp(dir + "/ck_a.json") != slurp(dir + "/ck_b.json") ||
      slurp(dir + "/ck_a.json").empty()) {
    detail = "checkpoints differ between identical runs";
    return false;
  }

  // eval metrics independent of threading
  const std::string eval_flags = " --data " + dir + "/a.tsv --bank " + dir +
                                 "/ck_a.json --mode dual_aug --ways 2 --shots 2 "
                                 "--queries 3 --episodes 12 --seed 3";
  if (std::system((g_cli_path + " eval" + eval_flags + " --threads 1 > " + dir +
                   "/m1.json 2>/dev/null")
                      .c_str()) != 0 ||
      std::system((g_cli_path + " eval" + eval_flags + " --threads 2 > " + dir +
                   "/m2.json 2>/dev/null")
                      .c_str()) != 0) {
    detail = "eval invocation failed";
    return false;
  }
  if (slurp(dir + "/m1.json") != slurp(dir + "/m2.json") || slurp(dir + "/m1.json").empty()) {
    detail = "metrics differ across thread counts";
    return false;
  }
  detail = "gen, meta-train and eval artifacts byte-identical across repeated runs";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) only = std::atoi(argv[++i]);
    if (arg == "--cli" && i + 1 < argc) g_cli_path = argv[++i];
  }

  std::vector<Criterion> criteria{
      {1, "geometry identity suite (1e6 randomized checks)", criterion_geometry},
      {2, "RK4 fourth-order convergence", criterion_rk4},
      {3, "gradient contract against central finite differences", criterion_gradients},
      {4, "upper bound dominates the Monte-Carlo loss (200 trials, 1e5 draws)", criterion_dominance},
      {5, "unseen class count law n(n-1)/2", criterion_count_law},
      {6, "unrolled bi-level gradient (2-class, d=2, K=3)", criterion_bilevel_gradient},
      {7, "ablation direction on the default benchmark", criterion_ablation_direction},
      {8, "hierarchy regularizer moves unseen prototypes inward", criterion_hierarchy_effect},
      {9, "byte-identical artifacts under repeated seeds", criterion_determinism},
  };

  int failures = 0;
  for (auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("criterion %d: %s — %s (%s)\n", c.id, ok ? "PASS" : "FAIL",
                c.description.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
