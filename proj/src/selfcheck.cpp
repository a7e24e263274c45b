#include "hdfa/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "hdfa/rng.hpp"

namespace hdfa::selfcheck {

namespace {

BallPoint<double> random_point(NormalSampler& rng, int dim, const Curvature<double>& c,
                               double frac) {
  Eigen::VectorXd dir = rng.vector(dim);
  const double n = dir.norm();
  if (n > 0) dir /= n;
  return BallPoint<double>{frac * rng.uniform() / std::sqrt(-c.value) * dir, c};
}

double distance_gyro(const BallPoint<double>& x, const BallPoint<double>& y) {
  const double sc = std::sqrt(-x.curv.value);
  return 2.0 / sc * std::atanh(sc * mobius_add(mobius_neg(x), y).coords.norm());
}

}  // namespace

SuiteResult geometry_suite(std::uint64_t seed, long total_checks, double eps_ball) {
  SuiteResult res;
  res.name = "geometry";
  const double curvatures[] = {-0.1, -0.3, -1.0};
  const long iters = total_checks / (4 * 3) + 1;  // 4 identities x 3 curvatures
  std::ostringstream first_failure;

  for (double cv : curvatures) {
    Curvature<double> c(cv);
    NormalSampler rng(mix_seed(seed, static_cast<std::uint64_t>(-cv * 1e4)));
    const double contain_limit = (1.0 - eps_ball) / std::sqrt(-cv) + 1e-12;
    for (long i = 0; i < iters; ++i) {
      const auto x = random_point(rng, 3, c, 0.95);
      const auto y = random_point(rng, 3, c, 0.95);

      // left cancellation
      const auto sum = mobius_add(x, y);
      ++res.checks;
      if ((mobius_add(mobius_neg(x), sum).coords - y.coords).norm() > 1e-9) {
        ++res.failures;
        if (res.failures == 1) first_failure << "left cancellation at iter " << i;
      }

      // exp/log inversion (points kept away from the boundary)
      const auto xi = random_point(rng, 3, c, 0.9);
      const auto yi = random_point(rng, 3, c, 0.9);
      ++res.checks;
      if ((expm(xi, logm(xi, yi)).coords - yi.coords).norm() > 1e-7) {
        ++res.failures;
        if (res.failures == 1) first_failure << "exp/log inversion at iter " << i;
      }

      // two-formula distance equivalence
      ++res.checks;
      if (std::abs(distance(x, y) - distance_gyro(x, y)) > 1e-9) {
        ++res.failures;
        if (res.failures == 1) first_failure << "distance equivalence at iter " << i;
      }

      // containment of every composed output
      ++res.checks;
      if (sum.coords.norm() > contain_limit ||
          expm(x, logm(x, y).coords).coords.norm() > contain_limit) {
        ++res.failures;
        if (res.failures == 1) first_failure << "ball containment at iter " << i;
      }
    }
  }
  res.pass = res.failures == 0;
  res.detail = res.pass ? "all identities hold" : first_failure.str();
  return res;
}

SuiteResult rk4_suite() {
  SuiteResult res;
  res.name = "rk4";
  auto flow = [](const VecX<double>& y, double) { return y; };
  const Eigen::VectorXd y0 = Eigen::VectorXd::Ones(1);
  double prev_err = -1.0;
  double min_ratio = 1e30;
  double final_err = 0.0;
  for (int steps : {10, 20, 40, 80}) {
    const double err =
        std::abs(rk4_solve<double>(VecX<double>(y0), flow, 1.0, steps)[0] - std::exp(1.0));
    ++res.checks;
    if (prev_err > 0.0) min_ratio = std::min(min_ratio, prev_err / err);
    prev_err = err;
    final_err = err;
  }
  res.pass = min_ratio >= 12.0 && final_err < 1e-8;
  std::ostringstream d;
  d << "min halving ratio " << min_ratio << ", finest error " << final_err;
  res.detail = d.str();
  res.failures = res.pass ? 0 : 1;
  return res;
}

DominanceTrial dominance_trial(std::uint64_t seed, int draws) {
  NormalSampler rng(mix_seed(seed, 0xb0d));
  const int d = 4, m = 3;
  const double c = -(0.1 + 0.9 * rng.uniform());
  Curvature<double> curv(c);
  ClassDistributions<double> dists{curv, {}};
  HyperbolicClassifier<double> clf;
  clf.curv = curv;
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd p_hat = Eigen::VectorXd::Zero(d);
    p_hat[j] = 0.08;
    p_hat += 0.01 * rng.vector(d);
    const Eigen::VectorXd mu = 0.01 * rng.vector(d);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < i; ++k) l(i, k) = 0.002 * rng();
      l(i, i) = 0.01 + 0.005 * rng.uniform();
    }
    ClassEntry<double> e;
    e.label = "c" + std::to_string(j);
    e.prototype = expm0(VecX<double>(p_hat), curv).coords;
    e.mean = mu;
    e.scale_tril = l;
    dists.entries.push_back(e);
    clf.labels.push_back(e.label);
    clf.weights.push_back(p_hat + mu + 0.005 * rng.vector(d));
  }

  DominanceTrial t;
  t.upper_bound = upper_bound_loss(clf, dists);
  const auto mc = mc_infinite_loss_stats(clf, dists, draws, mix_seed(seed, 0x3c));
  t.mc_mean = mc.mean;
  t.mc_stderr = mc.stderr_of_mean;
  return t;
}

SuiteResult bound_suite(std::uint64_t seed, int trials, int draws) {
  SuiteResult res;
  res.name = "bound";
  for (int i = 0; i < trials; ++i) {
    ++res.checks;
    if (!dominance_trial(mix_seed(seed, static_cast<std::uint64_t>(i)), draws)
             .holds_at_3_sigma()) {
      ++res.failures;
    }
  }
  const long allowed = (trials * 3 + 199) / 200;  // 3 of 200
  res.pass = res.failures <= allowed;
  std::ostringstream d;
  d << (res.checks - res.failures) << "/" << res.checks << " trials dominate at 3 sigma";
  res.detail = d.str();
  return res;
}

std::vector<SuiteResult> run_all(std::uint64_t seed, double eps_ball) {
  return {geometry_suite(seed, 120000, eps_ball), rk4_suite(),
          bound_suite(seed, 50, 20000)};
}

}  // namespace hdfa::selfcheck
