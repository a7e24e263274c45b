#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdfa/distributions.hpp"
#include "hdfa/losses.hpp"

namespace hdfa::selfcheck {

struct SuiteResult {
  std::string name;
  bool pass = false;
  long checks = 0;
  long failures = 0;
  std::string detail;
};

/// Randomized geometry identities at c in {-0.1, -0.3, -1}: left cancellation
/// (1e-9), exp/log inversion (1e-7), the two-formula distance equivalence
/// (1e-9), and ball containment. `total_checks` counts individual identity
/// evaluations across all curvatures. `eps_ball` parameterizes the containment
/// threshold (1 - eps)/sqrt|c|; the production margin is kBallEps.
SuiteResult geometry_suite(std::uint64_t seed, long total_checks,
                           double eps_ball = kBallEps);

/// RK4 order check on dh/dt = h: each step halving over {10,20,40,80} must
/// shrink the error by at least 12x, and the finest error must be below 1e-8.
SuiteResult rk4_suite();

/// One dominance trial in the regime of the bound's proof: well separated
/// small-norm classes (|w|, |p_hat|, |mu| <= ~0.1, |c| <= 1, small scale
/// factors) with each classifier weight co-located with its class center so
/// that samples are closer to their own weight, which inequality (norm
/// ordering) the proof assumes. Returns the bound, the Monte-Carlo estimate
/// of the infinite loss, and the Monte-Carlo standard error.
struct DominanceTrial {
  double upper_bound = 0.0;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;

  bool holds_at_3_sigma() const {
    return upper_bound >= mc_mean - 3.0 * mc_stderr;
  }
};

DominanceTrial dominance_trial(std::uint64_t seed, int draws);

/// Runs `trials` dominance trials at 3 sigma; passes when at most ceil(1.5%)
/// of them fail (197/200 at the default count).
SuiteResult bound_suite(std::uint64_t seed, int trials, int draws);

std::vector<SuiteResult> run_all(std::uint64_t seed, double eps_ball = kBallEps);

}  // namespace hdfa::selfcheck
