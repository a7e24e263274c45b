#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace hdfa {

/// Derives an independent stream seed. splitmix64 of (seed, stream) so that
/// nearby seeds and stream ids do not produce correlated generators.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic N(0,1) stream: mt19937_64 + Box-Muller. std::normal_distribution
/// is implementation-defined, so it is avoided for anything that feeds an
/// artifact byte-comparison.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : gen_(seed) {}

  double uniform() {  // in [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd vector(Eigen::Index d) {
    Eigen::VectorXd out(d);
    for (Eigen::Index i = 0; i < d; ++i) out[i] = (*this)();
    return out;
  }

  std::uint64_t integer(std::uint64_t bound) {  // in [0, bound)
    return bound == 0 ? 0 : gen_() % bound;
  }

  /// Deterministic Fisher-Yates shuffle.
  template <typename V>
  void shuffle(V& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hdfa
