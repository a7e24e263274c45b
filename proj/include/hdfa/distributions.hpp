#pragma once

#include <string>
#include <vector>

#include "hdfa/wrapped_normal.hpp"

namespace hdfa {

enum class Provenance { kSeen, kUnseen };

template <typename T>
struct ClassEntry {
  std::string label;
  Provenance provenance = Provenance::kSeen;
  VecX<T> prototype;   // ambient coordinates inside the shared ball
  VecX<T> mean;        // tangent units at the origin
  MatX<T> scale_tril;  // lower triangular, diagonal >= kSigmaMin
};

/// Per-class wrapped normals sharing one estimated curvature.
template <typename T>
struct ClassDistributions {
  Curvature<T> curv;
  std::vector<ClassEntry<T>> entries;

  Eigen::Index size() const { return static_cast<Eigen::Index>(entries.size()); }
  Eigen::Index dim() const { return entries.empty() ? 0 : entries.front().mean.size(); }

  BallPoint<T> prototype_point(std::size_t i) const {
    return BallPoint<T>{entries[i].prototype, curv};
  }

  WrappedNormal<T> wrapped(std::size_t i) const {
    return WrappedNormal<T>{curv, prototype_point(i), entries[i].mean,
                            entries[i].scale_tril};
  }
};

template <typename T>
ClassDistributions<T> concatenate(const ClassDistributions<T>& a,
                                  const ClassDistributions<T>& b) {
  if (primal(a.curv.value) != primal(b.curv.value)) {
    throw std::invalid_argument("concatenate: curvature mismatch");
  }
  ClassDistributions<T> out{a.curv, a.entries};
  out.entries.insert(out.entries.end(), b.entries.begin(), b.entries.end());
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    for (std::size_t j = i + 1; j < out.entries.size(); ++j) {
      if (out.entries[i].label == out.entries[j].label) {
        throw std::invalid_argument("concatenate: duplicate label " +
                                    out.entries[i].label);
      }
    }
  }
  return out;
}

}  // namespace hdfa
