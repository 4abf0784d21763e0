#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

#include "rapid/core/hash.hpp"

namespace rapid {

using Rng = std::mt19937_64;

/// Derives an independent named stream from the root seed, so every stage
/// draws from its own generator regardless of what other stages consumed.
inline Rng make_stream(std::uint64_t root_seed, std::string_view name) {
  return Rng(Fnv1a{}.u64(root_seed).str(name).value());
}

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

inline Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace rapid
