#pragma once

#include <vector>

#include "embcomp/matrix.hpp"
#include "embcomp/random.hpp"
#include "oracles.hpp"

namespace testing_util {

template <typename Real = double>
embcomp::Matrix<Real> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  embcomp::Rng rng(seed);
  embcomp::Matrix<Real> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<Real>(scale * rng.normal());
  return m;
}

template <typename Real>
oracle::Rows to_rows(const embcomp::Matrix<Real>& m) {
  oracle::Rows out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).begin(), m.row(i).end());
  return out;
}

inline double rel_diff(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / denom;
}

}  // namespace testing_util
