#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "embcomp/types.hpp"

namespace embcomp {

/// Dense row-major matrix. Rows are embedding vectors.
template <std::floating_point Real>
class Matrix {
 public:
  using value_type = Real;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<Real>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ConsistencyError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const Real> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  Real& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  Real operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }

  /// Appends `count` rows filled with `fill`; keeps existing rows untouched.
  void append_rows(std::size_t count, Real fill = Real{0}) {
    data_.resize((rows_ + count) * cols_, fill);
    rows_ += count;
  }

  void push_row(std::span<const Real> values) {
    if (values.size() != cols_) throw ConsistencyError("Matrix::push_row: width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

template <typename A, typename B>
inline double squared_distance(const A& a, const B& b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace embcomp
