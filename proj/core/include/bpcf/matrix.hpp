#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bpcf {

// Dense row-major matrix of doubles.  Rows are the unit axis throughout.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Matrix from_columns(const std::vector<std::vector<double>>& cols);

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double> column(std::size_t j) const;
  // New matrix keeping the given rows, in the given order.
  Matrix select_rows(std::span<const int> rows) const;
  // Horizontal concatenation [this | extra columns].
  Matrix with_columns(const std::vector<std::vector<double>>& extra) const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

}  // namespace bpcf
