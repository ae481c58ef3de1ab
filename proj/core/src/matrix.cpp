#include "bpcf/matrix.hpp"

#include <stdexcept>

namespace bpcf {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::from_columns(const std::vector<std::vector<double>>& cols) {
  if (cols.empty()) return {};
  const std::size_t n = cols.front().size();
  for (const auto& c : cols) {
    if (c.size() != n) throw std::invalid_argument("from_columns: ragged columns");
  }
  Matrix m(n, cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) m(i, j) = cols[j][i];
  }
  return m;
}

std::vector<double> Matrix::column(std::size_t j) const {
  std::vector<double> out(rows_);
  for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

Matrix Matrix::select_rows(std::span<const int> rows) const {
  Matrix out(rows.size(), cols_);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = static_cast<std::size_t>(rows[k]);
    if (i >= rows_) throw std::out_of_range("select_rows: row index");
    for (std::size_t j = 0; j < cols_; ++j) out(k, j) = (*this)(i, j);
  }
  return out;
}

Matrix Matrix::with_columns(const std::vector<std::vector<double>>& extra) const {
  for (const auto& c : extra) {
    if (c.size() != rows_) throw std::invalid_argument("with_columns: length mismatch");
  }
  Matrix out(rows_, cols_ + extra.size());
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j);
    for (std::size_t j = 0; j < extra.size(); ++j) out(i, cols_ + j) = extra[j][i];
  }
  return out;
}

}  // namespace bpcf
