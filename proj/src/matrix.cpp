#include "regimerag/matrix.hpp"

#include <algorithm>

#include "regimerag/error.hpp"

namespace regimerag {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::ShapeMismatch, "matrix data length does not match rows*cols");
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorCode::ShapeMismatch, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::slice_rows(std::size_t first, std::size_t count) const {
  if (first + count > rows_) throw Error(ErrorCode::ShapeMismatch, "row slice out of range");
  std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                           data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_));
  return Matrix(count, cols_, std::move(data));
}

Matrix vstack(std::span<const Matrix* const> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front()->cols();
  std::size_t rows = 0;
  for (const Matrix* m : parts) {
    if (m->cols() != cols) throw Error(ErrorCode::DimensionMismatch, "vstack column mismatch");
    rows += m->rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Matrix* m : parts) {
    auto f = m->flat();
    data.insert(data.end(), f.begin(), f.end());
  }
  return Matrix(rows, cols, std::move(data));
}

}  // namespace regimerag
