#pragma once

// Dense row-major matrix kernels used by every stage of the engine.
//
// All kernels are single-threaded and accumulate left to right, so the
// same inputs always produce bit-identical outputs.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace fsa {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A matrix whose suppressed entries stand for minus infinity.
struct MaskedMatrix {
  Matrix values;
  std::vector<bool> suppressed;  // row-major, same shape as values

  MaskedMatrix() = default;
  explicit MaskedMatrix(Matrix v);
  MaskedMatrix(Matrix v, std::vector<bool> mask);

  bool is_suppressed(std::size_t r, std::size_t c) const {
    return suppressed[r * values.cols() + c];
  }
  std::size_t kept_in_row(std::size_t r) const;
};

using SegmentationMap = std::vector<std::size_t>;

Matrix matmul(const Matrix& a, const Matrix& b);
// a · bᵀ without materializing the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double factor);

Matrix row_softmax(const MaskedMatrix& m);
Matrix row_softmax(const Matrix& m);

Matrix cosine_rows(const Matrix& a, const Matrix& b);

// Lowest column index attaining each row's maximum.
SegmentationMap row_argmax(const Matrix& m);

bool all_finite(const Matrix& m);
// Nonnegative entries and every row summing to one within `tolerance`.
bool is_row_stochastic(const Matrix& m, double tolerance);
// Throws ErrorKind::Validation naming `what` when the check fails.
void require_row_stochastic(const Matrix& m, double tolerance, const char* what);
void require_square(const Matrix& m, const char* what);

}  // namespace fsa
