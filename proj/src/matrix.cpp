#include "fsa/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fsa/error.hpp"

namespace fsa {
namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_nonempty(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorKind::Shape, "matrix dimensions must be at least 1x1");
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::Shape,
                std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols) {
  require_nonempty(rows, cols);
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_nonempty(rows, cols);
  if (data_.size() != rows * cols) {
    throw Error(ErrorKind::Shape, "matrix data length " + std::to_string(data_.size()) +
                                      " does not match " + std::to_string(rows) + "x" +
                                      std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  require_nonempty(rows_, cols_);
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorKind::Shape, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

MaskedMatrix::MaskedMatrix(Matrix v)
    : values(std::move(v)), suppressed(values.size(), false) {}

MaskedMatrix::MaskedMatrix(Matrix v, std::vector<bool> mask)
    : values(std::move(v)), suppressed(std::move(mask)) {
  if (suppressed.size() != values.size()) {
    throw Error(ErrorKind::Shape, "suppression mask does not match matrix shape");
  }
}

std::size_t MaskedMatrix::kept_in_row(std::size_t r) const {
  std::size_t kept = 0;
  for (std::size_t c = 0; c < values.cols(); ++c) kept += is_suppressed(r, c) ? 0 : 1;
  return kept;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::Shape, "matmul: inner dimensions differ " + dims(a) + " · " + dims(b));
  }
  Matrix out(a.rows(), b.cols());
  // i-k-j order: each output row accumulates lhs terms in increasing k.
  // Exact zeros on the left contribute nothing and are skipped, which makes
  // products with sparse feedback attention cheap.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    const auto lhs = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = lhs[k];
      if (s == 0.0) continue;
      const auto rhs = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * rhs[j];
    }
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::Shape,
                "matmul_transposed: column counts differ " + dims(a) + " vs " + dims(b));
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto x = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto y = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * y[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  auto dst = out.data();
  const auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  auto dst = out.data();
  const auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

Matrix scale(const Matrix& m, double factor) {
  Matrix out = m;
  for (double& x : out.data()) x *= factor;
  return out;
}

Matrix row_softmax(const MaskedMatrix& m) {
  const Matrix& v = m.values;
  if (m.suppressed.size() != v.size()) {
    throw Error(ErrorKind::Shape, "row_softmax: mask does not match values");
  }
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v.cols(); ++j) {
      if (!m.is_suppressed(i, j)) peak = std::max(peak, v(i, j));
    }
    if (peak == -std::numeric_limits<double>::infinity()) {
      throw Error(ErrorKind::DegenerateRow,
                  "row_softmax: row " + std::to_string(i) + " is fully suppressed");
    }
    auto dst = out.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < v.cols(); ++j) {
      if (m.is_suppressed(i, j)) continue;
      dst[j] = std::exp(v(i, j) - peak);
      total += dst[j];
    }
    for (double& x : dst) x /= total;
  }
  return out;
}

Matrix row_softmax(const Matrix& m) { return row_softmax(MaskedMatrix(m)); }

Matrix cosine_rows(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::Shape, "cosine_rows: column counts differ " + dims(a) + " vs " + dims(b));
  }
  auto norms = [](const Matrix& m, const char* side) {
    std::vector<double> n(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double sq = 0.0;
      for (double x : m.row(i)) sq += x * x;
      n[i] = std::sqrt(sq);
      if (!(n[i] > 0.0)) {
        throw Error(ErrorKind::DegenerateVector,
                    std::string("cosine_rows: zero-norm row ") + std::to_string(i) + " in " + side);
      }
    }
    return n;
  };
  const auto na = norms(a, "left operand");
  const auto nb = norms(b, "right operand");
  Matrix out = matmul_transposed(a, b);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = std::clamp(out(i, j) / (na[i] * nb[j]), -1.0, 1.0);
  return out;
}

SegmentationMap row_argmax(const Matrix& m) {
  SegmentationMap out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    // max_element returns the first maximum.
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(),
                     [](double x) { return std::isfinite(x); });
}

bool is_row_stochastic(const Matrix& m, double tolerance) {
  if (m.empty()) return false;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double total = 0.0;
    for (double x : m.row(i)) {
      if (!(x >= 0.0) || !std::isfinite(x)) return false;
      total += x;
    }
    if (std::abs(total - 1.0) > tolerance) return false;
  }
  return true;
}

void require_row_stochastic(const Matrix& m, double tolerance, const char* what) {
  if (!is_row_stochastic(m, tolerance)) {
    throw Error(ErrorKind::Validation,
                std::string(what) + " is not row-stochastic within " + std::to_string(tolerance));
  }
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorKind::Shape, std::string(what) + " must be square, got " + dims(m));
  }
}

}  // namespace fsa
