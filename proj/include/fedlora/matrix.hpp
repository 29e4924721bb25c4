#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedlora {

class Rng;

/// Dense row-major matrix of doubles.
///
/// A default-constructed matrix is 0x0 and only serves as a placeholder;
/// every other constructor requires positive dimensions.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  /// Numeric equality (so -0.0 == 0.0). See bitwise_equal for exact bits.
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

/// True iff shapes agree and every entry has identical bit pattern.
bool bitwise_equal(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

// Pure arithmetic. Each throws Error(kShape) naming both shapes on mismatch.

/// Standard product; accumulation runs over the inner index in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Adds a 1 x cols row to every row of a.
Matrix add_row_broadcast(const Matrix& a, const Matrix& row);

/// Row-wise softmax with per-row max subtraction.
Matrix row_softmax(const Matrix& a);
Matrix row_log_softmax(const Matrix& a);

/// Scales each row to unit L2 norm; an all-zero row stays zero.
Matrix row_normalize(const Matrix& a);

/// Appends a trailing column of ones (bias input).
Matrix append_ones_column(const Matrix& a);

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices);

double sum(const Matrix& a);
double mean(const Matrix& a);

/// Index of the largest entry in each row; ties go to the lowest index.
std::vector<std::size_t> row_argmax(const Matrix& a);

}  // namespace fedlora
