#include "fedlora/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShape, std::string(op) + ": shape mismatch " + shape_string(a) +
                                       " vs " + shape_string(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorCode::kShape, "matrix dimensions must be positive, got " +
                                       std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorCode::kShape, "matrix dimensions must be positive, got " +
                                       std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShape, "matrix data length " + std::to_string(data_.size()) +
                                       " does not match " + std::to_string(rows) + "x" +
                                       std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorCode::kShape, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * rng.normal();
  return m;
}

std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShape,
                "matmul: inner dimensions differ " + shape_string(a) + " x " + shape_string(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out_row = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* b_row = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorCode::kShape, "add_row_broadcast: cannot broadcast " + shape_string(row) +
                                       " over " + shape_string(a));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row(0, j);
  }
  return out;
}

Matrix row_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    const double max = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - max);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix row_log_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    const double max = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp(v - max);
    const double log_norm = max + std::log(total);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] - log_norm;
  }
  return out;
}

Matrix row_normalize(const Matrix& a) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double sq = 0.0;
    for (double v : r) sq += v * v;
    if (sq == 0.0) continue;
    const double norm = std::sqrt(sq);
    for (double& v : r) v /= norm;
  }
  return out;
}

Matrix append_ones_column(const Matrix& a) {
  Matrix out(a.rows(), a.cols() + 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    std::copy(in.begin(), in.end(), o.begin());
    o[a.cols()] = 1.0;
  }
  return out;
}

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::kShape, "gather_rows: empty index list");
  Matrix out(indices.size(), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.rows()) {
      throw Error(ErrorCode::kShape, "gather_rows: row " + std::to_string(indices[i]) +
                                         " out of range for " + shape_string(a));
    }
    auto in = a.row(indices[i]);
    std::copy(in.begin(), in.end(), out.row(i).begin());
  }
  return out;
}

double sum(const Matrix& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return total;
}

double mean(const Matrix& a) {
  return sum(a) / static_cast<double>(a.size());
}

std::vector<std::size_t> row_argmax(const Matrix& a) {
  std::vector<std::size_t> out(a.rows(), 0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j)
      if (r[j] > r[best]) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace fedlora
