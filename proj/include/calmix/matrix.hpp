#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace calmix {

using Vector = std::vector<double>;

// Dense row-major matrix. 64-bit floats throughout; calibration gaps are
// small enough that single precision drift would show up in the metrics.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {
    if (r == 0 || c == 0)
      throw std::invalid_argument("Matrix: dimensions must be positive");
  }

  static Matrix from_vector(const Vector& v) {
    Matrix m(v.size(), 1);
    m.data = v;
    return m;
  }

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  Vector to_vector() const {
    if (cols != 1 && rows != 1)
      throw std::invalid_argument("Matrix::to_vector: not a vector shape");
    return data;
  }
};

// Shared forward kernels. The autodiff tape and the plain inference paths
// both call these, so a composed plain forward reproduces the tape values
// bit for bit.
inline Vector affine_forward(const Matrix& W, const Vector& x,
                             const Vector& b) {
  if (W.cols != x.size() || W.rows != b.size())
    throw std::invalid_argument("affine: shape mismatch");
  Vector out(W.rows);
  for (std::size_t i = 0; i < W.rows; ++i) {
    double s = b[i];
    const double* row = W.data.data() + i * W.cols;
    for (std::size_t j = 0; j < W.cols; ++j) s += row[j] * x[j];
    out[i] = s;
  }
  return out;
}

inline Vector tanh_forward(Vector x) {
  for (double& v : x) v = std::tanh(v);
  return x;
}

inline Vector mean_rows_forward(const Matrix& m) {
  Vector out(m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) s += m.at(i, j);
    out[j] = s / static_cast<double>(m.rows);
  }
  return out;
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(std::span<const double> xs, const char* what) {
  if (!all_finite(xs))
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

inline std::size_t argmax(const Vector& v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty vector");
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double log_sum_exp(const Vector& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// Max-subtracted softmax. Confident models push logits far apart, so the
// naive exp would overflow; the shifted form cannot.
inline Vector softmax(const Vector& z) {
  if (z.size() < 2) throw std::invalid_argument("softmax: need at least 2 logits");
  require_finite(z, "softmax");
  const double m = *std::max_element(z.begin(), z.end());
  Vector p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

// Entries nonnegative and summing to 1 within tol.
inline void require_distribution(const Vector& t, const char* what,
                                 double tol = 1e-9) {
  double s = 0.0;
  for (double v : t) {
    if (!(v >= 0.0))
      throw std::invalid_argument(std::string(what) + ": negative target mass");
    s += v;
  }
  if (std::abs(s - 1.0) > tol)
    throw std::invalid_argument(std::string(what) + ": target mass sums to " +
                                std::to_string(s) + ", expected 1");
}

// -sum_k target_k * log softmax(logits)_k, evaluated through log-sum-exp.
inline double cross_entropy_soft(const Vector& logits, const Vector& target) {
  if (logits.size() != target.size())
    throw std::invalid_argument("cross_entropy_soft: length mismatch");
  if (logits.size() < 2)
    throw std::invalid_argument("cross_entropy_soft: need at least 2 classes");
  require_finite(logits, "cross_entropy_soft");
  require_distribution(target, "cross_entropy_soft");
  return log_sum_exp(logits) - dot(target, logits);
}

inline Vector one_hot(std::size_t gold, std::size_t num_classes) {
  if (gold >= num_classes)
    throw std::invalid_argument("one_hot: class index out of range");
  Vector y(num_classes, 0.0);
  y[gold] = 1.0;
  return y;
}

}  // namespace calmix
