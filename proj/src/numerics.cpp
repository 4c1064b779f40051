#include "sfcap/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sfcap/errors.hpp"

namespace sfcap {

namespace {

void require_same_length(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": length mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

void require_nonempty(const Vector& x, const char* op) {
  if (x.empty()) throw ShapeError(std::string(op) + ": empty vector");
}

}  // namespace

void Vector::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

std::string shape_string(const Vector& v) { return "(" + std::to_string(v.size()) + ")"; }

void require_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value in " + what + " at index " + std::to_string(i));
    }
  }
}

double dot(const Vector& a, const Vector& b) {
  require_same_length(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vector matvec(const Matrix& m, const Vector& x) {
  if (m.cols() != x.size()) {
    throw ShapeError("matvec: matrix " + shape_string(m) + " vs vector " + shape_string(x));
  }
  Vector y(m.rows());
  const double* xs = x.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.data() + r * m.cols();
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += row[c] * xs[c];
    y[r] = s;
  }
  return y;
}

Vector matvec_transposed(const Matrix& m, const Vector& y) {
  if (m.rows() != y.size()) {
    throw ShapeError("matvec_transposed: matrix " + shape_string(m) + " vs vector " +
                     shape_string(y));
  }
  Vector x(m.cols());
  double* xs = x.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    const double* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) xs[c] += row[c] * yr;
  }
  return x;
}

void add_outer(Matrix& acc, const Vector& y, const Vector& x, double scale) {
  if (acc.rows() != y.size() || acc.cols() != x.size()) {
    throw ShapeError("add_outer: accumulator " + shape_string(acc) + " vs " + shape_string(y) +
                     " x " + shape_string(x));
  }
  const double* xs = x.data();
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    const double yr = scale * y[r];
    if (yr == 0.0) continue;
    double* row = acc.data() + r * acc.cols();
    for (std::size_t c = 0; c < acc.cols(); ++c) row[c] += yr * xs[c];
  }
}

void axpy(double scale, const Vector& x, Vector& y) {
  require_same_length(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

void axpy(double scale, const Matrix& x, Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError("axpy: " + shape_string(x) + " vs " + shape_string(y));
  }
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] += scale * x.data()[i];
}

Vector operator+(const Vector& a, const Vector& b) {
  require_same_length(a, b, "add");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector operator-(const Vector& a, const Vector& b) {
  require_same_length(a, b, "subtract");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vector operator*(double s, const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = s * v[i];
  return out;
}

Vector affine(const Vector& x, const Matrix& m, const Vector& b) {
  if (m.cols() != x.size() || m.rows() != b.size()) {
    throw ShapeError("affine: matrix " + shape_string(m) + ", input " + shape_string(x) +
                     ", bias " + shape_string(b));
  }
  Vector y = matvec(m, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  require_finite(y.values(), "affine output");
  return y;
}

AffineGrad affine_backward(const Vector& x, const Matrix& m, const Vector& dy) {
  if (m.cols() != x.size() || m.rows() != dy.size()) {
    throw ShapeError("affine_backward: matrix " + shape_string(m) + ", input " +
                     shape_string(x) + ", upstream " + shape_string(dy));
  }
  AffineGrad g{matvec_transposed(m, dy), Matrix(m.rows(), m.cols()), dy};
  add_outer(g.dm, dy, x);
  return g;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(const Vector& x) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Vector sigmoid_backward(const Vector& y, const Vector& dy) {
  require_same_length(y, dy, "sigmoid_backward");
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dx;
}

Vector tanh(const Vector& x) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

Vector tanh_backward(const Vector& y, const Vector& dy) {
  require_same_length(y, dy, "tanh_backward");
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
  return dx;
}

Vector softmax(const Vector& x) {
  require_nonempty(x, "softmax");
  require_finite(x.values(), "softmax input");
  const double mx = *std::max_element(x.begin(), x.end());
  Vector y(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    total += y[i];
  }
  for (auto& v : y) {
    v /= total;
    // Keep strict positivity under underflow.
    if (v < std::numeric_limits<double>::min()) v = std::numeric_limits<double>::min();
  }
  return y;
}

Vector softmax_backward(const Vector& y, const Vector& dy) {
  require_same_length(y, dy, "softmax_backward");
  const double inner = dot(y, dy);
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - inner);
  return dx;
}

Vector log_softmax(const Vector& x) {
  require_nonempty(x, "log_softmax");
  require_finite(x.values(), "log_softmax input");
  const double mx = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - mx);
  const double log_total = std::log(total);
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - mx - log_total;
  return y;
}

Vector log_softmax_backward(const Vector& y, const Vector& dy) {
  require_same_length(y, dy, "log_softmax_backward");
  double total = 0.0;
  for (double v : dy) total += v;
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] - std::exp(y[i]) * total;
  return dx;
}

Vector hadamard(const Vector& a, const Vector& b) {
  require_same_length(a, b, "hadamard");
  Vector y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

HadamardGrad hadamard_backward(const Vector& a, const Vector& b, const Vector& dy) {
  require_same_length(a, b, "hadamard_backward");
  require_same_length(a, dy, "hadamard_backward");
  return {hadamard(dy, b), hadamard(dy, a)};
}

GradCheckReport finite_difference_check(const std::function<double()>& loss,
                                        std::span<double> block,
                                        std::span<const double> analytic, double epsilon,
                                        double floor) {
  if (block.size() != analytic.size()) {
    throw ShapeError("finite_difference_check: block has " + std::to_string(block.size()) +
                     " entries, analytic gradient " + std::to_string(analytic.size()));
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");

  const double base = loss();
  const double again = loss();
  if (base != again) {
    throw NumericError("finite_difference_check: loss is not deterministic (" +
                       std::to_string(base) + " vs " + std::to_string(again) + ")");
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < block.size(); ++i) {
    const double saved = block[i];
    block[i] = saved + 2.0 * epsilon;
    const double plus2 = loss();
    block[i] = saved + epsilon;
    const double plus = loss();
    block[i] = saved - epsilon;
    const double minus = loss();
    block[i] = saved - 2.0 * epsilon;
    const double minus2 = loss();
    block[i] = saved;

    // Five-point stencil, truncation error O(epsilon^4).
    const double numeric = (minus2 - 8.0 * minus + 8.0 * plus - plus2) / (12.0 * epsilon);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter_index = i;
      report.analytic_value = a;
      report.numeric_value = numeric;
    }
  }
  return report;
}

}  // namespace sfcap
