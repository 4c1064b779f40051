#pragma once

// Dense vectors/matrices and the differentiable primitives the captioner is
// built from. Every primitive has an explicit backward rule; composition
// happens by hand in reverse order in the model code.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sfcap {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(double v);

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);
std::string shape_string(const Vector& v);

// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const std::string& what);

// --- linear algebra -------------------------------------------------------

double dot(const Vector& a, const Vector& b);
Vector matvec(const Matrix& m, const Vector& x);
// m^T y
Vector matvec_transposed(const Matrix& m, const Vector& y);
// acc += scale * y x^T
void add_outer(Matrix& acc, const Vector& y, const Vector& x, double scale = 1.0);
// y += scale * x
void axpy(double scale, const Vector& x, Vector& y);
void axpy(double scale, const Matrix& x, Matrix& y);
Vector operator+(const Vector& a, const Vector& b);
Vector operator-(const Vector& a, const Vector& b);
Vector operator*(double s, const Vector& v);

// --- differentiable primitives -------------------------------------------

// M x + b
Vector affine(const Vector& x, const Matrix& m, const Vector& b);

struct AffineGrad {
  Vector dx;
  Matrix dm;
  Vector db;
};
AffineGrad affine_backward(const Vector& x, const Matrix& m, const Vector& dy);

double sigmoid(double x);
Vector sigmoid(const Vector& x);
// Backward rules take the forward output y, not the input.
Vector sigmoid_backward(const Vector& y, const Vector& dy);

Vector tanh(const Vector& x);
Vector tanh_backward(const Vector& y, const Vector& dy);

Vector softmax(const Vector& x);
Vector softmax_backward(const Vector& y, const Vector& dy);

Vector log_softmax(const Vector& x);
Vector log_softmax_backward(const Vector& y, const Vector& dy);

Vector hadamard(const Vector& a, const Vector& b);
struct HadamardGrad {
  Vector da;
  Vector db;
};
HadamardGrad hadamard_backward(const Vector& a, const Vector& b, const Vector& dy);

// --- gradient checking ---------------------------------------------------

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter_index = 0;
  double analytic_value = 0.0;
  double numeric_value = 0.0;
};

// Five-point central differences over every coordinate of `block`, which `loss` must
// read. The block is restored bitwise after each probe. Relative error uses
// max(|analytic|, |numeric|, floor) as denominator, so entries below `floor`
// are effectively compared in absolute terms.
GradCheckReport finite_difference_check(const std::function<double()>& loss,
                                        std::span<double> block,
                                        std::span<const double> analytic,
                                        double epsilon = 1e-3, double floor = 1e-8);

}  // namespace sfcap
