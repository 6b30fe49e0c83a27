#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace nncore {

/// Dense row-major real64 matrix. The single numeric container of the
/// project; row vectors are 1xN, column vectors Nx1, scalars 1x1.
struct Matrix2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major, rows*cols entries

  Matrix2D() = default;
  Matrix2D(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}

  static Matrix2D zeros(int r, int c) { return Matrix2D(r, c); }
  static Matrix2D scalar(double v) {
    Matrix2D m(1, 1);
    m.values[0] = v;
    return m;
  }
  static Matrix2D from_rows(int r, int c, std::vector<double> v);

  bool empty() const { return rows == 0 || cols == 0; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const Matrix2D& o) const { return rows == o.rows && cols == o.cols; }

  double* row(int i) { return values.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return values.data() + static_cast<std::size_t>(i) * cols; }
  std::span<const double> row_span(int i) const { return {row(i), static_cast<std::size_t>(cols)}; }

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }

  void fill(double v) { std::fill(values.begin(), values.end(), v); }
  void set_zero() { fill(0.0); }

  bool all_finite() const;
};

/// y = a * b^T, a: r x k, b: c x k. Both operands are read along contiguous
/// rows, which is the layout every linear layer in the repo uses.
Matrix2D matmul_nt(const Matrix2D& a, const Matrix2D& b);

/// y = a * b, a: r x k, b: k x c.
Matrix2D matmul_nn(const Matrix2D& a, const Matrix2D& b);

/// y = a^T * b, a: k x r, b: k x c.
Matrix2D matmul_tn(const Matrix2D& a, const Matrix2D& b);

/// Accumulating variants used by backward passes: out += product.
void matmul_nt_acc(const Matrix2D& a, const Matrix2D& b, Matrix2D& out);
void matmul_nn_acc(const Matrix2D& a, const Matrix2D& b, Matrix2D& out);
void matmul_tn_acc(const Matrix2D& a, const Matrix2D& b, Matrix2D& out);

Matrix2D add(const Matrix2D& a, const Matrix2D& b);
void add_in_place(Matrix2D& a, const Matrix2D& b);
void add_scaled_in_place(Matrix2D& a, double alpha, const Matrix2D& b);  // a += alpha*b
Matrix2D hadamard(const Matrix2D& a, const Matrix2D& b);

/// Numerically stable row-wise softmax (max subtraction per row).
Matrix2D softmax_rows_matrix(const Matrix2D& x);

double max_abs_diff(const Matrix2D& a, const Matrix2D& b);

void require_shape(const Matrix2D& m, int rows, int cols, const std::string& context);

}  // namespace nncore
