#include "nncore/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "common/errors.hpp"

namespace nncore {

Matrix2D Matrix2D::from_rows(int r, int c, std::vector<double> v) {
  if (v.size() != static_cast<std::size_t>(r) * c) {
    throw err::ShapeError("from_rows: expected " + std::to_string(r) + "x" + std::to_string(c) +
                          " = " + std::to_string(static_cast<std::size_t>(r) * c) +
                          " values, got " + std::to_string(v.size()));
  }
  Matrix2D m;
  m.rows = r;
  m.cols = c;
  m.values = std::move(v);
  return m;
}

bool Matrix2D::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_shape(const Matrix2D& m, int rows, int cols, const std::string& context) {
  if (m.rows != rows || m.cols != cols) {
    throw err::ShapeError(context + ": expected " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                          std::to_string(m.cols));
  }
}

Matrix2D matmul_nt(const Matrix2D& a, const Matrix2D& b) {
  Matrix2D out(a.rows, b.rows);
  matmul_nt_acc(a, b, out);
  return out;
}

Matrix2D matmul_nn(const Matrix2D& a, const Matrix2D& b) {
  Matrix2D out(a.rows, b.cols);
  matmul_nn_acc(a, b, out);
  return out;
}

Matrix2D matmul_tn(const Matrix2D& a, const Matrix2D& b) {
  Matrix2D out(a.cols, b.cols);
  matmul_tn_acc(a, b, out);
  return out;
}

void matmul_nt_acc(const Matrix2D& a, const Matrix2D& b, Matrix2D& out) {
  if (a.cols != b.cols) {
    throw err::ShapeError("matmul_nt: inner dimensions disagree (" + std::to_string(a.cols) +
                          " vs " + std::to_string(b.cols) + ")");
  }
  require_shape(out, a.rows, b.rows, "matmul_nt output");
  const int k = a.cols;
  const int k4 = k - (k % 4);
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      // Four fixed accumulators break the reduction dependency; the
      // summation order is static, so results stay bit-reproducible.
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (int p = 0; p < k4; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      double acc = (s0 + s1) + (s2 + s3);
      for (int p = k4; p < k; ++p) acc += ai[p] * bj[p];
      oi[j] += acc;
    }
  }
}

void matmul_nn_acc(const Matrix2D& a, const Matrix2D& b, Matrix2D& out) {
  if (a.cols != b.rows) {
    throw err::ShapeError("matmul_nn: inner dimensions disagree (" + std::to_string(a.cols) +
                          " vs " + std::to_string(b.rows) + ")");
  }
  require_shape(out, a.rows, b.cols, "matmul_nn output");
  const int k = a.cols;
  const int c = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.row(p);
      for (int j = 0; j < c; ++j) oi[j] += aip * bp[j];
    }
  }
}

void matmul_tn_acc(const Matrix2D& a, const Matrix2D& b, Matrix2D& out) {
  if (a.rows != b.rows) {
    throw err::ShapeError("matmul_tn: inner dimensions disagree (" + std::to_string(a.rows) +
                          " vs " + std::to_string(b.rows) + ")");
  }
  require_shape(out, a.cols, b.cols, "matmul_tn output");
  const int k = a.rows;
  const int c = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (int i = 0; i < a.cols; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* oi = out.row(i);
      for (int j = 0; j < c; ++j) oi[j] += api * bp[j];
    }
  }
}

Matrix2D add(const Matrix2D& a, const Matrix2D& b) {
  if (!a.same_shape(b)) throw err::ShapeError("add: shape mismatch");
  Matrix2D out = a;
  add_in_place(out, b);
  return out;
}

void add_in_place(Matrix2D& a, const Matrix2D& b) {
  if (!a.same_shape(b)) throw err::ShapeError("add_in_place: shape mismatch");
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
}

void add_scaled_in_place(Matrix2D& a, double alpha, const Matrix2D& b) {
  if (!a.same_shape(b)) throw err::ShapeError("add_scaled_in_place: shape mismatch");
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += alpha * b.values[i];
}

Matrix2D hadamard(const Matrix2D& a, const Matrix2D& b) {
  if (!a.same_shape(b)) throw err::ShapeError("hadamard: shape mismatch");
  Matrix2D out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.values[i];
  return out;
}

Matrix2D softmax_rows_matrix(const Matrix2D& x) {
  Matrix2D out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* oi = out.row(i);
    double mx = xi[0];
    for (int j = 1; j < x.cols; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < x.cols; ++j) oi[j] *= inv;
  }
  return out;
}

double max_abs_diff(const Matrix2D& a, const Matrix2D& b) {
  if (!a.same_shape(b)) throw err::ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  }
  return m;
}

}  // namespace nncore
