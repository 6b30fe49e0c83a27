#include "nncore/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/errors.hpp"

namespace nncore {

Matrix2D identity(int n) {
  Matrix2D m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

SymmetricEigen symmetric_eigen(const Matrix2D& input) {
  if (input.rows != input.cols) throw err::ShapeError("symmetric_eigen: matrix not square");
  const int n = input.rows;
  Matrix2D a = input;
  Matrix2D v = identity(n);

  auto off_diagonal_norm = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(2.0 * s);
  };

  const double scale = std::sqrt(std::inner_product(a.values.begin(), a.values.end(),
                                                    a.values.begin(), 0.0));
  const double tol = 1e-14 * std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100 && off_diagonal_norm() > tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) <= tol / (n * n)) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p);
          const double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a.at(i, i) > a.at(j, j); });

  SymmetricEigen result;
  result.eigenvalues.resize(n);
  result.eigenvectors = Matrix2D(n, n);
  for (int i = 0; i < n; ++i) {
    result.eigenvalues[i] = a.at(order[i], order[i]);
    for (int k = 0; k < n; ++k) result.eigenvectors.at(i, k) = v.at(k, order[i]);
  }
  return result;
}

Matrix2D spd_inverse(const Matrix2D& a) {
  if (a.rows != a.cols) throw err::ShapeError("spd_inverse: matrix not square");
  const int n = a.rows;

  // Cholesky a = L L^T.
  Matrix2D l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a.at(i, j);
      for (int k = 0; k < j; ++k) sum -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (sum <= 0.0) {
          throw err::ValidationError("spd_inverse: matrix is not positive definite");
        }
        l.at(i, i) = std::sqrt(sum);
      } else {
        l.at(i, j) = sum / l.at(j, j);
      }
    }
  }

  // Solve L L^T X = I column by column.
  Matrix2D inv(n, n);
  std::vector<double> y(n);
  for (int col = 0; col < n; ++col) {
    for (int i = 0; i < n; ++i) {
      double sum = (i == col) ? 1.0 : 0.0;
      for (int k = 0; k < i; ++k) sum -= l.at(i, k) * y[k];
      y[i] = sum / l.at(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
      double sum = y[i];
      for (int k = i + 1; k < n; ++k) sum -= l.at(k, i) * inv.at(k, col);
      inv.at(i, col) = sum / l.at(i, i);
    }
  }
  return inv;
}

}  // namespace nncore
