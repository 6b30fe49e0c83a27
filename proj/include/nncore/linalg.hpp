#pragma once

#include "nncore/matrix.hpp"

namespace nncore {

struct SymmetricEigen {
  std::vector<double> eigenvalues;  // descending
  Matrix2D eigenvectors;            // row i is the eigenvector of eigenvalues[i]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic;
/// accurate to ~1e-12 relative for the matrix sizes used here (<= a few
/// hundred rows).
SymmetricEigen symmetric_eigen(const Matrix2D& a);

/// Inverse of a symmetric positive definite matrix via Cholesky.
Matrix2D spd_inverse(const Matrix2D& a);

Matrix2D identity(int n);

}  // namespace nncore
