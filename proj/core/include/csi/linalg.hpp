#pragma once

#include <vector>

namespace csi::linalg {

// Dense symmetric matrix helpers at desk scale (n up to a few hundred).
// Matrices are row-major n*n vectors.

// Cholesky factor L (lower triangular, row-major) of a symmetric
// positive-definite matrix. Throws NumericError if a pivot is not positive;
// the message carries the offending pivot value.
std::vector<double> cholesky(const std::vector<double>& a, int n);

// All eigenvalues of a symmetric matrix via cyclic Jacobi rotations,
// ascending order.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, int n, int max_sweeps = 64);

// y = A x for row-major A (n x n).
void matvec(const std::vector<double>& a, const double* x, double* y, int n);

} // namespace csi::linalg
