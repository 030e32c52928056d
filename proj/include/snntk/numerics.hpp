#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace snntk {

// Dense row-major storage for every matrix in the library: data X, weights,
// kernels.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised for malformed numerical input (shape mismatch, asymmetry,
/// indefiniteness). The message names the offending quantity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SymEig {
  Vector eigenvalues;  // ascending
  Matrix eigenvectors; // orthonormal columns
};

/// Relative symmetry defect max|m - m^T| / max(1, max|m|).
double symmetry_defect(const Matrix& m);

/// Eigendecomposition of a symmetric matrix. Inputs asymmetric beyond 1e-9
/// relative are rejected; the accepted input is symmetrized as (m + m^T)/2.
SymEig sym_eig(const Matrix& m);

double least_eigenvalue(const Matrix& m);

/// Largest |eigenvalue| of a symmetric matrix (its spectral norm).
double spectral_norm_sym(const Matrix& m);

/// Solves m * x = rhs for symmetric positive definite m via Cholesky.
Matrix solve_spd(const Matrix& m, const Matrix& rhs);

bool all_finite(const Matrix& m);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace snntk
