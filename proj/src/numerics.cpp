#include "snntk/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace snntk {

namespace {

constexpr double kSymmetryTolerance = 1e-9;

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << what << ": expected a square matrix, got " << m.rows() << "x" << m.cols();
    throw NumericError(os.str());
  }
}

Matrix checked_symmetric(const Matrix& m, const char* what) {
  require_square(m, what);
  if (!all_finite(m)) {
    throw NumericError(std::string(what) + ": non-finite entry");
  }
  const double defect = symmetry_defect(m);
  if (defect > kSymmetryTolerance) {
    std::ostringstream os;
    os << what << ": matrix is not symmetric (relative defect " << defect << " > "
       << kSymmetryTolerance << ")";
    throw NumericError(os.str());
  }
  return 0.5 * (m + m.transpose());
}

}  // namespace

double symmetry_defect(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

SymEig sym_eig(const Matrix& m) {
  const Matrix sym = checked_symmetric(m, "sym_eig");
  if (sym.rows() == 0) return {};
  // Householder tridiagonalization followed by implicit symmetric QR.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NumericError("sym_eig: eigensolver did not converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

double least_eigenvalue(const Matrix& m) {
  const SymEig eig = sym_eig(m);
  if (eig.eigenvalues.size() == 0) throw NumericError("least_eigenvalue: empty matrix");
  return eig.eigenvalues(0);
}

double spectral_norm_sym(const Matrix& m) {
  const SymEig eig = sym_eig(m);
  if (eig.eigenvalues.size() == 0) return 0.0;
  return std::max(std::abs(eig.eigenvalues(0)),
                  std::abs(eig.eigenvalues(eig.eigenvalues.size() - 1)));
}

Matrix solve_spd(const Matrix& m, const Matrix& rhs) {
  const Matrix sym = checked_symmetric(m, "solve_spd");
  if (rhs.rows() != sym.rows()) {
    std::ostringstream os;
    os << "solve_spd: rhs has " << rhs.rows() << " rows, system has " << sym.rows();
    throw NumericError(os.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) {
    // Name the pivot where the factorization broke down together with the
    // least eigenvalue, which is what a caller can act on.
    Eigen::MatrixXd l = sym;
    Eigen::Index bad = 0;
    for (Eigen::Index k = 0; k < l.rows(); ++k) {
      double pivot = l(k, k) - l.row(k).head(k).squaredNorm();
      if (!(pivot > 0.0)) {
        bad = k;
        break;
      }
      l(k, k) = std::sqrt(pivot);
      for (Eigen::Index i = k + 1; i < l.rows(); ++i) {
        l(i, k) = (l(i, k) - l.row(i).head(k).dot(l.row(k).head(k))) / l(k, k);
      }
    }
    std::ostringstream os;
    os << "solve_spd: matrix is not positive definite (pivot " << bad
       << " non-positive, least eigenvalue " << least_eigenvalue(sym) << ")";
    throw NumericError(os.str());
  }
  Matrix sol = llt.solve(Eigen::MatrixXd(rhs));
  return sol;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw NumericError("loglog_slope: need at least two paired points");
  }
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw NumericError("loglog_slope: non-positive value");
    }
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw NumericError("loglog_slope: degenerate abscissae");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace snntk
