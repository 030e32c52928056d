#pragma once

#include "snntk/ntk.hpp"
#include "snntk/snn.hpp"

#include <limits>
#include <string>
#include <vector>

namespace snntk {

/// Ridge predictor K(x, X) (K + βI)^{-1} Y with K + βI factored once.
///
/// Targets are n' x c: n x d with a Kronecker factor kernel (cross kernels
/// 1 x n per test point), or nd x 1 with a full kernel (cross kernels d x nd).
struct KrrPredictor {
  Matrix train_kernel;
  double beta = 0.0;
  Matrix targets;
  SymEig factorization;  // of train_kernel
  Matrix dual;           // (K + βI)^{-1} Y
  std::string provenance;
};

/// Throws NumericError naming λ_min when K + βI is not positive definite.
KrrPredictor fit(const Matrix& kernel, double beta, const Matrix& targets,
                 std::string provenance = {});

/// Uses the μ block of `kernel`.
KrrPredictor fit(const KernelBlocks& kernel, double beta, const Matrix& targets);

/// K(x, X) (K + βI)^{-1} Y.
Matrix predict(const KrrPredictor& p, const Matrix& cross_kernel);

/// K(x, X) (K + βI)^{-1} (I - exp(-(K + βI) t)) Y, through the stored
/// eigendecomposition.
Matrix predict_time_t(const KrrPredictor& p, const Matrix& cross_kernel, double t);

/// Flattens a 1 x d or d x 1 prediction to a vector.
Vector as_output(const Matrix& prediction);

/// ε_init + ε_Θ √n / (λ₀ + β).
double residual_bound(double eps_init, double eps_theta, Eigen::Index n, double lambda0,
                      double beta);

enum class KrrKernelSource { kEmpiricalInit, kLimitingMc };
std::string_view krr_source_name(KrrKernelSource source);

/// Ridge regression matched to μ-only training of
///   L = (1/2n) ‖f̂(X) - X‖²_F + (β/2) ‖W_μ - W_μ(0)‖²_F.
/// Linearizing f̂ around the initial weights, gradient flow solves a ridge
/// problem with kernel Θ^(μ)/n and ridge β on the residual targets
/// X - f̂(X; 0); the network then predicts f̂(x; 0) plus the ridge output.
/// `uncentered` is the same kernel fit on X itself, i.e. without the
/// initial-output correction.
struct LinearizedKrr {
  KernelMode mode = KernelMode::kFull;
  KrrKernelSource source = KrrKernelSource::kEmpiricalInit;
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  KrrPredictor centered;
  KrrPredictor uncentered;
  std::vector<Matrix> cross;     // per test point, already divided by n
  Matrix initial_test_outputs;   // n_te x d, f̂(x_te; θ(0))
  double lambda0 = 0.0;          // λ_min(Θ^(μ)/n)
  Matrix theta_mu_test;          // Θ^(μ) on [X; X_te], unscaled, for ε_Θ reporting
};

/// Kernels and initial outputs are computed on [X; X_te] with one stream so
/// training and test points share noise draws. `params` supplies the initial
/// weights through its snapshot.
LinearizedKrr fit_linearized(const SnnParams& params, const SnnConfig& cfg, const Matrix& train_x,
                             const Matrix& train_targets, const Matrix& test_x, double beta,
                             KrrKernelSource source, const RngStream& stream,
                             std::int64_t s_w = 1 << 16, int s_zeta = 4);

/// n_te x d predictions at flow time t (infinity gives the ridge solution).
Matrix predict_linearized(const LinearizedKrr& k,
                          double t = std::numeric_limits<double>::infinity());

struct GapReport {
  std::vector<double> gap;             // ‖f̂_T(x_te) - f̂(x_te; 0) - ridge(x_te)‖
  std::vector<double> uncentered_gap;  // ‖f̂_T(x_te) - K(x_te, X)(K + βI)^{-1} X‖
  std::vector<double> pred_norm;
  std::vector<double> eps_init;  // ‖f̂(x_te; θ(0))‖
  double mean_gap = 0.0;
  double mean_uncentered_gap = 0.0;
};

/// Compares the trained network with the ridge predictor at the test points.
/// Rejects when the ridge differs from the training β.
GapReport net_vs_krr_gap(const SnnParams& trained, const SnnConfig& cfg, const LinearizedKrr& k,
                         const Matrix& test_x, double training_beta, const RngStream& stream);

}  // namespace snntk
