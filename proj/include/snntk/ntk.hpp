#pragma once

#include "snntk/dataset.hpp"
#include "snntk/numerics.hpp"
#include "snntk/rng.hpp"
#include "snntk/snn.hpp"

#include <string>
#include <vector>

namespace snntk {

enum class KernelMode {
  kFull,        // nd x nd, index (i, k) -> i*d + k
  kKronFactor,  // n x n factor A; the full kernel is A ⊗ I_d
};

/// The three tangent kernel components in one storage mode.
struct KernelBlocks {
  KernelMode mode = KernelMode::kFull;
  Matrix theta_mu;
  Matrix theta_sigma;
  Matrix theta_d;
  std::string provenance;  // e.g. "empirical(m=256)", "limiting-mc(S_w=...)"

  const Matrix& operator[](Group g) const;
  Matrix& operator[](Group g);
};

/// Kernels Θ^(s)_{ik,jk'} = <∇_{W^(s)} f̂_k(x_i), ∇_{W^(s)} f̂_{k'}(x_j)>
/// from the Monte Carlo Jacobians, using row i's stream stream.child(i).
KernelBlocks empirical_ntk(const SnnParams& params, const SnnConfig& cfg, const Matrix& inputs,
                           const RngStream& stream);

/// Same, from moments already computed for `inputs` (e.g. inside training).
KernelBlocks empirical_ntk_from_moments(const SnnParams& params, const Matrix& inputs,
                                        const std::vector<UnitMoments>& moments);

/// Θ = Θ^(μ) + Θ^(σ) + Θ^(d).
Matrix assemble_total(const KernelBlocks& blocks);

/// Sum over the selected groups only.
Matrix assemble_groups(const KernelBlocks& blocks, const std::array<bool, 3>& include);

/// Infinite-width kernel factors by nested Monte Carlo: S_w outer draws of
/// w ~ N(0, I_d), and for each of them two independent inner estimates of the
/// zeta brackets from S_zeta draws each. Products pair the two inner
/// estimates, so the inner noise adds no bias.
KernelBlocks limiting_ntk_mc(const SnnConfig& cfg, const Matrix& inputs, std::int64_t s_w,
                             int s_zeta, const RngStream& stream);

/// Closed form for identity activation and decoder:
/// Θ^(μ)∞ = Θ^(d)∞ = X X^T and Θ^(σ)∞ = 0, independent of sigma0.
KernelBlocks limiting_ntk_linear(const SnnConfig& cfg, const Matrix& inputs);

/// factor ⊗ I_d for each block.
KernelBlocks expand_to_full(const KernelBlocks& kron, Eigen::Index d);
Matrix kron_identity(const Matrix& factor, Eigen::Index d);

struct KronReport {
  double max_off_block = 0.0;    // max |Θ_{ik,jk'}| over k != k'
  double max_diag_spread = 0.0;  // max over (i, j) of max_k Θ_{ik,jk} - min_k Θ_{ik,jk}
};

KronReport kron_structure_report(const Matrix& full, Eigen::Index n, Eigen::Index d);

struct KernelDistance {
  double frobenius = 0.0;
  double operator_norm = 0.0;
};

KernelDistance kernel_distance(const Matrix& a, const Matrix& b);
/// Distance between the assembled totals; modes must agree.
KernelDistance kernel_distance(const KernelBlocks& a, const KernelBlocks& b);

struct KernelHealth {
  double lambda_min = 0.0;
  double spectral_norm = 0.0;
  double frobenius = 0.0;
  double symmetry_defect = 0.0;
  /// lambda_min / spectral_norm; PSD within tolerance iff >= -1e-8.
  double psd_margin = 0.0;
  bool psd_ok = false;
  bool symmetric_ok = false;
};

/// PSD and symmetry diagnostics: λ_min >= -1e-8 ‖Θ‖₂ and relative symmetry
/// defect <= 1e-8.
KernelHealth kernel_health(const Matrix& kernel);

/// λ₀ of a kernel: from the n x n factor in Kronecker mode (λ(A ⊗ I) = λ(A)),
/// else from the full matrix.
double kernel_lambda0(const KernelBlocks& blocks);

}  // namespace snntk
