#pragma once

#include "snntk/activation.hpp"
#include "snntk/numerics.hpp"
#include "snntk/rng.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace snntk {

/// Network shape and Monte Carlo settings.
///
/// The expected output is estimated from `mc_samples` base draws of the m x d
/// noise matrix. With `antithetic` set each base draw is also used with its
/// sign flipped, so 2*mc_samples forward evaluations are averaged and every
/// term odd in the noise cancels exactly.
struct SnnConfig {
  Eigen::Index d = 1;
  Eigen::Index m = 1;
  double sigma0 = 0.0;
  Activation activation{ActivationKind::kTanh};
  Activation decoder{ActivationKind::kIdentity};
  int mc_samples = 1;
  bool antithetic = true;

  void validate() const;
  int evaluations() const { return antithetic ? 2 * mc_samples : mc_samples; }
};

enum class Group { kMu = 0, kSigma = 1, kDecoder = 2 };
inline constexpr std::array<Group, 3> kAllGroups{Group::kMu, Group::kSigma, Group::kDecoder};
const char* group_name(Group g);

struct WeightSet {
  Matrix mu;     // m x d
  Matrix sigma;  // m x d
  Matrix dec;    // m x d

  Matrix& operator[](Group g);
  const Matrix& operator[](Group g) const;
};

/// Trainable weights plus the immutable snapshot taken at creation, which the
/// KL terms and the drift diagnostics are measured against.
class SnnParams {
 public:
  SnnParams() = default;
  SnnParams(WeightSet current, WeightSet initial, RngStream provenance = {});

  /// Fresh parameters whose snapshot equals the current weights.
  static SnnParams from_weights(WeightSet weights, RngStream provenance = {});

  WeightSet weights;
  const WeightSet& initial() const { return initial_; }
  const RngStream& provenance() const { return provenance_; }

  Eigen::Index width() const { return weights.mu.rows(); }
  Eigen::Index dim() const { return weights.mu.cols(); }

 private:
  WeightSet initial_;
  RngStream provenance_;
};

/// Gradient with respect to each weight group, shaped like the weights.
using GradParams = WeightSet;

/// w_mu, w_d ~ N(0, 1) entrywise, w_sigma = sigma0.
SnnParams init_params(const SnnConfig& cfg, const RngStream& stream);

/// z = W_mu x + (W_sigma ⊙ zeta) x.
Vector reparam_latent(const SnnParams& params, const Vector& x, const Matrix& zeta);

/// f = (1/sqrt(m)) W_d^T psi(sigma(z)).
Vector forward_sample(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                      const Matrix& zeta);

/// The noise matrix of base draw `draw` for a stream (one per input sample).
Matrix zeta_draw(const SnnConfig& cfg, const RngStream& sample_stream, int draw);

/// Monte Carlo moments of one input's latent units, from which the expected
/// output, its Jacobians and the tangent kernels all follow:
///   value(r) = E[psi(sigma(z_r))]
///   slope(r) = E[(psi∘sigma)'(z_r)]
///   noise_slope(r, :) = E[(psi∘sigma)'(z_r) zeta_r] ⊙ x
struct UnitMoments {
  Vector value;
  Vector slope;
  Matrix noise_slope;
};

UnitMoments unit_moments(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                         const RngStream& sample_stream);

/// Moments for every row of `inputs`; row i uses stream.child(i).
std::vector<UnitMoments> batch_moments(const SnnParams& params, const SnnConfig& cfg,
                                       const Matrix& inputs, const RngStream& stream);

/// f̂(x) = E_zeta[f(x, zeta)] by Monte Carlo.
Vector expected_output(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                       const RngStream& sample_stream);

/// Row i = f̂(inputs.row(i)) with the per-sample streams of batch_moments.
Matrix outputs_from_moments(const SnnParams& params, const std::vector<UnitMoments>& moments);
Matrix batch_outputs(const SnnParams& params, const SnnConfig& cfg, const Matrix& inputs,
                     const RngStream& stream);

/// Jacobian of f̂ for one input: entry k of each group is ∂f̂_k/∂W (m x d).
struct OutputJacobian {
  std::vector<Matrix> mu;
  std::vector<Matrix> sigma;
  std::vector<Matrix> dec;
};

OutputJacobian jacobian_from_moments(const SnnParams& params, const Vector& x,
                                     const UnitMoments& moments);
OutputJacobian output_gradients(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                                const RngStream& sample_stream);

/// Binary checkpoint; layout documented in README.md.
void write_checkpoint(std::ostream& os, const SnnParams& params);
SnnParams read_checkpoint(std::istream& is);

}  // namespace snntk
