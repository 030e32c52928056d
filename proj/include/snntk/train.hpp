#pragma once

#include "snntk/dataset.hpp"
#include "snntk/ntk.hpp"
#include "snntk/snn.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace snntk {

enum class ObjectiveKind { kMse, kMsePlusKlSurrogate, kMsePlusExactKl };

/// With beta = 0 every kind reduces to plain MSE.
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kMse;
  double beta = 0.0;
};

ObjectiveKind parse_objective_kind(std::string_view name);
std::string_view objective_kind_name(ObjectiveKind kind);

struct TrainConfig {
  double eta = 0.05;
  int steps = 100;
  /// Frozen flag per group, indexed by Group.
  std::array<bool, 3> freeze{false, false, false};
  int record_every = 1;
  int kernel_snapshot_every = 0;  // 0 disables snapshots after step 0
  /// Reuse the step-0 noise draws at every step instead of resampling.
  bool fixed_draws = false;

  void validate() const;
};

struct DriftPoint {
  std::array<double, 3> frobenius{};  // ‖W(t) - W(0)‖_F
  std::array<double, 3> relative{};   // ‖W(t) - W(0)‖_F / ‖W(0)‖_F (absolute when ‖W(0)‖_F = 0)
  std::array<double, 3> row_max{};    // max_r ‖w_r(t) - w_r(0)‖_2
};

struct KernelSnapshot {
  int step = 0;
  KernelBlocks kernel;
};

struct TrainRecord {
  std::vector<int> steps;
  std::vector<double> times;  // flow time step * eta
  std::vector<double> loss_mse;
  std::vector<double> loss_total;
  std::vector<DriftPoint> drift;
  std::vector<KernelSnapshot> kernel_snapshots;
  /// Least eigenvalue of the empirical kernel at step 0, summed over the
  /// trained groups.
  double lambda0_init = 0.0;
  bool diverged = false;
  std::string message;
};

/// L = (1/2n) Σ_i ‖f̂(x_i) - target_i‖².
double loss_mse(const SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                const RngStream& stream);
double loss_mse_from_outputs(const Matrix& outputs, const Matrix& targets);

/// (β/2) ‖W_μ - W_μ(0)‖²_F.
double kl_surrogate(const SnnParams& params, double beta);

/// Σ_i KL(N(μ_i(t), v_i(t)) ‖ N(μ_i(0), v_i(0))) for the per-unit Gaussians
/// z_i,r with mean (W_μ x_i)_r and variance Σ_k (W_σ)_{rk}² x_{ik}².
/// Throws when a prior variance is zero.
double exact_gaussian_kl(const SnnParams& params, const Dataset& data);

/// Regularizer value for the objective (without the MSE part).
double regularizer(const SnnParams& params, const Dataset& data, const ObjectiveSpec& objective);

/// Full objective: MSE plus the regularizer selected by `objective`.
double loss_total(const SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                  const ObjectiveSpec& objective, const RngStream& stream);

/// g^(s) = (1/n) Σ_i J^(s)(x_i)^T (f̂(x_i) - target_i) plus the regularizer
/// gradient; uses the same noise draws as loss_mse with the same stream.
GradParams loss_gradient(const SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                         const ObjectiveSpec& objective, const RngStream& stream);

/// MSE gradient contracted from precomputed moments.
GradParams mse_gradient_from_moments(const SnnParams& params, const Matrix& inputs,
                                     const std::vector<UnitMoments>& moments,
                                     const Matrix& residuals);

/// Full-batch gradient descent. Step k draws its noise from stream.child(k);
/// frozen groups are never written.
TrainRecord train(SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                  const ObjectiveSpec& objective, const TrainConfig& tcfg,
                  const RngStream& stream);

DriftPoint weight_drift(const SnnParams& params);

struct BoundReport {
  int violations = 0;
  int checked = 0;
  /// max over records of L(t) / (exp(-(λ₀/n) t) L(0)).
  double max_excess = 0.0;
};

/// Counts records where L(t) > slack * exp(-(λ₀/n) t) * L(0).
BoundReport convergence_bound_report(const TrainRecord& record, Eigen::Index n,
                                     double slack = 1.0,
                                     std::optional<double> lambda0 = std::nullopt);

struct LossRateCheck {
  double measured = 0.0;   // central-difference dL/dt along the flow
  double predicted = 0.0;  // -(1/n²) r^T Θ r
  double relative_error = 0.0;
};

/// Compares the loss decrease rate along -∇L with the kernel quadratic form,
/// all evaluations on common noise draws. MSE objective only.
LossRateCheck loss_rate_identity_check(const SnnParams& params, const SnnConfig& cfg,
                                       const Dataset& data, const RngStream& stream,
                                       double step = 1e-4);

struct DriftRow {
  Eigen::Index m = 0;
  std::array<double, 3> relative{};
};

struct DriftTable {
  std::vector<DriftRow> rows;
  /// Log-log slope of relative drift vs m per group; absent with < 3 widths.
  std::array<std::optional<double>, 3> slopes;
};

/// Relative Frobenius drift at the final record of each run.
DriftTable weight_drift_report(const std::vector<std::pair<Eigen::Index, TrainRecord>>& runs);

}  // namespace snntk
