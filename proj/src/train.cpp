#include "snntk/train.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace snntk {

ObjectiveKind parse_objective_kind(std::string_view name) {
  if (name == "mse") return ObjectiveKind::kMse;
  if (name == "mse-plus-kl-surrogate") return ObjectiveKind::kMsePlusKlSurrogate;
  if (name == "mse-plus-exact-kl") return ObjectiveKind::kMsePlusExactKl;
  throw std::invalid_argument("unknown objective kind '" + std::string(name) + "'");
}

std::string_view objective_kind_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kMse:
      return "mse";
    case ObjectiveKind::kMsePlusKlSurrogate:
      return "mse-plus-kl-surrogate";
    case ObjectiveKind::kMsePlusExactKl:
      return "mse-plus-exact-kl";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(eta >= 0.0)) throw std::invalid_argument("TrainConfig: eta must be >= 0");
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (record_every < 1) throw std::invalid_argument("TrainConfig: record_every must be >= 1");
  if (kernel_snapshot_every < 0) {
    throw std::invalid_argument("TrainConfig: kernel_snapshot_every must be >= 0");
  }
  if (freeze[0] && freeze[1] && freeze[2]) {
    throw std::invalid_argument("TrainConfig: at least one weight group must be trainable");
  }
}

double loss_mse_from_outputs(const Matrix& outputs, const Matrix& targets) {
  return (outputs - targets).squaredNorm() / (2.0 * double(targets.rows()));
}

double loss_mse(const SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                const RngStream& stream) {
  return loss_mse_from_outputs(batch_outputs(params, cfg, data.encoded, stream), data.targets);
}

double kl_surrogate(const SnnParams& params, double beta) {
  return 0.5 * beta * (params.weights.mu - params.initial().mu).squaredNorm();
}

namespace {

// Per-unit variance Σ_k s_rk² x_k² of the latent noise for one input.
Vector latent_variance(const Matrix& sigma_weights, const Vector& x) {
  return sigma_weights.cwiseAbs2() * x.cwiseAbs2();
}

}  // namespace

double exact_gaussian_kl(const SnnParams& params, const Dataset& data) {
  const Matrix& x = data.encoded;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    const Vector v1 = latent_variance(params.weights.sigma, xi);
    const Vector v0 = latent_variance(params.initial().sigma, xi);
    const Vector delta = (params.weights.mu - params.initial().mu) * xi;
    for (Eigen::Index r = 0; r < v0.size(); ++r) {
      if (!(v0(r) > 0.0)) {
        std::ostringstream os;
        os << "exact_gaussian_kl: prior variance of unit " << r << " is zero for sample " << i
           << " (KL undefined)";
        throw NumericError(os.str());
      }
      total += 0.5 * (std::log(v0(r) / v1(r)) + (v1(r) + delta(r) * delta(r)) / v0(r) - 1.0);
    }
  }
  return total;
}

double regularizer(const SnnParams& params, const Dataset& data, const ObjectiveSpec& objective) {
  if (objective.beta == 0.0) return 0.0;
  switch (objective.kind) {
    case ObjectiveKind::kMse:
      return 0.0;
    case ObjectiveKind::kMsePlusKlSurrogate:
      return kl_surrogate(params, objective.beta);
    case ObjectiveKind::kMsePlusExactKl:
      return objective.beta * exact_gaussian_kl(params, data) / double(data.size());
  }
  return 0.0;
}

double loss_total(const SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                  const ObjectiveSpec& objective, const RngStream& stream) {
  return loss_mse(params, cfg, data, stream) + regularizer(params, data, objective);
}

GradParams mse_gradient_from_moments(const SnnParams& params, const Matrix& inputs,
                                     const std::vector<UnitMoments>& moments,
                                     const Matrix& residuals) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index m = params.width();
  const Eigen::Index d = params.dim();
  const double scale = 1.0 / (double(n) * std::sqrt(double(m)));
  const Matrix& wd = params.weights.dec;

  GradParams g{Matrix::Zero(m, d), Matrix::Zero(m, d), Matrix::Zero(m, d)};
  Matrix slope_weighted(n, m);
  Matrix values(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const UnitMoments& mom = moments[static_cast<std::size_t>(i)];
    // c_r = Σ_k w^d_{r,k} residual_{i,k}
    const Vector c = wd * residuals.row(i).transpose();
    slope_weighted.row(i) = c.cwiseProduct(mom.slope).transpose();
    values.row(i) = mom.value.transpose();
    g.sigma.noalias() += c.asDiagonal() * mom.noise_slope;
  }
  g.mu.noalias() = slope_weighted.transpose() * inputs;
  g.dec.noalias() = values.transpose() * residuals;
  g.mu *= scale;
  g.sigma *= scale;
  g.dec *= scale;
  return g;
}

namespace {

void add_regularizer_gradient(GradParams& g, const SnnParams& params, const Dataset& data,
                              const ObjectiveSpec& objective) {
  if (objective.beta == 0.0) return;
  if (objective.kind == ObjectiveKind::kMsePlusKlSurrogate) {
    g.mu += objective.beta * (params.weights.mu - params.initial().mu);
  } else if (objective.kind == ObjectiveKind::kMsePlusExactKl) {
    const double scale = objective.beta / double(data.size());
    const Matrix& s = params.weights.sigma;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const Vector xi = data.encoded.row(i).transpose();
      const Vector x2 = xi.cwiseAbs2();
      const Vector v1 = latent_variance(s, xi);
      const Vector v0 = latent_variance(params.initial().sigma, xi);
      const Vector delta = (params.weights.mu - params.initial().mu) * xi;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        if (!(v0(r) > 0.0)) throw NumericError("exact KL gradient: zero prior variance");
        g.mu.row(r) += scale * (delta(r) / v0(r)) * xi.transpose();
        const double c = 1.0 / v0(r) - 1.0 / v1(r);
        g.sigma.row(r) += scale * c * s.row(r).cwiseProduct(x2.transpose());
      }
    }
  }
}

}  // namespace

GradParams loss_gradient(const SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                         const ObjectiveSpec& objective, const RngStream& stream) {
  const auto moments = batch_moments(params, cfg, data.encoded, stream);
  const Matrix residuals = outputs_from_moments(params, moments) - data.targets;
  GradParams g = mse_gradient_from_moments(params, data.encoded, moments, residuals);
  add_regularizer_gradient(g, params, data, objective);
  return g;
}

DriftPoint weight_drift(const SnnParams& params) {
  DriftPoint p;
  for (Group g : kAllGroups) {
    const auto idx = static_cast<std::size_t>(g);
    const Matrix diff = params.weights[g] - params.initial()[g];
    p.frobenius[idx] = diff.norm();
    const double base = params.initial()[g].norm();
    p.relative[idx] = base > 0.0 ? p.frobenius[idx] / base : p.frobenius[idx];
    p.row_max[idx] = diff.rows() > 0 ? diff.rowwise().norm().maxCoeff() : 0.0;
  }
  return p;
}

TrainRecord train(SnnParams& params, const SnnConfig& cfg, const Dataset& data,
                  const ObjectiveSpec& objective, const TrainConfig& tcfg,
                  const RngStream& stream) {
  tcfg.validate();
  cfg.validate();
  TrainRecord rec;
  const std::array<bool, 3> trained{!tcfg.freeze[0], !tcfg.freeze[1], !tcfg.freeze[2]};

  for (int step = 0; step <= tcfg.steps; ++step) {
    const RngStream step_stream = stream.child(tcfg.fixed_draws ? 0u : static_cast<std::uint64_t>(step));
    const auto moments = batch_moments(params, cfg, data.encoded, step_stream);
    const Matrix residuals = outputs_from_moments(params, moments) - data.targets;
    const double l_mse = residuals.squaredNorm() / (2.0 * double(data.size()));
    double l_total = std::numeric_limits<double>::quiet_NaN();
    try {
      l_total = l_mse + regularizer(params, data, objective);
    } catch (const NumericError& e) {
      rec.message = e.what();
    }
    if (!std::isfinite(l_mse) || !std::isfinite(l_total)) {
      rec.diverged = true;
      std::ostringstream os;
      os << "non-finite loss at step " << step << " (eta " << tcfg.eta << " too large?)";
      if (!rec.message.empty()) os << ": " << rec.message;
      rec.message = os.str();
      break;
    }
    if (step % tcfg.record_every == 0 || step == tcfg.steps) {
      rec.steps.push_back(step);
      rec.times.push_back(step * tcfg.eta);
      rec.loss_mse.push_back(l_mse);
      rec.loss_total.push_back(l_total);
      rec.drift.push_back(weight_drift(params));
    }
    const bool snapshot =
        step == 0 || (tcfg.kernel_snapshot_every > 0 && step % tcfg.kernel_snapshot_every == 0);
    if (snapshot) {
      KernelBlocks kernel = empirical_ntk_from_moments(params, data.encoded, moments);
      if (step == 0) rec.lambda0_init = least_eigenvalue(assemble_groups(kernel, trained));
      rec.kernel_snapshots.push_back({step, std::move(kernel)});
    }
    if (step == tcfg.steps) break;

    GradParams g = mse_gradient_from_moments(params, data.encoded, moments, residuals);
    add_regularizer_gradient(g, params, data, objective);
    for (Group grp : kAllGroups) {
      if (trained[static_cast<std::size_t>(grp)]) params.weights[grp] -= tcfg.eta * g[grp];
    }
  }
  return rec;
}

BoundReport convergence_bound_report(const TrainRecord& record, Eigen::Index n, double slack,
                                     std::optional<double> lambda0) {
  BoundReport rep;
  if (record.loss_mse.empty()) return rep;
  const double lam = lambda0.value_or(record.lambda0_init);
  const double l0 = record.loss_mse.front();
  for (std::size_t i = 0; i < record.loss_mse.size(); ++i) {
    const double bound = std::exp(-(lam / double(n)) * record.times[i]) * l0;
    const double excess = bound > 0.0 ? record.loss_mse[i] / bound : 0.0;
    rep.max_excess = std::max(rep.max_excess, excess);
    ++rep.checked;
    if (record.loss_mse[i] > slack * bound) ++rep.violations;
  }
  return rep;
}

LossRateCheck loss_rate_identity_check(const SnnParams& params, const SnnConfig& cfg,
                                       const Dataset& data, const RngStream& stream,
                                       double step) {
  const Eigen::Index n = data.size();
  const auto moments = batch_moments(params, cfg, data.encoded, stream);
  const Matrix residuals = outputs_from_moments(params, moments) - data.targets;
  const GradParams g = mse_gradient_from_moments(params, data.encoded, moments, residuals);
  const Matrix theta = assemble_total(empirical_ntk_from_moments(params, data.encoded, moments));
  const Eigen::Map<const Vector> r(residuals.data(), residuals.size());

  LossRateCheck out;
  out.predicted = -r.dot(theta * r) / double(n * n);

  auto moved = [&](double sign) {
    WeightSet w = params.weights;
    for (Group grp : kAllGroups) w[grp] += sign * step * g[grp];
    return SnnParams(std::move(w), params.initial());
  };
  const double l_back = loss_mse(moved(-1.0), cfg, data, stream);
  const double l_fwd = loss_mse(moved(+1.0), cfg, data, stream);
  out.measured = (l_back - l_fwd) / (2.0 * step);
  const double scale = std::max(std::abs(out.predicted), std::abs(out.measured));
  out.relative_error = scale > 0.0 ? std::abs(out.measured - out.predicted) / scale : 0.0;
  return out;
}

DriftTable weight_drift_report(const std::vector<std::pair<Eigen::Index, TrainRecord>>& runs) {
  DriftTable table;
  for (const auto& [m, rec] : runs) {
    DriftRow row;
    row.m = m;
    if (!rec.drift.empty()) row.relative = rec.drift.back().relative;
    table.rows.push_back(row);
  }
  if (table.rows.size() < 3) return table;
  for (Group g : kAllGroups) {
    const auto idx = static_cast<std::size_t>(g);
    std::vector<double> xs, ys;
    bool positive = true;
    for (const DriftRow& row : table.rows) {
      xs.push_back(double(row.m));
      ys.push_back(row.relative[idx]);
      positive = positive && row.relative[idx] > 0.0;
    }
    if (positive) table.slopes[idx] = loglog_slope(xs, ys);
  }
  return table;
}

}  // namespace snntk
