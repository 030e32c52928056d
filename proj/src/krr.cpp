#include "snntk/krr.hpp"

#include <cmath>
#include <sstream>

namespace snntk {

KrrPredictor fit(const Matrix& kernel, double beta, const Matrix& targets,
                 std::string provenance) {
  if (!(beta >= 0.0)) throw NumericError("krr fit: beta must be >= 0");
  if (kernel.rows() != targets.rows()) {
    std::ostringstream os;
    os << "krr fit: kernel is " << kernel.rows() << "x" << kernel.cols() << " but targets have "
       << targets.rows() << " rows";
    throw NumericError(os.str());
  }
  KrrPredictor p;
  p.factorization = sym_eig(kernel);
  const double lambda_min = p.factorization.eigenvalues.size() > 0 ? p.factorization.eigenvalues(0) : 0.0;
  const double top = p.factorization.eigenvalues.size() > 0
                         ? p.factorization.eigenvalues.cwiseAbs().maxCoeff()
                         : 0.0;
  if (!(lambda_min + beta > 1e-13 * std::max(1.0, top))) {
    std::ostringstream os;
    os << "krr fit: kernel + beta*I is singular (lambda_min " << lambda_min << ", beta " << beta
       << ")";
    throw NumericError(os.str());
  }
  p.train_kernel = 0.5 * (kernel + kernel.transpose());
  p.beta = beta;
  p.targets = targets;
  p.provenance = std::move(provenance);
  const Matrix& v = p.factorization.eigenvectors;
  const Vector inv = (p.factorization.eigenvalues.array() + beta).inverse();
  p.dual = v * inv.asDiagonal() * (v.transpose() * targets);

  Matrix shifted = p.train_kernel;
  shifted.diagonal().array() += beta;
  const double residual = (shifted * p.dual - targets).norm();
  if (residual > 1e-8 * std::max(targets.norm(), 1e-300) && targets.norm() > 0) {
    std::ostringstream os;
    os << "krr fit: solve residual " << residual << " exceeds 1e-8 relative";
    throw NumericError(os.str());
  }
  return p;
}

KrrPredictor fit(const KernelBlocks& kernel, double beta, const Matrix& targets) {
  return fit(kernel.theta_mu, beta, targets, kernel.provenance);
}

namespace {

void require_cross(const KrrPredictor& p, const Matrix& cross) {
  if (cross.cols() != p.train_kernel.rows()) {
    std::ostringstream os;
    os << "krr predict: cross kernel has " << cross.cols() << " columns, expected "
       << p.train_kernel.rows();
    throw NumericError(os.str());
  }
}

}  // namespace

Matrix predict(const KrrPredictor& p, const Matrix& cross_kernel) {
  require_cross(p, cross_kernel);
  return cross_kernel * p.dual;
}

Matrix predict_time_t(const KrrPredictor& p, const Matrix& cross_kernel, double t) {
  require_cross(p, cross_kernel);
  if (!(t >= 0.0)) throw NumericError("predict_time_t: t must be >= 0");
  if (std::isinf(t)) return predict(p, cross_kernel);
  const Matrix& v = p.factorization.eigenvectors;
  Vector filter(p.factorization.eigenvalues.size());
  for (Eigen::Index i = 0; i < filter.size(); ++i) {
    const double lam = p.factorization.eigenvalues(i) + p.beta;
    // (1 - e^{-λt}) / λ, written with expm1 to stay accurate for small λt.
    filter(i) = -std::expm1(-lam * t) / lam;
  }
  return cross_kernel * (v * filter.asDiagonal() * (v.transpose() * p.targets));
}

Vector as_output(const Matrix& prediction) {
  Vector out(prediction.size());
  for (Eigen::Index i = 0; i < prediction.size(); ++i) out(i) = prediction.data()[i];
  return out;
}

double residual_bound(double eps_init, double eps_theta, Eigen::Index n, double lambda0,
                      double beta) {
  if (eps_init < 0 || eps_theta < 0 || lambda0 < 0 || beta < 0 || n < 0) {
    throw NumericError("residual_bound: arguments must be non-negative");
  }
  if (lambda0 + beta == 0.0) throw NumericError("residual_bound: lambda0 + beta is zero");
  return eps_init + eps_theta * std::sqrt(double(n)) / (lambda0 + beta);
}

std::string_view krr_source_name(KrrKernelSource source) {
  return source == KrrKernelSource::kEmpiricalInit ? "empirical-at-init" : "limiting-mc";
}

LinearizedKrr fit_linearized(const SnnParams& params, const SnnConfig& cfg, const Matrix& train_x,
                             const Matrix& train_targets, const Matrix& test_x, double beta,
                             KrrKernelSource source, const RngStream& stream, std::int64_t s_w,
                             int s_zeta) {
  const Eigen::Index n = train_x.rows();
  const Eigen::Index n_te = test_x.rows();
  const Eigen::Index d = train_x.cols();
  Matrix all(n + n_te, d);
  all << train_x, test_x;

  const SnnParams initial(params.initial(), params.initial(), params.provenance());
  const auto moments = batch_moments(initial, cfg, all, stream);
  const Matrix f0 = outputs_from_moments(initial, moments);

  LinearizedKrr k;
  k.source = source;
  k.n = n;
  k.d = d;
  k.initial_test_outputs = f0.bottomRows(n_te);
  const Matrix residual_targets = train_targets - f0.topRows(n);
  const double inv_n = 1.0 / double(n);

  if (source == KrrKernelSource::kEmpiricalInit) {
    k.mode = KernelMode::kFull;
    const KernelBlocks kernel = empirical_ntk_from_moments(initial, all, moments);
    k.theta_mu_test = kernel.theta_mu;
    const Matrix train_kernel = kernel.theta_mu.topLeftCorner(n * d, n * d) * inv_n;
    const Matrix centered_y = Eigen::Map<const Matrix>(residual_targets.data(), n * d, 1);
    const Matrix plain_y = Eigen::Map<const Matrix>(Matrix(train_targets).data(), n * d, 1);
    k.centered = fit(train_kernel, beta, centered_y, kernel.provenance);
    k.uncentered = fit(train_kernel, beta, plain_y, kernel.provenance);
    for (Eigen::Index t = 0; t < n_te; ++t) {
      k.cross.push_back(kernel.theta_mu.block((n + t) * d, 0, d, n * d) * inv_n);
    }
    k.lambda0 = k.centered.factorization.eigenvalues(0);
  } else {
    k.mode = KernelMode::kKronFactor;
    const KernelBlocks kernel = limiting_ntk_mc(cfg, all, s_w, s_zeta, stream.child(0x11a17));
    k.theta_mu_test = kernel.theta_mu;
    const Matrix train_kernel = kernel.theta_mu.topLeftCorner(n, n) * inv_n;
    k.centered = fit(train_kernel, beta, residual_targets, kernel.provenance);
    k.uncentered = fit(train_kernel, beta, train_targets, kernel.provenance);
    for (Eigen::Index t = 0; t < n_te; ++t) {
      k.cross.push_back(kernel.theta_mu.block(n + t, 0, 1, n) * inv_n);
    }
    k.lambda0 = k.centered.factorization.eigenvalues(0);
  }
  return k;
}

Matrix predict_linearized(const LinearizedKrr& k, double t) {
  Matrix out(static_cast<Eigen::Index>(k.cross.size()), k.d);
  for (std::size_t i = 0; i < k.cross.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out.row(row) = as_output(predict_time_t(k.centered, k.cross[i], t)).transpose() +
                   k.initial_test_outputs.row(row);
  }
  return out;
}

GapReport net_vs_krr_gap(const SnnParams& trained, const SnnConfig& cfg, const LinearizedKrr& k,
                         const Matrix& test_x, double training_beta, const RngStream& stream) {
  if (training_beta != k.centered.beta) {
    std::ostringstream os;
    os << "net_vs_krr_gap: predictor ridge " << k.centered.beta << " differs from training beta "
       << training_beta;
    throw NumericError(os.str());
  }
  if (test_x.rows() != static_cast<Eigen::Index>(k.cross.size())) {
    throw NumericError("net_vs_krr_gap: test points do not match the fitted cross kernels");
  }
  // Test row t reuses the stream it had when stacked under the training rows.
  Matrix net(test_x.rows(), k.d);
  for (Eigen::Index t = 0; t < test_x.rows(); ++t) {
    net.row(t) = expected_output(trained, cfg, test_x.row(t).transpose(),
                                 stream.child(static_cast<std::uint64_t>(k.n + t)))
                     .transpose();
  }
  const Matrix pred = predict_linearized(k);
  GapReport rep;
  for (Eigen::Index t = 0; t < test_x.rows(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Vector plain = as_output(predict(k.uncentered, k.cross[i]));
    rep.gap.push_back((net.row(t) - pred.row(t)).norm());
    rep.uncentered_gap.push_back((net.row(t).transpose() - plain).norm());
    rep.pred_norm.push_back(pred.row(t).norm());
    rep.eps_init.push_back(k.initial_test_outputs.row(t).norm());
    rep.mean_gap += rep.gap.back();
    rep.mean_uncentered_gap += rep.uncentered_gap.back();
  }
  if (!rep.gap.empty()) {
    rep.mean_gap /= double(rep.gap.size());
    rep.mean_uncentered_gap /= double(rep.gap.size());
  }
  return rep;
}

}  // namespace snntk
