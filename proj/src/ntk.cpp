#include "snntk/ntk.hpp"

#include "snntk/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace snntk {

const Matrix& KernelBlocks::operator[](Group g) const {
  return g == Group::kMu ? theta_mu : g == Group::kSigma ? theta_sigma : theta_d;
}

Matrix& KernelBlocks::operator[](Group g) {
  return g == Group::kMu ? theta_mu : g == Group::kSigma ? theta_sigma : theta_d;
}

namespace {

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

KernelBlocks empirical_ntk_from_moments(const SnnParams& params, const Matrix& inputs,
                                        const std::vector<UnitMoments>& moments) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d = params.dim();
  const Eigen::Index m = params.width();
  if (static_cast<Eigen::Index>(moments.size()) != n || inputs.cols() != d) {
    throw NumericError("empirical_ntk: inputs and moments disagree in shape");
  }
  const double scale = 1.0 / std::sqrt(double(m));
  const Matrix& wd = params.weights.dec;

  // Rows (i, k) of the per-group feature maps; Θ^(s) = F F^T up to the
  // input Gram factor for the μ group.
  Matrix slope_features(n * d, m);
  Matrix noise_features(n * d, m * d);
  Matrix value_features(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const UnitMoments& mom = moments[static_cast<std::size_t>(i)];
    value_features.row(i) = mom.value.transpose() * scale;
    for (Eigen::Index k = 0; k < d; ++k) {
      slope_features.row(i * d + k) = wd.col(k).cwiseProduct(mom.slope).transpose() * scale;
      double* row = noise_features.row(i * d + k).data();
      for (Eigen::Index r = 0; r < m; ++r) {
        const double c = wd(r, k) * scale;
        for (Eigen::Index l = 0; l < d; ++l) row[r * d + l] = c * mom.noise_slope(r, l);
      }
    }
  }

  KernelBlocks out;
  out.mode = KernelMode::kFull;
  const Matrix gram = inputs * inputs.transpose();
  Matrix mu = slope_features * slope_features.transpose();
  for (Eigen::Index a = 0; a < n * d; ++a) {
    for (Eigen::Index b = 0; b < n * d; ++b) mu(a, b) *= gram(a / d, b / d);
  }
  out.theta_mu = symmetrized(mu);
  out.theta_sigma = symmetrized(noise_features * noise_features.transpose());
  out.theta_d = kron_identity(symmetrized(value_features * value_features.transpose()), d);
  std::ostringstream os;
  os << "empirical(m=" << m << ")";
  out.provenance = os.str();
  return out;
}

KernelBlocks empirical_ntk(const SnnParams& params, const SnnConfig& cfg, const Matrix& inputs,
                           const RngStream& stream) {
  return empirical_ntk_from_moments(params, inputs, batch_moments(params, cfg, inputs, stream));
}

Matrix assemble_total(const KernelBlocks& blocks) {
  return assemble_groups(blocks, {true, true, true});
}

Matrix assemble_groups(const KernelBlocks& blocks, const std::array<bool, 3>& include) {
  const Matrix& ref = blocks.theta_mu;
  for (Group g : kAllGroups) {
    if (blocks[g].rows() != ref.rows() || blocks[g].cols() != ref.cols()) {
      throw NumericError("assemble_total: kernel blocks differ in shape");
    }
  }
  Matrix total = Matrix::Zero(ref.rows(), ref.cols());
  for (Group g : kAllGroups) {
    if (include[static_cast<std::size_t>(g)]) total += blocks[g];
  }
  return total;
}

KernelBlocks limiting_ntk_mc(const SnnConfig& cfg, const Matrix& inputs, std::int64_t s_w,
                             int s_zeta, const RngStream& stream) {
  if (s_w < 1 || s_zeta < 1) throw NumericError("limiting_ntk_mc: S_w and S_zeta must be >= 1");
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d = inputs.cols();
  const Matrix gram = inputs * inputs.transpose();
  const int evals = cfg.antithetic ? 2 * s_zeta : s_zeta;

  constexpr std::int64_t kChunk = 512;
  const auto chunks = static_cast<std::size_t>((s_w + kChunk - 1) / kChunk);
  struct Partial {
    Matrix mu, sigma, dec;
  };
  std::vector<Partial> partials(chunks);

  parallel_for(chunks, [&](std::size_t c) {
    Partial acc{Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
    const std::size_t normals = static_cast<std::size_t>(d + 2 * s_zeta * d);
    std::vector<double> draw(normals);
    // [half][i] inner bracket estimates.
    Matrix slope(2, n), value(2, n);
    std::array<Matrix, 2> noise{Matrix(n, d), Matrix(n, d)};
    Vector wx(n);
    const std::int64_t begin = static_cast<std::int64_t>(c) * kChunk;
    const std::int64_t end = std::min(s_w, begin + kChunk);
    for (std::int64_t j = begin; j < end; ++j) {
      stream.child(static_cast<std::uint64_t>(j)).fill_normals(draw);
      const Eigen::Map<const Vector> w(draw.data(), d);
      wx = inputs * w;
      slope.setZero();
      value.setZero();
      noise[0].setZero();
      noise[1].setZero();
      for (int half = 0; half < 2; ++half) {
        for (int s = 0; s < s_zeta; ++s) {
          const Eigen::Map<const Vector> zeta(draw.data() + d + (half * s_zeta + s) * d, d);
          for (Eigen::Index i = 0; i < n; ++i) {
            const double shift = cfg.sigma0 * inputs.row(i).dot(zeta);
            const int signs = cfg.antithetic ? 2 : 1;
            for (int sgn = 0; sgn < signs; ++sgn) {
              const double u = sgn == 0 ? wx(i) + shift : wx(i) - shift;
              const double act = cfg.activation.value(u);
              const double v = cfg.decoder.value(act);
              const double g = cfg.decoder.derivative(act) * cfg.activation.derivative(u);
              value(half, i) += v;
              slope(half, i) += g;
              const double gz = sgn == 0 ? g : -g;
              for (Eigen::Index k = 0; k < d; ++k) noise[half](i, k) += gz * zeta(k) * inputs(i, k);
            }
          }
        }
      }
      slope /= evals;
      value /= evals;
      noise[0] /= evals;
      noise[1] /= evals;
      acc.mu.noalias() += 0.5 * (slope.row(0).transpose() * slope.row(1) +
                                 slope.row(1).transpose() * slope.row(0));
      acc.dec.noalias() += 0.5 * (value.row(0).transpose() * value.row(1) +
                                  value.row(1).transpose() * value.row(0));
      acc.sigma.noalias() += 0.5 * (noise[0] * noise[1].transpose() +
                                    noise[1] * noise[0].transpose());
    }
    partials[c] = std::move(acc);
  });

  KernelBlocks out;
  out.mode = KernelMode::kKronFactor;
  out.theta_mu = Matrix::Zero(n, n);
  out.theta_sigma = Matrix::Zero(n, n);
  out.theta_d = Matrix::Zero(n, n);
  for (const Partial& p : partials) {
    out.theta_mu += p.mu;
    out.theta_sigma += p.sigma;
    out.theta_d += p.dec;
  }
  const double inv = 1.0 / static_cast<double>(s_w);
  out.theta_mu = symmetrized(out.theta_mu.cwiseProduct(gram) * inv);
  out.theta_sigma = symmetrized(out.theta_sigma * inv);
  out.theta_d = symmetrized(out.theta_d * inv);
  std::ostringstream os;
  os << "limiting-mc(S_w=" << s_w << ",S_zeta=" << s_zeta << ")";
  out.provenance = os.str();
  return out;
}

KernelBlocks limiting_ntk_linear(const SnnConfig& cfg, const Matrix& inputs) {
  if (!cfg.activation.is_identity() || !cfg.decoder.is_identity()) {
    throw NumericError("limiting_ntk_linear: requires identity activation and decoder");
  }
  const Matrix gram = symmetrized(inputs * inputs.transpose());
  KernelBlocks out;
  out.mode = KernelMode::kKronFactor;
  out.theta_mu = gram;
  out.theta_sigma = Matrix::Zero(gram.rows(), gram.cols());
  out.theta_d = gram;
  out.provenance = "closed-form-linear";
  return out;
}

Matrix kron_identity(const Matrix& factor, Eigen::Index d) {
  const Eigen::Index n = factor.rows();
  Matrix full = Matrix::Zero(n * d, factor.cols() * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < factor.cols(); ++j) {
      for (Eigen::Index k = 0; k < d; ++k) full(i * d + k, j * d + k) = factor(i, j);
    }
  }
  return full;
}

KernelBlocks expand_to_full(const KernelBlocks& kron, Eigen::Index d) {
  if (kron.mode != KernelMode::kKronFactor) throw NumericError("expand_to_full: not a factor");
  KernelBlocks out;
  out.mode = KernelMode::kFull;
  for (Group g : kAllGroups) out[g] = kron_identity(kron[g], d);
  out.provenance = kron.provenance;
  return out;
}

KronReport kron_structure_report(const Matrix& full, Eigen::Index n, Eigen::Index d) {
  if (full.rows() != n * d || full.cols() != n * d) {
    std::ostringstream os;
    os << "kron_structure_report: expected " << n * d << "x" << n * d << ", got " << full.rows()
       << "x" << full.cols();
    throw NumericError(os.str());
  }
  KronReport rep;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (Eigen::Index k = 0; k < d; ++k) {
        for (Eigen::Index kp = 0; kp < d; ++kp) {
          const double v = full(i * d + k, j * d + kp);
          if (k == kp) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          } else {
            rep.max_off_block = std::max(rep.max_off_block, std::abs(v));
          }
        }
      }
      rep.max_diag_spread = std::max(rep.max_diag_spread, hi - lo);
    }
  }
  return rep;
}

KernelDistance kernel_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << "kernel_distance: shapes " << a.rows() << "x" << a.cols() << " and " << b.rows() << "x"
       << b.cols() << " differ";
    throw NumericError(os.str());
  }
  const Matrix diff = a - b;
  return {diff.norm(), spectral_norm_sym(symmetrized(diff))};
}

KernelDistance kernel_distance(const KernelBlocks& a, const KernelBlocks& b) {
  if (a.mode != b.mode) throw NumericError("kernel_distance: kernel modes differ");
  return kernel_distance(assemble_total(a), assemble_total(b));
}

KernelHealth kernel_health(const Matrix& kernel) {
  KernelHealth h;
  h.symmetry_defect = symmetry_defect(kernel);
  h.frobenius = kernel.norm();
  const SymEig eig = sym_eig(symmetrized(kernel));
  if (eig.eigenvalues.size() > 0) {
    h.lambda_min = eig.eigenvalues(0);
    h.spectral_norm = std::max(std::abs(eig.eigenvalues(0)),
                               std::abs(eig.eigenvalues(eig.eigenvalues.size() - 1)));
  }
  h.psd_margin = h.spectral_norm > 0 ? h.lambda_min / h.spectral_norm : 0.0;
  h.psd_ok = h.lambda_min >= -1e-8 * h.spectral_norm;
  h.symmetric_ok = h.symmetry_defect <= 1e-8;
  return h;
}

double kernel_lambda0(const KernelBlocks& blocks) { return least_eigenvalue(assemble_total(blocks)); }

}  // namespace snntk
