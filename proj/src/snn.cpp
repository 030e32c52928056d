#include "snntk/snn.hpp"

#include "snntk/parallel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace snntk {

std::string_view Activation::name() const {
  switch (kind) {
    case ActivationKind::kTanh:
      return "tanh";
    case ActivationKind::kIdentity:
      return "identity";
    case ActivationKind::kSoftplus:
      return "softplus";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return {ActivationKind::kTanh};
  if (name == "identity") return {ActivationKind::kIdentity};
  if (name == "softplus") return {ActivationKind::kSoftplus};
  throw std::invalid_argument("unknown activation '" + std::string(name) +
                              "' (expected tanh, identity or softplus)");
}

void SnnConfig::validate() const {
  if (d < 1) throw std::invalid_argument("SnnConfig: d must be >= 1");
  if (m < 1) throw std::invalid_argument("SnnConfig: m must be >= 1");
  if (mc_samples < 1) throw std::invalid_argument("SnnConfig: mc_samples must be >= 1");
  if (!(sigma0 >= 0.0)) throw std::invalid_argument("SnnConfig: sigma0 must be >= 0");
}

const char* group_name(Group g) {
  switch (g) {
    case Group::kMu:
      return "mu";
    case Group::kSigma:
      return "sigma";
    case Group::kDecoder:
      return "d";
  }
  return "?";
}

Matrix& WeightSet::operator[](Group g) {
  return g == Group::kMu ? mu : g == Group::kSigma ? sigma : dec;
}

const Matrix& WeightSet::operator[](Group g) const {
  return g == Group::kMu ? mu : g == Group::kSigma ? sigma : dec;
}

SnnParams::SnnParams(WeightSet current, WeightSet initial, RngStream provenance)
    : weights(std::move(current)), initial_(std::move(initial)), provenance_(provenance) {
  for (Group g : kAllGroups) {
    if (weights[g].rows() != weights.mu.rows() || weights[g].cols() != weights.mu.cols() ||
        initial_[g].rows() != weights.mu.rows() || initial_[g].cols() != weights.mu.cols()) {
      throw NumericError("SnnParams: all weight matrices must share one m x d shape");
    }
    if (!all_finite(weights[g]) || !all_finite(initial_[g])) {
      throw NumericError(std::string("SnnParams: non-finite entry in group ") + group_name(g));
    }
  }
}

SnnParams SnnParams::from_weights(WeightSet weights, RngStream provenance) {
  WeightSet copy = weights;
  return SnnParams(std::move(weights), std::move(copy), provenance);
}

SnnParams init_params(const SnnConfig& cfg, const RngStream& stream) {
  cfg.validate();
  WeightSet w;
  w.mu = gaussian_draw(stream.child(0), cfg.m, cfg.d);
  w.sigma = Matrix::Constant(cfg.m, cfg.d, cfg.sigma0);
  w.dec = gaussian_draw(stream.child(1), cfg.m, cfg.d);
  return SnnParams::from_weights(std::move(w), stream);
}

namespace {

void require_shapes(const SnnParams& params, const Vector& x, const Matrix* zeta) {
  if (x.size() != params.dim()) {
    std::ostringstream os;
    os << "input has dimension " << x.size() << ", network expects " << params.dim();
    throw NumericError(os.str());
  }
  if (zeta && (zeta->rows() != params.width() || zeta->cols() != params.dim())) {
    std::ostringstream os;
    os << "noise draw is " << zeta->rows() << "x" << zeta->cols() << ", expected "
       << params.width() << "x" << params.dim();
    throw NumericError(os.str());
  }
}

// psi(sigma(z)) and its derivative in z.
inline void composite(const SnnConfig& cfg, double z, double& value, double& slope) {
  if (cfg.decoder.is_identity()) {
    if (cfg.activation.kind == ActivationKind::kTanh) {
      const double t = std::tanh(z);
      value = t;
      slope = 1.0 - t * t;
      return;
    }
    value = cfg.activation.value(z);
    slope = cfg.activation.derivative(z);
    return;
  }
  const double u = cfg.activation.value(z);
  value = cfg.decoder.value(u);
  slope = cfg.decoder.derivative(u) * cfg.activation.derivative(z);
}

}  // namespace

Vector reparam_latent(const SnnParams& params, const Vector& x, const Matrix& zeta) {
  require_shapes(params, x, &zeta);
  return params.weights.mu * x + params.weights.sigma.cwiseProduct(zeta) * x;
}

Vector forward_sample(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                      const Matrix& zeta) {
  const Vector z = reparam_latent(params, x, zeta);
  Vector h(z.size());
  for (Eigen::Index r = 0; r < z.size(); ++r) {
    double slope;
    composite(cfg, z(r), h(r), slope);
  }
  return params.weights.dec.transpose() * h / std::sqrt(double(params.width()));
}

Matrix zeta_draw(const SnnConfig& cfg, const RngStream& sample_stream, int draw) {
  return gaussian_draw(sample_stream.child(static_cast<std::uint64_t>(draw)), cfg.m, cfg.d);
}

UnitMoments unit_moments(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                         const RngStream& sample_stream) {
  require_shapes(params, x, nullptr);
  const Eigen::Index m = params.width();
  const Eigen::Index d = params.dim();
  if (cfg.m != m || cfg.d != d) throw NumericError("config shape does not match parameters");

  UnitMoments out{Vector::Zero(m), Vector::Zero(m), Matrix::Zero(m, d)};
  const Vector mean_part = params.weights.mu * x;
  // Values and slopes are accumulated as deviations from the first draw, so
  // a noiseless network reproduces forward_sample bit for bit.
  Vector value_ref(m), slope_ref(m);
  Matrix zeta(m, d);
  const double* ws = params.weights.sigma.data();
  for (int s = 0; s < cfg.mc_samples; ++s) {
    sample_stream.child(static_cast<std::uint64_t>(s))
        .fill_normals(std::span<double>(zeta.data(), static_cast<std::size_t>(zeta.size())));
    const double* zr = zeta.data();
    for (Eigen::Index r = 0; r < m; ++r) {
      const double* wsr = ws + r * d;
      const double* zetar = zr + r * d;
      double noise = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) noise += wsr[k] * zetar[k] * x(k);
      double v_plus, g_plus;
      composite(cfg, mean_part(r) + noise, v_plus, g_plus);
      if (s == 0) {
        value_ref(r) = v_plus;
        slope_ref(r) = g_plus;
      }
      double* nsr = out.noise_slope.data() + r * d;
      if (cfg.antithetic) {
        double v_minus, g_minus;
        composite(cfg, mean_part(r) - noise, v_minus, g_minus);
        out.value(r) += (v_plus - value_ref(r)) + (v_minus - value_ref(r));
        out.slope(r) += (g_plus - slope_ref(r)) + (g_minus - slope_ref(r));
        const double diff = g_plus - g_minus;
        for (Eigen::Index k = 0; k < d; ++k) nsr[k] += diff * zetar[k];
      } else {
        out.value(r) += v_plus - value_ref(r);
        out.slope(r) += g_plus - slope_ref(r);
        for (Eigen::Index k = 0; k < d; ++k) nsr[k] += g_plus * zetar[k];
      }
    }
  }
  const double inv = 1.0 / cfg.evaluations();
  out.value = value_ref + out.value * inv;
  out.slope = slope_ref + out.slope * inv;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index k = 0; k < d; ++k) out.noise_slope(r, k) *= inv * x(k);
  }
  return out;
}

std::vector<UnitMoments> batch_moments(const SnnParams& params, const SnnConfig& cfg,
                                       const Matrix& inputs, const RngStream& stream) {
  std::vector<UnitMoments> out(static_cast<std::size_t>(inputs.rows()));
  parallel_for(out.size(), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    out[i] = unit_moments(params, cfg, inputs.row(row).transpose(), stream.child(i));
  });
  return out;
}

Vector expected_output(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                       const RngStream& sample_stream) {
  const UnitMoments mom = unit_moments(params, cfg, x, sample_stream);
  return params.weights.dec.transpose() * mom.value / std::sqrt(double(params.width()));
}

Matrix outputs_from_moments(const SnnParams& params, const std::vector<UnitMoments>& moments) {
  Matrix out(static_cast<Eigen::Index>(moments.size()), params.dim());
  const double scale = 1.0 / std::sqrt(double(params.width()));
  for (std::size_t i = 0; i < moments.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        (params.weights.dec.transpose() * moments[i].value).transpose() * scale;
  }
  return out;
}

Matrix batch_outputs(const SnnParams& params, const SnnConfig& cfg, const Matrix& inputs,
                     const RngStream& stream) {
  return outputs_from_moments(params, batch_moments(params, cfg, inputs, stream));
}

OutputJacobian jacobian_from_moments(const SnnParams& params, const Vector& x,
                                     const UnitMoments& moments) {
  const Eigen::Index m = params.width();
  const Eigen::Index d = params.dim();
  const double scale = 1.0 / std::sqrt(double(m));
  OutputJacobian jac;
  for (Eigen::Index k = 0; k < d; ++k) {
    // ∂f̂_k/∂w^mu_r = w^d_{r,k} E[(psi∘sigma)'] x / sqrt(m)
    const Vector coeff = params.weights.dec.col(k).cwiseProduct(moments.slope) * scale;
    jac.mu.push_back(coeff * x.transpose());
    // ∂f̂_k/∂w^sigma_r = w^d_{r,k} E[(psi∘sigma)' zeta_r] ⊙ x / sqrt(m)
    jac.sigma.push_back((params.weights.dec.col(k) * scale).asDiagonal() * moments.noise_slope);
    // ∂f̂_k/∂w^d_r = E[psi(sigma(z_r))] e_k / sqrt(m)
    Matrix dec = Matrix::Zero(m, d);
    dec.col(k) = moments.value * scale;
    jac.dec.push_back(std::move(dec));
  }
  return jac;
}

OutputJacobian output_gradients(const SnnParams& params, const SnnConfig& cfg, const Vector& x,
                                const RngStream& sample_stream) {
  return jacobian_from_moments(params, x, unit_moments(params, cfg, x, sample_stream));
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'N', 'N', 'T', 'K', 'C', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("checkpoint truncated in header");
  }
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const SnnParams& params) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u64(os, static_cast<std::uint64_t>(params.width()));
  put_u64(os, static_cast<std::uint64_t>(params.dim()));
  put_u64(os, params.provenance().master_seed());
  put_u64(os, params.provenance().stream_id());
  put_u64(os, params.provenance().counter());
  auto put_matrix = [&](const Matrix& m) {
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
  };
  for (Group g : kAllGroups) put_matrix(params.weights[g]);
  for (Group g : kAllGroups) put_matrix(params.initial()[g]);
}

SnnParams read_checkpoint(std::istream& is) {
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw std::runtime_error("not an snntk checkpoint (bad magic)");
  }
  const std::uint64_t m = get_u64(is);
  const std::uint64_t d = get_u64(is);
  if (m == 0 || d == 0 || m > (1u << 26) || d > (1u << 20)) {
    throw std::runtime_error("checkpoint has implausible shape");
  }
  const std::uint64_t seed = get_u64(is);
  const std::uint64_t stream_id = get_u64(is);
  const std::uint64_t counter = get_u64(is);
  auto get_matrix = [&] {
    Matrix mat(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    if (!is.read(reinterpret_cast<char*>(mat.data()),
                 static_cast<std::streamsize>(mat.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint truncated in weight payload");
    }
    return mat;
  };
  WeightSet current, initial;
  for (Group g : kAllGroups) current[g] = get_matrix();
  for (Group g : kAllGroups) initial[g] = get_matrix();
  return SnnParams(std::move(current), std::move(initial), RngStream(seed, stream_id, counter));
}

}  // namespace snntk
