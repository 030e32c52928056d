#include "snntk/dataset.hpp"

#include "snntk/io.hpp"
#include "snntk/rng.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace snntk {

namespace {

constexpr int kRetryBudget = 64;

double min_distance_to_previous(const Matrix& rows, Eigen::Index upto) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < upto; ++j) {
    best = std::min(best, (rows.row(upto) - rows.row(j)).norm());
  }
  return best;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) {
    std::ostringstream os;
    os << "IDX header truncated: need 4 bytes at offset " << offset << ", file has "
       << bytes.size();
    throw IdxError(os.str(), offset);
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_payload(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                     std::uint64_t needed) {
  const std::uint64_t have = bytes.size() - offset;
  if (have < needed) {
    std::ostringstream os;
    os << "IDX payload truncated at offset " << bytes.size() << ": missing "
       << (needed - have) << " bytes";
    throw IdxError(os.str(), bytes.size());
  }
}

}  // namespace

IdxError::IdxError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what), offset_(offset) {}

void Dataset::validate(double duplicate_guard) const {
  if (encoded.rows() < 2) throw DatasetError("dataset needs n >= 2 samples");
  if (targets.rows() != encoded.rows() || targets.cols() != encoded.cols()) {
    throw DatasetError("targets must have the shape of the encoded inputs");
  }
  if (test_encoded.size() > 0 && test_encoded.cols() != encoded.cols()) {
    throw DatasetError("test inputs have the wrong dimension");
  }
  auto check_norms = [](const Matrix& m, const char* what) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double norm = m.row(i).norm();
      if (std::abs(norm - 1.0) > 1e-12) {
        std::ostringstream os;
        os << what << " row " << i << " has norm " << norm << ", expected 1";
        throw DatasetError(os.str());
      }
    }
  };
  check_norms(encoded, "encoded");
  check_norms(test_encoded, "test");
  for (Eigen::Index i = 1; i < encoded.rows(); ++i) {
    if (min_distance_to_previous(encoded, i) <= duplicate_guard) {
      std::ostringstream os;
      os << "encoded row " << i << " duplicates an earlier row (distance <= "
         << duplicate_guard << ")";
      throw DatasetError(os.str());
    }
  }
}

Dataset synth_dataset(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                      double duplicate_guard, Eigen::Index n_test) {
  if (n < 2) throw DatasetError("synth_dataset: n must be >= 2");
  if (d < 1) throw DatasetError("synth_dataset: d must be >= 1");
  const RngStream base(seed, mix64(0x5e7ull));
  auto draw_rows = [&](Eigen::Index count, std::uint64_t tag, bool guard) {
    Matrix rows(count, d);
    for (Eigen::Index i = 0; i < count; ++i) {
      int attempt = 0;
      for (;; ++attempt) {
        if (attempt == kRetryBudget) {
          std::ostringstream os;
          os << "synth_dataset: could not draw a non-duplicate row " << i << " after "
             << kRetryBudget << " attempts";
          throw DatasetError(os.str());
        }
        const RngStream s = base.child(tag).child(static_cast<std::uint64_t>(i)).child(
            static_cast<std::uint64_t>(attempt));
        Matrix g = gaussian_draw(s, 1, d);
        const double norm = g.norm();
        if (norm == 0.0) continue;
        rows.row(i) = g / norm;
        // Renormalize once more so the unit-norm check holds to the last ulp.
        rows.row(i) /= rows.row(i).norm();
        if (!guard || i == 0 || min_distance_to_previous(rows, i) > duplicate_guard) break;
      }
    }
    return rows;
  };
  Dataset ds;
  ds.encoded = draw_rows(n, 0, true);
  ds.targets = ds.encoded;
  ds.test_encoded = n_test > 0 ? draw_rows(n_test, 1, false) : Matrix(0, d);
  ds.validate(duplicate_guard);
  return ds;
}

RawImages parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000803u) {
    std::ostringstream os;
    os << "IDX images: bad magic 0x" << std::hex << magic << " at offset 0";
    throw IdxError(os.str(), 0);
  }
  RawImages raw;
  raw.count = read_be32(bytes, 4);
  raw.rows = read_be32(bytes, 8);
  raw.cols = read_be32(bytes, 12);
  const std::uint64_t pixels_per = std::uint64_t{raw.rows} * raw.cols;
  const std::uint64_t total = pixels_per * raw.count;
  if (raw.rows != 0 && raw.cols != 0 && raw.count != 0 &&
      (total / raw.count != pixels_per || total > (std::uint64_t{1} << 34))) {
    throw IdxError("IDX images: dimension product overflows", 4);
  }
  require_payload(bytes, 16, total);
  raw.pixels.resize(static_cast<Eigen::Index>(raw.count), static_cast<Eigen::Index>(pixels_per));
  for (std::uint64_t k = 0; k < total; ++k) {
    raw.pixels.data()[k] = bytes[16 + k] / 255.0;
  }
  return raw;
}

RawImages load_idx_images(const std::filesystem::path& path) {
  return parse_idx_images(read_file(path));
}

std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000801u) {
    std::ostringstream os;
    os << "IDX labels: bad magic 0x" << std::hex << magic << " at offset 0";
    throw IdxError(os.str(), 0);
  }
  const std::uint32_t count = read_be32(bytes, 4);
  require_payload(bytes, 8, count);
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  return parse_idx_labels(read_file(path));
}

Dataset encode(const RawImages& raw, const EncoderSpec& spec, Eigen::Index d_out,
               Eigen::Index n_train, Eigen::Index n_test, double duplicate_guard) {
  if (raw.count == 0 || raw.pixels.size() == 0) throw DatasetError("encode: no images");
  if (n_train + n_test > static_cast<Eigen::Index>(raw.count)) {
    throw DatasetError("encode: requested more samples than images");
  }
  const Eigen::Index in_dim = raw.pixels.cols();
  Matrix features;
  if (spec.kind == EncoderKind::kIdentityNormalize) {
    if (d_out != 0 && d_out != in_dim) {
      throw DatasetError("encode: identity-normalize keeps the input dimension");
    }
    features = raw.pixels.topRows(n_train + n_test);
  } else {
    const Eigen::Index width = spec.width > 0 ? spec.width : d_out;
    if (width != d_out || d_out < 1) {
      throw DatasetError("encode: random layer width must equal d_out");
    }
    const RngStream s(spec.seed, mix64(0xe7c0de));
    const Matrix weights = gaussian_draw(s.child(0), d_out, in_dim) / std::sqrt(double(in_dim));
    const Matrix bias = gaussian_draw(s.child(1), 1, d_out);
    features = raw.pixels.topRows(n_train + n_test) * weights.transpose();
    features.rowwise() += bias.row(0);
    features = features.unaryExpr([&](double v) { return spec.activation.value(v); });
  }
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double norm = features.row(i).norm();
    if (norm == 0.0) {
      std::ostringstream os;
      os << "encode: image " << i << " maps to the zero vector";
      throw DatasetError(os.str());
    }
    features.row(i) /= norm;
    features.row(i) /= features.row(i).norm();
  }
  Dataset ds;
  ds.encoded = features.topRows(n_train);
  ds.targets = ds.encoded;
  ds.test_encoded = features.bottomRows(n_test);
  ds.validate(duplicate_guard);
  return ds;
}

Matrix input_gram(const Matrix& rows) { return rows * rows.transpose(); }

void write_dataset_csv(std::ostream& os, const Matrix& rows) {
  os << "index";
  for (Eigen::Index k = 0; k < rows.cols(); ++k) os << ",component_" << k;
  os << '\n';
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    os << i;
    for (Eigen::Index k = 0; k < rows.cols(); ++k) os << ',' << format_double(rows(i, k));
    os << '\n';
  }
}

}  // namespace snntk
