#pragma once

#include "snntk/activation.hpp"
#include "snntk/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

namespace snntk {

/// Encoded inputs x^(e) (unit-norm rows) with their reconstruction targets.
struct Dataset {
  Matrix encoded;       // n x d, every row of unit norm
  Matrix targets;       // n x d
  Matrix test_encoded;  // n_te x d, unit-norm rows
  std::optional<std::vector<int>> labels;

  Eigen::Index size() const { return encoded.rows(); }
  Eigen::Index dim() const { return encoded.cols(); }

  /// Throws DatasetError if any invariant (unit norm, n >= 2, no duplicate
  /// rows within `duplicate_guard`, target shape) is violated.
  void validate(double duplicate_guard = 1e-8) const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows uniform on the unit sphere of R^d; targets equal the encoded rows.
/// A row closer than `duplicate_guard` to an earlier row is redrawn; after
/// the retry budget is spent the call fails.
Dataset synth_dataset(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                      double duplicate_guard = 1e-8, Eigen::Index n_test = 0);

/// Pixel images from an IDX file, rescaled to [0, 1].
struct RawImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Matrix pixels;  // count x (rows*cols)
};

class IdxError : public std::runtime_error {
 public:
  IdxError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Parses an IDX image file (magic 0x00000803, big-endian dimensions).
RawImages load_idx_images(const std::filesystem::path& path);
RawImages parse_idx_images(const std::vector<std::uint8_t>& bytes);

/// Parses an IDX label file (magic 0x00000801).
std::vector<int> load_idx_labels(const std::filesystem::path& path);
std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes);

enum class EncoderKind { kIdentityNormalize, kFixedRandomLayer };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kFixedRandomLayer;
  Eigen::Index width = 0;  // output width of the random layer; 0 means d_out
  Activation activation{ActivationKind::kTanh};
  std::uint64_t seed = 0;
};

/// Maps images to unit vectors: normalize(act(A x + b)) with A, b drawn once
/// from spec.seed (fixed-random-layer), or normalize(x) (identity-normalize).
/// The first n_train rows become the training set, the next n_test the test
/// set. Targets are the encoded training rows.
Dataset encode(const RawImages& raw, const EncoderSpec& spec, Eigen::Index d_out,
               Eigen::Index n_train, Eigen::Index n_test = 0,
               double duplicate_guard = 1e-8);

/// Gram matrix X X^T of the rows.
Matrix input_gram(const Matrix& rows);

/// CSV with header `index,component_0,...,component_{d-1}`.
void write_dataset_csv(std::ostream& os, const Matrix& rows);

}  // namespace snntk
