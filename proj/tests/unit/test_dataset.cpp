#include "doctest.h"
#include "snntk/dataset.hpp"
#include "snntk/io.hpp"
#include "snntk/rng.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace snntk;

namespace {

const std::filesystem::path kFixtures = SNNTK_FIXTURE_DIR;

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
}

// 28x28 images of a few random bright strokes on a dark background.
std::vector<std::uint8_t> stroke_images(std::uint32_t count, std::uint64_t seed) {
  std::vector<std::uint8_t> bytes;
  for (auto v : {0x803u, count, 28u, 28u}) {
    const auto b = be32(v);
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<double> u(16);
    RngStream(seed).child(i).fill_uniforms(u);
    std::vector<std::uint8_t> img(784, 0);
    for (int s = 0; s < 4; ++s) {
      const int r0 = int(u[4 * s] * 28), c0 = int(u[4 * s + 1] * 28);
      const int len = 4 + int(u[4 * s + 2] * 16);
      const bool horizontal = u[4 * s + 3] < 0.5;
      for (int k = 0; k < len; ++k) {
        const int r = horizontal ? r0 : (r0 + k) % 28;
        const int c = horizontal ? (c0 + k) % 28 : c0;
        img[std::size_t(r * 28 + c)] = 255;
      }
    }
    bytes.insert(bytes.end(), img.begin(), img.end());
  }
  return bytes;
}

}  // namespace

TEST_CASE("synth_dataset rows are unit norm and distinct") {
  CHECK_THROWS_AS(synth_dataset(1, 4, 1), DatasetError);
  const Dataset ds = synth_dataset(64, 8, 3, 1e-8, 5);
  for (Eigen::Index i = 0; i < ds.size(); ++i) CHECK(std::abs(ds.encoded.row(i).norm() - 1.0) < 1e-12);
  for (Eigen::Index i = 0; i < ds.test_encoded.rows(); ++i)
    CHECK(std::abs(ds.test_encoded.row(i).norm() - 1.0) < 1e-12);
  CHECK(ds.targets == ds.encoded);
  CHECK(synth_dataset(64, 8, 3, 1e-8, 5).encoded == ds.encoded);
}

TEST_CASE("synth_dataset Gram spectra") {
  // With n > d the linear Gram has rank d, so positivity is checked on the
  // exponential Gram exp(x_i . x_j), strictly positive definite for distinct
  // unit vectors.
  const Dataset ds = synth_dataset(64, 8, 4);
  const Matrix gram = input_gram(ds.encoded);
  CHECK(least_eigenvalue(gram) < 1e-10);
  CHECK(least_eigenvalue(gram.array().exp().matrix()) > 0.0);

  const Dataset small = synth_dataset(6, 8, 4);
  CHECK(least_eigenvalue(input_gram(small.encoded)) > 0.0);
}

TEST_CASE("validate rejects duplicates and non-unit rows") {
  Dataset ds = synth_dataset(4, 3, 2);
  ds.encoded.row(3) = ds.encoded.row(1);
  ds.targets = ds.encoded;
  CHECK_THROWS_AS(ds.validate(), DatasetError);
  Dataset bad = synth_dataset(4, 3, 2);
  bad.encoded(0, 0) += 1e-6;
  CHECK_THROWS_AS(bad.validate(), DatasetError);
}

TEST_CASE("idx fixture files") {
  const RawImages raw = load_idx_images(kFixtures / "images4.idx3");
  CHECK(raw.count == 4);
  CHECK(raw.rows == 28);
  CHECK(raw.cols == 28);
  CHECK(raw.pixels(0, 0) == 37.0 / 255.0);
  CHECK(raw.pixels(1, 2) == ((37 + 7 + 26) % 256) / 255.0);
  const std::vector<int> labels = load_idx_labels(kFixtures / "labels4.idx1");
  CHECK(labels == std::vector<int>{3, 1, 4, 1});
  for (int l : labels) {
    CHECK(l >= 0);
    CHECK(l <= 9);
  }
}

TEST_CASE("idx errors name the offset") {
  std::ifstream in(kFixtures / "images4.idx3", std::ios::binary);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), {}};
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 10);
  try {
    parse_idx_images(truncated);
    FAIL("expected an IdxError");
  } catch (const IdxError& e) {
    CHECK(std::string(e.what()).find("missing 10 bytes") != std::string::npos);
    CHECK(e.offset() == truncated.size());
  }
  bytes[3] = 0x01;
  CHECK_THROWS_AS(parse_idx_images(bytes), IdxError);
  CHECK_THROWS_AS(parse_idx_labels({0, 0, 8}), IdxError);

  std::vector<std::uint8_t> huge;
  for (auto v : {0x803u, 0xffffffffu, 0xffffu, 0xffffu}) {
    const auto b = be32(v);
    huge.insert(huge.end(), b.begin(), b.end());
  }
  CHECK_THROWS_WITH_AS(parse_idx_images(huge), doctest::Contains("overflow"), IdxError);
}

TEST_CASE("encoders") {
  RawImages raw;
  raw.count = 2;
  raw.rows = 1;
  raw.cols = 3;
  raw.pixels.resize(2, 3);
  raw.pixels << 0.6, 0.8, 0.0, 0.0, 0.0, 1.0;
  EncoderSpec id{EncoderKind::kIdentityNormalize, 0, {}, 0};
  const Dataset ds = encode(raw, id, 3, 2);
  CHECK(ds.encoded == raw.pixels);

  raw.pixels.row(1).setZero();
  CHECK_THROWS_WITH_AS(encode(raw, id, 3, 2), doctest::Contains("zero vector"), DatasetError);
}

TEST_CASE("random-layer encoding of 128 stroke images") {
  const RawImages raw = parse_idx_images(stroke_images(128, 99));
  EncoderSpec spec{EncoderKind::kFixedRandomLayer, 16, Activation{ActivationKind::kTanh}, 5};
  const Dataset a = encode(raw, spec, 16, 120, 8);
  const Dataset b = encode(raw, spec, 16, 120, 8);
  CHECK(a.encoded == b.encoded);
  CHECK(a.test_encoded == b.test_encoded);
  double closest = 1e300;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      closest = std::min(closest, (a.encoded.row(i) - a.encoded.row(j)).norm());
  CHECK(closest > 1e-6);
  const Matrix gram = input_gram(a.encoded);
  CHECK(least_eigenvalue(gram.array().exp().matrix()) > 0.0);
  // The first 16 rows are in general position, so their linear Gram is nonsingular.
  CHECK(least_eigenvalue(gram.topLeftCorner(16, 16)) > 0.0);
}

TEST_CASE("dataset csv") {
  Matrix m(2, 2);
  m << 1, 0.5, -0.25, 0;
  std::ostringstream os;
  write_dataset_csv(os, m);
  CHECK(os.str() == "index,component_0,component_1\n0,1,0.5\n1,-0.25,0\n");
}
