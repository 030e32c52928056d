#include "snntk/rng.hpp"

#include <cmath>
#include <numbers>

namespace snntk {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> philox_round(const std::array<std::uint32_t, 4>& c,
                                                 const std::array<std::uint32_t, 2>& k) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline std::array<std::uint32_t, 4> block_at(std::uint64_t seed, std::uint64_t stream,
                                             std::uint64_t counter) {
  return philox4x32({static_cast<std::uint32_t>(counter),
                     static_cast<std::uint32_t>(counter >> 32),
                     static_cast<std::uint32_t>(stream),
                     static_cast<std::uint32_t>(stream >> 32)},
                    {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
}

// 53-bit uniform strictly inside (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    counter = philox_round(counter, key);
  }
  return counter;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngStream RngStream::child(std::uint64_t index) const {
  return RngStream(master_seed_, mix64(stream_id_ ^ mix64(index + 0x632BE59BD9B4E019ull)), 0);
}

void RngStream::fill_uniforms(std::span<double> out) const {
  std::uint64_t ctr = counter_;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const auto b = block_at(master_seed_, stream_id_, ctr++);
    out[i] = to_open_unit(b[0], b[1]);
    if (i + 1 < out.size()) out[i + 1] = to_open_unit(b[2], b[3]);
  }
}

void RngStream::fill_normals(std::span<double> out) const {
  // Box-Muller on one pair of uniforms per block.
  std::uint64_t ctr = counter_;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const auto b = block_at(master_seed_, stream_id_, ctr++);
    const double u1 = to_open_unit(b[0], b[1]);
    const double u2 = to_open_unit(b[2], b[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[i] = radius * std::cos(angle);
    if (i + 1 < out.size()) out[i + 1] = radius * std::sin(angle);
  }
}

Matrix gaussian_draw(const RngStream& stream, Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  stream.fill_normals(std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

}  // namespace snntk
