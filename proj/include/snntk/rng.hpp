#pragma once

#include "snntk/numerics.hpp"

#include <array>
#include <cstdint>
#include <span>

namespace snntk {

/// Philox4x32-10 counter-based generator (Salmon et al., SC 2011). The block
/// is a pure function of the 64-bit key and the 128-bit counter.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// A position in a deterministic random stream. Every value it produces is a
/// pure function of (master_seed, stream_id, counter); independent streams
/// are obtained with child() rather than by sharing one stream.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t master_seed, std::uint64_t stream_id = 0,
                     std::uint64_t counter = 0)
      : master_seed_(master_seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  /// Stream with an id derived from this stream's id and `index`, counter 0.
  RngStream child(std::uint64_t index) const;

  /// Same stream, counter advanced by `blocks` Philox blocks.
  RngStream advanced(std::uint64_t blocks) const {
    return RngStream(master_seed_, stream_id_, counter_ + blocks);
  }

  /// Fills `out` with standard normals. Two normals are drawn per block, so
  /// this consumes ceil(out.size()/2) blocks starting at counter().
  void fill_normals(std::span<double> out) const;

  /// Fills `out` with uniforms in the open interval (0, 1); two per block.
  void fill_uniforms(std::span<double> out) const;

  /// Number of blocks consumed by drawing `count` values.
  static std::uint64_t blocks_for(std::uint64_t count) { return (count + 1) / 2; }

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t master_seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

/// rows x cols matrix of i.i.d. N(0, 1) entries, row-major from the stream's
/// current counter.
Matrix gaussian_draw(const RngStream& stream, Eigen::Index rows, Eigen::Index cols);

/// SplitMix64 finalizer; used to derive stream ids and seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace snntk
