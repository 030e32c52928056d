#include "doctest.h"
#include "snntk/parallel.hpp"
#include "snntk/rng.hpp"

#include <vector>

using namespace snntk;

TEST_CASE("philox4x32-10 known answers") {
  using B = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are deterministic") {
  const RngStream s(42, 7, 3);
  CHECK(gaussian_draw(s, 5, 4) == gaussian_draw(s, 5, 4));
  CHECK(s.child(2) == RngStream(42, 7, 3).child(2));
  CHECK_FALSE(s.child(2) == s.child(3));
}

TEST_CASE("advancing the counter continues the sequence") {
  const RngStream s(1);
  std::vector<double> all(10), tail(6);
  s.fill_normals(all);
  s.advanced(RngStream::blocks_for(4)).fill_normals(tail);
  for (int i = 0; i < 6; ++i) CHECK(all[4 + i] == tail[i]);
}

TEST_CASE("normal moments over 1e6 draws") {
  std::vector<double> v(1000000);
  RngStream(2024).fill_normals(v);
  double mean = 0.0, sq = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  for (double x : v) sq += (x - mean) * (x - mean);
  const double var = sq / double(v.size() - 1);
  CHECK(std::abs(mean) < 5e-3);
  CHECK(std::abs(var - 1.0) < 1e-2);
}

TEST_CASE("distinct stream ids are uncorrelated") {
  const std::size_t n = 100000;
  std::vector<double> a(n), b(n);
  RngStream(5, 1).fill_normals(a);
  RngStream(5, 2).fill_normals(b);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  CHECK(std::abs(ab / std::sqrt(aa * bb)) < 5e-3);
}

TEST_CASE("uniforms lie in (0, 1)") {
  std::vector<double> u(10001);
  RngStream(8).fill_uniforms(u);
  for (double x : u) {
    CHECK(x > 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("parallel draws do not depend on the schedule") {
  std::vector<Matrix> serial(16), parallel(16);
  const RngStream s(77);
  for (std::size_t i = 0; i < 16; ++i) serial[i] = gaussian_draw(s.child(i), 3, 3);
  set_thread_count(4);
  parallel_for(16, [&](std::size_t i) { parallel[i] = gaussian_draw(s.child(i), 3, 3); });
  set_thread_count(0);
  for (std::size_t i = 0; i < 16; ++i) CHECK(serial[i] == parallel[i]);
}
