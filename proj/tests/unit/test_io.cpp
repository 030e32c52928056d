#include "doctest.h"
#include "snntk/io.hpp"

#include <filesystem>

using namespace snntk;

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(1.0) == "1");
}

TEST_CASE("atomic_write leaves no temporary file") {
  const auto dir = std::filesystem::temp_directory_path() / "snntk_io_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.txt";
  atomic_write(path, "first");
  atomic_write(path, "second");
  CHECK(read_text(path) == "second");
  CHECK_FALSE(std::filesystem::exists(dir / "a.txt.tmp"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("matrix_csv layout") {
  Matrix m(1, 2);
  m << 1, 2;
  CHECK(matrix_csv(m, "mode=full") == "# mode=full\nrow,col_0,col_1\n0,1,2\n");
  CHECK(matrix_csv(m) == "row,col_0,col_1\n0,1,2\n");
}
