#pragma once

#include "snntk/numerics.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace snntk {

/// Shortest round-trip decimal representation ("%.17g"), '.' decimal point.
std::string format_double(double v);

/// Writes `content` to `<path>.tmp` and renames it over `path`, so a reader
/// never observes a partially written file under the final name.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::string read_text(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of `content`.
std::string sha256_hex(std::string_view content);

/// Dense row-major CSV. An optional `# <comment>` line comes first, then the
/// header `row,col_0,...,col_{c-1}` and one line per matrix row.
std::string matrix_csv(const Matrix& m, std::string_view header_comment = {});

}  // namespace snntk
