#pragma once

#include "snntk/train.hpp"

#include <cstdint>

namespace snntk {

struct GradCheckResult {
  double max_relative_error = 0.0;
  int coordinates = 0;
  Group worst_group = Group::kMu;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
};

/// Compares loss_gradient with central differences of loss_total on the
/// same noise draws, over a random `fraction` of the weight coordinates (at
/// least `min_per_group` per trainable group). Relative error per entry is
/// |a - b| / max(|a|, |b|, floor) with floor = 1e-6 * max|gradient|.
GradCheckResult finite_diff_check(const SnnParams& params, const SnnConfig& cfg,
                                  const Dataset& data, const ObjectiveSpec& objective,
                                  double step, const RngStream& stream,
                                  double fraction = 0.01, int min_per_group = 8);

}  // namespace snntk
