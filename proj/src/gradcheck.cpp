#include "snntk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace snntk {

GradCheckResult finite_diff_check(const SnnParams& params, const SnnConfig& cfg,
                                  const Dataset& data, const ObjectiveSpec& objective,
                                  double step, const RngStream& stream, double fraction,
                                  int min_per_group) {
  if (!(step >= 1e-7 && step <= 1e-2)) {
    throw std::invalid_argument("finite_diff_check: step must lie in [1e-7, 1e-2]");
  }
  const GradParams analytic = loss_gradient(params, cfg, data, objective, stream);
  double max_abs = 0.0;
  for (Group g : kAllGroups) max_abs = std::max(max_abs, analytic[g].cwiseAbs().maxCoeff());
  const double floor = 1e-6 * max_abs;

  const Eigen::Index m = params.width();
  const Eigen::Index d = params.dim();
  const auto per_group = static_cast<std::size_t>(std::min<double>(
      double(m * d), std::max<double>(min_per_group, std::ceil(fraction * double(m * d)))));

  GradCheckResult result;
  // Coordinate sample drawn from a stream separate from the noise draws.
  const RngStream picker = stream.child(0x9c0ffee);
  for (Group g : kAllGroups) {
    std::vector<double> keys(static_cast<std::size_t>(m * d));
    picker.child(static_cast<std::uint64_t>(g)).fill_uniforms(keys);
    std::vector<Eigen::Index> order(keys.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_group),
                      order.end(), [&](Eigen::Index a, Eigen::Index b) {
                        return keys[static_cast<std::size_t>(a)] <
                               keys[static_cast<std::size_t>(b)];
                      });
    for (std::size_t c = 0; c < per_group; ++c) {
      const Eigen::Index row = order[c] / d;
      const Eigen::Index col = order[c] % d;
      auto loss_at = [&](double delta) {
        WeightSet w = params.weights;
        w[g](row, col) += delta;
        return loss_total(SnnParams(std::move(w), params.initial()), cfg, data, objective, stream);
      };
      const double numeric = (loss_at(step) - loss_at(-step)) / (2.0 * step);
      const double exact = analytic[g](row, col);
      const double denom = std::max({std::abs(numeric), std::abs(exact), floor});
      const double err = denom > 0.0 ? std::abs(numeric - exact) / denom : 0.0;
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_group = g;
        result.worst_row = row;
        result.worst_col = col;
      }
    }
  }
  return result;
}

}  // namespace snntk
