#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

namespace snntk {

/// Activations admitted by the theory: continuous with continuous derivative,
/// L-Lipschitz and beta-smooth. ReLU is deliberately absent.
enum class ActivationKind { kTanh, kIdentity, kSoftplus };

struct Activation {
  ActivationKind kind = ActivationKind::kTanh;

  double value(double x) const {
    switch (kind) {
      case ActivationKind::kTanh:
        return std::tanh(x);
      case ActivationKind::kIdentity:
        return x;
      case ActivationKind::kSoftplus:
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    return x;
  }

  double derivative(double x) const {
    switch (kind) {
      case ActivationKind::kTanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case ActivationKind::kIdentity:
        return 1.0;
      case ActivationKind::kSoftplus:
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return 1.0;
  }

  /// Lipschitz constant L of the function.
  double lipschitz() const { return 1.0; }

  /// Bound on |f''|: 4/(3*sqrt(3)) for tanh, 1/4 for softplus.
  double smoothness() const {
    switch (kind) {
      case ActivationKind::kTanh:
        return 0.7698;
      case ActivationKind::kIdentity:
        return 0.0;
      case ActivationKind::kSoftplus:
        return 0.25;
    }
    return 0.0;
  }

  bool is_identity() const { return kind == ActivationKind::kIdentity; }

  std::string_view name() const;
  bool operator==(const Activation&) const = default;
};

/// Parses "tanh", "identity" or "softplus"; throws std::invalid_argument.
Activation parse_activation(std::string_view name);

}  // namespace snntk
