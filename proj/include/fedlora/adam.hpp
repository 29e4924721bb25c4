#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedlora/matrix.hpp"

namespace fedlora {

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double weight_decay = 0.2;
};

/// Moment estimates for one ordered list of parameters.
struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

/// One Adam step with bias correction and decoupled weight decay.
///
/// Decay is applied first as theta <- theta - lr * wd * theta, then the
/// adaptive update. Moments are allocated lazily on the first call; later
/// calls must pass the same number and shapes of parameters.
void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state);

}  // namespace fedlora
