#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/tape.hpp"

namespace fedlora {

/// Builds a scalar loss on `tape` from the given parameter nodes.
using LossBuilder = std::function<NodeId(Tape& tape, std::span<const NodeId> params)>;

/// Compares tape gradients with central differences (f(x+h) - f(x-h)) / 2h.
///
/// Returns max over every parameter entry of |g_ad - g_fd| / max(1, |g_fd|).
/// Throws kNumeric if any probe produces a non-finite loss and kParameter
/// if h is not positive.
double finite_diff_check(const LossBuilder& loss, std::span<const Matrix> params, double h);

}  // namespace fedlora
