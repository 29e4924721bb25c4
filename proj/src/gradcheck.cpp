#include "fedlora/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fedlora/error.hpp"

namespace fedlora {
namespace {

double evaluate(const LossBuilder& loss, std::span<const Matrix> params) {
  Tape tape;
  std::vector<NodeId> nodes;
  nodes.reserve(params.size());
  for (const Matrix& p : params) nodes.push_back(tape.constant(p));
  double value = 0.0;
  try {
    value = tape.value(loss(tape, nodes))(0, 0);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNumeric) {
      throw Error(ErrorCode::kNumeric, std::string("finite_diff_check: ") + e.what());
    }
    throw;
  }
  if (!std::isfinite(value)) throw Error(ErrorCode::kNumeric, "finite_diff_check: non-finite loss");
  return value;
}

}  // namespace

double finite_diff_check(const LossBuilder& loss, std::span<const Matrix> params, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::kParameter, "finite_diff_check: step must be positive");

  Tape tape;
  std::vector<NodeId> nodes;
  for (const Matrix& p : params) nodes.push_back(tape.parameter(p));
  const Gradients grads = tape.backward(loss(tape, nodes));

  std::vector<Matrix> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    auto it = grads.find(nodes[i]);
    for (std::size_t j = 0; j < probe[i].size(); ++j) {
      const double original = probe[i].data()[j];
      probe[i].data()[j] = original + h;
      const double up = evaluate(loss, probe);
      probe[i].data()[j] = original - h;
      const double down = evaluate(loss, probe);
      probe[i].data()[j] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = it == grads.end() ? 0.0 : it->second.data()[j];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace fedlora
