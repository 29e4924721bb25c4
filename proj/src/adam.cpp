#include "fedlora/adam.hpp"

#include <cmath>
#include <string>

#include "fedlora/error.hpp"

namespace fedlora {

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::kShape, "adam_step: " + std::to_string(params.size()) +
                                       " parameters but " + std::to_string(grads.size()) +
                                       " gradients");
  }
  if (state.step == 0 && state.first_moment.empty()) {
    for (const Matrix& p : params) {
      state.first_moment.emplace_back(p.rows(), p.cols());
      state.second_moment.emplace_back(p.rows(), p.cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::kShape, "adam_step: state tracks " +
                                       std::to_string(state.first_moment.size()) +
                                       " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.first_moment[i])) {
      throw Error(ErrorCode::kShape, "adam_step: parameter " + std::to_string(i) + " is " +
                                         shape_string(params[i]) + ", gradient is " +
                                         shape_string(grads[i]) + ", moments are " +
                                         shape_string(state.first_moment[i]));
    }
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  const double decay = c.learning_rate * c.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= decay * p[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace fedlora
