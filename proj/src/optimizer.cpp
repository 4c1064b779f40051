#include "sfcap/optimizer.hpp"

#include <cmath>

#include "sfcap/errors.hpp"

namespace sfcap {

OptimizerState OptimizerState::for_model(const ModelParameters& params) {
  OptimizerState state;
  for (const auto& b : parameter_blocks(params)) {
    state.blocks.push_back({std::vector<double>(b.values.size()),
                            std::vector<double>(b.values.size()), 0});
  }
  return state;
}

void adam_update_block(std::span<double> params, std::span<const double> grads,
                       AdamMoments& moments, double learning_rate, const AdamConfig& adam,
                       const std::string& name) {
  if (params.size() != grads.size() || moments.first.size() != params.size() ||
      moments.second.size() != params.size()) {
    throw ShapeError("adam_update: shape mismatch in block " + name);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam_update: non-finite gradient in block " + name + " at index " +
                         std::to_string(i));
    }
  }
  moments.steps += 1;
  const double t = static_cast<double>(moments.steps);
  const double correction1 = 1.0 - std::pow(adam.beta1, t);
  const double correction2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = adam.beta1 * m + (1.0 - adam.beta1) * grads[i];
    v = adam.beta2 * v + (1.0 - adam.beta2) * grads[i] * grads[i];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + adam.epsilon);
  }
}

void adam_update(ModelParameters& params, const ModelParameters& grads, OptimizerState& state,
                 double learning_rate, const AdamConfig& adam, const TrainableGroups& trainable) {
  auto param_blocks = parameter_blocks(params);
  const auto grad_blocks = parameter_blocks(grads);
  if (grad_blocks.size() != param_blocks.size() || state.blocks.size() != param_blocks.size()) {
    throw ShapeError("adam_update: parameter, gradient and optimizer block counts differ");
  }
  // Validate everything first so a bad block leaves the model untouched.
  for (std::size_t b = 0; b < param_blocks.size(); ++b) {
    if (!trainable.contains(param_blocks[b].group)) continue;
    require_finite(grad_blocks[b].values, "gradient of block " + param_blocks[b].name);
  }
  for (std::size_t b = 0; b < param_blocks.size(); ++b) {
    if (!trainable.contains(param_blocks[b].group)) continue;
    adam_update_block(param_blocks[b].values, grad_blocks[b].values, state.blocks[b],
                      learning_rate, adam, param_blocks[b].name);
  }
}

}  // namespace sfcap
