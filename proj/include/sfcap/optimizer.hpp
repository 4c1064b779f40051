#pragma once

#include <bitset>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "sfcap/model.hpp"

namespace sfcap {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t steps = 0;

  bool operator==(const AdamMoments&) const = default;
};

// One moment set per parameter block, in parameter_blocks order. Step
// counters are per block so that blocks frozen in one stage keep their own
// bias correction.
struct OptimizerState {
  std::vector<AdamMoments> blocks;

  static OptimizerState for_model(const ModelParameters& params);
  bool operator==(const OptimizerState&) const = default;
};

// Set of parameter groups allowed to change.
class TrainableGroups {
 public:
  TrainableGroups() = default;
  TrainableGroups(std::initializer_list<ParamGroup> groups) {
    for (ParamGroup g : groups) add(g);
  }
  void add(ParamGroup g) { bits_.set(static_cast<std::size_t>(g)); }
  bool contains(ParamGroup g) const { return bits_.test(static_cast<std::size_t>(g)); }

 private:
  std::bitset<kParamGroupCount> bits_;
};

// Bias-corrected Adam on one block. Throws NumericError naming `name` if
// the gradient holds a NaN or infinity.
void adam_update_block(std::span<double> params, std::span<const double> grads,
                       AdamMoments& moments, double learning_rate, const AdamConfig& adam,
                       const std::string& name);

// Updates every block whose group is trainable; frozen blocks are left
// untouched together with their moments.
void adam_update(ModelParameters& params, const ModelParameters& grads, OptimizerState& state,
                 double learning_rate, const AdamConfig& adam, const TrainableGroups& trainable);

}  // namespace sfcap
