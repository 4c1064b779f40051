#pragma once

// Style-factual captioning network.
//
// Each LSTM pre-activation blends a factual matrix group (W) with a stylized
// group (S):
//
//   pre_k = (g_x S_xk + (1 - g_x) W_xk) x_t + (g_h S_hk + (1 - g_h) W_hk) h_{t-1} + b_k
//
// for k in {i, f, o, c}; i/f/o go through the sigmoid and c through tanh.
// g_x and g_h come from two small gate networks reading h_{t-1}. With both
// gates pinned to zero the cell is a plain LSTM over (W, b).
//
// Sequence layout: step 0 consumes the projected image feature from a zero
// state and predicts nothing. Step 1 consumes BOS and yields P^1 (target
// y_1); step t > 1 consumes y_{t-1} and yields P^t. Captions therefore hold
// y_1..y_T with EOS as y_T, and BOS never appears as a target.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfcap/numerics.hpp"
#include "sfcap/random.hpp"
#include "sfcap/vocabulary.hpp"

namespace sfcap {

inline const std::string kFactualStyle = "factual";

struct CaptionExample {
  std::string image_id;
  Vector image_feature;
  std::vector<TokenId> tokens;  // y_1..y_T, EOS-terminated by the loader
  std::string style = kFactualStyle;
  std::optional<std::vector<bool>> style_mask;  // length T when present

  bool is_factual() const { return style == kFactualStyle; }
  bool operator==(const CaptionExample&) const = default;
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 512;
  std::size_t hidden_dim = 512;
  std::size_t feature_dim = 0;
  // 0: gate network is a single affine H->1. Otherwise one tanh hidden layer
  // of this width (H/4 is the documented alternative).
  std::size_t gate_hidden = 0;
  std::size_t max_length = 32;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum LstmGate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

// x-matrices are H x E, h-matrices H x H; indexed by LstmGate.
struct CellWeights {
  std::array<Matrix, 4> input;
  std::array<Matrix, 4> recurrent;
  bool operator==(const CellWeights&) const = default;
};

struct StyleFactualCellParameters {
  CellWeights factual;   // W_x., W_h.
  CellWeights stylized;  // S_x., S_h.
  std::array<Vector, 4> bias;  // b_i, b_f, b_o, b_c; shared by both groups
  bool operator==(const StyleFactualCellParameters&) const = default;
};

struct GateNetwork {
  Matrix hidden_weight;  // empty when gate_hidden == 0
  Vector hidden_bias;
  Matrix out_weight;  // 1 x (H or gate_hidden)
  Vector out_bias;    // length 1
  bool operator==(const GateNetwork&) const = default;
};

struct GateNetworks {
  GateNetwork input;      // produces g_x
  GateNetwork recurrent;  // produces g_h
  bool operator==(const GateNetworks&) const = default;
};

struct ModelParameters {
  ModelConfig config;
  Matrix embedding;     // V x E
  Matrix image_weight;  // E x D_img
  Vector image_bias;    // E
  StyleFactualCellParameters cell;
  GateNetworks gates;
  Matrix output_weight;  // V x H
  Vector output_bias;    // V

  static ModelParameters zeros(const ModelConfig& config);
  // Glorot-uniform matrices, zero biases except b_f = 1. S is drawn
  // independently of W.
  static ModelParameters initialized(const ModelConfig& config, Rng& rng);

  bool operator==(const ModelParameters&) const = default;
};

enum class ParamGroup {
  Embedding,
  ImageProjection,
  Factual,   // W_x., W_h.
  CellBias,  // b_.
  Stylized,  // S_x., S_h.
  GateNetworks,
  OutputProjection,
};
inline constexpr std::size_t kParamGroupCount = 7;

const char* group_name(ParamGroup group);

template <class T>
struct BasicParameterBlock {
  std::string name;
  ParamGroup group;
  std::size_t rows;
  std::size_t cols;
  std::span<T> values;
};
using ParameterBlock = BasicParameterBlock<double>;
using ConstParameterBlock = BasicParameterBlock<const double>;

// Fixed, documented order; checkpoints and optimizer state rely on it.
std::vector<ParameterBlock> parameter_blocks(ModelParameters& params);
std::vector<ConstParameterBlock> parameter_blocks(const ModelParameters& params);

// Expected (rows, cols) for every block of a model with this config, in
// parameter_blocks order.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> expected_block_shapes(
    const ModelConfig& config);

enum class GateMode { ForcedZero, Learned };

struct CellState {
  Vector h;
  Vector c;

  static CellState zeros(std::size_t hidden) { return {Vector(hidden), Vector(hidden)}; }
};

struct CellActivations {
  Vector input_gate;
  Vector forget_gate;
  Vector output_gate;
  Vector candidate;
};

struct GateWeights {
  double g_x = 0.0;
  double g_h = 0.0;
};

// Intermediate values of one gate network evaluation.
struct GateNetworkCache {
  Vector hidden;  // tanh layer output, empty for the single-layer variant
  double value = 0.0;
};

GateWeights compute_gate_weights(const Vector& h_prev, const ModelParameters& params);

struct CellStepCache {
  Vector x;
  CellState prev;
  GateWeights gates;
  bool stylized_active = true;  // false: S products skipped (gates pinned to 0)
  CellActivations act;
  Vector c;
  Vector tanh_c;
  Vector h;
  // Per-gate products W x, S x, W h, S h; S entries empty when inactive.
  std::array<Vector, 4> wx, sx, wh, sh;
};

std::pair<CellState, CellActivations> cell_step(const StyleFactualCellParameters& cell,
                                                const Vector& x, const CellState& state,
                                                GateWeights gates);

CellState cell_step(const StyleFactualCellParameters& cell, const Vector& x,
                    const CellState& state, GateWeights gates, bool stylized_active,
                    CellStepCache& cache);

struct CellStepGrad {
  Vector dx;
  CellState dprev;
  GateWeights dgates;
};

// Accumulates parameter gradients into `grad_cell`. `dh`/`dc` are the
// gradients w.r.t. this step's output state.
CellStepGrad cell_step_backward(const StyleFactualCellParameters& cell,
                                const CellStepCache& cache, const Vector& dh, const Vector& dc,
                                StyleFactualCellParameters& grad_cell);

Vector output_logits(const Vector& h, const ModelParameters& params);
Vector output_distribution(const Vector& h, const ModelParameters& params);

Vector project_image(const Vector& feature, const ModelParameters& params);
Vector embed(TokenId token, const ModelParameters& params);

// Throws ValidationError when the example does not fit the model.
void validate_example(const CaptionExample& example, const ModelConfig& config);

struct SequenceForward {
  GateMode mode = GateMode::Learned;
  std::vector<Vector> distributions;  // P^1..P^T
  std::vector<GateWeights> gates;     // gates used to produce P^t
  GateWeights image_gates;            // gates at the image step
  // caches[0] is the image step, caches[t] produces P^t.
  std::vector<CellStepCache> caches;
  std::vector<std::array<GateNetworkCache, 2>> gate_caches;
};

SequenceForward forward_sequence(const CaptionExample& example, const ModelParameters& params,
                                 GateMode mode);

// Backpropagates dL/dP^t (one vector per step) into `grads`, which must be
// shaped like `params`. Gate gradients flow only in Learned mode.
void backward_sequence(const SequenceForward& forward, const CaptionExample& example,
                       const ModelParameters& params, std::span<const Vector> grad_distributions,
                       ModelParameters& grads);

}  // namespace sfcap
