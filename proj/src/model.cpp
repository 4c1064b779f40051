#include "sfcap/model.hpp"

#include <cmath>

#include "sfcap/errors.hpp"

namespace sfcap {

namespace {

constexpr const char* kGateSuffix[4] = {"i", "f", "o", "c"};

template <class Params, class Fn>
void visit_blocks(Params& p, Fn&& fn) {
  fn("embedding", ParamGroup::Embedding, p.embedding);
  fn("image_weight", ParamGroup::ImageProjection, p.image_weight);
  fn("image_bias", ParamGroup::ImageProjection, p.image_bias);
  for (std::size_t k = 0; k < 4; ++k) {
    fn(std::string("W_x") + kGateSuffix[k], ParamGroup::Factual, p.cell.factual.input[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    fn(std::string("W_h") + kGateSuffix[k], ParamGroup::Factual, p.cell.factual.recurrent[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    fn(std::string("b_") + kGateSuffix[k], ParamGroup::CellBias, p.cell.bias[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    fn(std::string("S_x") + kGateSuffix[k], ParamGroup::Stylized, p.cell.stylized.input[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    fn(std::string("S_h") + kGateSuffix[k], ParamGroup::Stylized, p.cell.stylized.recurrent[k]);
  }
  auto gate = [&](const std::string& prefix, auto& net) {
    if (p.config.gate_hidden > 0) {
      fn(prefix + ".hidden_weight", ParamGroup::GateNetworks, net.hidden_weight);
      fn(prefix + ".hidden_bias", ParamGroup::GateNetworks, net.hidden_bias);
    }
    fn(prefix + ".out_weight", ParamGroup::GateNetworks, net.out_weight);
    fn(prefix + ".out_bias", ParamGroup::GateNetworks, net.out_bias);
  };
  gate("gate_x", p.gates.input);
  gate("gate_h", p.gates.recurrent);
  fn("output_weight", ParamGroup::OutputProjection, p.output_weight);
  fn("output_bias", ParamGroup::OutputProjection, p.output_bias);
}

std::size_t rows_of(const Matrix& m) { return m.rows(); }
std::size_t rows_of(const Vector& v) { return v.size(); }
std::size_t cols_of(const Matrix& m) { return m.cols(); }
std::size_t cols_of(const Vector&) { return 1; }

GateNetwork make_gate_network(const ModelConfig& c) {
  GateNetwork net;
  if (c.gate_hidden > 0) {
    net.hidden_weight = Matrix(c.gate_hidden, c.hidden_dim);
    net.hidden_bias = Vector(c.gate_hidden);
    net.out_weight = Matrix(1, c.gate_hidden);
  } else {
    net.out_weight = Matrix(1, c.hidden_dim);
  }
  net.out_bias = Vector(1);
  return net;
}

double gate_forward(const GateNetwork& net, const Vector& h, GateNetworkCache& cache) {
  const Vector* top = &h;
  if (net.hidden_weight.rows() > 0) {
    cache.hidden = tanh(affine(h, net.hidden_weight, net.hidden_bias));
    top = &cache.hidden;
  } else {
    cache.hidden = Vector();
  }
  if (top->size() != net.out_weight.cols()) {
    throw ShapeError("gate network: input " + shape_string(*top) + " vs weight " +
                     shape_string(net.out_weight));
  }
  double z = net.out_bias[0];
  const auto w = net.out_weight.row(0);
  for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * (*top)[j];
  cache.value = sigmoid(z);
  return cache.value;
}

// Adds dL/dh into `dh`.
void gate_backward(const GateNetwork& net, const Vector& h, const GateNetworkCache& cache,
                   double dvalue, GateNetwork& grad, Vector& dh) {
  const double g = cache.value;
  const double dz = dvalue * g * (1.0 - g);
  if (dz == 0.0) return;
  grad.out_bias[0] += dz;
  if (net.hidden_weight.rows() > 0) {
    Vector dtop(cache.hidden.size());
    for (std::size_t j = 0; j < dtop.size(); ++j) {
      grad.out_weight(0, j) += dz * cache.hidden[j];
      dtop[j] = dz * net.out_weight(0, j);
    }
    const Vector dpre = tanh_backward(cache.hidden, dtop);
    add_outer(grad.hidden_weight, dpre, h);
    axpy(1.0, dpre, grad.hidden_bias);
    axpy(1.0, matvec_transposed(net.hidden_weight, dpre), dh);
  } else {
    for (std::size_t j = 0; j < h.size(); ++j) {
      grad.out_weight(0, j) += dz * h[j];
      dh[j] += dz * net.out_weight(0, j);
    }
  }
}

GateWeights gates_forward(const ModelParameters& params, const Vector& h,
                          std::array<GateNetworkCache, 2>& caches) {
  return {gate_forward(params.gates.input, h, caches[0]),
          gate_forward(params.gates.recurrent, h, caches[1])};
}

void fill_glorot(Matrix& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (double& v : m.values()) v = rng.uniform(-a, a);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < kReservedTokens + 1) {
    throw ValidationError("model config: vocabulary size must be >= 5, got " +
                          std::to_string(vocab_size));
  }
  if (embed_dim == 0 || hidden_dim == 0 || feature_dim == 0) {
    throw ValidationError("model config: embed, hidden and feature dimensions must be positive");
  }
  if (max_length == 0) throw ValidationError("model config: max_length must be positive");
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::Embedding: return "embedding";
    case ParamGroup::ImageProjection: return "image_projection";
    case ParamGroup::Factual: return "factual";
    case ParamGroup::CellBias: return "cell_bias";
    case ParamGroup::Stylized: return "stylized";
    case ParamGroup::GateNetworks: return "gate_networks";
    case ParamGroup::OutputProjection: return "output_projection";
  }
  return "unknown";
}

ModelParameters ModelParameters::zeros(const ModelConfig& c) {
  c.validate();
  ModelParameters p;
  p.config = c;
  p.embedding = Matrix(c.vocab_size, c.embed_dim);
  p.image_weight = Matrix(c.embed_dim, c.feature_dim);
  p.image_bias = Vector(c.embed_dim);
  for (auto* group : {&p.cell.factual, &p.cell.stylized}) {
    for (std::size_t k = 0; k < 4; ++k) {
      group->input[k] = Matrix(c.hidden_dim, c.embed_dim);
      group->recurrent[k] = Matrix(c.hidden_dim, c.hidden_dim);
    }
  }
  for (auto& b : p.cell.bias) b = Vector(c.hidden_dim);
  p.gates.input = make_gate_network(c);
  p.gates.recurrent = make_gate_network(c);
  p.output_weight = Matrix(c.vocab_size, c.hidden_dim);
  p.output_bias = Vector(c.vocab_size);
  return p;
}

ModelParameters ModelParameters::initialized(const ModelConfig& c, Rng& rng) {
  ModelParameters p = zeros(c);
  visit_blocks(p, [&](const std::string&, ParamGroup, auto& t) {
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Matrix>) fill_glorot(t, rng);
  });
  p.cell.bias[kForgetGate].fill(1.0);
  return p;
}

std::vector<ParameterBlock> parameter_blocks(ModelParameters& params) {
  std::vector<ParameterBlock> blocks;
  visit_blocks(params, [&](const std::string& name, ParamGroup group, auto& t) {
    blocks.push_back({name, group, rows_of(t), cols_of(t), t.values()});
  });
  return blocks;
}

std::vector<ConstParameterBlock> parameter_blocks(const ModelParameters& params) {
  std::vector<ConstParameterBlock> blocks;
  visit_blocks(params, [&](const std::string& name, ParamGroup group, const auto& t) {
    blocks.push_back({name, group, rows_of(t), cols_of(t), t.values()});
  });
  return blocks;
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> expected_block_shapes(
    const ModelConfig& config) {
  const ModelParameters shaped = ModelParameters::zeros(config);
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> shapes;
  for (const auto& b : parameter_blocks(shaped)) shapes.push_back({b.name, {b.rows, b.cols}});
  return shapes;
}

GateWeights compute_gate_weights(const Vector& h_prev, const ModelParameters& params) {
  if (h_prev.size() != params.config.hidden_dim) {
    throw ShapeError("compute_gate_weights: hidden state " + shape_string(h_prev) +
                     ", expected length " + std::to_string(params.config.hidden_dim));
  }
  std::array<GateNetworkCache, 2> caches;
  return gates_forward(params, h_prev, caches);
}

CellState cell_step(const StyleFactualCellParameters& cell, const Vector& x,
                    const CellState& state, GateWeights gates, bool stylized_active,
                    CellStepCache& cache) {
  const std::size_t hidden = cell.bias[0].size();
  if (state.h.size() != hidden || state.c.size() != hidden) {
    throw ShapeError("cell_step: state " + shape_string(state.h) + "/" + shape_string(state.c) +
                     " vs hidden size " + std::to_string(hidden));
  }
  if (x.size() != cell.factual.input[0].cols()) {
    throw ShapeError("cell_step: input " + shape_string(x) + " vs W_x " +
                     shape_string(cell.factual.input[0]));
  }
  cache.x = x;
  cache.prev = state;
  cache.gates = gates;
  cache.stylized_active = stylized_active;

  const double gx = gates.g_x;
  const double gh = gates.g_h;
  std::array<Vector, 4> pre;
  for (std::size_t k = 0; k < 4; ++k) {
    cache.wx[k] = matvec(cell.factual.input[k], x);
    cache.wh[k] = matvec(cell.factual.recurrent[k], state.h);
    if (stylized_active) {
      cache.sx[k] = matvec(cell.stylized.input[k], x);
      cache.sh[k] = matvec(cell.stylized.recurrent[k], state.h);
    } else {
      cache.sx[k] = Vector();
      cache.sh[k] = Vector();
    }
    pre[k] = Vector(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      const double xin = stylized_active ? gx * cache.sx[k][j] + (1.0 - gx) * cache.wx[k][j]
                                         : cache.wx[k][j];
      const double hin = stylized_active ? gh * cache.sh[k][j] + (1.0 - gh) * cache.wh[k][j]
                                         : cache.wh[k][j];
      pre[k][j] = xin + hin + cell.bias[k][j];
    }
  }
  cache.act.input_gate = sigmoid(pre[kInputGate]);
  cache.act.forget_gate = sigmoid(pre[kForgetGate]);
  cache.act.output_gate = sigmoid(pre[kOutputGate]);
  cache.act.candidate = tanh(pre[kCandidate]);

  cache.c = Vector(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    cache.c[j] = cache.act.forget_gate[j] * state.c[j] +
                 cache.act.input_gate[j] * cache.act.candidate[j];
  }
  cache.tanh_c = tanh(cache.c);
  cache.h = hadamard(cache.act.output_gate, cache.tanh_c);
  require_finite(cache.c.values(), "cell memory");
  require_finite(cache.h.values(), "cell hidden state");
  return {cache.h, cache.c};
}

std::pair<CellState, CellActivations> cell_step(const StyleFactualCellParameters& cell,
                                                const Vector& x, const CellState& state,
                                                GateWeights gates) {
  if (!(gates.g_x >= 0.0 && gates.g_x <= 1.0 && gates.g_h >= 0.0 && gates.g_h <= 1.0)) {
    throw std::invalid_argument("cell_step: gate weights must lie in [0, 1]");
  }
  CellStepCache cache;
  CellState next = cell_step(cell, x, state, gates, true, cache);
  return {std::move(next), std::move(cache.act)};
}

CellStepGrad cell_step_backward(const StyleFactualCellParameters& cell,
                                const CellStepCache& cache, const Vector& dh, const Vector& dc_in,
                                StyleFactualCellParameters& grad_cell) {
  const std::size_t hidden = cache.h.size();
  const auto& a = cache.act;

  Vector dc(hidden);
  Vector d_out(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    d_out[j] = dh[j] * cache.tanh_c[j];
    const double dtanh = dh[j] * a.output_gate[j];
    dc[j] = dc_in[j] + dtanh * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
  }
  Vector d_in(hidden), d_forget(hidden), d_cand(hidden);
  CellStepGrad out{Vector(cache.x.size()), CellState::zeros(hidden), {}};
  for (std::size_t j = 0; j < hidden; ++j) {
    d_in[j] = dc[j] * a.candidate[j];
    d_cand[j] = dc[j] * a.input_gate[j];
    d_forget[j] = dc[j] * cache.prev.c[j];
    out.dprev.c[j] = dc[j] * a.forget_gate[j];
  }

  std::array<Vector, 4> dpre;
  dpre[kInputGate] = sigmoid_backward(a.input_gate, d_in);
  dpre[kForgetGate] = sigmoid_backward(a.forget_gate, d_forget);
  dpre[kOutputGate] = sigmoid_backward(a.output_gate, d_out);
  dpre[kCandidate] = tanh_backward(a.candidate, d_cand);

  const bool active = cache.stylized_active;
  const double gx = active ? cache.gates.g_x : 0.0;
  const double gh = active ? cache.gates.g_h : 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const Vector& d = dpre[k];
    axpy(1.0, d, grad_cell.bias[k]);

    add_outer(grad_cell.factual.input[k], d, cache.x, 1.0 - gx);
    add_outer(grad_cell.factual.recurrent[k], d, cache.prev.h, 1.0 - gh);
    axpy(1.0 - gx, matvec_transposed(cell.factual.input[k], d), out.dx);
    axpy(1.0 - gh, matvec_transposed(cell.factual.recurrent[k], d), out.dprev.h);

    if (gx != 0.0) {
      add_outer(grad_cell.stylized.input[k], d, cache.x, gx);
      axpy(gx, matvec_transposed(cell.stylized.input[k], d), out.dx);
    }
    if (gh != 0.0) {
      add_outer(grad_cell.stylized.recurrent[k], d, cache.prev.h, gh);
      axpy(gh, matvec_transposed(cell.stylized.recurrent[k], d), out.dprev.h);
    }
    if (active) {
      for (std::size_t j = 0; j < hidden; ++j) {
        out.dgates.g_x += d[j] * (cache.sx[k][j] - cache.wx[k][j]);
        out.dgates.g_h += d[j] * (cache.sh[k][j] - cache.wh[k][j]);
      }
    }
  }
  return out;
}

Vector output_logits(const Vector& h, const ModelParameters& params) {
  return affine(h, params.output_weight, params.output_bias);
}

Vector output_distribution(const Vector& h, const ModelParameters& params) {
  return softmax(output_logits(h, params));
}

Vector project_image(const Vector& feature, const ModelParameters& params) {
  if (feature.size() != params.config.feature_dim) {
    throw ShapeError("image feature " + shape_string(feature) + " vs model feature dimension " +
                     std::to_string(params.config.feature_dim));
  }
  return affine(feature, params.image_weight, params.image_bias);
}

Vector embed(TokenId token, const ModelParameters& params) {
  if (token < 0 || static_cast<std::size_t>(token) >= params.embedding.rows()) {
    throw ValidationError("token id " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(params.embedding.rows()));
  }
  const auto row = params.embedding.row(static_cast<std::size_t>(token));
  return Vector(std::vector<double>(row.begin(), row.end()));
}

void validate_example(const CaptionExample& example, const ModelConfig& config) {
  if (example.tokens.empty()) {
    throw ValidationError("example '" + example.image_id + "': empty token sequence");
  }
  if (example.tokens.size() > config.max_length) {
    throw ValidationError("example '" + example.image_id + "': length " +
                          std::to_string(example.tokens.size()) + " exceeds max_length " +
                          std::to_string(config.max_length));
  }
  for (TokenId t : example.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
      throw ValidationError("example '" + example.image_id + "': token id " + std::to_string(t) +
                            " >= vocabulary size " + std::to_string(config.vocab_size));
    }
  }
  if (example.style_mask && example.style_mask->size() != example.tokens.size()) {
    throw ValidationError("example '" + example.image_id + "': style mask length " +
                          std::to_string(example.style_mask->size()) + " != token count " +
                          std::to_string(example.tokens.size()));
  }
  if (example.image_feature.size() != config.feature_dim) {
    throw ShapeError("example '" + example.image_id + "': feature " +
                     shape_string(example.image_feature) + " vs model feature dimension " +
                     std::to_string(config.feature_dim));
  }
}

SequenceForward forward_sequence(const CaptionExample& example, const ModelParameters& params,
                                 GateMode mode) {
  validate_example(example, params.config);
  const std::size_t steps = example.tokens.size();
  const bool learned = mode == GateMode::Learned;

  SequenceForward fw;
  fw.mode = mode;
  fw.caches.resize(steps + 1);
  fw.gate_caches.resize(steps + 1);
  fw.distributions.reserve(steps);
  fw.gates.reserve(steps);

  CellState state = CellState::zeros(params.config.hidden_dim);
  for (std::size_t t = 0; t <= steps; ++t) {
    const Vector x = t == 0 ? project_image(example.image_feature, params)
                            : embed(t == 1 ? kBos : example.tokens[t - 2], params);
    const GateWeights g = learned ? gates_forward(params, state.h, fw.gate_caches[t]) : GateWeights{};
    state = cell_step(params.cell, x, state, g, learned, fw.caches[t]);
    if (t == 0) {
      fw.image_gates = g;
    } else {
      fw.distributions.push_back(output_distribution(state.h, params));
      fw.gates.push_back(g);
    }
  }
  return fw;
}

void backward_sequence(const SequenceForward& fw, const CaptionExample& example,
                       const ModelParameters& params, std::span<const Vector> grad_distributions,
                       ModelParameters& grads) {
  const std::size_t steps = example.tokens.size();
  if (grad_distributions.size() != steps || fw.distributions.size() != steps) {
    throw ShapeError("backward_sequence: " + std::to_string(grad_distributions.size()) +
                     " gradients for " + std::to_string(steps) + " steps");
  }
  const std::size_t hidden = params.config.hidden_dim;
  const bool learned = fw.mode == GateMode::Learned;

  Vector dh_next(hidden);
  Vector dc_next(hidden);
  for (std::size_t t = steps + 1; t-- > 0;) {
    const CellStepCache& cache = fw.caches[t];
    Vector dh = dh_next;
    if (t > 0) {
      const Vector dlogits = softmax_backward(fw.distributions[t - 1], grad_distributions[t - 1]);
      add_outer(grads.output_weight, dlogits, cache.h);
      axpy(1.0, dlogits, grads.output_bias);
      axpy(1.0, matvec_transposed(params.output_weight, dlogits), dh);
    }
    CellStepGrad g = cell_step_backward(params.cell, cache, dh, dc_next, grads.cell);
    if (learned) {
      gate_backward(params.gates.input, cache.prev.h, fw.gate_caches[t][0], g.dgates.g_x,
                    grads.gates.input, g.dprev.h);
      gate_backward(params.gates.recurrent, cache.prev.h, fw.gate_caches[t][1], g.dgates.g_h,
                    grads.gates.recurrent, g.dprev.h);
    }
    if (t == 0) {
      add_outer(grads.image_weight, g.dx, example.image_feature);
      axpy(1.0, g.dx, grads.image_bias);
    } else {
      const TokenId input = t == 1 ? kBos : example.tokens[t - 2];
      auto row = grads.embedding.row(static_cast<std::size_t>(input));
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += g.dx[j];
    }
    dh_next = std::move(g.dprev.h);
    dc_next = std::move(g.dprev.c);
  }
}

}  // namespace sfcap
