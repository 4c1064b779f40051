#include "sfcap/decoding.hpp"

#include <ostream>

#include "json.hpp"
#include "sfcap/losses.hpp"
#include "sfcap/trainer.hpp"

namespace sfcap {

ModelScorer::ModelScorer(const ModelParameters& params, Vector image_feature)
    : params_(params), feature_(std::move(image_feature)) {}

CellState ModelScorer::start() const {
  const CellState zero = CellState::zeros(params_.config.hidden_dim);
  const GateWeights g = compute_gate_weights(zero.h, params_);
  CellStepCache cache;
  return cell_step(params_.cell, project_image(feature_, params_), zero, g, true, cache);
}

std::pair<Vector, CellState> ModelScorer::advance(const CellState& state, TokenId input) const {
  const GateWeights g = compute_gate_weights(state.h, params_);
  CellStepCache cache;
  CellState next = cell_step(params_.cell, embed(input, params_), state, g, true, cache);
  Vector logp = log_softmax(output_logits(next.h, params_));
  return {std::move(logp), std::move(next)};
}

std::vector<ScoredCaption> beam_search(const Vector& image_feature, const ModelParameters& params,
                                       const BeamConfig& config) {
  const ModelScorer scorer(params, image_feature);
  return beam_search(scorer, config);
}

GateTrace trace_gates(const CaptionExample& example, const ModelParameters& params,
                      std::size_t top_k) {
  const SequenceForward fw = forward_sequence(example, params, GateMode::Learned);
  const std::vector<Vector> reference = reference_forward(example, params);

  GateTrace trace;
  trace.image_id = example.image_id;
  trace.style = example.style;
  for (std::size_t t = 0; t < example.tokens.size(); ++t) {
    const Vector& p = fw.distributions[t];
    GateTraceStep s;
    s.input_token = t == 0 ? kBos : example.tokens[t - 1];
    s.target_token = example.tokens[t];
    s.g_x = fw.gates[t].g_x;
    s.g_h = fw.gates[t].g_h;
    s.g_ip = inner_product_gate(p, reference[t]);
    s.style_word = example.style_mask && (*example.style_mask)[t];

    std::vector<std::pair<TokenId, double>> ranked;
    for (std::size_t w = 0; w < p.size(); ++w) ranked.push_back({static_cast<TokenId>(w), p[w]});
    const std::size_t k = std::min(top_k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(),
                      [](const auto& a, const auto& b) {
                        return a.second != b.second ? a.second > b.second : a.first < b.first;
                      });
    s.predicted_token = ranked.front().first;
    ranked.resize(k);
    s.top_words = std::move(ranked);
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

void write_trace_records(std::ostream& out, const GateTrace& trace, const Vocabulary& vocab) {
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const GateTraceStep& s = trace.steps[t];
    nlohmann::json top = nlohmann::json::array();
    for (const auto& [id, p] : s.top_words) top.push_back({vocab.decode(id), p});
    const nlohmann::json record{{"image_id", trace.image_id},
                                {"step", t + 1},
                                {"input", vocab.decode(s.input_token)},
                                {"token", vocab.decode(s.target_token)},
                                {"predicted", vocab.decode(s.predicted_token)},
                                {"g_x", s.g_x},
                                {"g_h", s.g_h},
                                {"one_minus_g_ip", 1.0 - s.g_ip},
                                {"style_word", s.style_word},
                                {"top", top}};
    out << record.dump() << '\n';
  }
}

}  // namespace sfcap
