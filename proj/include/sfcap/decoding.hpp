#pragma once

#include <algorithm>
#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfcap/model.hpp"

namespace sfcap {

struct BeamConfig {
  std::size_t width = 5;
  std::size_t max_length = 20;
};

struct ScoredCaption {
  std::vector<TokenId> tokens;  // includes the final EOS when finished
  double log_prob = 0.0;        // sum of per-token log-probabilities
  double score = 0.0;           // log_prob / tokens.size()
  bool finished = false;        // ended with EOS
};

// Step-wise scorer over an arbitrary vocabulary. A Scorer provides
//   using State = ...;
//   State start() const;
//   std::pair<Vector, State> advance(const State&, TokenId input) const;
//     // log-probabilities of the next token after feeding `input`
//   TokenId start_token() const;  TokenId end_token() const;
template <class Scorer>
std::vector<ScoredCaption> beam_search(const Scorer& scorer, const BeamConfig& config) {
  if (config.width == 0) throw std::invalid_argument("beam_search: beam width must be >= 1");
  if (config.max_length == 0) throw std::invalid_argument("beam_search: max length must be >= 1");

  struct Hypothesis {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    typename Scorer::State state;
  };
  struct Candidate {
    std::size_t parent;
    TokenId token;
    double log_prob;
  };
  // Higher log-probability first, then lexicographically smaller tokens.
  auto better = [](double lp_a, const std::vector<TokenId>& a, double lp_b,
                   const std::vector<TokenId>& b) {
    if (lp_a != lp_b) return lp_a > lp_b;
    return a < b;
  };

  std::vector<Hypothesis> live{{{}, 0.0, scorer.start()}};
  std::vector<ScoredCaption> done;
  for (std::size_t step = 0; step < config.max_length && !live.empty(); ++step) {
    std::vector<std::pair<Vector, typename Scorer::State>> expanded;
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const TokenId input = live[h].tokens.empty() ? scorer.start_token() : live[h].tokens.back();
      expanded.push_back(scorer.advance(live[h].state, input));
      const Vector& logp = expanded.back().first;
      for (std::size_t w = 0; w < logp.size(); ++w) {
        candidates.push_back({h, static_cast<TokenId>(w), live[h].log_prob + logp[w]});
      }
    }
    auto seq_less = [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& ta = live[a.parent].tokens;
      const auto& tb = live[b.parent].tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(config.width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), seq_less);

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      std::vector<TokenId> tokens = live[c.parent].tokens;
      tokens.push_back(c.token);
      if (c.token == scorer.end_token() || tokens.size() == config.max_length) {
        const bool finished = c.token == scorer.end_token();
        const double score = c.log_prob / static_cast<double>(tokens.size());
        done.push_back({std::move(tokens), c.log_prob, score, finished});
      } else {
        next.push_back({std::move(tokens), c.log_prob, expanded[c.parent].second});
      }
    }
    live = std::move(next);
  }

  std::sort(done.begin(), done.end(), [&](const ScoredCaption& a, const ScoredCaption& b) {
    if (a.score != b.score) return a.score > b.score;
    return better(a.log_prob, a.tokens, b.log_prob, b.tokens);
  });
  return done;
}

// Learned-gate decoding with a trained model. State is the LSTM state; the
// image step runs in start().
class ModelScorer {
 public:
  using State = CellState;

  ModelScorer(const ModelParameters& params, Vector image_feature);

  State start() const;
  std::pair<Vector, State> advance(const State& state, TokenId input) const;
  TokenId start_token() const { return kBos; }
  TokenId end_token() const { return kEos; }

 private:
  const ModelParameters& params_;
  Vector feature_;
};

std::vector<ScoredCaption> beam_search(const Vector& image_feature, const ModelParameters& params,
                                       const BeamConfig& config);

struct GateTraceStep {
  TokenId input_token = kBos;
  TokenId target_token = kEos;   // ground-truth word at this step
  TokenId predicted_token = kEos;  // argmax of P_s
  double g_x = 0.0;
  double g_h = 0.0;
  double g_ip = 0.0;
  bool style_word = false;  // from the example's style_mask
  std::vector<std::pair<TokenId, double>> top_words;  // highest P_s first
};

struct GateTrace {
  std::string image_id;
  std::string style;
  std::vector<GateTraceStep> steps;
};

// Teacher-forced Learned-mode pass over a ground-truth caption, with g_ip
// measured against the reference path at every step.
GateTrace trace_gates(const CaptionExample& example, const ModelParameters& params,
                      std::size_t top_k = 4);

// One JSON record per step:
//   {"image_id", "step", "input", "token", "predicted", "g_x", "g_h",
//    "one_minus_g_ip", "style_word", "top": [[word, prob], ...]}
void write_trace_records(std::ostream& out, const GateTrace& trace, const Vocabulary& vocab);

}  // namespace sfcap
