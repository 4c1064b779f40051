#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sfcap/corpus.hpp"
#include "sfcap/decoding.hpp"

namespace sfcap {

using Words = std::vector<std::string>;

struct BleuScores {
  std::array<double, 4> bleu{};  // BLEU-1..4 (cumulative geometric means)
  std::array<double, 4> precision{};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

// Corpus-level BLEU: clipped n-gram precision summed over images, geometric
// mean over orders, brevity penalty against the per-image closest reference
// length (shorter wins ties). No smoothing.
BleuScores bleu(std::span<const Words> candidates, std::span<const std::vector<Words>> references,
                int max_n = 4);

std::size_t lcs_length(const Words& a, const Words& b);

// Mean over images of the best LCS F-measure among that image's references.
double rouge_l(std::span<const Words> candidates, std::span<const std::vector<Words>> references,
               double beta = 1.2);

struct MetricReport {
  std::string label;  // "stylized-refs" or "factual-refs"
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;

  bool operator==(const MetricReport&) const = default;
};

std::string format_report(const MetricReport& report);

MetricReport score_candidates(const std::string& label, std::span<const Words> candidates,
                              std::span<const std::vector<Words>> references);

struct WordGateStats {
  std::string word;
  std::size_t count = 0;
  double mean_g_h = 0.0;
  double mean_one_minus_g_ip = 0.0;
};

// Aggregated per ground-truth word across all traces, ordered by word id.
std::vector<WordGateStats> word_gate_statistics(std::span<const GateTrace> traces,
                                                const Vocabulary& vocab);
void sort_by_gate(std::vector<WordGateStats>& stats);          // descending mean g_h
void sort_by_style_strength(std::vector<WordGateStats>& stats);  // descending mean 1 - g_ip
std::string format_word_stats(const WordGateStats& stats);

struct EvaluationImage {
  std::string image_id;
  Vector feature;
  std::vector<Words> stylized_refs;
  std::vector<Words> factual_refs;
};

// Images come from `test` in first-seen order; both reference corpora must
// cover every test image id.
std::vector<EvaluationImage> align_references(const Corpus& test, const Corpus& factual_refs,
                                              const Corpus& stylized_refs);

struct EvaluationResult {
  MetricReport stylized;
  MetricReport factual;
  std::vector<Words> candidates;
};

// Beam-decodes every image and scores against both reference sets.
EvaluationResult evaluate(const ModelParameters& params, const Vocabulary& vocab,
                          std::span<const EvaluationImage> images, const BeamConfig& beam);

// Scores given candidates (one per image, aligned with `images`).
EvaluationResult evaluate_candidates(std::span<const Words> candidates,
                                     std::span<const EvaluationImage> images);

// Decoded words without the trailing EOS.
Words caption_text(const ScoredCaption& caption, const Vocabulary& vocab);

}  // namespace sfcap
