#include "sfcap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <unordered_map>

#include "json.hpp"
#include "sfcap/errors.hpp"

namespace sfcap {

namespace {

using NgramCounts = std::map<Words, std::size_t>;

NgramCounts count_ngrams(const Words& words, std::size_t n) {
  NgramCounts counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++counts[Words(words.begin() + static_cast<std::ptrdiff_t>(i),
                   words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void require_aligned(std::span<const Words> candidates,
                     std::span<const std::vector<Words>> references, const char* metric) {
  if (candidates.empty()) throw ValidationError(std::string(metric) + ": empty candidate set");
  if (candidates.size() != references.size()) {
    throw ValidationError(std::string(metric) + ": " + std::to_string(candidates.size()) +
                          " candidates for " + std::to_string(references.size()) + " images");
  }
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (references[i].empty()) {
      throw ValidationError(std::string(metric) + ": image " + std::to_string(i) +
                            " has no references");
    }
  }
}

}  // namespace

BleuScores bleu(std::span<const Words> candidates, std::span<const std::vector<Words>> references,
                int max_n) {
  require_aligned(candidates, references, "bleu");
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must be in 1..4");
  const auto orders = static_cast<std::size_t>(max_n);

  std::array<std::size_t, 4> matched{}, total{};
  BleuScores out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Words& cand = candidates[i];
    out.candidate_length += cand.size();

    std::size_t closest = references[i].front().size();
    for (const auto& ref : references[i]) {
      const auto d = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (d(ref.size()) < d(closest) || (d(ref.size()) == d(closest) && ref.size() < closest)) {
        closest = ref.size();
      }
    }
    out.reference_length += closest;

    for (std::size_t n = 1; n <= orders; ++n) {
      const NgramCounts cand_counts = count_ngrams(cand, n);
      NgramCounts max_ref;
      for (const auto& ref : references[i]) {
        for (const auto& [gram, c] : count_ngrams(ref, n)) {
          max_ref[gram] = std::max(max_ref[gram], c);
        }
      }
      for (const auto& [gram, c] : cand_counts) {
        const auto it = max_ref.find(gram);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
        total[n - 1] += c;
      }
    }
  }

  const double c = static_cast<double>(out.candidate_length);
  const double r = static_cast<double>(out.reference_length);
  out.brevity_penalty = c == 0.0 ? 0.0 : (c < r ? std::exp(1.0 - r / c) : 1.0);

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < orders; ++n) {
    out.precision[n] =
        total[n] ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;
    if (out.precision[n] == 0.0) zero = true;
    if (!zero) log_sum += std::log(out.precision[n]);
    out.bleu[n] = zero ? 0.0
                       : out.brevity_penalty * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const Words> candidates, std::span<const std::vector<Words>> references,
               double beta) {
  require_aligned(candidates, references, "rouge_l");
  const double b2 = beta * beta;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (const auto& ref : references[i]) {
      const std::size_t lcs = lcs_length(candidates[i], ref);
      if (lcs == 0) continue;
      const double p = static_cast<double>(lcs) / static_cast<double>(candidates[i].size());
      const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
      best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
    }
    sum += best;
  }
  return sum / static_cast<double>(candidates.size());
}

std::string format_report(const MetricReport& report) {
  const nlohmann::json j{{"report", report.label},   {"bleu_1", report.bleu[0]},
                         {"bleu_2", report.bleu[1]}, {"bleu_3", report.bleu[2]},
                         {"bleu_4", report.bleu[3]}, {"rouge_l", report.rouge_l}};
  return j.dump();
}

MetricReport score_candidates(const std::string& label, std::span<const Words> candidates,
                              std::span<const std::vector<Words>> references) {
  MetricReport report;
  report.label = label;
  report.bleu = bleu(candidates, references).bleu;
  report.rouge_l = rouge_l(candidates, references);
  return report;
}

std::vector<WordGateStats> word_gate_statistics(std::span<const GateTrace> traces,
                                                const Vocabulary& vocab) {
  if (traces.empty()) throw ValidationError("word_gate_statistics: no traces");
  struct Acc {
    std::size_t count = 0;
    double g_h = 0.0;
    double one_minus_gip = 0.0;
  };
  std::map<TokenId, Acc> acc;
  for (const auto& trace : traces) {
    for (const auto& s : trace.steps) {
      Acc& a = acc[s.target_token];
      ++a.count;
      a.g_h += s.g_h;
      a.one_minus_gip += 1.0 - s.g_ip;
    }
  }
  std::vector<WordGateStats> stats;
  for (const auto& [id, a] : acc) {
    const double n = static_cast<double>(a.count);
    stats.push_back({vocab.decode(id), a.count, a.g_h / n, a.one_minus_gip / n});
  }
  return stats;
}

void sort_by_gate(std::vector<WordGateStats>& stats) {
  std::stable_sort(stats.begin(), stats.end(),
                   [](const auto& a, const auto& b) { return a.mean_g_h > b.mean_g_h; });
}

void sort_by_style_strength(std::vector<WordGateStats>& stats) {
  std::stable_sort(stats.begin(), stats.end(), [](const auto& a, const auto& b) {
    return a.mean_one_minus_g_ip > b.mean_one_minus_g_ip;
  });
}

std::string format_word_stats(const WordGateStats& s) {
  const nlohmann::json j{{"word", s.word},
                         {"count", s.count},
                         {"mean_g_h", s.mean_g_h},
                         {"mean_one_minus_g_ip", s.mean_one_minus_g_ip}};
  return j.dump();
}

std::vector<EvaluationImage> align_references(const Corpus& test, const Corpus& factual_refs,
                                              const Corpus& stylized_refs) {
  std::vector<EvaluationImage> images;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& ex : test.examples) {
    if (index.emplace(ex.image_id, images.size()).second) {
      images.push_back({ex.image_id, ex.image_feature, {}, {}});
    }
  }
  auto attach = [&](const Corpus& refs, bool stylized) {
    for (const auto& ex : refs.examples) {
      const auto it = index.find(ex.image_id);
      if (it == index.end()) continue;
      auto& target = stylized ? images[it->second].stylized_refs : images[it->second].factual_refs;
      target.push_back(caption_words(ex, refs.vocab));
    }
  };
  attach(factual_refs, false);
  attach(stylized_refs, true);

  std::string missing;
  for (const auto& img : images) {
    if (img.factual_refs.empty()) missing += " " + img.image_id + "(factual)";
    if (img.stylized_refs.empty()) missing += " " + img.image_id + "(stylized)";
  }
  if (!missing.empty()) throw ValidationError("references missing for image ids:" + missing);
  return images;
}

Words caption_text(const ScoredCaption& caption, const Vocabulary& vocab) {
  Words words;
  for (TokenId t : caption.tokens) {
    if (t == kEos) break;
    words.push_back(vocab.decode(t));
  }
  return words;
}

EvaluationResult evaluate_candidates(std::span<const Words> candidates,
                                     std::span<const EvaluationImage> images) {
  if (candidates.size() != images.size()) {
    throw ValidationError("evaluate: " + std::to_string(candidates.size()) + " candidates for " +
                          std::to_string(images.size()) + " images");
  }
  std::vector<std::vector<Words>> stylized, factual;
  for (const auto& img : images) {
    stylized.push_back(img.stylized_refs);
    factual.push_back(img.factual_refs);
  }
  EvaluationResult result;
  result.candidates.assign(candidates.begin(), candidates.end());
  result.stylized = score_candidates("stylized-refs", candidates, stylized);
  result.factual = score_candidates("factual-refs", candidates, factual);
  return result;
}

EvaluationResult evaluate(const ModelParameters& params, const Vocabulary& vocab,
                          std::span<const EvaluationImage> images, const BeamConfig& beam) {
  if (images.empty()) throw ValidationError("evaluate: no test images");
  std::vector<Words> candidates;
  candidates.reserve(images.size());
  for (const auto& img : images) {
    const auto ranked = beam_search(img.feature, params, beam);
    candidates.push_back(ranked.empty() ? Words{} : caption_text(ranked.front(), vocab));
  }
  return evaluate_candidates(candidates, images);
}

}  // namespace sfcap
