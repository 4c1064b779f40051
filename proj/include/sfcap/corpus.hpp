#pragma once

// Synthetic stylized-captioning corpora and their on-disk format.
//
// Each scene has a latent (subject, action, object, setting) tuple. Its image
// feature is the sum of fixed random vectors for the four attributes plus
// Gaussian noise. Factual captions realize templates over the tuple; stylized
// captions take the first template and insert a fragment from a per-style
// lexicon that shares no word with the factual templates or with other
// styles. The k-th stylized caption of a scene uses fragment
// (action + k) mod |fragments|, so the choice is visible in the image.
// The inserted words are flagged in style_mask.
//
// File format: one JSON object per line,
//   {"image_id": str, "feature": [num...], "tokens": [str...], "style": str,
//    "style_mask": [0|1...]}     (style_mask optional)
// Tokens are stored without EOS; the loader appends it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sfcap/model.hpp"
#include "sfcap/vocabulary.hpp"

namespace sfcap {

struct Corpus {
  std::vector<CaptionExample> examples;
  Vocabulary vocab;
  std::vector<std::string> styles;  // distinct style tags, first-seen order

  bool operator==(const Corpus&) const = default;
};

struct StyleLexicon {
  enum class Placement { AfterAction, End };
  std::string style;
  Placement placement = Placement::End;
  std::vector<std::string> fragments;  // each fragment is space-separated words
};

struct TemplateInventory {
  std::vector<std::string> subjects;
  std::vector<std::string> actions;
  std::vector<std::string> objects;
  std::vector<std::string> settings;
  // Placeholders {subject} {action} {object} {setting}. The first template is
  // also the base for stylized captions and must contain {action}.
  std::vector<std::string> templates;
  std::vector<StyleLexicon> lexicons;

  static TemplateInventory standard();
};

struct SyntheticCorpusConfig {
  std::size_t scenes = 200;
  std::size_t test_scenes = 0;
  std::size_t factual_per_scene = 5;
  std::size_t stylized_per_scene = 1;
  std::vector<std::string> styles{"humorous", "romantic"};
  std::size_t feature_dim = 32;
  double noise = 0.1;
  std::uint64_t seed = 1;
  TemplateInventory inventory = TemplateInventory::standard();
};

struct SyntheticSplit {
  Corpus factual;
  std::map<std::string, Corpus> stylized;
};

struct SyntheticCorpora {
  Vocabulary vocab;
  SyntheticSplit train;
  SyntheticSplit test;  // empty corpora when test_scenes == 0
};

SyntheticCorpora generate_synthetic(const SyntheticCorpusConfig& config);

// Union over all corpora's words; reserved tokens first, then descending
// count, ties lexicographic. Words below min_count are left out (they encode
// to UNK).
Vocabulary build_vocabulary(const std::vector<std::vector<std::vector<std::string>>>& corpora,
                            std::size_t min_count = 1);
Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora, std::size_t min_count = 1);

// Words of an example without the trailing EOS.
std::vector<std::string> caption_words(const CaptionExample& example, const Vocabulary& vocab);

// Re-encodes every example against another vocabulary.
Corpus reencode(const Corpus& corpus, const Vocabulary& vocab);

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
std::string format_corpus(const Corpus& corpus);
// Without a vocabulary one is built from the file itself.
Corpus read_corpus(const std::filesystem::path& path, const Vocabulary* vocab = nullptr);
Corpus parse_corpus(const std::string& text, const Vocabulary* vocab = nullptr,
                    const std::string& source = "<memory>");

// Vocabulary file: one word per line in id order, reserved tokens included.
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocabulary(const std::filesystem::path& path);

}  // namespace sfcap
