#include "sfcap/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "sfcap/errors.hpp"
#include "sfcap/random.hpp"

namespace sfcap {

namespace {

using json = nlohmann::json;

struct RawCaption {
  std::vector<std::string> words;
  std::vector<bool> mask;
};

struct Scene {
  std::size_t subject, action, object, setting;
};

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::string padded_id(const char* prefix, std::size_t n) {
  std::string digits = std::to_string(n);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return std::string(prefix) + "-" + digits;
}

// Realizes a template; returns the index just past the action word.
RawCaption realize(const std::string& tmpl, const TemplateInventory& inv, const Scene& s,
                   std::size_t* after_action) {
  RawCaption cap;
  for (const auto& w : split_words(tmpl)) {
    if (w == "{subject}") {
      cap.words.push_back(inv.subjects[s.subject]);
    } else if (w == "{action}") {
      cap.words.push_back(inv.actions[s.action]);
      if (after_action) *after_action = cap.words.size();
    } else if (w == "{object}") {
      cap.words.push_back(inv.objects[s.object]);
    } else if (w == "{setting}") {
      cap.words.push_back(inv.settings[s.setting]);
    } else {
      cap.words.push_back(w);
    }
  }
  cap.mask.assign(cap.words.size(), false);
  return cap;
}

void validate_inventory(const SyntheticCorpusConfig& config) {
  const auto& inv = config.inventory;
  if (inv.subjects.empty() || inv.actions.empty() || inv.objects.empty() ||
      inv.settings.empty() || inv.templates.empty()) {
    throw ValidationError("synthetic corpus: every attribute inventory and the template list "
                          "must be non-empty");
  }
  const auto base = split_words(inv.templates.front());
  if (std::find(base.begin(), base.end(), "{action}") == base.end()) {
    throw ValidationError("synthetic corpus: the first template must contain {action}");
  }

  std::set<std::string> factual;
  for (const auto* list : {&inv.subjects, &inv.actions, &inv.objects, &inv.settings}) {
    factual.insert(list->begin(), list->end());
  }
  for (const auto& t : inv.templates) {
    for (const auto& w : split_words(t)) {
      if (w.front() != '{') factual.insert(w);
    }
  }

  std::set<std::string> seen_style_words;
  for (const auto& style : config.styles) {
    const auto it = std::find_if(inv.lexicons.begin(), inv.lexicons.end(),
                                 [&](const StyleLexicon& l) { return l.style == style; });
    if (it == inv.lexicons.end()) {
      throw ValidationError("synthetic corpus: no lexicon for style '" + style + "'");
    }
    if (it->fragments.empty()) {
      throw ValidationError("synthetic corpus: lexicon for style '" + style + "' is empty");
    }
    std::set<std::string> own;
    for (const auto& frag : it->fragments) {
      const auto words = split_words(frag);
      if (words.empty()) throw ValidationError("synthetic corpus: empty fragment in '" + style + "'");
      own.insert(words.begin(), words.end());
    }
    for (const auto& w : own) {
      if (factual.count(w)) {
        throw ValidationError("synthetic corpus: style word '" + w + "' of '" + style +
                              "' also occurs in factual captions");
      }
      if (!seen_style_words.insert(w).second) {
        throw ValidationError("synthetic corpus: style word '" + w +
                              "' is shared between style lexicons");
      }
    }
  }

  const std::size_t combos =
      inv.subjects.size() * inv.actions.size() * inv.objects.size() * inv.settings.size();
  if (config.scenes + config.test_scenes > combos) {
    throw ValidationError("synthetic corpus: " +
                          std::to_string(config.scenes + config.test_scenes) +
                          " scenes requested but the inventories only allow " +
                          std::to_string(combos) + " distinct attribute tuples");
  }
}

CaptionExample encode_example(const std::string& id, const Vector& feature,
                              const RawCaption& raw, const std::string& style,
                              const Vocabulary& vocab, bool with_mask) {
  CaptionExample ex;
  ex.image_id = id;
  ex.image_feature = feature;
  ex.tokens = vocab.encode(raw.words);
  ex.tokens.push_back(kEos);
  ex.style = style;
  if (with_mask) {
    std::vector<bool> mask = raw.mask;
    mask.push_back(false);
    ex.style_mask = std::move(mask);
  }
  return ex;
}

}  // namespace

TemplateInventory TemplateInventory::standard() {
  TemplateInventory inv;
  inv.subjects = {"dog", "cat", "man", "woman", "boy", "girl", "horse", "bird"};
  inv.actions = {"chases", "watches", "carries", "holds", "kicks", "finds", "pulls", "drops"};
  inv.objects = {"ball", "stick", "frisbee", "kite", "hat", "bag", "toy", "rope"};
  inv.settings = {"park", "street", "field", "beach", "yard", "garden"};
  inv.templates = {
      "a {subject} {action} a {object} in the {setting}",
      "the {subject} {action} the {object} in the {setting}",
      "a {subject} {action} a {object}",
      "in the {setting} a {subject} {action} a {object}",
      "the {subject} {action} a {object} at the {setting}",
  };
  inv.lexicons = {
      {"humorous",
       StyleLexicon::Placement::AfterAction,
       {"goofily", "clumsily wobbling", "like crazy clowns", "giggling wildly", "bonkers"}},
      {"romantic",
       StyleLexicon::Placement::End,
       {"dreaming of love", "full of tender passion", "forever sweetheart", "lovingly",
        "under starry romance"}},
  };
  return inv;
}

SyntheticCorpora generate_synthetic(const SyntheticCorpusConfig& config) {
  if (config.scenes == 0) throw ValidationError("synthetic corpus: need at least one scene");
  if (config.feature_dim == 0) throw ValidationError("synthetic corpus: feature_dim must be >= 1");
  if (config.noise < 0.0) throw ValidationError("synthetic corpus: noise must be >= 0");
  validate_inventory(config);
  const auto& inv = config.inventory;
  Rng rng(config.seed);

  auto attribute_vectors = [&](std::size_t n) {
    std::vector<Vector> vs(n, Vector(config.feature_dim));
    for (auto& v : vs) {
      for (double& x : v) x = rng.normal();
    }
    return vs;
  };
  const auto subject_vec = attribute_vectors(inv.subjects.size());
  const auto action_vec = attribute_vectors(inv.actions.size());
  const auto object_vec = attribute_vectors(inv.objects.size());
  const auto setting_vec = attribute_vectors(inv.settings.size());

  std::vector<Scene> tuples;
  for (std::size_t a = 0; a < inv.subjects.size(); ++a) {
    for (std::size_t b = 0; b < inv.actions.size(); ++b) {
      for (std::size_t c = 0; c < inv.objects.size(); ++c) {
        for (std::size_t d = 0; d < inv.settings.size(); ++d) tuples.push_back({a, b, c, d});
      }
    }
  }
  rng.shuffle(tuples);

  struct SceneCaptions {
    std::string id;
    Vector feature;
    std::vector<RawCaption> factual;
    std::map<std::string, std::vector<RawCaption>> stylized;
  };
  auto make_scene = [&](const std::string& id, const Scene& s) {
    SceneCaptions sc;
    sc.id = id;
    sc.feature = Vector(config.feature_dim);
    for (std::size_t j = 0; j < config.feature_dim; ++j) {
      sc.feature[j] = subject_vec[s.subject][j] + action_vec[s.action][j] +
                      object_vec[s.object][j] + setting_vec[s.setting][j] +
                      config.noise * rng.normal();
    }
    for (std::size_t i = 0; i < config.factual_per_scene; ++i) {
      sc.factual.push_back(realize(inv.templates[i % inv.templates.size()], inv, s, nullptr));
    }
    for (const auto& style : config.styles) {
      const auto& lex = *std::find_if(inv.lexicons.begin(), inv.lexicons.end(),
                                      [&](const StyleLexicon& l) { return l.style == style; });
      for (std::size_t k = 0; k < config.stylized_per_scene; ++k) {
        std::size_t after_action = 0;
        RawCaption cap = realize(inv.templates.front(), inv, s, &after_action);
        const auto frag = split_words(lex.fragments[(s.action + k) % lex.fragments.size()]);
        const std::size_t at =
            lex.placement == StyleLexicon::Placement::AfterAction ? after_action : cap.words.size();
        cap.words.insert(cap.words.begin() + static_cast<std::ptrdiff_t>(at), frag.begin(),
                         frag.end());
        cap.mask.insert(cap.mask.begin() + static_cast<std::ptrdiff_t>(at), frag.size(), true);
        sc.stylized[style].push_back(std::move(cap));
      }
    }
    return sc;
  };

  std::vector<SceneCaptions> train_scenes, test_scenes;
  for (std::size_t i = 0; i < config.scenes; ++i) {
    train_scenes.push_back(make_scene(padded_id("scene", i), tuples[i]));
  }
  for (std::size_t i = 0; i < config.test_scenes; ++i) {
    test_scenes.push_back(make_scene(padded_id("test", i), tuples[config.scenes + i]));
  }

  std::vector<std::vector<std::vector<std::string>>> all_words(1);
  for (const auto* group : {&train_scenes, &test_scenes}) {
    for (const auto& sc : *group) {
      for (const auto& c : sc.factual) all_words[0].push_back(c.words);
      for (const auto& [style, caps] : sc.stylized) {
        for (const auto& c : caps) all_words[0].push_back(c.words);
      }
    }
  }

  SyntheticCorpora out;
  out.vocab = build_vocabulary(all_words);
  auto fill_split = [&](const std::vector<SceneCaptions>& scenes, SyntheticSplit& split) {
    split.factual.vocab = out.vocab;
    split.factual.styles = {kFactualStyle};
    for (const auto& style : config.styles) {
      split.stylized[style].vocab = out.vocab;
      split.stylized[style].styles = {style};
    }
    for (const auto& sc : scenes) {
      for (const auto& c : sc.factual) {
        split.factual.examples.push_back(
            encode_example(sc.id, sc.feature, c, kFactualStyle, out.vocab, false));
      }
      for (const auto& [style, caps] : sc.stylized) {
        for (const auto& c : caps) {
          split.stylized[style].examples.push_back(
              encode_example(sc.id, sc.feature, c, style, out.vocab, true));
        }
      }
    }
  };
  fill_split(train_scenes, out.train);
  fill_split(test_scenes, out.test);
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::vector<std::string>>>& corpora,
                            std::size_t min_count) {
  if (corpora.empty()) throw ValidationError("build_vocabulary: no corpora given");
  std::unordered_map<std::string, std::size_t> counts;
  const auto& reserved = Vocabulary::reserved_spellings();
  for (const auto& corpus : corpora) {
    for (const auto& caption : corpus) {
      for (const auto& w : caption) {
        if (std::find(reserved.begin(), reserved.end(), w) != reserved.end()) continue;
        ++counts[w];
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> words;
  for (const auto& [w, n] : ranked) {
    if (n >= min_count) words.push_back(w);
  }
  if (words.empty()) throw ValidationError("build_vocabulary: no words survive");
  return Vocabulary(words);
}

std::vector<std::string> caption_words(const CaptionExample& example, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (TokenId t : example.tokens) {
    if (t == kEos) break;
    words.push_back(vocab.decode(t));
  }
  return words;
}

Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora, std::size_t min_count) {
  std::vector<std::vector<std::vector<std::string>>> words;
  for (const Corpus* c : corpora) {
    auto& list = words.emplace_back();
    for (const auto& ex : c->examples) list.push_back(caption_words(ex, c->vocab));
  }
  return build_vocabulary(words, min_count);
}

Corpus reencode(const Corpus& corpus, const Vocabulary& vocab) {
  Corpus out = corpus;
  out.vocab = vocab;
  for (std::size_t i = 0; i < out.examples.size(); ++i) {
    out.examples[i].tokens = vocab.encode(caption_words(corpus.examples[i], corpus.vocab));
    out.examples[i].tokens.push_back(kEos);
  }
  return out;
}

std::string format_corpus(const Corpus& corpus) {
  std::string text;
  for (const auto& ex : corpus.examples) {
    json line;
    line["image_id"] = ex.image_id;
    line["feature"] = std::vector<double>(ex.image_feature.begin(), ex.image_feature.end());
    const auto words = caption_words(ex, corpus.vocab);
    line["tokens"] = words;
    line["style"] = ex.style;
    if (ex.style_mask) {
      std::vector<int> mask;
      for (std::size_t i = 0; i < words.size(); ++i) mask.push_back((*ex.style_mask)[i] ? 1 : 0);
      line["style_mask"] = mask;
    }
    text += line.dump();
    text += '\n';
  }
  return text;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out << format_corpus(corpus);
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

Corpus parse_corpus(const std::string& text, const Vocabulary* vocab, const std::string& source) {
  struct Parsed {
    std::string id;
    std::vector<double> feature;
    std::vector<std::string> words;
    std::string style;
    std::optional<std::vector<bool>> mask;
  };
  std::vector<Parsed> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> dim;
  auto fail = [&](const std::string& msg) {
    throw ValidationError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Parsed p;
    try {
      const json j = json::parse(line);
      p.id = j.at("image_id").get<std::string>();
      p.feature = j.at("feature").get<std::vector<double>>();
      p.words = j.at("tokens").get<std::vector<std::string>>();
      p.style = j.at("style").get<std::string>();
      if (j.contains("style_mask")) {
        std::vector<bool> mask;
        for (int v : j.at("style_mask").get<std::vector<int>>()) mask.push_back(v != 0);
        p.mask = std::move(mask);
      }
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (p.feature.empty()) fail("empty feature vector");
    if (!dim) dim = p.feature.size();
    if (p.feature.size() != *dim) {
      fail("feature dimension " + std::to_string(p.feature.size()) + " differs from " +
           std::to_string(*dim) + " on earlier lines");
    }
    if (p.mask && p.mask->size() != p.words.size()) {
      fail("style_mask has " + std::to_string(p.mask->size()) + " entries for " +
           std::to_string(p.words.size()) + " tokens");
    }
    rows.push_back(std::move(p));
  }
  if (rows.empty()) throw ValidationError(source + ": empty corpus");

  Corpus corpus;
  if (vocab) {
    corpus.vocab = *vocab;
  } else {
    std::vector<std::vector<std::vector<std::string>>> words(1);
    for (const auto& r : rows) words[0].push_back(r.words);
    corpus.vocab = build_vocabulary(words);
  }
  for (auto& r : rows) {
    CaptionExample ex;
    ex.image_id = r.id;
    ex.image_feature = Vector(std::move(r.feature));
    ex.tokens = corpus.vocab.encode(r.words);
    ex.tokens.push_back(kEos);
    ex.style = r.style;
    if (r.mask) {
      r.mask->push_back(false);
      ex.style_mask = std::move(r.mask);
    }
    if (std::find(corpus.styles.begin(), corpus.styles.end(), ex.style) == corpus.styles.end()) {
      corpus.styles.push_back(ex.style);
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

Corpus read_corpus(const std::filesystem::path& path, const Vocabulary* vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), vocab, path.string());
}

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  for (const auto& w : vocab.words()) out << w << '\n';
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  const auto& reserved = Vocabulary::reserved_spellings();
  if (words.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), words.begin())) {
    throw ValidationError("vocabulary '" + path.string() + "' does not start with the reserved tokens");
  }
  return Vocabulary(std::vector<std::string>(words.begin() + reserved.size(), words.end()));
}

}  // namespace sfcap
