#include "sfcap/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfcap/checkpoint.hpp"
#include "sfcap/corpus.hpp"
#include "sfcap/decoding.hpp"
#include "sfcap/errors.hpp"
#include "sfcap/evaluation.hpp"
#include "sfcap/trainer.hpp"

namespace sfcap {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

SyntheticCorpusConfig corpus_config_from_json(const std::string& text) {
  SyntheticCorpusConfig c;
  json j;
  try {
    j = json::parse(text);
    for (const auto& [key, value] : j.items()) {
      if (key == "scenes") c.scenes = value.get<std::size_t>();
      else if (key == "test_scenes") c.test_scenes = value.get<std::size_t>();
      else if (key == "factual_per_scene") c.factual_per_scene = value.get<std::size_t>();
      else if (key == "stylized_per_scene") c.stylized_per_scene = value.get<std::size_t>();
      else if (key == "styles") c.styles = value.get<std::vector<std::string>>();
      else if (key == "feature_dim") c.feature_dim = value.get<std::size_t>();
      else if (key == "noise") c.noise = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ValidationError("corpus config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("corpus config: ") + e.what());
  }
  return c;
}

struct GenCorpusArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t scenes = 0;
  std::size_t test_scenes = 0;
  std::size_t feature_dim = 0;
  double noise = 0.0;
};

int gen_corpus(const GenCorpusArgs& a, const CLI::App& cmd, std::ostream& out) {
  SyntheticCorpusConfig config;
  if (!a.config.empty()) config = corpus_config_from_json(read_text(a.config));
  if (cmd.count("--seed")) config.seed = a.seed;
  if (cmd.count("--scenes")) config.scenes = a.scenes;
  if (cmd.count("--test-scenes")) config.test_scenes = a.test_scenes;
  if (cmd.count("--feature-dim")) config.feature_dim = a.feature_dim;
  if (cmd.count("--noise")) config.noise = a.noise;

  const SyntheticCorpora corpora = generate_synthetic(config);
  const fs::path dir(a.out);
  fs::create_directories(dir);

  write_corpus(dir / "factual.corpus", corpora.train.factual);
  out << "factual.corpus: " << corpora.train.factual.examples.size() << " captions\n";
  for (const auto& [style, corpus] : corpora.train.stylized) {
    write_corpus(dir / (style + ".corpus"), corpus);
    out << style << ".corpus: " << corpus.examples.size() << " captions\n";
  }
  if (config.test_scenes > 0) {
    write_corpus(dir / "factual.test.corpus", corpora.test.factual);
    out << "factual.test.corpus: " << corpora.test.factual.examples.size() << " captions\n";
    for (const auto& [style, corpus] : corpora.test.stylized) {
      write_corpus(dir / (style + ".test.corpus"), corpus);
      out << style << ".test.corpus: " << corpus.examples.size() << " captions\n";
    }
  }
  write_vocabulary(dir / "vocab.txt", corpora.vocab);
  out << "vocab.txt: " << corpora.vocab.size() << " words\n";
  return kExitOk;
}

// Reads a corpus and checks that every word is known to `vocab`.
Corpus read_with_vocabulary(const std::string& path, const Vocabulary& vocab) {
  const Corpus own = read_corpus(path);
  for (const auto& w : own.vocab.words()) {
    if (!vocab.contains(w)) {
      throw ValidationError("corpus '" + path + "' contains '" + w +
                            "', which is not in the vocabulary");
    }
  }
  return read_corpus(path, &vocab);
}

struct TrainArgs {
  std::string factual, style, validation, config, out, vocab, metrics, policy, objective;
  double alpha = 0.0, lr = 0.0;
  std::size_t epochs = 0, patience = 0, hidden = 0, embed = 0, batch_size = 0, gate_hidden = 0;
  std::uint64_t seed = 0;
  bool save_every_epoch = false;
};

int train_command(const TrainArgs& a, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  TrainerConfig config;
  if (!a.config.empty()) config = trainer_config_from_json(read_text(a.config));
  if (cmd.count("--alpha")) config.alpha = a.alpha;
  if (cmd.count("--epochs")) config.epochs = a.epochs;
  if (cmd.count("--patience")) config.patience = a.patience;
  if (cmd.count("--seed")) config.seed = a.seed;
  if (cmd.count("--hidden")) config.hidden = a.hidden;
  if (cmd.count("--embed")) config.embed = a.embed;
  if (cmd.count("--batch-size")) config.batch_size = a.batch_size;
  if (cmd.count("--lr")) config.learning_rate = a.lr;
  if (cmd.count("--gate-hidden")) config.gate_hidden = a.gate_hidden;
  if (cmd.count("--stage2-policy")) config.stage2_policy = parse_stage2_policy(a.policy);
  if (cmd.count("--stage2-objective")) {
    config.stage2_objective = parse_stage2_objective(a.objective);
  }
  config.validate();

  Corpus factual, stylized;
  std::optional<Corpus> validation;
  if (!a.vocab.empty()) {
    const Vocabulary vocab = read_vocabulary(a.vocab);
    factual = read_with_vocabulary(a.factual, vocab);
    stylized = read_with_vocabulary(a.style, vocab);
    if (!a.validation.empty()) validation = read_with_vocabulary(a.validation, vocab);
  } else {
    const Corpus f = read_corpus(a.factual);
    const Corpus s = read_corpus(a.style);
    std::vector<const Corpus*> all{&f, &s};
    std::optional<Corpus> v;
    if (!a.validation.empty()) all.push_back(&v.emplace(read_corpus(a.validation)));
    const Vocabulary vocab = build_vocabulary(all);
    factual = reencode(f, vocab);
    stylized = reencode(s, vocab);
    if (v) validation = reencode(*v, vocab);
  }
  if (factual.examples.front().image_feature.size() !=
      stylized.examples.front().image_feature.size()) {
    throw ValidationError("factual and stylized corpora have different feature dimensions");
  }

  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics" : a.metrics;
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw ValidationError("cannot open metrics log '" + metrics_path + "'");

  TrainObserver observer;
  observer.on_epoch = [&](const EpochMetrics& m, const Checkpoint& ck) {
    const std::string line = format_metrics_line(m);
    metrics << line << '\n' << std::flush;
    out << line << '\n';
    if (a.save_every_epoch) save_checkpoint(a.out + ".epoch" + std::to_string(m.epoch), ck);
  };
  TrainOutcome outcome;
  try {
    outcome = train_style(config, factual, stylized, observer, validation ? &*validation : nullptr);
  } catch (const NumericError& e) {
    err << "numeric failure during training: " << e.what() << '\n';
    return kExitNumeric;
  }
  save_checkpoint(a.out, outcome.checkpoint);
  out << "wrote " << a.out << " (epoch " << outcome.checkpoint.epochs_completed << ")\n";
  return kExitOk;
}

std::vector<CaptionExample> unique_images(const Corpus& corpus) {
  std::vector<CaptionExample> images;
  std::vector<std::string> seen;
  for (const auto& ex : corpus.examples) {
    if (std::find(seen.begin(), seen.end(), ex.image_id) != seen.end()) continue;
    seen.push_back(ex.image_id);
    images.push_back(ex);
  }
  return images;
}

std::string join(const Words& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

struct CaptionArgs {
  std::string checkpoint, features;
  std::size_t beam = 0, max_len = 20;
};

int caption_command(const CaptionArgs& a, const CLI::App& cmd, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Corpus features = read_corpus(a.features, &ck.vocab);
  BeamConfig beam{cmd.count("--beam") ? a.beam : ck.config.beam_width, a.max_len};
  for (const auto& img : unique_images(features)) {
    if (img.image_feature.size() != ck.params.config.feature_dim) {
      throw ShapeError("image '" + img.image_id + "' has feature dimension " +
                       std::to_string(img.image_feature.size()) + ", checkpoint expects " +
                       std::to_string(ck.params.config.feature_dim));
    }
    const auto ranked = beam_search(img.image_feature, ck.params, beam);
    const ScoredCaption& best = ranked.front();
    std::vector<std::string> words = ck.vocab.decode(best.tokens);
    char score[64];
    std::snprintf(score, sizeof score, "%.12g", best.score);
    out << img.image_id << '\t' << join(words) << '\t' << score << '\n';
  }
  return kExitOk;
}

struct TraceArgs {
  std::string checkpoint, corpus, out;
};

int trace_command(const TraceArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Corpus corpus = read_corpus(a.corpus, &ck.vocab);
  std::size_t traced = 0, steps = 0;
  std::ofstream file(a.out, std::ios::binary);
  if (!file) throw ValidationError("cannot open '" + a.out + "' for writing");
  for (const auto& ex : corpus.examples) {
    if (ex.is_factual()) continue;
    const GateTrace trace = trace_gates(ex, ck.params);
    write_trace_records(file, trace, ck.vocab);
    ++traced;
    steps += trace.steps.size();
  }
  if (traced == 0) {
    throw ValidationError("corpus '" + a.corpus + "' has no stylized captions to trace");
  }
  out << "traced " << traced << " captions (" << steps << " steps) into " << a.out << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, test, factual_refs, style_refs, candidates;
  std::size_t beam = 0, max_len = 20;
};

int eval_command(const EvalArgs& a, const CLI::App& cmd, std::ostream& out) {
  for (const auto& p : {a.test, a.factual_refs, a.style_refs}) {
    if (!fs::exists(p)) throw ValidationError("missing file '" + p + "'");
  }
  if (a.candidates.empty() && a.checkpoint.empty()) {
    throw ValidationError("eval needs --checkpoint (or --candidates)");
  }
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint);
  const Corpus test = read_corpus(a.test, ck ? &ck->vocab : nullptr);
  const Corpus factual = read_corpus(a.factual_refs, ck ? &ck->vocab : nullptr);
  const Corpus styled = read_corpus(a.style_refs, ck ? &ck->vocab : nullptr);
  const auto images = align_references(test, factual, styled);

  EvaluationResult result;
  if (!a.candidates.empty()) {
    const Corpus cands = read_corpus(a.candidates);
    std::map<std::string, Words> by_id;
    for (const auto& ex : cands.examples) by_id.emplace(ex.image_id, caption_words(ex, cands.vocab));
    std::vector<Words> list;
    for (const auto& img : images) {
      const auto it = by_id.find(img.image_id);
      if (it == by_id.end()) throw ValidationError("no candidate for image id " + img.image_id);
      list.push_back(it->second);
    }
    result = evaluate_candidates(list, images);
  } else {
    const BeamConfig beam{cmd.count("--beam") ? a.beam : ck->config.beam_width, a.max_len};
    result = evaluate(ck->params, ck->vocab, images, beam);
  }
  out << format_report(result.stylized) << '\n';
  out << format_report(result.factual) << '\n';

  if (ck) {
    std::vector<GateTrace> traces;
    for (const auto& ex : styled.examples) {
      if (!ex.is_factual()) traces.push_back(trace_gates(ex, ck->params));
    }
    if (!traces.empty()) {
      auto stats = word_gate_statistics(traces, ck->vocab);
      sort_by_gate(stats);
      for (const auto& s : stats) out << format_word_stats(s) << '\n';
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Style-factual LSTM captioning toolkit"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate synthetic factual/stylized corpora");
  gen_cmd->add_option("--config", gen.config, "JSON corpus configuration")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--scenes", gen.scenes, "Training scenes");
  gen_cmd->add_option("--test-scenes", gen.test_scenes, "Held-out test scenes");
  gen_cmd->add_option("--feature-dim", gen.feature_dim, "Image feature dimension");
  gen_cmd->add_option("--noise", gen.noise, "Feature noise standard deviation");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Two-stage training for one style");
  train_cmd->add_option("--factual", tr.factual, "Factual corpus")->required();
  train_cmd->add_option("--style", tr.style, "Stylized corpus")->required();
  train_cmd->add_option("--validation", tr.validation, "Held-out corpus of the same style");
  train_cmd->add_option("--config", tr.config, "JSON trainer configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--vocab", tr.vocab, "Vocabulary file (default: built from corpora)");
  train_cmd->add_option("--metrics", tr.metrics, "Metrics log path (default: <out>.metrics)");
  train_cmd->add_option("--stage2-policy", tr.policy, "style-and-gates | whole-network-except-w");
  train_cmd->add_option("--stage2-objective", tr.objective, "adaptive | plain-mle");
  train_cmd->add_option("--alpha", tr.alpha, "KL weight (default 1.1)");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--patience", tr.patience, "Stop after N epochs without validation gain");
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_option("--hidden", tr.hidden, "LSTM hidden size");
  train_cmd->add_option("--embed", tr.embed, "Word embedding size");
  train_cmd->add_option("--gate-hidden", tr.gate_hidden, "Gate network hidden width (0: affine)");
  train_cmd->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_flag("--save-every-epoch", tr.save_every_epoch, "Also write <out>.epochN");

  CaptionArgs cap;
  auto* caption_cmd = app.add_subcommand("caption", "Beam-search captions for image features");
  caption_cmd->add_option("--checkpoint", cap.checkpoint, "Checkpoint")->required();
  caption_cmd->add_option("--features", cap.features, "Corpus-format file with features")->required();
  caption_cmd->add_option("--beam", cap.beam, "Beam width")->check(CLI::PositiveNumber);
  caption_cmd->add_option("--max-len", cap.max_len, "Maximum caption length")->check(CLI::PositiveNumber);

  TraceArgs trc;
  auto* trace_cmd = app.add_subcommand("trace", "Per-step gate traces over stylized captions");
  trace_cmd->add_option("--checkpoint", trc.checkpoint, "Checkpoint")->required();
  trace_cmd->add_option("--corpus", trc.corpus, "Stylized corpus")->required();
  trace_cmd->add_option("--out", trc.out, "Trace output (JSON lines)")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "BLEU/ROUGE-L against stylized and factual refs");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint");
  eval_cmd->add_option("--test", ev.test, "Corpus with test image features")->required();
  eval_cmd->add_option("--factual-refs", ev.factual_refs, "Factual reference corpus")->required();
  eval_cmd->add_option("--style-refs", ev.style_refs, "Stylized reference corpus")->required();
  eval_cmd->add_option("--candidates", ev.candidates, "Score these captions instead of decoding");
  eval_cmd->add_option("--beam", ev.beam, "Beam width")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-len", ev.max_len, "Maximum caption length")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return gen_corpus(gen, *gen_cmd, out);
    if (train_cmd->parsed()) return train_command(tr, *train_cmd, out, err);
    if (caption_cmd->parsed()) return caption_command(cap, *caption_cmd, out);
    if (trace_cmd->parsed()) return trace_command(trc, out);
    if (eval_cmd->parsed()) return eval_command(ev, *eval_cmd, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace sfcap
