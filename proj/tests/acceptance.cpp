// Acceptance suite. One PASS/FAIL line per criterion, INFO lines are not
// scored. Exit status 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "sfcap/checkpoint.hpp"
#include "sfcap/cli.hpp"
#include "sfcap/corpus.hpp"
#include "sfcap/decoding.hpp"
#include "sfcap/evaluation.hpp"
#include "sfcap/losses.hpp"
#include "sfcap/trainer.hpp"
#include "test_support.hpp"

using namespace sfcap;
using namespace sfcap::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kReductionTol = 1e-12;
constexpr double kReductionSeconds = 10.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kLossTol = 1e-12;
constexpr double kKlSelfTol = 1e-9;
constexpr double kToyLoss = 0.195042324;
constexpr double kToyTol = 1e-6;
constexpr double kGateMargin = 0.1;
constexpr double kGateSeconds = 600.0;
constexpr double kRescoreTol = 1e-9;
constexpr double kMetricTol = 1e-6;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void run(int id, const std::string& name, const std::function<Outcome()>& body,
         double budget_seconds = 0.0, bool info_only = false) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (budget_seconds > 0.0 && secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over budget " + fmt("%.0f s", budget_seconds);
  }
  if (!o.pass && !info_only) ++failures;
  const char* tag = info_only ? "INFO" : (o.pass ? "PASS" : "FAIL");
  std::cout << tag << " [" << id << "] " << name << ": " << o.detail
            << " (" << fmt("%.1f", secs) << " s)" << std::endl;
}

double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<CaptionExample> make_batch(const ModelConfig& cfg, std::uint64_t seed,
                                       std::size_t count, const std::string& style) {
  Rng rng(seed);
  std::vector<CaptionExample> batch;
  for (std::size_t i = 0; i < count; ++i) batch.push_back(random_example(cfg, rng, 3 + i % 4, style));
  return batch;
}

Outcome reduction_identity() {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = small_config(6 + rng.index(10), 2 + rng.index(7), 2 + rng.index(7),
                                   1 + rng.index(6));
    cfg.gate_hidden = trial % 2 ? 3 : 0;
    const ModelParameters p = random_model(cfg, 500 + trial, 1.0);

    // Single cell step with both gates at zero.
    Vector x(cfg.embed_dim);
    CellState s = CellState::zeros(cfg.hidden_dim);
    for (double& v : x) v = rng.normal();
    for (double& v : s.h) v = rng.uniform(-1, 1);
    for (double& v : s.c) v = rng.normal();
    const auto [next, act] = cell_step(p.cell, x, s, GateWeights{0.0, 0.0});
    const PlainState want = vanilla_lstm_step(p.cell.factual, p.cell.bias, to_vec(x),
                                              PlainState{to_vec(s.h), to_vec(s.c)});
    worst = std::max({worst, max_abs_diff(to_vec(next.h), want.h),
                      max_abs_diff(to_vec(next.c), want.c)});

    // Whole teacher-forced sequence.
    const CaptionExample ex = random_example(cfg, rng, 2 + rng.index(8));
    const auto fw = forward_sequence(ex, p, GateMode::ForcedZero);
    const auto ref = vanilla_captioner(p, ex, p.cell.factual);
    for (std::size_t t = 0; t < ref.size(); ++t) {
      worst = std::max(worst, max_abs_diff(to_vec(fw.distributions[t]), ref[t]));
    }
  }
  return {worst <= kReductionTol, "100 instances, max|diff| " + fmt("%.3g", worst) + " (tol " +
                                      fmt("%.0e", kReductionTol) + ")"};
}

Outcome gradient_fidelity() {
  double worst1 = 0.0, worst2 = 0.0;
  std::string where;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const ModelConfig cfg = small_config(12, 6, 6, 5);

    ModelParameters p = random_model(cfg, seed);
    const auto factual = make_batch(cfg, seed + 100, 3, "factual");
    ModelParameters g1 = ModelParameters::zeros(cfg);
    stage1_loss(factual, p, &g1);
    {
      auto blocks = parameter_blocks(p);
      const auto gb = parameter_blocks(std::as_const(g1));
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto r = finite_difference_check([&] { return stage1_loss(factual, p, nullptr); },
                                               blocks[b].values, gb[b].values);
        if (r.max_relative_error > worst1) {
          worst1 = r.max_relative_error;
          where = "stage1 " + blocks[b].name;
        }
      }
    }

    const auto styled = make_batch(cfg, seed + 200, 3, "humorous");
    ModelParameters g2 = ModelParameters::zeros(cfg);
    const auto eval = stage2_loss(styled, p, 1.1, Stage2Objective::Adaptive, &g2);
    // g_ip is a constant of the objective; hold it at its current value.
    std::vector<std::vector<double>> strength;
    for (const auto& steps : eval.steps) {
      strength.emplace_back();
      for (const auto& s : steps) strength.back().push_back(s.g_ip);
    }
    const TrainableGroups trainable = stage2_trainable(Stage2Policy::StyleAndGatesOnly);
    auto blocks = parameter_blocks(p);
    const auto gb = parameter_blocks(std::as_const(g2));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (!trainable.contains(blocks[b].group)) continue;
      const auto r = finite_difference_check(
          [&] {
            return stage2_loss(styled, p, 1.1, Stage2Objective::Adaptive, nullptr, &strength).loss;
          },
          blocks[b].values, gb[b].values);
      if (r.max_relative_error > worst2) {
        worst2 = r.max_relative_error;
        if (worst2 > worst1) where = "stage2 " + blocks[b].name;
      }
    }
  }
  return {worst1 < kGradTol && worst2 < kGradTol,
          "3 seeds, max rel err stage1 " + fmt("%.3g", worst1) + ", stage2 " +
              fmt("%.3g", worst2) + " (worst " + where + ", tol " + fmt("%.0e", kGradTol) + ")"};
}

std::vector<std::vector<double>> snapshot(const ModelParameters& p,
                                          std::initializer_list<ParamGroup> groups) {
  std::vector<std::vector<double>> out;
  for (const auto& b : parameter_blocks(p)) {
    if (std::find(groups.begin(), groups.end(), b.group) != groups.end()) {
      out.emplace_back(b.values.begin(), b.values.end());
    }
  }
  return out;
}

Outcome freezing_contracts() {
  const ModelConfig cfg = small_config();
  TrainerConfig tc;
  tc.learning_rate = 0.01;
  bool ok = true;
  std::string detail;

  TrainingState state{random_model(cfg, 21), {}};
  state.optimizer = OptimizerState::for_model(state.params);
  ModelParameters g = ModelParameters::zeros(cfg);
  stage1_loss(make_batch(cfg, 22, 4, "factual"), state.params, &g);
  bool s_grad_zero = true;
  for (const auto& b : parameter_blocks(std::as_const(g))) {
    if (b.group != ParamGroup::Stylized) continue;
    for (double v : b.values) s_grad_zero = s_grad_zero && v == 0.0;
  }
  ok = ok && s_grad_zero;
  detail += std::string("stage1 dS ") + (s_grad_zero ? "exactly 0" : "NONZERO");

  const auto frozen1 = snapshot(state.params, {ParamGroup::Stylized, ParamGroup::GateNetworks});
  for (int i = 0; i < 100; ++i) stage1_step(make_batch(cfg, 1000 + i, 4, "factual"), state, tc);
  const bool s1 = snapshot(state.params, {ParamGroup::Stylized, ParamGroup::GateNetworks}) == frozen1;
  ok = ok && s1;
  detail += std::string(", S/gates after 100 stage-1 steps ") + (s1 ? "unchanged" : "CHANGED");

  for (const Stage2Policy policy :
       {Stage2Policy::StyleAndGatesOnly, Stage2Policy::WholeNetworkExceptW}) {
    tc.stage2_policy = policy;
    TrainingState st = state;
    const auto frozen2 = snapshot(st.params, {ParamGroup::Factual, ParamGroup::CellBias});
    const auto moving = snapshot(st.params, {ParamGroup::Stylized});
    for (int i = 0; i < 100; ++i) stage2_step(make_batch(cfg, 2000 + i, 4, "humorous"), st, tc);
    const bool s2 = snapshot(st.params, {ParamGroup::Factual, ParamGroup::CellBias}) == frozen2;
    const bool trained = snapshot(st.params, {ParamGroup::Stylized}) != moving;
    ok = ok && s2 && trained;
    detail += ", W/b after 100 stage-2 steps (" + to_string(policy) + ") " +
              (s2 ? "unchanged" : "CHANGED") + (trained ? "" : " [S did not move]");
  }
  return {ok, detail};
}

Outcome loss_algebra() {
  Rng rng(31);
  auto dist = [&](std::size_t n, double sharp) {
    Vector z(n);
    for (double& v : z) v = sharp * rng.normal();
    return softmax(z);
  };
  const std::size_t steps = 6, vocab = 10;
  std::vector<Vector> s, r;
  std::vector<TokenId> y;
  for (std::size_t t = 0; t < steps; ++t) {
    s.push_back(dist(vocab, 3.0));
    r.push_back(dist(vocab, 3.0));
    y.push_back(static_cast<TokenId>(rng.index(vocab)));
  }
  const StepMask mask = full_mask(steps);

  double weighted = 0.0, plain = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    double g = 0.0;
    for (std::size_t w = 0; w < vocab; ++w) g += s[t][w] * r[t][w];
    const double nll = -std::log(s[t][static_cast<std::size_t>(y[t])]);
    weighted += (1.0 - g) * nll;
    plain += nll;
  }
  const double e_alpha0 = std::abs(adaptive_loss(s, r, y, mask, 0.0).value - weighted);
  const double e_mle = std::abs(
      adaptive_loss_with_strength(s, r, std::vector<double>(steps, 0.0), y, mask, 1.1).value -
      plain);

  double kl_self = 0.0;
  for (const auto& p : s) kl_self = std::max(kl_self, std::abs(kl_divergence(p, p)));

  std::size_t gip_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.index(40);
    const double g = inner_product_gate(dist(n, 10.0), dist(n, 10.0));
    gip_ok += g > 0.0 && g <= 1.0;
  }

  // Three-word toy against direct evaluation.
  const Vec ps{0.7, 0.2, 0.1}, pr{0.6, 0.3, 0.1};
  double g = 0.0, d = 0.0;
  for (std::size_t w = 0; w < 3; ++w) {
    g += ps[w] * pr[w];
    d += ps[w] * std::log(ps[w] / pr[w]);
  }
  const double oracle = -(1.0 - g) * std::log(ps[0]) + g * d;
  const double toy = adaptive_loss(std::vector<Vector>{Vector(ps)}, std::vector<Vector>{Vector(pr)},
                                   std::vector<TokenId>{0}, full_mask(1), 1.0)
                         .value;

  const bool ok = e_alpha0 <= kLossTol && e_mle <= kLossTol && kl_self < kKlSelfTol &&
                  gip_ok == 1000 && std::abs(toy - oracle) < kToyTol &&
                  std::abs(oracle - kToyLoss) < kToyTol;
  return {ok, "alpha=0 err " + fmt("%.2g", e_alpha0) + ", g_ip=0 err " + fmt("%.2g", e_mle) +
                  ", max KL(P,P) " + fmt("%.2g", kl_self) + ", g_ip in (0,1] " +
                  std::to_string(gip_ok) + "/1000, V=3 toy " + fmt("%.9f", toy) + " vs oracle " +
                  fmt("%.9f", oracle)};
}

// Shared synthetic experiment setup for the trained criteria.
SyntheticCorpora experiment_corpora(std::uint64_t seed) {
  SyntheticCorpusConfig cc;
  cc.scenes = 200;
  cc.test_scenes = 50;
  cc.seed = seed;
  return generate_synthetic(cc);
}

TrainerConfig experiment_trainer(std::uint64_t seed, Stage2Objective objective) {
  TrainerConfig tc;
  tc.hidden = 64;
  tc.embed = 64;
  tc.learning_rate = 0.001;
  tc.batch_size = 16;
  tc.alpha = 1.1;
  tc.epochs = 40;
  tc.seed = seed;
  tc.stage2_objective = objective;
  return tc;
}

struct Separation {
  double gh_style = 0.0, gh_plain = 0.0, ip_style = 0.0, ip_plain = 0.0;
};

Separation gate_separation(const ModelParameters& params, const Corpus& stylized) {
  double sums[4] = {0, 0, 0, 0};
  std::size_t n_style = 0, n_plain = 0;
  for (const auto& ex : stylized.examples) {
    for (const auto& st : trace_gates(ex, params).steps) {
      if (st.style_word) {
        sums[0] += st.g_h;
        sums[2] += 1.0 - st.g_ip;
        ++n_style;
      } else {
        sums[1] += st.g_h;
        sums[3] += 1.0 - st.g_ip;
        ++n_plain;
      }
    }
  }
  const double a = static_cast<double>(n_style), b = static_cast<double>(n_plain);
  return {sums[0] / a, sums[1] / b, sums[2] / a, sums[3] / b};
}

std::string describe(const Separation& s) {
  return "g_h style " + fmt("%.3f", s.gh_style) + " vs other " + fmt("%.3f", s.gh_plain) +
         ", 1-g_ip style " + fmt("%.3f", s.ip_style) + " vs other " + fmt("%.3f", s.ip_plain);
}

std::map<std::uint64_t, TrainOutcome> adaptive_runs;

Outcome gate_separation_criterion() {
  const SyntheticCorpora corpora = experiment_corpora(1);
  const auto& humorous = corpora.train.stylized.at("humorous");
  const TrainOutcome out =
      train_style(experiment_trainer(1, Stage2Objective::Adaptive), corpora.train.factual, humorous);
  adaptive_runs.emplace(1, out);
  const Separation s = gate_separation(out.checkpoint.params, humorous);
  const bool ok = s.gh_style - s.gh_plain >= kGateMargin && s.ip_style > s.ip_plain;
  return {ok, "humorous: " + describe(s) + " (margin " + fmt("%.2f", kGateMargin) + ")"};
}

Outcome romantic_report() {
  const SyntheticCorpora corpora = experiment_corpora(1);
  const auto& romantic = corpora.train.stylized.at("romantic");
  const TrainOutcome out =
      train_style(experiment_trainer(1, Stage2Objective::Adaptive), corpora.train.factual, romantic);
  const Separation s = gate_separation(out.checkpoint.params, romantic);
  return {true, "romantic: " + describe(s)};
}

double factual_bleu1(const ModelParameters& params, const SyntheticCorpora& corpora) {
  const auto images = align_references(corpora.test.factual, corpora.test.factual,
                                       corpora.test.stylized.at("humorous"));
  return evaluate(params, corpora.vocab, images, BeamConfig{5, 20}).factual.bleu[0];
}

Outcome factual_preservation() {
  double adaptive = 0.0, ablation = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SyntheticCorpora corpora = experiment_corpora(seed);
    const auto& humorous = corpora.train.stylized.at("humorous");
    auto it = adaptive_runs.find(seed);
    if (it == adaptive_runs.end()) {
      it = adaptive_runs
               .emplace(seed, train_style(experiment_trainer(seed, Stage2Objective::Adaptive),
                                          corpora.train.factual, humorous))
               .first;
    }
    TrainerConfig plain = experiment_trainer(seed, Stage2Objective::PlainMle);
    plain.alpha = 0.0;
    const TrainOutcome mle = train_style(plain, corpora.train.factual, humorous);
    const double a = factual_bleu1(it->second.checkpoint.params, corpora);
    const double m = factual_bleu1(mle.checkpoint.params, corpora);
    adaptive += a / 3.0;
    ablation += m / 3.0;
    per_seed += (per_seed.empty() ? "" : ", ") + fmt("%.3f", a) + "/" + fmt("%.3f", m);
  }
  return {adaptive >= ablation, "mean BLEU-1 vs factual refs: adaptive " + fmt("%.4f", adaptive) +
                                    " vs plain-MLE " + fmt("%.4f", ablation) + " (per seed " +
                                    per_seed + ")"};
}

Outcome decoding_correctness() {
  std::size_t greedy_ok = 0;
  double rescore_err = 0.0;
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelConfig cfg = small_config(8 + trial % 5, 5, 4, 3);
    const ModelParameters p = random_model(cfg, 3000 + trial, 1.5);
    Vector feature(cfg.feature_dim);
    for (double& v : feature) v = rng.normal();
    const auto one = beam_search(feature, p, BeamConfig{1, 8});
    greedy_ok += one.size() == 1 && one.front().tokens == greedy_decode(p, feature, 8);
    for (const auto& c : beam_search(feature, p, BeamConfig{4, 8})) {
      rescore_err = std::max(rescore_err, std::abs(rescore(p, feature, c.tokens) - c.log_prob));
    }
  }

  // Exhaustive enumeration on a model with V=6, L=6 (46656 leaves).
  double enum_err = 0.0;
  bool best_ok = true;
  for (std::uint64_t seed : {51u, 52u, 53u}) {
    const ModelConfig cfg = small_config(6, 4, 4, 3);
    const ModelParameters p = random_model(cfg, seed, 1.5);
    Vector feature(cfg.feature_dim);
    for (double& v : feature) v = rng.normal();
    const ModelScorer scorer(p, feature);
    const std::size_t max_len = 6;
    const auto all = enumerate_sequences(cfg.vocab_size, kBos, kEos, max_len,
                                         [&](const std::vector<TokenId>& inputs) {
                                           ModelScorer::State s = scorer.start();
                                           Vector lp;
                                           for (TokenId in : inputs) {
                                             auto next = scorer.advance(s, in);
                                             lp = std::move(next.first);
                                             s = std::move(next.second);
                                           }
                                           return lp;
                                         });
    std::map<std::vector<TokenId>, double> lp;
    double optimum = -INFINITY;
    for (const auto& e : all) {
      lp[e.tokens] = e.log_prob;
      optimum = std::max(optimum, e.score);
    }
    for (std::size_t width : {1u, 3u, 10u}) {
      const auto beam = beam_search(feature, p, BeamConfig{width, max_len});
      best_ok = best_ok && beam.front().score <= optimum + 1e-12;
      for (const auto& c : beam) {
        const auto it = lp.find(c.tokens);
        if (it == lp.end()) {
          best_ok = false;
          continue;
        }
        enum_err = std::max(enum_err, std::abs(it->second - c.log_prob));
      }
    }
  }
  const bool ok = greedy_ok == 50 && rescore_err < kRescoreTol && enum_err < kRescoreTol && best_ok;
  return {ok, "B=1 equals greedy " + std::to_string(greedy_ok) + "/50, re-score err " +
                  fmt("%.2g", rescore_err) + ", enumeration err " + fmt("%.2g", enum_err) +
                  " (tol " + fmt("%.0e", kRescoreTol) + ")"};
}

Outcome metric_correctness() {
  const auto w = [](const std::string& s) { return tokenize(s); };
  using Refs = std::vector<std::vector<Words>>;
  const std::vector<Words> same{w("the cat sat on the mat"), w("a dog runs in the park")};
  const BleuScores id = bleu(same, Refs{{same[0]}, {same[1]}});
  const double rid = rouge_l(same, Refs{{same[0]}, {same[1]}});
  const double b1 = bleu(std::vector<Words>{w("a b c d")}, Refs{{w("a b c e")}}).bleu[0];
  const double lcs = rouge_l(std::vector<Words>{w("a b c")}, Refs{{w("a x c")}});
  double id_err = std::abs(rid - 1.0);
  for (double b : id.bleu) id_err = std::max(id_err, std::abs(b - 1.0));
  const bool ok = id_err < kMetricTol && std::abs(b1 - 0.75) < kMetricTol &&
                  std::abs(lcs - 2.0 / 3.0) < kMetricTol;
  return {ok, "identity err " + fmt("%.2g", id_err) + ", BLEU-1 " + fmt("%.6f", b1) +
                  ", ROUGE-L " + fmt("%.6f", lcs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// gen-corpus -> train -> eval through the CLI; returns checkpoint bytes and
// the eval report.
std::pair<std::string, std::string> pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  std::ostringstream out, err;
  const auto call = [&](const std::vector<std::string>& args) {
    out.str("");
    if (run_cli(args, out, err) != kExitOk) throw std::runtime_error(err.str());
    return out.str();
  };
  const std::string data = (dir / "data").string();
  call({"gen-corpus", "--out", data, "--scenes", "30", "--test-scenes", "10", "--seed", "9"});
  call({"train", "--factual", data + "/factual.corpus", "--style", data + "/humorous.corpus",
        "--vocab", data + "/vocab.txt", "--out", (dir / "model.ck").string(), "--hidden", "16",
        "--embed", "16", "--epochs", "3", "--batch-size", "8", "--seed", "9"});
  const std::string report =
      call({"eval", "--checkpoint", (dir / "model.ck").string(), "--test",
            data + "/factual.test.corpus", "--factual-refs", data + "/factual.test.corpus",
            "--style-refs", data + "/humorous.test.corpus"});
  return {slurp(dir / "model.ck"), report};
}

Outcome reproducibility() {
  const fs::path base = fs::temp_directory_path() / "sfcap_acceptance_repro";
  const auto a = pipeline(base / "a");
  const auto b = pipeline(base / "b");
  fs::remove_all(base);
  const bool same_ck = !a.first.empty() && a.first == b.first;
  const bool same_report = !a.second.empty() && a.second == b.second;
  return {same_ck && same_report,
          std::string("checkpoints ") + (same_ck ? "bitwise identical" : "DIFFER") + " (" +
              std::to_string(a.first.size()) + " bytes), reports " +
              (same_report ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  run(1, "reduction identity", reduction_identity, kReductionSeconds);
  run(2, "gradient fidelity", gradient_fidelity, kGradSeconds);
  run(3, "freezing contracts", freezing_contracts);
  run(4, "loss algebra", loss_algebra);
  run(5, "gate separation", gate_separation_criterion, kGateSeconds);
  run(5, "gate separation", romantic_report, 0.0, true);
  run(6, "factual preservation", factual_preservation);
  run(7, "decoding correctness", decoding_correctness);
  run(8, "metric correctness", metric_correctness);
  run(9, "reproducibility", reproducibility);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
