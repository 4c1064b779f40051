#include "sfcap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sfcap/errors.hpp"

namespace sfcap {

namespace {

void scale_all(std::vector<Vector>& grads, double s) {
  for (auto& g : grads) {
    for (double& v : g) v *= s;
  }
}

std::size_t argmax(const Vector& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

void require_nonempty(std::span<const CaptionExample> batch, const char* stage) {
  if (batch.empty()) throw ValidationError(std::string(stage) + ": empty batch");
}

template <class T>
std::vector<std::span<const T>> make_batches(const std::vector<T>& items, std::size_t batch_size) {
  std::vector<std::span<const T>> batches;
  for (std::size_t i = 0; i < items.size(); i += batch_size) {
    batches.emplace_back(items.data() + i, std::min(batch_size, items.size() - i));
  }
  return batches;
}

}  // namespace

void TrainerConfig::validate() const {
  if (!(alpha >= 0.0)) throw ValidationError("trainer config: alpha must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("trainer config: learning_rate must be > 0");
  if (batch_size == 0) throw ValidationError("trainer config: batch_size must be >= 1");
  if (hidden == 0 || embed == 0) throw ValidationError("trainer config: hidden/embed must be >= 1");
  if (max_length == 0) throw ValidationError("trainer config: max_length must be >= 1");
  if (beam_width == 0) throw ValidationError("trainer config: beam_width must be >= 1");
  if (precision != "float64") {
    throw ValidationError("trainer config: unsupported precision '" + precision +
                          "' (only float64 is built)");
  }
}

ModelConfig TrainerConfig::model_config(std::size_t vocab_size, std::size_t feature_dim) const {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.embed_dim = embed;
  mc.hidden_dim = hidden;
  mc.feature_dim = feature_dim;
  mc.gate_hidden = gate_hidden;
  mc.max_length = max_length;
  return mc;
}

std::string to_string(Stage2Policy policy) {
  return policy == Stage2Policy::StyleAndGatesOnly ? "style-and-gates" : "whole-network-except-w";
}

Stage2Policy parse_stage2_policy(const std::string& text) {
  if (text == "style-and-gates") return Stage2Policy::StyleAndGatesOnly;
  if (text == "whole-network-except-w") return Stage2Policy::WholeNetworkExceptW;
  throw ValidationError("unknown stage-2 policy '" + text +
                        "' (expected style-and-gates or whole-network-except-w)");
}

std::string to_string(Stage2Objective objective) {
  return objective == Stage2Objective::Adaptive ? "adaptive" : "plain-mle";
}

Stage2Objective parse_stage2_objective(const std::string& text) {
  if (text == "adaptive") return Stage2Objective::Adaptive;
  if (text == "plain-mle") return Stage2Objective::PlainMle;
  throw ValidationError("unknown stage-2 objective '" + text + "' (expected adaptive or plain-mle)");
}

TrainableGroups stage1_trainable() {
  return {ParamGroup::Embedding, ParamGroup::ImageProjection, ParamGroup::Factual,
          ParamGroup::CellBias, ParamGroup::OutputProjection};
}

TrainableGroups stage2_trainable(Stage2Policy policy) {
  TrainableGroups groups{ParamGroup::Stylized, ParamGroup::GateNetworks};
  if (policy == Stage2Policy::WholeNetworkExceptW) {
    groups.add(ParamGroup::Embedding);
    groups.add(ParamGroup::ImageProjection);
    groups.add(ParamGroup::OutputProjection);
  }
  return groups;
}

double stage1_loss(std::span<const CaptionExample> batch, const ModelParameters& params,
                   ModelParameters* grads) {
  require_nonempty(batch, "stage 1");
  for (const auto& ex : batch) {
    if (!ex.is_factual()) {
      throw ValidationError("stage 1: example '" + ex.image_id + "' has style '" + ex.style +
                            "', expected factual captions only");
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    const SequenceForward fw = forward_sequence(ex, params, GateMode::ForcedZero);
    LossWithGradient loss = mle_loss(fw.distributions, ex.tokens, full_mask(ex.tokens.size()));
    total += loss.value;
    if (grads) {
      scale_all(loss.grad, inv);
      backward_sequence(fw, ex, params, loss.grad, *grads);
    }
  }
  return total * inv;
}

std::vector<Vector> reference_forward(const CaptionExample& example, const ModelParameters& params) {
  return forward_sequence(example, params, GateMode::ForcedZero).distributions;
}

Stage2Evaluation stage2_loss(std::span<const CaptionExample> batch, const ModelParameters& params,
                             double alpha, Stage2Objective objective, ModelParameters* grads,
                             const std::vector<std::vector<double>>* fixed_strength) {
  require_nonempty(batch, "stage 2");
  const std::string& style = batch.front().style;
  for (const auto& ex : batch) {
    if (ex.is_factual()) {
      throw ValidationError("stage 2: example '" + ex.image_id + "' is factual");
    }
    if (ex.style != style) {
      throw ValidationError("stage 2: mixed styles in batch ('" + style + "' and '" + ex.style +
                            "')");
    }
  }
  if (fixed_strength && fixed_strength->size() != batch.size()) {
    throw ShapeError("stage 2: fixed strength for " + std::to_string(fixed_strength->size()) +
                     " examples, batch has " + std::to_string(batch.size()));
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  Stage2Evaluation out;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const CaptionExample& ex = batch[e];
    SequenceForward fw = forward_sequence(ex, params, GateMode::Learned);
    const std::vector<Vector> reference = reference_forward(ex, params);

    std::vector<double> strength;
    if (fixed_strength) {
      strength = (*fixed_strength)[e];
    } else if (objective == Stage2Objective::PlainMle) {
      strength.assign(ex.tokens.size(), 0.0);
    } else {
      for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
        strength.push_back(inner_product_gate(fw.distributions[t], reference[t]));
      }
    }
    AdaptiveLoss loss = adaptive_loss_with_strength(fw.distributions, reference, strength,
                                                    ex.tokens, full_mask(ex.tokens.size()), alpha);
    out.loss += loss.value * inv;
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      if (argmax(fw.distributions[t]) == static_cast<std::size_t>(ex.tokens[t])) {
        ++out.correct_tokens;
      }
      ++out.total_tokens;
    }
    if (grads) {
      scale_all(loss.grad, inv);
      backward_sequence(fw, ex, params, loss.grad, *grads);
    }
    out.steps.push_back(std::move(loss.steps));
    out.forwards.push_back(std::move(fw));
  }
  return out;
}

double stage1_step(std::span<const CaptionExample> batch, TrainingState& state,
                   const TrainerConfig& config) {
  ModelParameters grads = ModelParameters::zeros(state.params.config);
  const double loss = stage1_loss(batch, state.params, &grads);
  if (!std::isfinite(loss)) throw NumericError("stage 1: non-finite loss");
  adam_update(state.params, grads, state.optimizer, config.learning_rate, config.adam,
              stage1_trainable());
  return loss;
}

Stage2StepResult stage2_step(std::span<const CaptionExample> batch, TrainingState& state,
                             const TrainerConfig& config) {
  ModelParameters grads = ModelParameters::zeros(state.params.config);
  const Stage2Evaluation eval =
      stage2_loss(batch, state.params, config.alpha, config.stage2_objective, &grads);
  if (!std::isfinite(eval.loss)) throw NumericError("stage 2: non-finite loss");
  adam_update(state.params, grads, state.optimizer, config.learning_rate, config.adam,
              stage2_trainable(config.stage2_policy));

  Stage2StepResult result;
  result.loss = eval.loss;
  result.correct_tokens = eval.correct_tokens;
  result.total_tokens = eval.total_tokens;
  double gip_sum = 0.0;
  std::size_t steps = 0;
  for (const auto& ex_steps : eval.steps) {
    for (const auto& s : ex_steps) {
      gip_sum += s.g_ip;
      ++steps;
    }
  }
  result.mean_gip = steps ? gip_sum / static_cast<double>(steps) : 0.0;
  for (const auto& fw : eval.forwards) {
    result.gates.insert(result.gates.end(), fw.gates.begin(), fw.gates.end());
  }
  return result;
}

std::string format_metrics_line(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epoch=%zu\tstage1_loss=%.10g\tstage2_loss=%.10g\tmean_gip=%.10g\ttoken_accuracy=%.10g",
                m.epoch, m.stage1_loss, m.stage2_loss, m.mean_gip, m.token_accuracy);
  std::string line = buf;
  if (m.validation_loss) {
    std::snprintf(buf, sizeof buf, "\tvalidation_loss=%.10g", *m.validation_loss);
    line += buf;
  }
  return line;
}

TrainOutcome train_style(const TrainerConfig& config, const Corpus& factual, const Corpus& stylized,
                         const TrainObserver& observer, const Corpus* validation) {
  config.validate();
  if (config.patience > 0 && validation == nullptr) {
    throw ValidationError("train: patience needs a validation corpus");
  }
  if (factual.examples.empty()) throw ValidationError("train: factual corpus is empty");
  if (stylized.examples.empty()) throw ValidationError("train: stylized corpus is empty");
  if (!(factual.vocab == stylized.vocab)) {
    throw ValidationError("train: factual and stylized corpora use different vocabularies");
  }
  const std::size_t feature_dim = factual.examples.front().image_feature.size();
  const std::string style = stylized.examples.front().style;
  for (const auto& ex : stylized.examples) {
    if (ex.style != style) {
      throw ValidationError("train: stylized corpus mixes styles '" + style + "' and '" +
                            ex.style + "'");
    }
  }

  if (validation != nullptr) {
    if (validation->examples.empty()) throw ValidationError("train: validation corpus is empty");
    if (!(validation->vocab == factual.vocab)) {
      throw ValidationError("train: validation corpus uses a different vocabulary");
    }
    for (const auto& ex : validation->examples) {
      if (ex.style != style) {
        throw ValidationError("train: validation example '" + ex.image_id + "' has style '" +
                              ex.style + "', expected '" + style + "'");
      }
    }
  }

  const ModelConfig mc = config.model_config(factual.vocab.size(), feature_dim);
  for (const auto* corpus : {&factual, &stylized, validation}) {
    if (corpus == nullptr) continue;
    for (const auto& ex : corpus->examples) validate_example(ex, mc);
  }

  Rng init_rng(config.seed);
  TrainingState state{ModelParameters::initialized(mc, init_rng), {}};
  state.optimizer = OptimizerState::for_model(state.params);
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<CaptionExample> factual_order = factual.examples;
  std::vector<CaptionExample> stylized_order = stylized.examples;

  auto snapshot = [&](std::size_t epoch) {
    return Checkpoint{Checkpoint::kFormatVersion, factual.vocab, config, style, epoch,
                      state.params, state.optimizer, order_rng.state()};
  };
  std::optional<Checkpoint> best;
  double best_loss = 0.0;
  std::size_t since_best = 0;

  TrainOutcome outcome;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;

    order_rng.shuffle(factual_order);
    const auto stage1_batches = make_batches(factual_order, config.batch_size);
    for (std::size_t b = 0; b < stage1_batches.size(); ++b) {
      double loss = 0.0;
      try {
        loss = stage1_step(stage1_batches[b], state, config);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", stage 1 batch " +
                           std::to_string(b) + ": " + e.what());
      }
      m.stage1_loss += loss / static_cast<double>(stage1_batches.size());
      if (observer.on_batch) observer.on_batch(StageKind::Stage1, epoch, b, loss);
    }

    order_rng.shuffle(stylized_order);
    const auto stage2_batches = make_batches(stylized_order, config.batch_size);
    std::size_t correct = 0, total = 0;
    double gip_sum = 0.0;
    for (std::size_t b = 0; b < stage2_batches.size(); ++b) {
      Stage2StepResult r;
      try {
        r = stage2_step(stage2_batches[b], state, config);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", stage 2 batch " +
                           std::to_string(b) + ": " + e.what());
      }
      m.stage2_loss += r.loss / static_cast<double>(stage2_batches.size());
      gip_sum += r.mean_gip * static_cast<double>(r.total_tokens);
      correct += r.correct_tokens;
      total += r.total_tokens;
      if (observer.on_batch) observer.on_batch(StageKind::Stage2, epoch, b, r.loss);
    }
    m.mean_gip = total ? gip_sum / static_cast<double>(total) : 0.0;
    m.token_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

    bool improved = false;
    if (validation != nullptr) {
      double loss = 0.0;
      for (const auto& batch : make_batches(validation->examples, config.batch_size)) {
        loss += stage2_loss(batch, state.params, config.alpha, config.stage2_objective, nullptr)
                    .loss *
                static_cast<double>(batch.size());
      }
      m.validation_loss = loss / static_cast<double>(validation->examples.size());
      improved = !best || *m.validation_loss < best_loss;
      if (improved) {
        best = snapshot(epoch);
        best_loss = *m.validation_loss;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    outcome.metrics.push_back(m);

    if (observer.on_epoch) observer.on_epoch(m, improved ? *best : snapshot(epoch));
    if (config.patience > 0 && since_best >= config.patience) break;
  }

  outcome.checkpoint = best ? std::move(*best) : snapshot(outcome.metrics.size());
  return outcome;
}

std::vector<TrainOutcome> train(const TrainerConfig& config, const Corpus& factual,
                                std::span<const Corpus> stylized, const TrainObserver& observer) {
  if (stylized.empty()) throw ValidationError("train: no stylized corpora given");
  std::vector<TrainOutcome> outcomes;
  for (const auto& corpus : stylized) {
    outcomes.push_back(train_style(config, factual, corpus, observer));
  }
  return outcomes;
}

}  // namespace sfcap
