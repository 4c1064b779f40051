#pragma once

// Two-stage training.
//
// Stage 1 (factual captions): gates pinned to 0, plain MLE; updates the
// embedding, image projection, W, b and output projection.
// Stage 2 (one style's captions): learned gates, adaptive loss against the
// reference path (same live parameters, gates pinned to 0); updates S and the
// gate networks, plus the embedding/projections under WholeNetworkExceptW.
// W and b stay frozen in stage 2 under both policies.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfcap/corpus.hpp"
#include "sfcap/losses.hpp"
#include "sfcap/model.hpp"
#include "sfcap/optimizer.hpp"
#include "sfcap/random.hpp"

namespace sfcap {

enum class Stage2Policy { StyleAndGatesOnly, WholeNetworkExceptW };

// Adaptive: g_ip from the inner product. PlainMle: g_ip forced to 0 (the
// ablation; the KL term then vanishes regardless of alpha).
enum class Stage2Objective { Adaptive, PlainMle };

struct TrainerConfig {
  std::size_t hidden = 512;
  std::size_t embed = 512;
  std::size_t gate_hidden = 0;
  double alpha = 1.1;
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  // Epochs without a better validation loss before stopping; 0 runs every
  // epoch. Needs a validation corpus.
  std::size_t patience = 0;
  std::size_t max_length = 32;
  std::size_t beam_width = 5;
  std::uint64_t seed = 1;
  Stage2Policy stage2_policy = Stage2Policy::StyleAndGatesOnly;
  Stage2Objective stage2_objective = Stage2Objective::Adaptive;
  AdamConfig adam;
  std::string precision = "float64";

  void validate() const;
  ModelConfig model_config(std::size_t vocab_size, std::size_t feature_dim) const;
  bool operator==(const TrainerConfig&) const = default;
};

std::string to_string(Stage2Policy policy);
Stage2Policy parse_stage2_policy(const std::string& text);
std::string to_string(Stage2Objective objective);
Stage2Objective parse_stage2_objective(const std::string& text);

TrainableGroups stage1_trainable();
TrainableGroups stage2_trainable(Stage2Policy policy);

// Mean stage-1 MLE loss over the batch; adds the batch-mean gradient into
// `grads` when given. Throws on any non-factual example.
double stage1_loss(std::span<const CaptionExample> batch, const ModelParameters& params,
                   ModelParameters* grads);

// Reference distributions P_r^1..T: ForcedZero forward over the live
// parameters. Constant under differentiation.
std::vector<Vector> reference_forward(const CaptionExample& example, const ModelParameters& params);

struct Stage2Evaluation {
  double loss = 0.0;  // batch mean
  std::vector<std::vector<StepLossBreakdown>> steps;
  std::vector<SequenceForward> forwards;
  std::size_t correct_tokens = 0;  // teacher-forced argmax hits
  std::size_t total_tokens = 0;
};

// Mean stage-2 objective over the batch. `fixed_strength`, when given,
// replaces the computed g_ip per example and step.
Stage2Evaluation stage2_loss(std::span<const CaptionExample> batch, const ModelParameters& params,
                             double alpha, Stage2Objective objective, ModelParameters* grads,
                             const std::vector<std::vector<double>>* fixed_strength = nullptr);

struct TrainingState {
  ModelParameters params;
  OptimizerState optimizer;
};

double stage1_step(std::span<const CaptionExample> batch, TrainingState& state,
                   const TrainerConfig& config);

struct Stage2StepResult {
  double loss = 0.0;
  double mean_gip = 0.0;
  std::size_t correct_tokens = 0;
  std::size_t total_tokens = 0;
  std::vector<GateWeights> gates;  // flattened per step, for inspection
};

Stage2StepResult stage2_step(std::span<const CaptionExample> batch, TrainingState& state,
                             const TrainerConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double stage1_loss = 0.0;
  double stage2_loss = 0.0;
  double mean_gip = 0.0;
  double token_accuracy = 0.0;  // stage-2, teacher forced, on training data
  std::optional<double> validation_loss;  // stage-2 objective on the validation corpus
};

std::string format_metrics_line(const EpochMetrics& m);

struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  int version = kFormatVersion;
  Vocabulary vocab;
  TrainerConfig config;
  std::string style;
  std::size_t epochs_completed = 0;
  ModelParameters params;
  std::optional<OptimizerState> optimizer;
  std::string rng_state;

  bool operator==(const Checkpoint&) const = default;
};

enum class StageKind { Stage1, Stage2 };

struct TrainObserver {
  std::function<void(StageKind, std::size_t epoch, std::size_t batch, double loss)> on_batch;
  std::function<void(const EpochMetrics&, const Checkpoint&)> on_epoch;
};

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

// Trains one model for one style. Corpora must share a vocabulary. With a
// validation corpus (same style) every epoch is scored on it and the
// returned checkpoint is the epoch with the lowest validation loss.
TrainOutcome train_style(const TrainerConfig& config, const Corpus& factual, const Corpus& stylized,
                         const TrainObserver& observer = {}, const Corpus* validation = nullptr);

// One independent model per stylized corpus.
std::vector<TrainOutcome> train(const TrainerConfig& config, const Corpus& factual,
                                std::span<const Corpus> stylized,
                                const TrainObserver& observer = {});

}  // namespace sfcap
