#include <cmath>

#include "doctest.h"
#include "sfcap/errors.hpp"
#include "sfcap/losses.hpp"
#include "sfcap/model.hpp"
#include "test_support.hpp"

using namespace sfcap;
using namespace sfcap::testing;

namespace {

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

CellState random_state(Rng& rng, std::size_t hidden) {
  CellState s{Vector(hidden), Vector(hidden)};
  for (double& v : s.h) v = rng.uniform(-0.9, 0.9);
  for (double& v : s.c) v = rng.normal();
  return s;
}

double max_abs_diff(const Vector& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void zero_gate_networks(ModelParameters& p) {
  for (auto& block : parameter_blocks(p)) {
    if (block.group == ParamGroup::GateNetworks) {
      for (double& v : block.values) v = 0.0;
    }
  }
}

double mle_of(const CaptionExample& ex, const ModelParameters& p, GateMode mode) {
  const SequenceForward fw = forward_sequence(ex, p, mode);
  return mle_loss(fw.distributions, ex.tokens, full_mask(ex.tokens.size())).value;
}

}  // namespace

TEST_CASE("gate networks at zero give one half") {
  ModelParameters p = random_model(small_config(), 1);
  zero_gate_networks(p);
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    const GateWeights g = compute_gate_weights(random_vector(rng, 6), p);
    CHECK(g.g_x == 0.5);
    CHECK(g.g_h == 0.5);
  }
}

TEST_CASE("saturated gate biases stay strictly inside the unit interval") {
  ModelParameters p = random_model(small_config(), 1);
  zero_gate_networks(p);
  p.gates.input.out_bias[0] = 20.0;
  p.gates.recurrent.out_bias[0] = -20.0;
  Rng rng(3);
  const GateWeights g = compute_gate_weights(random_vector(rng, 6), p);
  CHECK(g.g_x < 1.0);
  CHECK(g.g_h > 0.0);
  CHECK(1.0 - g.g_x == doctest::Approx(2.0611536e-9).epsilon(1e-6));
  CHECK(g.g_h == doctest::Approx(2.0611536e-9).epsilon(1e-6));
}

TEST_CASE("cell with vanishing gates is a standard LSTM over W") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParameters p = random_model(small_config(), 100 + trial);
    const Vector x = random_vector(rng, 6);
    const CellState s = random_state(rng, 6);
    const CellState out = cell_step(p.cell, x, s, {0.0, 0.0}).first;
    const PlainState ref =
        vanilla_lstm_step(p.cell.factual, p.cell.bias, to_vec(x), {to_vec(s.h), to_vec(s.c)});
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(std::abs(out.h[j] - ref.h[j]) < 1e-14);
      CHECK(std::abs(out.c[j] - ref.c[j]) < 1e-14);
    }
  }
}

TEST_CASE("cell with saturated gates is a standard LSTM over S") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParameters p = random_model(small_config(), 200 + trial);
    const Vector x = random_vector(rng, 6);
    const CellState s = random_state(rng, 6);
    const CellState out = cell_step(p.cell, x, s, {1.0, 1.0}).first;
    const PlainState ref =
        vanilla_lstm_step(p.cell.stylized, p.cell.bias, to_vec(x), {to_vec(s.h), to_vec(s.c)});
    CHECK(max_abs_diff(out.h, ref.h) < 1e-14);
    CHECK(max_abs_diff(out.c, ref.c) < 1e-14);
  }
}

TEST_CASE("equal S and W make the gates irrelevant") {
  Rng rng(9);
  ModelParameters p = random_model(small_config(), 300);
  p.cell.stylized = p.cell.factual;
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_vector(rng, 6);
    const CellState s = random_state(rng, 6);
    const GateWeights g{rng.uniform(), rng.uniform()};
    const CellState out = cell_step(p.cell, x, s, g).first;
    const PlainState ref =
        vanilla_lstm_step(p.cell.factual, p.cell.bias, to_vec(x), {to_vec(s.h), to_vec(s.c)});
    CHECK(max_abs_diff(out.h, ref.h) < 1e-14);
  }
}

TEST_CASE("cell rejects gates outside the unit interval and bad shapes") {
  const ModelParameters p = random_model(small_config(), 1);
  const CellState s = CellState::zeros(6);
  CHECK_THROWS(cell_step(p.cell, Vector(6), s, {1.5, 0.0}));
  CHECK_THROWS_AS(cell_step(p.cell, Vector(5), s, {0.0, 0.0}), ShapeError);
}

TEST_CASE("output distribution properties") {
  ModelParameters p = random_model(small_config(), 4);
  p.output_weight.fill(0.0);
  p.output_bias.fill(0.0);
  const Vector uniform = output_distribution(Vector(6, 0.3), p);
  for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 12.0).epsilon(1e-15));

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelParameters q = random_model(small_config(), 1000 + trial, 2.0);
    const Vector h = random_vector(rng, 6);
    const Vector dist = output_distribution(h, q);
    const Vector logits = output_logits(h, q);
    double sum = 0.0;
    for (double v : dist) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(std::max_element(dist.begin(), dist.end()) - dist.begin() ==
          std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
}

TEST_CASE("forced-zero sequence equals an independent vanilla captioner") {
  Rng rng(10);
  for (int trial = 0; trial < 25; ++trial) {
    const ModelConfig cfg = small_config();
    const ModelParameters p = random_model(cfg, 400 + trial, 1.0);
    const CaptionExample ex = random_example(cfg, rng, 1 + rng.index(8));
    const SequenceForward fw = forward_sequence(ex, p, GateMode::ForcedZero);
    const auto ref = vanilla_captioner(p, ex, p.cell.factual);
    REQUIRE(fw.distributions.size() == ref.size());
    for (std::size_t t = 0; t < ref.size(); ++t) {
      CHECK(max_abs_diff(fw.distributions[t], ref[t]) < 1e-12);
      CHECK(fw.gates[t].g_x == 0.0);
      CHECK(fw.gates[t].g_h == 0.0);
    }
  }
}

TEST_CASE("learned mode with zero gate networks records one half everywhere") {
  Rng rng(11);
  ModelParameters p = random_model(small_config(), 500);
  zero_gate_networks(p);
  const CaptionExample ex = random_example(p.config, rng, 6, "humorous");
  const SequenceForward fw = forward_sequence(ex, p, GateMode::Learned);
  CHECK(fw.image_gates.g_x == 0.5);
  for (const auto& g : fw.gates) {
    CHECK(g.g_x == 0.5);
    CHECK(g.g_h == 0.5);
  }
}

TEST_CASE("single-token sequence yields one distribution conditioned on the image") {
  Rng rng(12);
  const ModelParameters p = random_model(small_config(), 600);
  CaptionExample a = random_example(p.config, rng, 1);
  CaptionExample b = a;
  b.image_feature[0] += 1.0;
  const SequenceForward fa = forward_sequence(a, p, GateMode::Learned);
  const SequenceForward fb = forward_sequence(b, p, GateMode::Learned);
  REQUIRE(fa.distributions.size() == 1);
  CHECK(fa.distributions[0] != fb.distributions[0]);
}

TEST_CASE("gates stay strictly inside (0,1) and hidden states inside (-1,1)") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParameters p = random_model(small_config(), 700 + trial, 3.0);
    const CaptionExample ex = random_example(p.config, rng, 8);
    const SequenceForward fw = forward_sequence(ex, p, GateMode::Learned);
    for (const auto& g : fw.gates) {
      CHECK(g.g_x > 0.0);
      CHECK(g.g_x < 1.0);
      CHECK(g.g_h > 0.0);
      CHECK(g.g_h < 1.0);
    }
    for (const auto& c : fw.caches) {
      for (double h : c.h) CHECK(std::abs(h) < 1.0);
    }
  }
}

TEST_CASE("full-model MLE gradient passes finite differences in both gate modes") {
  Rng rng(14);
  for (const GateMode mode : {GateMode::Learned, GateMode::ForcedZero}) {
    for (const std::size_t gate_hidden : {std::size_t{0}, std::size_t{3}}) {
      ModelConfig cfg = small_config();
      cfg.gate_hidden = gate_hidden;
      ModelParameters p = random_model(cfg, 800 + gate_hidden);
      const CaptionExample ex = random_example(cfg, rng, 5);
      const SequenceForward fw = forward_sequence(ex, p, mode);
      const auto loss = mle_loss(fw.distributions, ex.tokens, full_mask(5));
      ModelParameters grads = ModelParameters::zeros(cfg);
      backward_sequence(fw, ex, p, loss.grad, grads);

      auto blocks = parameter_blocks(p);
      const auto gblocks = parameter_blocks(std::as_const(grads));
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        CAPTURE(blocks[b].name);
        CAPTURE(gate_hidden);
        const auto report = finite_difference_check([&] { return mle_of(ex, p, mode); },
                                                    blocks[b].values, gblocks[b].values);
        CHECK(report.max_relative_error < 1e-4);
      }
    }
  }
}

TEST_CASE("forced-zero backward leaves S and gate gradients exactly zero") {
  Rng rng(15);
  const ModelParameters p = random_model(small_config(), 900);
  const CaptionExample ex = random_example(p.config, rng, 6);
  const SequenceForward fw = forward_sequence(ex, p, GateMode::ForcedZero);
  const auto loss = mle_loss(fw.distributions, ex.tokens, full_mask(6));
  ModelParameters grads = ModelParameters::zeros(p.config);
  backward_sequence(fw, ex, p, loss.grad, grads);
  for (const auto& block : parameter_blocks(std::as_const(grads))) {
    if (block.group == ParamGroup::Stylized || block.group == ParamGroup::GateNetworks) {
      CAPTURE(block.name);
      for (double v : block.values) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("initialization follows the documented scheme") {
  ModelConfig cfg = small_config(20, 8, 4, 3);
  Rng rng(16);
  const ModelParameters p = ModelParameters::initialized(cfg, rng);
  for (double v : p.cell.bias[kForgetGate]) CHECK(v == 1.0);
  for (double v : p.cell.bias[kInputGate]) CHECK(v == 0.0);
  const double limit = std::sqrt(6.0 / (8.0 + 4.0));
  for (double v : p.cell.factual.input[0].values()) CHECK(std::abs(v) <= limit);
  CHECK(p.cell.factual.input[0] != p.cell.stylized.input[0]);
  const auto shapes = expected_block_shapes(cfg);
  const auto blocks = parameter_blocks(p);
  REQUIRE(shapes.size() == blocks.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    CHECK(shapes[i].first == blocks[i].name);
    CHECK(shapes[i].second.first * shapes[i].second.second == blocks[i].values.size());
  }
}

TEST_CASE("invalid configurations and examples are rejected") {
  CHECK_THROWS_AS(small_config(4).validate(), ValidationError);
  const ModelParameters p = random_model(small_config(), 1);
  Rng rng(17);
  CaptionExample ex = random_example(p.config, rng, 3);
  ex.tokens[0] = 99;
  CHECK_THROWS_AS(forward_sequence(ex, p, GateMode::Learned), ValidationError);
  ex = random_example(p.config, rng, 3);
  ex.image_feature = Vector(2);
  CHECK_THROWS_AS(forward_sequence(ex, p, GateMode::Learned), ShapeError);
  ex = random_example(p.config, rng, 3);
  ex.tokens.clear();
  CHECK_THROWS_AS(forward_sequence(ex, p, GateMode::Learned), ValidationError);
}
