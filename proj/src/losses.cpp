#include "sfcap/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sfcap/errors.hpp"

namespace sfcap {

namespace {

double floored(double p) { return std::max(p, kProbabilityFloor); }

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) +
                     " steps");
  }
}

std::size_t require_target(const Vector& p, TokenId y) {
  if (y < 0 || static_cast<std::size_t>(y) >= p.size()) {
    throw ValidationError("target id " + std::to_string(y) + " outside distribution of length " +
                          std::to_string(p.size()));
  }
  return static_cast<std::size_t>(y);
}

void require_any(const StepMask& mask) {
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ValidationError("loss over a fully masked sequence");
  }
}

}  // namespace

StepMask full_mask(std::size_t steps) { return StepMask(steps, true); }

LossWithGradient mle_loss(std::span<const Vector> distributions, std::span<const TokenId> targets,
                          const StepMask& mask) {
  require_aligned(distributions.size(), targets.size(), "mle_loss");
  require_aligned(distributions.size(), mask.size(), "mle_loss mask");
  require_any(mask);
  LossWithGradient out;
  out.grad.reserve(distributions.size());
  for (std::size_t t = 0; t < distributions.size(); ++t) {
    const Vector& p = distributions[t];
    const std::size_t y = require_target(p, targets[t]);
    Vector g(p.size());
    if (mask[t]) {
      out.value -= std::log(floored(p[y]));
      if (p[y] >= kProbabilityFloor) g[y] = -1.0 / p[y];
    }
    out.grad.push_back(std::move(g));
  }
  return out;
}

double kl_divergence(const Vector& p_s, const Vector& p_r) {
  if (p_s.size() != p_r.size()) {
    throw ShapeError("kl_divergence: length " + std::to_string(p_s.size()) + " vs " +
                     std::to_string(p_r.size()));
  }
  double d = 0.0;
  for (std::size_t w = 0; w < p_s.size(); ++w) {
    d += p_s[w] * std::log(floored(p_s[w]) / floored(p_r[w]));
  }
  return d;
}

Vector kl_divergence_grad(const Vector& p_s, const Vector& p_r) {
  if (p_s.size() != p_r.size()) {
    throw ShapeError("kl_divergence_grad: length " + std::to_string(p_s.size()) + " vs " +
                     std::to_string(p_r.size()));
  }
  Vector g(p_s.size());
  for (std::size_t w = 0; w < p_s.size(); ++w) {
    g[w] = std::log(floored(p_s[w]) / floored(p_r[w])) + (p_s[w] >= kProbabilityFloor ? 1.0 : 0.0);
  }
  return g;
}

double inner_product_gate(const Vector& p_s, const Vector& p_r) {
  if (p_s.size() != p_r.size()) {
    throw ShapeError("inner_product_gate: length " + std::to_string(p_s.size()) + " vs " +
                     std::to_string(p_r.size()));
  }
  double s = 0.0;
  for (std::size_t w = 0; w < p_s.size(); ++w) s += floored(p_s[w]) * floored(p_r[w]);
  return std::min(s, 1.0);
}

AdaptiveLoss adaptive_loss_with_strength(std::span<const Vector> p_s, std::span<const Vector> p_r,
                                         std::span<const double> strength,
                                         std::span<const TokenId> targets, const StepMask& mask,
                                         double alpha) {
  require_aligned(p_s.size(), p_r.size(), "adaptive_loss reference");
  require_aligned(p_s.size(), strength.size(), "adaptive_loss strength");
  require_aligned(p_s.size(), targets.size(), "adaptive_loss targets");
  require_aligned(p_s.size(), mask.size(), "adaptive_loss mask");
  require_any(mask);
  if (!(alpha >= 0.0)) throw std::invalid_argument("adaptive_loss: alpha must be >= 0");

  AdaptiveLoss out;
  out.steps.reserve(p_s.size());
  out.grad.reserve(p_s.size());
  for (std::size_t t = 0; t < p_s.size(); ++t) {
    const Vector& ps = p_s[t];
    const Vector& pr = p_r[t];
    const std::size_t y = require_target(ps, targets[t]);
    StepLossBreakdown step;
    step.g_ip = strength[t];
    step.mle_term = -std::log(floored(ps[y]));
    step.kl_term = kl_divergence(ps, pr);
    out.steps.push_back(step);

    Vector g(ps.size());
    if (mask[t]) {
      const double mle_weight = 1.0 - step.g_ip;
      const double kl_weight = alpha * step.g_ip;
      out.value += mle_weight * step.mle_term + kl_weight * step.kl_term;
      if (ps[y] >= kProbabilityFloor) g[y] -= mle_weight / ps[y];
      if (kl_weight != 0.0) axpy(kl_weight, kl_divergence_grad(ps, pr), g);
    }
    out.grad.push_back(std::move(g));
  }
  return out;
}

AdaptiveLoss adaptive_loss(std::span<const Vector> p_s, std::span<const Vector> p_r,
                           std::span<const TokenId> targets, const StepMask& mask, double alpha) {
  require_aligned(p_s.size(), p_r.size(), "adaptive_loss reference");
  std::vector<double> strength;
  strength.reserve(p_s.size());
  for (std::size_t t = 0; t < p_s.size(); ++t) strength.push_back(inner_product_gate(p_s[t], p_r[t]));
  return adaptive_loss_with_strength(p_s, p_r, strength, targets, mask, alpha);
}

}  // namespace sfcap
