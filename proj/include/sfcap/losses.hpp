#pragma once

// Training objectives over per-step word distributions. Every loss returns
// its value together with dL/dP for each step; the model turns those into
// logit gradients. Reference distributions and the factual strength g_ip are
// constants under differentiation.

#include <span>
#include <vector>

#include "sfcap/numerics.hpp"
#include "sfcap/vocabulary.hpp"

namespace sfcap {

inline constexpr double kProbabilityFloor = 1e-12;

// One flag per step; false steps (padding) contribute nothing.
using StepMask = std::vector<bool>;

StepMask full_mask(std::size_t steps);

struct LossWithGradient {
  double value = 0.0;
  std::vector<Vector> grad;  // dL/dP^t
};

// sum_t mask_t * -log P^t(y_t)
LossWithGradient mle_loss(std::span<const Vector> distributions, std::span<const TokenId> targets,
                          const StepMask& mask);

// sum_w P_s(w) log(P_s(w) / P_r(w)), both floored inside the log.
double kl_divergence(const Vector& p_s, const Vector& p_r);
// d/dP_s of kl_divergence with P_r held constant.
Vector kl_divergence_grad(const Vector& p_s, const Vector& p_r);

// <P_s, P_r> over floored distributions, clamped to at most 1.
double inner_product_gate(const Vector& p_s, const Vector& p_r);

struct StepLossBreakdown {
  double g_ip = 0.0;
  double mle_term = 0.0;  // -log P_s(y_t)
  double kl_term = 0.0;   // D(P_s || P_r)
};

struct AdaptiveLoss {
  double value = 0.0;
  std::vector<StepLossBreakdown> steps;
  std::vector<Vector> grad;  // dL/dP_s^t
};

// sum_t -(1 - g_ip^t) log P_s^t(y_t) + alpha * sum_t g_ip^t D(P_s^t || P_r^t)
// with g_ip^t = inner_product_gate(P_s^t, P_r^t).
AdaptiveLoss adaptive_loss(std::span<const Vector> p_s, std::span<const Vector> p_r,
                           std::span<const TokenId> targets, const StepMask& mask, double alpha);

// Same objective with caller-supplied g_ip values (e.g. frozen, or forced to
// zero for the plain-MLE ablation).
AdaptiveLoss adaptive_loss_with_strength(std::span<const Vector> p_s, std::span<const Vector> p_r,
                                         std::span<const double> strength,
                                         std::span<const TokenId> targets, const StepMask& mask,
                                         double alpha);

}  // namespace sfcap
