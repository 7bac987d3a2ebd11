#pragma once

#include <string>
#include <vector>

#include "qncd/denoiser.hpp"
#include "qncd/quantizer.hpp"
#include "qncd/schedule.hpp"

namespace qncd {

inline constexpr double kSmoothingFloor = 1e-3;

/// Per-resblock channel divisors derived from the timestep embedding.
struct SmoothingPlan {
    std::vector<std::vector<double>> factors;  // one [c] vector per block
    std::vector<FusionStyle> styles;
    double floor = kSmoothingFloor;
    bool folded = false;
};

/// Mean over t = 1..T of |1 + scale_t| per channel, floored.
std::vector<double> compute_s_scaleshift(const ResBlock &block, const NoiseSchedule &s, double max_period = 10000.0,
                                         double floor = kSmoothingFloor);

/// Mean over t = 1..T of |groupnorm(emb_proj_t) * gamma| per channel, floored.
/// Normalization statistics are taken per group, as in the block's own norm.
std::vector<double> compute_s_groupnorm(const ResBlock &block, const NoiseSchedule &s, double max_period = 10000.0,
                                        double floor = kSmoothingFloor);

SmoothingPlan compute_smoothing_plan(const DenoiserModel &model, const NoiseSchedule &s,
                                     double floor = kSmoothingFloor);

/// Scales row i of w_out by S[i] and makes the block divide its fused
/// activation by S. Throws if the block already carries a divisor.
ResBlock fold(std::span<const double> factors, const ResBlock &block);
/// Inverse of fold.
ResBlock unfold(std::span<const double> factors, const ResBlock &block);

DenoiserModel fold_model(const SmoothingPlan &plan, const DenoiserModel &model);

/// Smoothed quantized network: S per block from the embedding table, folded
/// into w_out, weight params recomputed on the folded weights and fusion
/// activation ranges recalibrated on the smoothed activations.
QuantizedDenoiser apply_intra(const QuantizedDenoiser &qnet, const NoiseSchedule &s);

std::string smoothing_plan_json(const SmoothingPlan &plan);

}  // namespace qncd
