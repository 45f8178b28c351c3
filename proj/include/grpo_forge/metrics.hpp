#ifndef GRPO_FORGE_METRICS_HPP_
#define GRPO_FORGE_METRICS_HPP_

#include <Eigen/Core>

#include <span>
#include <vector>

#include "grpo_forge/types.hpp"

namespace grpo_forge {

/// Rewards within this distance count as equal for vanishing detection.
inline constexpr double kVanishingTolerance = 1e-12;

double accuracy_metric(std::span<const TokenSeq> predictions, std::span<const TokenSeq> truths);

double miou_metric(std::span<const double> ious);

/// Fraction of IoU values >= m, for m in (0, 1].
double recall_at_m(std::span<const double> ious, double m);

/// Fraction of groups whose rewards are all equal.
double vanishing_advantage_ratio(std::span<const Eigen::VectorXd> groups);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_METRICS_HPP_
