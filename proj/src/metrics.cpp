#include "grpo_forge/metrics.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "grpo_forge/errors.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

double accuracy_metric(std::span<const TokenSeq> predictions, std::span<const TokenSeq> truths) {
  if (predictions.size() != truths.size()) {
    throw InvalidInput(fmt::format("{} predictions vs {} ground truths", predictions.size(),
                                   truths.size()));
  }
  if (predictions.empty()) throw InvalidInput("accuracy of an empty set is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == truths[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double miou_metric(std::span<const double> ious) {
  if (ious.empty()) throw InvalidInput("mIoU of an empty set is undefined");
  double sum = 0.0;
  for (double v : ious) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput(fmt::format("IoU value {} outside [0, 1]", v));
    sum += v;
  }
  return sum / static_cast<double>(ious.size());
}

double recall_at_m(std::span<const double> ious, double m) {
  if (!(m > 0.0 && m <= 1.0)) throw InvalidInput(fmt::format("threshold m = {} outside (0, 1]", m));
  if (ious.empty()) return 0.0;
  const auto hits = std::count_if(ious.begin(), ious.end(), [m](double v) { return v >= m; });
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

double vanishing_advantage_ratio(std::span<const Eigen::VectorXd> groups) {
  if (groups.empty()) return 0.0;
  std::size_t vanished = 0;
  for (const Eigen::VectorXd& g : groups) {
    if (g.size() < 2) throw InvalidInput("each group needs at least 2 rewards");
    if (population_mean_std(g).second < kVanishingTolerance) ++vanished;
  }
  return static_cast<double>(vanished) / static_cast<double>(groups.size());
}

}  // namespace grpo_forge
