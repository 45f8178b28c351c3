// Engineered experiments shared by the unit tests and the acceptance runner.
#ifndef GRPO_FORGE_TESTS_EXPERIMENTS_HPP_
#define GRPO_FORGE_TESTS_EXPERIMENTS_HPP_

#include <cstdint>
#include <vector>

#include "grpo_forge/trainer.hpp"

namespace grpo_forge::experiments {

/// Mixed easy/hard batch for the augmentation experiment.
///
/// Linear policy over the canonical 16-token vocab with one observation
/// coordinate per content token. Strong position biases emit the template
/// TO c TC AO a AC END; the answer logit of content token c is
/// kObsGain * v[c] + kCopyGain * (hint count of c). Easy samples point v at
/// the ground truth (answer probability > 0.99); hard samples point v at a
/// token that is the ground truth of some easy sample, so no linear read-out
/// of v solves them and only a hint can.
struct MixedBatch {
  TrainerConfig config;
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> eval;
  PolicyParams init;
  /// Number of leading entries of `train` that are easy.
  int easy_count = 0;
};

inline constexpr double kObsGain = 20.0;
inline constexpr double kObsMagnitude = 0.5;
inline constexpr double kCopyGain = 10.0;
inline constexpr double kTemplateBias = 20.0;

MixedBatch mixed_difficulty_batch(std::uint64_t seed, bool augmentation, int steps = 500);

/// Exact probability that the old policy answers `sample` correctly (the
/// template path has no other branching that affects accuracy).
double answer_success_probability(const PolicyParams& params, const TaskInstance& sample,
                                  const Vocab& vocab);

/// Mean of StepLog::vanishing_ratio over every step of the run.
double mean_vanishing_ratio(const MixedBatch& batch);

/// Trainer config for the reward-curve comparison on grouped QA:
/// distractor strength 0.3, G = 8, 500 steps, every other knob at its default.
TrainerConfig reward_curve_config(Algorithm algorithm, std::uint64_t seed, int steps = 500);

}  // namespace grpo_forge::experiments

#endif  // GRPO_FORGE_TESTS_EXPERIMENTS_HPP_
