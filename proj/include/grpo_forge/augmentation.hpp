#ifndef GRPO_FORGE_AUGMENTATION_HPP_
#define GRPO_FORGE_AUGMENTATION_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>

#include "grpo_forge/policy.hpp"
#include "grpo_forge/rewards.hpp"
#include "grpo_forge/types.hpp"

namespace grpo_forge {

/// The last W group-mean rewards, one entry per training step.
class ReplayWindow {
 public:
  struct Entry {
    int step = 0;
    double mean_reward = 0.0;
  };

  explicit ReplayWindow(int capacity = 100);

  /// Appends and evicts the oldest entry when full. Steps must strictly increase.
  void push(double mean_reward, int step);

  int capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<Entry>& entries() const { return entries_; }
  /// Mean of the stored values; 0 when empty.
  double mean() const;

 private:
  int capacity_;
  std::deque<Entry> entries_;
};

ReplayWindow update_window(ReplayWindow window, double group_mean_reward, int step);

struct DifficultyEstimate {
  double delta = 0.0;
  double group_mean = 0.0;
  double buffer_mean = 0.0;
};

/// delta = window mean - group mean. An empty window reports delta = 0.
DifficultyEstimate estimate_difficulty(const ReplayWindow& window,
                                       const Eigen::Ref<const Eigen::VectorXd>& group_rewards);

enum class AugmentationKind { kNone, kDecreaseDifficulty, kIncreaseDifficulty };

std::string_view augmentation_kind_id(AugmentationKind kind);

struct AugmentationDecision {
  AugmentationKind kind = AugmentationKind::kNone;
  double scale = 0.0;
  double delta = 0.0;
  /// The selected trajectory after hint injection.
  std::optional<TokenSeq> hint_source;
};

struct AugmentationParams {
  double delta_max = 0.5;
  int h_max = 4;
  double sigma_max = 0.5;

  void validate() const;
};

/// delta > 0 -> decrease difficulty, delta < 0 -> increase, scale = min(|delta| / delta_max, 1).
AugmentationDecision decide_augmentation(const DifficultyEstimate& est, double delta_max);

struct AugmentedSample {
  TaskInstance base;
  std::optional<TokenSeq> prompt_override;
  std::optional<Eigen::VectorXd> observation_override;
  AugmentationDecision provenance;
  /// Hint tokens appended after the HINT marker (empty unless a hint was injected).
  TokenSeq hint_tokens;

  /// The base instance with any override applied; ground truth unchanged.
  TaskInstance effective() const;
};

/// Number of hint tokens for a given scale: ceil(scale * h_max).
int hint_length(double scale, int h_max);

/// Appends HINT plus a partial reasoning trace to the prompt. The trace is
/// the think segment of the best of G old-policy rollouts on a prompt that
/// carries the ground-truth answer, or a ground-truth prefix when no rollout
/// earns a positive reward.
AugmentedSample inject_hint(const TaskInstance& sample, const AugmentationDecision& decision,
                            const PolicyTriple& triple, int group_size, std::uint64_t seed,
                            const Vocab& vocab, const RewardSpec& spec, const BinMap& bins,
                            int h_max);

/// v + N(0, (scale * sigma_max)^2 I), deterministic in `seed`.
AugmentedSample inject_noise(const TaskInstance& sample, const AugmentationDecision& decision,
                             double sigma_max, std::uint64_t seed);

/// {"step", "sample_id", "delta", "kind", "scale"} on one line.
std::string augmentation_event_json(int step, int sample_id, const AugmentationDecision& decision);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_AUGMENTATION_HPP_
