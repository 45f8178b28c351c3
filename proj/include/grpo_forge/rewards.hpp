#ifndef GRPO_FORGE_REWARDS_HPP_
#define GRPO_FORGE_REWARDS_HPP_

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

#include "grpo_forge/types.hpp"

namespace grpo_forge {

struct RewardSpec {
  double format_weight = 1.0;
  double accuracy_weight = 1.0;
  double iou_weight = 1.0;
  bool format_enabled = true;
  bool accuracy_enabled = true;
  bool iou_enabled = true;

  /// Enables the components that apply to a task family: format always,
  /// accuracy for grouped QA, IoU for temporal grounding.
  static RewardSpec for_family(TaskFamily family, double format_weight = 1.0,
                               double accuracy_weight = 1.0, double iou_weight = 1.0);

  /// Largest achievable composite reward.
  double max_total() const;
  void validate() const;
};

struct RewardInputs {
  int format = 0;
  int accuracy = 0;
  double iou = 0.0;
};

struct RewardBreakdown {
  int format = 0;
  int accuracy = 0;
  double iou = 0.0;
  double total = 0.0;
};

/// THINK_OPEN content* THINK_CLOSE ANS_OPEN content+ ANS_CLOSE [END].
int format_reward(std::span<const int> y, const Vocab& vocab);

/// Tokens between the first ANS_OPEN and the next ANS_CLOSE, if both exist.
std::optional<TokenSeq> extract_answer(std::span<const int> y, const Vocab& vocab);

/// Content tokens between THINK_OPEN and THINK_CLOSE (or up to the first
/// marker when the segment is unterminated). Empty when there is no THINK_OPEN.
TokenSeq extract_think(std::span<const int> y, const Vocab& vocab);

int accuracy_reward(std::span<const int> y, std::span<const int> gt_answer, const Vocab& vocab);

/// |pred ∩ gt| / |pred ∪ gt|. Zero-length union: 1 for identical points, else 0.
double iou_reward(const Interval& pred, const Interval& gt);

RewardBreakdown composite_reward(const RewardInputs& inputs, const RewardSpec& spec);

/// Temporal bin geometry: content token k covers [k * width, (k + 1) * width).
struct BinMap {
  int bins = 10;
  double horizon = 16.0;

  double width() const { return horizon / bins; }
  Interval decode(int start_token, int end_token) const;
};

/// Scores a full response against a task instance.
RewardBreakdown score_response(const TaskInstance& sample, std::span<const int> y,
                               const Vocab& vocab, const RewardSpec& spec, const BinMap& bins);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_REWARDS_HPP_
