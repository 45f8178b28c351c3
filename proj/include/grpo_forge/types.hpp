#ifndef GRPO_FORGE_TYPES_HPP_
#define GRPO_FORGE_TYPES_HPP_

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grpo_forge {

using TokenSeq = std::vector<int>;

/// Token alphabet. Content tokens occupy the low ids; the six markers sit at
/// the top of the range in the canonical layout.
struct Vocab {
  int size = 16;
  int think_open = 10;
  int think_close = 11;
  int ans_open = 12;
  int ans_close = 13;
  int hint = 14;
  int end = 15;

  /// Canonical layout for `size` tokens: content ids [0, size - 6).
  static Vocab canonical(int size);

  int content_count() const { return size - 6; }
  bool is_marker(int token) const;
  bool is_content(int token) const { return token >= 0 && token < size && !is_marker(token); }
  /// Throws InvalidInput if ids collide or fall outside [0, size).
  void validate() const;
};

struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  /// Throws InvalidInput unless 0 <= start <= end and both finite.
  void validate() const;
};

enum class TaskFamily { kGroupedQa, kTemporalGrounding, kFormatOnly };

std::string_view family_id(TaskFamily family);
TaskFamily parse_family(std::string_view id);

/// One synthetic "video question": observation features standing in for the
/// video, prompt tokens standing in for the question, and ground truth.
struct TaskInstance {
  int id = 0;
  Eigen::VectorXd observation;
  TokenSeq prompt;
  std::optional<TokenSeq> gt_answer;
  std::optional<Interval> gt_interval;
  TaskFamily family = TaskFamily::kGroupedQa;
  double intrinsic_difficulty = 0.0;
};

}  // namespace grpo_forge

#endif  // GRPO_FORGE_TYPES_HPP_
