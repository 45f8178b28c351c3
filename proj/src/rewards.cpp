#include "grpo_forge/rewards.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "grpo_forge/errors.hpp"

namespace grpo_forge {

RewardSpec RewardSpec::for_family(TaskFamily family, double format_weight, double accuracy_weight,
                                  double iou_weight) {
  RewardSpec spec;
  spec.format_weight = format_weight;
  spec.accuracy_weight = accuracy_weight;
  spec.iou_weight = iou_weight;
  spec.format_enabled = true;
  spec.accuracy_enabled = family == TaskFamily::kGroupedQa;
  spec.iou_enabled = family == TaskFamily::kTemporalGrounding;
  return spec;
}

double RewardSpec::max_total() const {
  return (format_enabled ? format_weight : 0.0) + (accuracy_enabled ? accuracy_weight : 0.0) +
         (iou_enabled ? iou_weight : 0.0);
}

void RewardSpec::validate() const {
  if (format_weight < 0.0 || accuracy_weight < 0.0 || iou_weight < 0.0) {
    throw InvalidInput("reward weights must be nonnegative");
  }
  if (!(max_total() > 0.0)) throw InvalidInput("at least one enabled reward weight must be > 0");
}

int format_reward(std::span<const int> y, const Vocab& vocab) {
  std::size_t i = 0;
  const std::size_t n = y.size();
  if (i >= n || y[i] != vocab.think_open) return 0;
  ++i;
  while (i < n && vocab.is_content(y[i])) ++i;
  if (i >= n || y[i] != vocab.think_close) return 0;
  ++i;
  if (i >= n || y[i] != vocab.ans_open) return 0;
  ++i;
  const std::size_t answer_begin = i;
  while (i < n && vocab.is_content(y[i])) ++i;
  if (i == answer_begin) return 0;
  if (i >= n || y[i] != vocab.ans_close) return 0;
  ++i;
  if (i < n && y[i] == vocab.end) ++i;
  return i == n ? 1 : 0;
}

std::optional<TokenSeq> extract_answer(std::span<const int> y, const Vocab& vocab) {
  const auto open = std::find(y.begin(), y.end(), vocab.ans_open);
  if (open == y.end()) return std::nullopt;
  const auto close = std::find(open + 1, y.end(), vocab.ans_close);
  if (close == y.end()) return std::nullopt;
  return TokenSeq(open + 1, close);
}

TokenSeq extract_think(std::span<const int> y, const Vocab& vocab) {
  const auto open = std::find(y.begin(), y.end(), vocab.think_open);
  TokenSeq out;
  if (open == y.end()) return out;
  for (auto it = open + 1; it != y.end() && vocab.is_content(*it); ++it) out.push_back(*it);
  return out;
}

int accuracy_reward(std::span<const int> y, std::span<const int> gt_answer, const Vocab& vocab) {
  if (gt_answer.empty()) throw InvalidInput("ground-truth answer must be nonempty");
  const auto answer = extract_answer(y, vocab);
  if (!answer) return 0;
  return std::equal(answer->begin(), answer->end(), gt_answer.begin(), gt_answer.end()) ? 1 : 0;
}

double iou_reward(const Interval& pred, const Interval& gt) {
  pred.validate();
  gt.validate();
  const double inter = std::max(0.0, std::min(pred.end, gt.end) - std::max(pred.start, gt.start));
  const double union_len = pred.length() + gt.length() - inter;
  if (union_len <= 0.0) return (pred.start == gt.start && pred.end == gt.end) ? 1.0 : 0.0;
  return std::clamp(inter / union_len, 0.0, 1.0);
}

RewardBreakdown composite_reward(const RewardInputs& inputs, const RewardSpec& spec) {
  spec.validate();
  RewardBreakdown out;
  out.format = inputs.format;
  out.accuracy = inputs.accuracy;
  out.iou = inputs.iou;
  if (spec.format_enabled) out.total += spec.format_weight * inputs.format;
  if (spec.accuracy_enabled) out.total += spec.accuracy_weight * inputs.accuracy;
  if (spec.iou_enabled) out.total += spec.iou_weight * inputs.iou;
  return out;
}

Interval BinMap::decode(int start_token, int end_token) const {
  const int lo = std::min(start_token, end_token);
  const int hi = std::max(start_token, end_token);
  return Interval{lo * width(), (hi + 1) * width()};
}

RewardBreakdown score_response(const TaskInstance& sample, std::span<const int> y,
                               const Vocab& vocab, const RewardSpec& spec, const BinMap& bins) {
  RewardInputs in;
  in.format = format_reward(y, vocab);
  if (sample.gt_answer && !sample.gt_answer->empty()) {
    in.accuracy = accuracy_reward(y, *sample.gt_answer, vocab);
  }
  if (sample.gt_interval) {
    const auto answer = extract_answer(y, vocab);
    if (answer && answer->size() == 2 && vocab.is_content((*answer)[0]) &&
        vocab.is_content((*answer)[1]) && (*answer)[0] < bins.bins && (*answer)[1] < bins.bins) {
      in.iou = iou_reward(bins.decode((*answer)[0], (*answer)[1]), *sample.gt_interval);
    }
  }
  return composite_reward(in, spec);
}

}  // namespace grpo_forge
