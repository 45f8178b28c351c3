#ifndef GRPO_FORGE_ENVS_HPP_
#define GRPO_FORGE_ENVS_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "grpo_forge/rewards.hpp"
#include "grpo_forge/types.hpp"

namespace grpo_forge {

struct TaskGenSpec {
  TaskFamily family = TaskFamily::kGroupedQa;
  int count = 256;
  int feature_dim = 8;
  Vocab vocab = Vocab::canonical(16);
  /// Mixing weight s of pure noise into the observation: v = (1 - s) signal + s noise.
  double distractor_strength = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Bin geometry used for temporal grounding: one content token per bin over
/// a 16-unit horizon.
BinMap bin_map_for(const Vocab& vocab);

/// Deterministic instance factory. The hidden linear maps are fixed by the
/// spec seed; each instance is drawn from its own stream keyed by id, so
/// instance k is the same whichever range it is generated in.
class TaskGenerator {
 public:
  explicit TaskGenerator(TaskGenSpec spec);

  const TaskGenSpec& spec() const { return spec_; }
  const BinMap& bins() const { return bins_; }

  TaskInstance instance(int id) const;
  /// Instances with ids [first_id, first_id + count).
  std::vector<TaskInstance> generate(int first_id, int count) const;
  std::vector<TaskInstance> generate() const { return generate(0, spec_.count); }

  /// Best linear read-out of the answer tokens from the observation alone.
  /// Exact when distractor_strength is 0.
  TokenSeq probe_answer(const TaskInstance& sample) const;

 private:
  TaskGenSpec spec_;
  BinMap bins_;
  Eigen::MatrixXd answer_map_;    // content_count x d
  Eigen::MatrixXd interval_map_;  // d x 2
  Eigen::MatrixXd interval_pinv_;
};

std::vector<TaskInstance> gen_grouped_qa(TaskGenSpec spec);
std::vector<TaskInstance> gen_temporal_grounding(TaskGenSpec spec);
std::vector<TaskInstance> gen_format_only(TaskGenSpec spec);

/// THINK_OPEN trace THINK_CLOSE ANS_OPEN gt ANS_CLOSE END, where the trace is
/// the first ground-truth token. Throws InvalidInput for format-only samples.
TokenSeq reference_answer(const TaskInstance& sample, const Vocab& vocab);

/// One JSON object per line:
/// {"id", "family", "observation": [..], "prompt": [..], "gt_answer": [..] | null,
///  "gt_interval": [start, end] | null, "intrinsic_difficulty"}.
void write_tasks_jsonl(std::ostream& out, const std::vector<TaskInstance>& tasks);
std::vector<TaskInstance> read_tasks_jsonl(std::istream& in);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_ENVS_HPP_
