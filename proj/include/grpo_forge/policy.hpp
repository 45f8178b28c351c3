#ifndef GRPO_FORGE_POLICY_HPP_
#define GRPO_FORGE_POLICY_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "grpo_forge/types.hpp"

namespace grpo_forge {

enum class Parameterization {
  /// Free logits per (position, previous token). Ignores observation and prompt.
  kTabular,
  /// Per-position affine map of [1, observation, hint bag] to logits.
  kLinear,
};

std::string_view parameterization_id(Parameterization p);
Parameterization parse_parameterization(std::string_view id);

struct PolicyShape {
  Parameterization kind = Parameterization::kLinear;
  int vocab_size = 16;
  int feature_dim = 8;
  int max_len = 8;
  /// Generation stops after this token; -1 disables early stopping.
  int end_token = -1;
  /// Prompt tokens after the last occurrence of this marker form the hint
  /// bag seen by the linear parameterization; -1 disables hints.
  int hint_token = -1;

  static PolicyShape linear_for(const Vocab& vocab, int feature_dim, int max_len);
  static PolicyShape tabular(int vocab_size, int max_len, int end_token = -1);

  /// Width of the linear feature vector: 1 + feature_dim + vocab_size.
  int feature_width() const { return 1 + feature_dim + vocab_size; }
  Eigen::Index param_count() const;
  void validate() const;

  bool operator==(const PolicyShape&) const = default;
};

/// Parameter vector theta together with the parameterization it belongs to.
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(PolicyShape shape, Eigen::VectorXd theta);

  static PolicyParams zeros(const PolicyShape& shape);
  static PolicyParams random(const PolicyShape& shape, double scale, std::uint64_t seed);

  const PolicyShape& shape() const { return shape_; }
  const Eigen::VectorXd& theta() const { return theta_; }
  Eigen::VectorXd& theta() { return theta_; }

 private:
  PolicyShape shape_;
  Eigen::VectorXd theta_;
};

/// The current, old (rollout-generating) and frozen reference policies.
struct PolicyTriple {
  PolicyParams current;
  PolicyParams old;
  PolicyParams reference;

  static PolicyTriple from_initial(const PolicyParams& init);
  void validate() const;
};

struct SequenceLogProb {
  double total = 0.0;
  Eigen::VectorXd per_token;
};

/// G trajectories for one sample, scored under all three policies.
struct GroupRollout {
  TaskInstance sample;
  std::vector<TokenSeq> trajectories;
  Eigen::VectorXd rewards;
  std::vector<SequenceLogProb> logprob_current;
  std::vector<SequenceLogProb> logprob_old;
  std::vector<SequenceLogProb> logprob_reference;

  int group_size() const { return static_cast<int>(trajectories.size()); }
};

enum class SamplingSource { kOld, kReference, kCurrent };

struct SupportEntry {
  TokenSeq sequence;
  double probability = 0.0;
  double log_probability = 0.0;
};

/// Maximum number of sequences exact enumeration will visit.
inline constexpr std::int64_t kEnumerationCap = 65536;

/// Linear-mode feature vector [1, observation, hint bag] for a sample.
Eigen::VectorXd policy_features(const PolicyShape& shape, const TaskInstance& sample);

/// Logits at `position` after `prev_token` (-1 at the start of a sequence).
Eigen::VectorXd token_logits(const PolicyParams& params, const Eigen::VectorXd& features,
                             int position, int prev_token);

/// Throws InvalidInput for empty sequences, ids out of range or overlong input.
void validate_sequence(const PolicyShape& shape, std::span<const int> y);

SequenceLogProb logprob_sequence(const PolicyParams& params, const TaskInstance& sample,
                                 std::span<const int> y);

/// d log pi(y | x) / d theta.
Eigen::VectorXd grad_logprob(const PolicyParams& params, const TaskInstance& sample,
                             std::span<const int> y);

/// grad += sum_t token_weights[t] * d log pi(y_t | x, y_<t) / d theta.
/// Every loss gradient in the project is assembled through this call.
void accumulate_score(const PolicyParams& params, const TaskInstance& sample,
                      std::span<const int> y, const Eigen::Ref<const Eigen::VectorXd>& token_weights,
                      Eigen::Ref<Eigen::VectorXd> grad);

/// Ancestral sampling until END or max_len. `seed` fully determines the draw.
TokenSeq sample_sequence(const PolicyParams& params, const TaskInstance& sample,
                         std::uint64_t seed);

/// Argmax decoding (ties to the lowest id).
TokenSeq greedy_decode(const PolicyParams& params, const TaskInstance& sample);

/// G rollouts from the chosen policy (old by default); rollout i uses the
/// stream derived from (seed, i). Rewards are left at zero for the caller.
GroupRollout sample_group(const PolicyTriple& triple, const TaskInstance& sample, int group_size,
                          std::uint64_t seed, SamplingSource source = SamplingSource::kOld);

/// Recomputes the logprob_current entries of a rollout under `current`.
void rescore_current(GroupRollout& rollout, const PolicyParams& current);

/// Every sequence of length <= max_length (stopping early only at END) with
/// its probability. Refuses supports larger than kEnumerationCap.
std::vector<SupportEntry> enumerate_support(const PolicyParams& params,
                                            const TaskInstance& sample, int max_length);

/// Mean over trajectories of the summed per-token k3 estimator
/// r - log r - 1 with r = pi_ref / pi_current. Estimates sequence-level
/// KL(current || reference).
double kl_estimate(const PolicyParams& current, const PolicyParams& reference,
                   const GroupRollout& rollout);

/// Text checkpoint: one header line then one parameter per line (%.17g).
void write_policy(std::ostream& out, const PolicyParams& params);
PolicyParams read_policy(std::istream& in);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_POLICY_HPP_
