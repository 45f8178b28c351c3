#ifndef GRPO_FORGE_ORACLE_HPP_
#define GRPO_FORGE_ORACLE_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grpo_forge/algorithms.hpp"
#include "grpo_forge/policy.hpp"

namespace grpo_forge {

using RewardFn = std::function<double(const TokenSeq&)>;

/// Acceptance threshold for analytic vs. finite-difference gradients.
inline constexpr double kGradcheckTolerance = 1e-4;

struct PartitionValue {
  double z = 0.0;
  double log_z = 0.0;
  double lambda = 1.0;
  std::size_t support_size = 0;
};

/// Exact distribution over an enumerated support.
struct ExactPolicy {
  std::vector<SupportEntry> support;

  /// Log-probability of `y`; throws InvalidInput when y is not in the support.
  double log_probability(const TokenSeq& y) const;
};

/// Z = sum_y pi_old(y) exp(R(y) / lambda), accumulated in log space.
PartitionValue partition_function(const PolicyParams& old, const TaskInstance& sample,
                                  const RewardFn& reward_fn, double lambda, int max_length);

/// pi*(y) = pi_old(y) exp(R(y) / lambda) / Z over the full support.
ExactPolicy optimal_policy(const PolicyParams& old, const TaskInstance& sample,
                           const RewardFn& reward_fn, double lambda, int max_length);

/// The support of `params` itself, as an ExactPolicy (negative controls).
ExactPolicy exact_policy_of(const PolicyParams& params, const TaskInstance& sample, int max_length);

/// max_y |R(y) - lambda (log Z + log pi*(y) - log pi_old(y))|, with pi_old
/// recomputed from `old` rather than read from the support.
double reward_identity_check(const ExactPolicy& exact, const PolicyParams& old,
                             const TaskInstance& sample, const RewardFn& reward_fn, double lambda,
                             const PartitionValue& z);

struct AdvantageIdentityResult {
  double max_abs_error = 0.0;
  bool vanished = false;
  Eigen::VectorXd reward_advantages;
  Eigen::VectorXd ratio_advantages;
};

/// Group advantages from rewards vs. from standardized log(pi* / pi_old).
/// A constant-reward group is reported as vanished with both sides zero.
AdvantageIdentityResult advantage_identity_check(const ExactPolicy& exact, const PolicyParams& old,
                                                 const TaskInstance& sample,
                                                 const std::vector<TokenSeq>& group,
                                                 const RewardFn& reward_fn);

/// Central differences (f(theta + h e_k) - f(theta - h e_k)) / 2h.
Eigen::VectorXd finite_diff_grad(const std::function<double(const PolicyParams&)>& loss_fn,
                                 const PolicyParams& params, double h = 1e-5);

/// Absolute floor of the relative-error denominator. Central differences at
/// h = 1e-5 carry ~1e-11 rounding noise per coordinate, which swamps
/// gradients much smaller than this.
inline constexpr double kRelativeErrorFloor = 1e-5;

/// ||a - b|| / max(||a||, ||b||, kRelativeErrorFloor).
double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Random loss instance for gradient checking (vocab <= 8, L <= 4).
struct GradcheckInstance {
  Algorithm algorithm = Algorithm::kGrpo;
  std::uint64_t seed = 0;
  PolicyTriple triple;
  GroupRollout rollout;
  ValueParams value;
  Hyperparams hp;
};

GradcheckInstance make_gradcheck_instance(Algorithm algorithm, std::uint64_t seed);

/// Loss at arbitrary parameters with every rollout-side quantity held fixed
/// (including Reg-GRPO's detached statistics, taken at the instance's
/// current parameters).
double gradcheck_loss(const GradcheckInstance& inst, const PolicyParams& params);
Eigen::VectorXd gradcheck_analytic(const GradcheckInstance& inst);

struct GradcheckResult {
  Algorithm algorithm = Algorithm::kGrpo;
  std::uint64_t worst_seed = 0;
  double max_rel_error = 0.0;
  int trials = 0;
};

/// `corrupt` perturbs the analytic gradient (negative control).
GradcheckResult run_gradcheck(Algorithm algorithm, std::uint64_t seed, int trials,
                              bool corrupt = false);

struct OracleCheckRow {
  std::string check;
  int vocab = 0;
  int length = 0;
  double lambda = 0.0;
  double max_error = 0.0;
  double tolerance = 0.0;
  /// Negative-control rows pass when the error exceeds the tolerance.
  bool expect_failure = false;
  bool pass = false;
};

/// Identity sweep over vocab {2,3,4} x L {1,2,3} x lambda {0.5,1,2} with random
/// old policies and rewards in [-10, 10]. With `substitute_old`, pi_old is
/// used in place of pi* everywhere, which must make the identities fail.
std::vector<OracleCheckRow> run_oracle_sweep(std::uint64_t seed, bool substitute_old = false);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_ORACLE_HPP_
