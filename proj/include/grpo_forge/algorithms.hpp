#ifndef GRPO_FORGE_ALGORITHMS_HPP_
#define GRPO_FORGE_ALGORITHMS_HPP_

#include <Eigen/Core>

#include <array>
#include <string>
#include <string_view>

#include "grpo_forge/advantages.hpp"
#include "grpo_forge/policy.hpp"

namespace grpo_forge {

enum class Algorithm {
  kPpo,
  kGrpo,
  kRegGrpo,
  kReinforce,
  kRloo,
  kRebel,
  kRewardRegression,
  kDpo,
  kOnlineDpo,
};

inline constexpr std::array<Algorithm, 9> kAllAlgorithms{
    Algorithm::kPpo,   Algorithm::kGrpo,  Algorithm::kRegGrpo,
    Algorithm::kReinforce, Algorithm::kRloo, Algorithm::kRebel,
    Algorithm::kRewardRegression, Algorithm::kDpo, Algorithm::kOnlineDpo};

std::string_view algorithm_id(Algorithm a);
/// Throws ConfigError naming every valid id.
Algorithm parse_algorithm(std::string_view id);
std::string valid_algorithm_ids();

struct Hyperparams {
  double clip_epsilon = 0.2;
  double kl_beta = 0.1;
  double lambda_temp = 1.0;
  int group_size = 8;
  int window = 100;
  double dpo_beta = 0.1;
  double learning_rate = 0.05;
  /// Replaces min/clip with the plain ratio surrogate in GRPO and PPO.
  bool no_clip = false;
  /// Differentiate Reg-GRPO through the group mean/std of rho.
  bool full_stat_grad = false;
  double sigma_guard = kSigmaGuard;

  void validate() const;
};

/// Linear state-value model V(x) = w . [observation, 1] used by PPO.
struct ValueParams {
  Eigen::VectorXd weights;

  static ValueParams zeros(int feature_dim);
  double predict(const Eigen::VectorXd& observation) const;
};

struct LossReport {
  double loss = 0.0;
  Eigen::VectorXd grad;
  double clip_active_fraction = 0.0;
  double kl_value = 0.0;
  double mean_abs_advantage = 0.0;
  /// DPO only: no preference pair in the group, nothing to learn.
  bool skipped = false;
  /// PPO only: squared-error regression of V toward the terminal reward.
  double value_loss = 0.0;
  Eigen::VectorXd value_grad;
};

// Every function below returns a loss to minimize and its gradient with
// respect to `current`'s parameters. The rollout supplies trajectories,
// rewards and the (constant) old/reference log-probabilities.

/// Token-averaged clipped surrogate with A = R - V(x) for every token.
LossReport ppo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                         const ValueParams& value, const Hyperparams& hp);

LossReport grpo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                          const GroupAdvantages& adv, const Hyperparams& hp);

/// `pred` supplies the detached mean/std of rho (ignored when
/// hp.full_stat_grad is set); rho itself is recomputed under `current`.
LossReport reg_grpo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                              const GroupAdvantages& adv, const PredictiveAdvantages& pred,
                              const Hyperparams& hp);

LossReport reinforce_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                               const Hyperparams& hp);

/// R_i minus the mean of the other rewards in the group.
Eigen::VectorXd rloo_weights(const Eigen::Ref<const Eigen::VectorXd>& rewards);

LossReport rloo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                          const Hyperparams& hp);

/// Mean over all unordered pairs of ((rho_i - rho_j) - (R_i - R_j) / lambda)^2.
LossReport rebel_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                           const Hyperparams& hp);

LossReport reward_regression_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                                       const Hyperparams& hp);

/// Best-vs-worst pair. Offline DPO measures rho against the reference,
/// online DPO against the old policy.
LossReport dpo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                         const Hyperparams& hp, bool online);

/// Dispatches by algorithm, deriving group/predictive advantages as needed.
/// `value` is required for PPO only.
LossReport compute_loss(Algorithm algorithm, const PolicyParams& current,
                        const GroupRollout& rollout, const ValueParams* value,
                        const Hyperparams& hp);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_ALGORITHMS_HPP_
