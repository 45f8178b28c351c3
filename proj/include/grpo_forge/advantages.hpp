#ifndef GRPO_FORGE_ADVANTAGES_HPP_
#define GRPO_FORGE_ADVANTAGES_HPP_

#include <Eigen/Core>

#include "grpo_forge/policy.hpp"

namespace grpo_forge {

/// Denominator guard for predictive advantages: at the first step after a
/// sync every rho is exactly zero and the standardization is 0/0.
inline constexpr double kSigmaGuard = 1e-6;

struct GroupAdvantages {
  Eigen::VectorXd values;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  bool vanished = false;
};

struct PredictiveAdvantages {
  Eigen::VectorXd rhos;
  double mean_rho = 0.0;
  double std_rho = 0.0;
  double sigma_guard = kSigmaGuard;
  Eigen::VectorXd values;
};

/// (R - mean) / std with population statistics. A group whose reward std is
/// below kVanishingTolerance is flagged vanished and gets all-zero values.
GroupAdvantages normalize_group(const Eigen::Ref<const Eigen::VectorXd>& rewards);

/// Standardizes sequence-level log-ratios rho = log pi / pi_old with
/// denominator std + guard.
PredictiveAdvantages standardize_rhos(const Eigen::Ref<const Eigen::VectorXd>& rhos,
                                      double sigma_guard = kSigmaGuard);

/// Predictive advantages from the rollout's current and old log-probabilities.
PredictiveAdvantages predictive_advantage(const GroupRollout& rollout,
                                          double sigma_guard = kSigmaGuard);

/// Same, with log pi recomputed under `current` instead of the stored values.
PredictiveAdvantages predictive_advantage(const GroupRollout& rollout, const PolicyParams& current,
                                          double sigma_guard = kSigmaGuard);

inline bool detect_vanishing(const GroupAdvantages& adv) { return adv.vanished; }

}  // namespace grpo_forge

#endif  // GRPO_FORGE_ADVANTAGES_HPP_
