#include "grpo_forge/advantages.hpp"

#include <tuple>

#include <fmt/format.h>

#include "grpo_forge/errors.hpp"
#include "grpo_forge/metrics.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

GroupAdvantages normalize_group(const Eigen::Ref<const Eigen::VectorXd>& rewards) {
  if (rewards.size() < 2) {
    throw InvalidInput(fmt::format("group of {} rewards: need at least 2", rewards.size()));
  }
  if (!rewards.allFinite()) throw InvalidInput("rewards must be finite");
  GroupAdvantages adv;
  std::tie(adv.mean_reward, adv.std_reward) = population_mean_std(rewards);
  if (adv.std_reward < kVanishingTolerance) {
    adv.vanished = true;
    adv.values = Eigen::VectorXd::Zero(rewards.size());
  } else {
    adv.values = (rewards.array() - adv.mean_reward) / adv.std_reward;
  }
  return adv;
}

PredictiveAdvantages standardize_rhos(const Eigen::Ref<const Eigen::VectorXd>& rhos,
                                      double sigma_guard) {
  PredictiveAdvantages pred;
  pred.rhos = rhos;
  pred.sigma_guard = sigma_guard;
  std::tie(pred.mean_rho, pred.std_rho) = population_mean_std(rhos);
  pred.values = (rhos.array() - pred.mean_rho) / (pred.std_rho + sigma_guard);
  return pred;
}

PredictiveAdvantages predictive_advantage(const GroupRollout& rollout, double sigma_guard) {
  const int g = rollout.group_size();
  Eigen::VectorXd rhos(g);
  for (int i = 0; i < g; ++i) {
    const auto k = static_cast<std::size_t>(i);
    rhos[i] = rollout.logprob_current[k].total - rollout.logprob_old[k].total;
  }
  return standardize_rhos(rhos, sigma_guard);
}

PredictiveAdvantages predictive_advantage(const GroupRollout& rollout, const PolicyParams& current,
                                          double sigma_guard) {
  const int g = rollout.group_size();
  Eigen::VectorXd rhos(g);
  for (int i = 0; i < g; ++i) {
    const auto k = static_cast<std::size_t>(i);
    rhos[i] = logprob_sequence(current, rollout.sample, rollout.trajectories[k]).total -
              rollout.logprob_old[k].total;
  }
  return standardize_rhos(rhos, sigma_guard);
}

}  // namespace grpo_forge
