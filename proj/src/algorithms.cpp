#include "grpo_forge/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include <fmt/format.h>

#include "grpo_forge/errors.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

namespace {

/// Current-policy log-probabilities of every trajectory, recomputed at theta.
std::vector<SequenceLogProb> current_logprobs(const PolicyParams& current,
                                              const GroupRollout& rollout) {
  std::vector<SequenceLogProb> out;
  out.reserve(rollout.trajectories.size());
  for (const TokenSeq& y : rollout.trajectories) {
    out.push_back(logprob_sequence(current, rollout.sample, y));
  }
  return out;
}

void check_rollout(const GroupRollout& rollout, int min_size) {
  const auto g = rollout.trajectories.size();
  if (rollout.group_size() < min_size) {
    throw InvalidInput(fmt::format("group of {} trajectories: need at least {}", g, min_size));
  }
  if (static_cast<std::size_t>(rollout.rewards.size()) != g || rollout.logprob_old.size() != g ||
      rollout.logprob_reference.size() != g) {
    throw InvalidInput("rollout lists must all have length G");
  }
}

/// Sequence-level KL estimate (mean over trajectories of summed k3).
double kl_diagnostic(const std::vector<SequenceLogProb>& cur, const GroupRollout& rollout) {
  double total = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    total += (rollout.logprob_reference[i].per_token - cur[i].per_token)
                 .unaryExpr([](double lr) { return k3_term(lr); })
                 .sum();
  }
  return total / static_cast<double>(cur.size());
}

/// Adds sequence-level weights: grad += sum_i coeff_i * d log pi(y_i) / d theta.
void accumulate_sequences(const PolicyParams& current, const GroupRollout& rollout,
                          const Eigen::Ref<const Eigen::VectorXd>& coeffs, Eigen::VectorXd& grad) {
  for (int i = 0; i < rollout.group_size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    const TokenSeq& y = rollout.trajectories[static_cast<std::size_t>(i)];
    accumulate_score(current, rollout.sample, y,
                     Eigen::VectorXd::Constant(static_cast<Eigen::Index>(y.size()), coeffs[i]), grad);
  }
}

struct SurrogateTotals {
  double objective = 0.0;
  std::size_t tokens = 0;
  std::size_t clipped = 0;
};

/// Token-averaged (clipped) ratio surrogate minus beta * k3, accumulated into
/// a loss gradient with weight -1/G per trajectory.
SurrogateTotals clipped_surrogate(const PolicyParams& current, const GroupRollout& rollout,
                                  const std::vector<SequenceLogProb>& cur,
                                  const Eigen::Ref<const Eigen::VectorXd>& advantages,
                                  const Hyperparams& hp, double kl_beta, Eigen::VectorXd& grad) {
  SurrogateTotals totals;
  const double g = rollout.group_size();
  const double lo = 1.0 - hp.clip_epsilon;
  const double hi = 1.0 + hp.clip_epsilon;
  for (int i = 0; i < rollout.group_size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::VectorXd& lp = cur[k].per_token;
    const Eigen::VectorXd& lp_old = rollout.logprob_old[k].per_token;
    const Eigen::VectorXd& lp_ref = rollout.logprob_reference[k].per_token;
    const Eigen::Index len = lp.size();
    const double a = advantages[i];
    Eigen::VectorXd weights(len);
    double seq_obj = 0.0;
    for (Eigen::Index t = 0; t < len; ++t) {
      const double ratio = std::exp(lp[t] - lp_old[t]);
      const double unclipped = ratio * a;
      double surrogate = unclipped;
      double dsurrogate = unclipped;  // d(ratio * a) / d log pi
      if (!hp.no_clip) {
        const double clipped = std::clamp(ratio, lo, hi) * a;
        if (clipped < unclipped) {
          surrogate = clipped;
          dsurrogate = 0.0;
          ++totals.clipped;
        }
      }
      double token_obj = surrogate;
      double dtoken = dsurrogate;
      if (kl_beta != 0.0) {
        const double log_r = lp_ref[t] - lp[t];
        token_obj -= kl_beta * k3_term(log_r);
        dtoken -= kl_beta * k3_dlogp(log_r);
      }
      seq_obj += token_obj;
      weights[t] = -dtoken / (g * static_cast<double>(len));
    }
    totals.objective += seq_obj / static_cast<double>(len);
    totals.tokens += static_cast<std::size_t>(len);
    accumulate_score(current, rollout.sample, rollout.trajectories[k], weights, grad);
  }
  totals.objective /= g;
  return totals;
}

/// beta * (1/G) sum_i (1/|y_i|) sum_t k3, added to the loss and gradient.
double add_token_kl(const PolicyParams& current, const GroupRollout& rollout,
                    const std::vector<SequenceLogProb>& cur, double beta, Eigen::VectorXd& grad) {
  if (beta == 0.0) return 0.0;
  const double g = rollout.group_size();
  double kl = 0.0;
  for (int i = 0; i < rollout.group_size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::VectorXd log_r = rollout.logprob_reference[k].per_token - cur[k].per_token;
    const double len = static_cast<double>(log_r.size());
    kl += log_r.unaryExpr([](double v) { return k3_term(v); }).sum() / len;
    const Eigen::VectorXd weights =
        log_r.unaryExpr([](double v) { return k3_dlogp(v); }) * (beta / (g * len));
    accumulate_score(current, rollout.sample, rollout.trajectories[k], weights, grad);
  }
  return beta * kl / g;
}

Eigen::VectorXd sequence_rhos(const std::vector<SequenceLogProb>& cur,
                              const std::vector<SequenceLogProb>& baseline) {
  Eigen::VectorXd rhos(static_cast<Eigen::Index>(cur.size()));
  for (std::size_t i = 0; i < cur.size(); ++i) {
    rhos[static_cast<Eigen::Index>(i)] = cur[i].total - baseline[i].total;
  }
  return rhos;
}

LossReport make_report(const PolicyParams& current) {
  LossReport report;
  report.grad = Eigen::VectorXd::Zero(current.shape().param_count());
  return report;
}

}  // namespace

std::string_view algorithm_id(Algorithm a) {
  switch (a) {
    case Algorithm::kPpo: return "ppo";
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kRegGrpo: return "reg-grpo";
    case Algorithm::kReinforce: return "reinforce";
    case Algorithm::kRloo: return "rloo";
    case Algorithm::kRebel: return "rebel";
    case Algorithm::kRewardRegression: return "reward-regression";
    case Algorithm::kDpo: return "dpo";
    case Algorithm::kOnlineDpo: return "online-dpo";
  }
  return "unknown";
}

std::string valid_algorithm_ids() {
  std::string out;
  for (Algorithm a : kAllAlgorithms) {
    if (!out.empty()) out += ", ";
    out += algorithm_id(a);
  }
  return out;
}

Algorithm parse_algorithm(std::string_view id) {
  for (Algorithm a : kAllAlgorithms) {
    if (algorithm_id(a) == id) return a;
  }
  throw ConfigError(fmt::format("unknown algorithm '{}' (valid: {})", id, valid_algorithm_ids()));
}

void Hyperparams::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("clip_epsilon must lie in (0, 1)");
  if (!(kl_beta >= 0.0)) throw ConfigError("kl_beta must be >= 0");
  if (!(lambda_temp > 0.0)) throw ConfigError("lambda_temp must be > 0");
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (!(dpo_beta > 0.0)) throw ConfigError("dpo_beta must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(sigma_guard > 0.0)) throw ConfigError("sigma_guard must be > 0");
}

ValueParams ValueParams::zeros(int feature_dim) {
  return ValueParams{Eigen::VectorXd::Zero(feature_dim + 1)};
}

double ValueParams::predict(const Eigen::VectorXd& observation) const {
  const Eigen::Index d = weights.size() - 1;
  if (observation.size() != d) throw InvalidInput("value model dimension mismatch");
  return weights.head(d).dot(observation) + weights[d];
}

LossReport ppo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                         const ValueParams& value, const Hyperparams& hp) {
  check_rollout(rollout, 1);
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const double baseline = value.predict(rollout.sample.observation);
  const Eigen::VectorXd advantages = rollout.rewards.array() - baseline;
  const SurrogateTotals totals =
      clipped_surrogate(current, rollout, cur, advantages, hp, 0.0, report.grad);
  report.loss = -totals.objective;
  report.clip_active_fraction =
      totals.tokens ? static_cast<double>(totals.clipped) / static_cast<double>(totals.tokens) : 0.0;
  report.mean_abs_advantage = advantages.cwiseAbs().mean();
  report.kl_value = kl_diagnostic(cur, rollout);

  const double g = rollout.group_size();
  Eigen::VectorXd phi(value.weights.size());
  phi << rollout.sample.observation, 1.0;
  report.value_loss = advantages.squaredNorm() / g;
  report.value_grad = phi * (-2.0 * advantages.sum() / g);
  return report;
}

LossReport grpo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                          const GroupAdvantages& adv, const Hyperparams& hp) {
  check_rollout(rollout, 2);
  if (adv.values.size() != rollout.group_size()) throw InvalidInput("advantage count != G");
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const SurrogateTotals totals =
      clipped_surrogate(current, rollout, cur, adv.values, hp, hp.kl_beta, report.grad);
  report.loss = -totals.objective;
  report.clip_active_fraction =
      totals.tokens ? static_cast<double>(totals.clipped) / static_cast<double>(totals.tokens) : 0.0;
  report.mean_abs_advantage = adv.values.cwiseAbs().mean();
  report.kl_value = kl_diagnostic(cur, rollout);
  return report;
}

LossReport reg_grpo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                              const GroupAdvantages& adv, const PredictiveAdvantages& pred,
                              const Hyperparams& hp) {
  check_rollout(rollout, 2);
  const int g = rollout.group_size();
  if (adv.values.size() != g) throw InvalidInput("advantage count != G");
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const Eigen::VectorXd rhos = sequence_rhos(cur, rollout.logprob_old);

  double mean = pred.mean_rho;
  double std = pred.std_rho;
  if (hp.full_stat_grad) std::tie(mean, std) = population_mean_std(rhos);
  const double denom = std + hp.sigma_guard;
  const Eigen::VectorXd predicted = (rhos.array() - mean) / denom;
  const Eigen::VectorXd residual = adv.values - predicted;
  report.loss = residual.squaredNorm() / g;

  // dL/d rho_k
  Eigen::VectorXd dloss_drho;
  const Eigen::VectorXd dloss_dpred = -2.0 * residual / g;
  if (!hp.full_stat_grad) {
    dloss_drho = dloss_dpred / denom;
  } else {
    // d pred_i / d rho_k = (delta_ik - 1/G) / denom - centered_i centered_k / (G std denom^2)
    const Eigen::VectorXd centered = rhos.array() - mean;
    dloss_drho = (dloss_dpred.array() - dloss_dpred.sum() / g).matrix() / denom;
    if (std > 0.0) {
      dloss_drho -= centered * (dloss_dpred.dot(centered) / (g * std * denom * denom));
    }
  }
  accumulate_sequences(current, rollout, dloss_drho, report.grad);
  report.loss += add_token_kl(current, rollout, cur, hp.kl_beta, report.grad);
  report.mean_abs_advantage = adv.values.cwiseAbs().mean();
  report.kl_value = kl_diagnostic(cur, rollout);
  return report;
}

LossReport reinforce_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                               const Hyperparams& /*hp*/) {
  check_rollout(rollout, 1);
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const double g = rollout.group_size();
  Eigen::VectorXd lp(rollout.group_size());
  for (int i = 0; i < rollout.group_size(); ++i) lp[i] = cur[static_cast<std::size_t>(i)].total;
  report.loss = -rollout.rewards.dot(lp) / g;
  accumulate_sequences(current, rollout, -rollout.rewards / g, report.grad);
  report.mean_abs_advantage = rollout.rewards.cwiseAbs().mean();
  report.kl_value = kl_diagnostic(cur, rollout);
  return report;
}

Eigen::VectorXd rloo_weights(const Eigen::Ref<const Eigen::VectorXd>& rewards) {
  const Eigen::Index g = rewards.size();
  if (g < 2) throw InvalidInput("RLOO needs at least 2 rewards");
  const double total = rewards.sum();
  return rewards.array() - (total - rewards.array()) / static_cast<double>(g - 1);
}

LossReport rloo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                          const Hyperparams& /*hp*/) {
  check_rollout(rollout, 2);
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const double g = rollout.group_size();
  const Eigen::VectorXd w = rloo_weights(rollout.rewards);
  Eigen::VectorXd lp(rollout.group_size());
  for (int i = 0; i < rollout.group_size(); ++i) lp[i] = cur[static_cast<std::size_t>(i)].total;
  report.loss = -w.dot(lp) / g;
  accumulate_sequences(current, rollout, -w / g, report.grad);
  report.mean_abs_advantage = w.cwiseAbs().mean();
  report.kl_value = kl_diagnostic(cur, rollout);
  return report;
}

LossReport rebel_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                           const Hyperparams& hp) {
  check_rollout(rollout, 2);
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const int g = rollout.group_size();
  const Eigen::VectorXd rhos = sequence_rhos(cur, rollout.logprob_old);
  const double pairs = 0.5 * g * (g - 1);
  Eigen::VectorXd dloss_drho = Eigen::VectorXd::Zero(g);
  double gap_sum = 0.0;
  for (int i = 0; i < g; ++i) {
    for (int j = i + 1; j < g; ++j) {
      const double reward_gap = (rollout.rewards[i] - rollout.rewards[j]) / hp.lambda_temp;
      const double d = (rhos[i] - rhos[j]) - reward_gap;
      report.loss += d * d / pairs;
      dloss_drho[i] += 2.0 * d / pairs;
      dloss_drho[j] -= 2.0 * d / pairs;
      gap_sum += std::abs(reward_gap);
    }
  }
  accumulate_sequences(current, rollout, dloss_drho, report.grad);
  report.mean_abs_advantage = gap_sum / pairs;
  report.kl_value = kl_diagnostic(cur, rollout);
  return report;
}

LossReport reward_regression_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                                       const Hyperparams& hp) {
  check_rollout(rollout, 2);
  LossReport report = make_report(current);
  const auto cur = current_logprobs(current, rollout);
  const double g = rollout.group_size();
  const double lambda = hp.lambda_temp;
  // log Z_mc = log((1/G) sum_j exp(R_j / lambda)), held constant.
  const double log_z = log_sum_exp(Eigen::VectorXd(rollout.rewards / lambda)) - std::log(g);
  const Eigen::VectorXd rhos = sequence_rhos(cur, rollout.logprob_old);
  const Eigen::VectorXd residual = (lambda * (rhos.array() + log_z)).matrix() - rollout.rewards;
  report.loss = residual.squaredNorm() / g;
  accumulate_sequences(current, rollout, residual * (2.0 * lambda / g), report.grad);
  report.mean_abs_advantage = residual.cwiseAbs().mean();
  report.kl_value = kl_diagnostic(cur, rollout);
  return report;
}

LossReport dpo_loss_grad(const PolicyParams& current, const GroupRollout& rollout,
                         const Hyperparams& hp, bool online) {
  check_rollout(rollout, 2);
  LossReport report = make_report(current);
  Eigen::Index winner = 0;
  Eigen::Index loser = 0;
  const double best = rollout.rewards.maxCoeff(&winner);
  const double worst = rollout.rewards.minCoeff(&loser);
  if (best - worst < 1e-12) {
    report.skipped = true;
    return report;
  }
  const auto& baseline = online ? rollout.logprob_old : rollout.logprob_reference;
  const auto w = static_cast<std::size_t>(winner);
  const auto l = static_cast<std::size_t>(loser);
  const SequenceLogProb lp_w = logprob_sequence(current, rollout.sample, rollout.trajectories[w]);
  const SequenceLogProb lp_l = logprob_sequence(current, rollout.sample, rollout.trajectories[l]);
  const double margin =
      hp.dpo_beta * ((lp_w.total - baseline[w].total) - (lp_l.total - baseline[l].total));
  // -log sigmoid(m) = softplus(-m)
  report.loss = margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
  const double sig_neg = 1.0 / (1.0 + std::exp(margin));
  Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(rollout.group_size());
  coeffs[winner] -= hp.dpo_beta * sig_neg;
  coeffs[loser] += hp.dpo_beta * sig_neg;
  accumulate_sequences(current, rollout, coeffs, report.grad);
  report.mean_abs_advantage = std::abs(margin);
  report.kl_value = kl_diagnostic(current_logprobs(current, rollout), rollout);
  return report;
}

LossReport compute_loss(Algorithm algorithm, const PolicyParams& current,
                        const GroupRollout& rollout, const ValueParams* value,
                        const Hyperparams& hp) {
  switch (algorithm) {
    case Algorithm::kPpo:
      if (value == nullptr) throw InvalidInput("PPO requires a value model");
      return ppo_loss_grad(current, rollout, *value, hp);
    case Algorithm::kGrpo:
      return grpo_loss_grad(current, rollout, normalize_group(rollout.rewards), hp);
    case Algorithm::kRegGrpo:
      return reg_grpo_loss_grad(current, rollout, normalize_group(rollout.rewards),
                                predictive_advantage(rollout, current, hp.sigma_guard), hp);
    case Algorithm::kReinforce: return reinforce_loss_grad(current, rollout, hp);
    case Algorithm::kRloo: return rloo_loss_grad(current, rollout, hp);
    case Algorithm::kRebel: return rebel_loss_grad(current, rollout, hp);
    case Algorithm::kRewardRegression: return reward_regression_loss_grad(current, rollout, hp);
    case Algorithm::kDpo: return dpo_loss_grad(current, rollout, hp, false);
    case Algorithm::kOnlineDpo: return dpo_loss_grad(current, rollout, hp, true);
  }
  throw InvalidInput("unknown algorithm");
}

}  // namespace grpo_forge
