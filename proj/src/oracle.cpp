#include "grpo_forge/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>

#include "grpo_forge/advantages.hpp"
#include "grpo_forge/errors.hpp"
#include "grpo_forge/metrics.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

namespace {

constexpr double kIdentityTolerance = 1e-10;
constexpr double kNegativeControlFloor = 0.01;
constexpr double kKinkMargin = 1e-3;

Eigen::VectorXd reward_vector(const std::vector<SupportEntry>& support, const RewardFn& reward_fn) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i) {
    r[static_cast<Eigen::Index>(i)] = reward_fn(support[i].sequence);
  }
  return r;
}

Eigen::VectorXd log_probs(const std::vector<SupportEntry>& support) {
  Eigen::VectorXd lp(static_cast<Eigen::Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i) {
    lp[static_cast<Eigen::Index>(i)] = support[i].log_probability;
  }
  return lp;
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidInput("lambda must be > 0");
}

/// Smallest rho spread accepted in Reg-GRPO gradcheck instances.
constexpr double kMinGradcheckSigma = 1e-2;

bool near_clip_boundary(const GroupRollout& rollout, const PolicyParams& current, double eps) {
  for (int i = 0; i < rollout.group_size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::VectorXd lp = logprob_sequence(current, rollout.sample, rollout.trajectories[k]).per_token;
    const Eigen::VectorXd ratio = (lp - rollout.logprob_old[k].per_token).array().exp();
    for (Eigen::Index t = 0; t < ratio.size(); ++t) {
      if (std::abs(ratio[t] - (1.0 - eps)) < kKinkMargin ||
          std::abs(ratio[t] - (1.0 + eps)) < kKinkMargin) {
        return true;
      }
    }
  }
  return false;
}

Eigen::VectorXd perturbed(const Eigen::VectorXd& base, double scale, std::mt19937_64& engine) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd out = base;
  for (Eigen::Index k = 0; k < out.size(); ++k) out[k] += normal(engine);
  return out;
}

}  // namespace

double ExactPolicy::log_probability(const TokenSeq& y) const {
  for (const SupportEntry& e : support) {
    if (e.sequence == y) return e.log_probability;
  }
  throw InvalidInput("sequence not in the enumerated support");
}

PartitionValue partition_function(const PolicyParams& old, const TaskInstance& sample,
                                  const RewardFn& reward_fn, double lambda, int max_length) {
  check_lambda(lambda);
  const auto support = enumerate_support(old, sample, max_length);
  const Eigen::VectorXd terms = log_probs(support) + reward_vector(support, reward_fn) / lambda;
  PartitionValue z;
  z.log_z = log_sum_exp(terms);
  z.z = std::exp(z.log_z);
  z.lambda = lambda;
  z.support_size = support.size();
  return z;
}

ExactPolicy optimal_policy(const PolicyParams& old, const TaskInstance& sample,
                           const RewardFn& reward_fn, double lambda, int max_length) {
  check_lambda(lambda);
  ExactPolicy exact;
  exact.support = enumerate_support(old, sample, max_length);
  const Eigen::VectorXd terms =
      log_probs(exact.support) + reward_vector(exact.support, reward_fn) / lambda;
  const double log_z = log_sum_exp(terms);
  for (std::size_t i = 0; i < exact.support.size(); ++i) {
    SupportEntry& e = exact.support[i];
    e.log_probability = terms[static_cast<Eigen::Index>(i)] - log_z;
    e.probability = std::exp(e.log_probability);
  }
  return exact;
}

ExactPolicy exact_policy_of(const PolicyParams& params, const TaskInstance& sample, int max_length) {
  return ExactPolicy{enumerate_support(params, sample, max_length)};
}

double reward_identity_check(const ExactPolicy& exact, const PolicyParams& old,
                             const TaskInstance& sample, const RewardFn& reward_fn, double lambda,
                             const PartitionValue& z) {
  check_lambda(lambda);
  double worst = 0.0;
  for (const SupportEntry& e : exact.support) {
    const double lp_old = logprob_sequence(old, sample, e.sequence).total;
    const double implied = lambda * (z.log_z + e.log_probability - lp_old);
    worst = std::max(worst, std::abs(reward_fn(e.sequence) - implied));
  }
  return worst;
}

AdvantageIdentityResult advantage_identity_check(const ExactPolicy& exact, const PolicyParams& old,
                                                 const TaskInstance& sample,
                                                 const std::vector<TokenSeq>& group,
                                                 const RewardFn& reward_fn) {
  if (group.size() < 2) throw InvalidInput("advantage identity needs a group of at least 2");
  const auto g = static_cast<Eigen::Index>(group.size());
  Eigen::VectorXd rewards(g);
  Eigen::VectorXd rhos(g);
  for (Eigen::Index i = 0; i < g; ++i) {
    const TokenSeq& y = group[static_cast<std::size_t>(i)];
    rewards[i] = reward_fn(y);
    rhos[i] = exact.log_probability(y) - logprob_sequence(old, sample, y).total;
  }
  AdvantageIdentityResult out;
  const GroupAdvantages adv = normalize_group(rewards);
  out.reward_advantages = adv.values;
  out.vanished = adv.vanished;
  // Plain standardization: Z(x) appears in every rho and must drop out of
  // the centered values, so no guard is added here.
  const auto [mean, std] = population_mean_std(rhos);
  out.ratio_advantages = std < kVanishingTolerance ? Eigen::VectorXd::Zero(g)
                                                   : Eigen::VectorXd((rhos.array() - mean) / std);
  out.max_abs_error = (out.reward_advantages - out.ratio_advantages).cwiseAbs().maxCoeff();
  return out;
}

Eigen::VectorXd finite_diff_grad(const std::function<double(const PolicyParams&)>& loss_fn,
                                 const PolicyParams& params, double h) {
  if (!(h > 0.0)) throw InvalidInput("finite-difference step must be > 0");
  PolicyParams probe = params;
  Eigen::VectorXd grad(params.theta().size());
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    const double saved = probe.theta()[k];
    probe.theta()[k] = saved + h;
    const double plus = loss_fn(probe);
    probe.theta()[k] = saved - h;
    const double minus = loss_fn(probe);
    probe.theta()[k] = saved;
    grad[k] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), kRelativeErrorFloor});
}

GradcheckInstance make_gradcheck_instance(Algorithm algorithm, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 engine(derive_seed(seed, 0x67726164, attempt));
    auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); };
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(engine); };

    GradcheckInstance inst;
    inst.algorithm = algorithm;
    inst.seed = seed;

    PolicyShape shape;
    shape.kind = uniform_int(0, 1) == 0 ? Parameterization::kTabular : Parameterization::kLinear;
    shape.vocab_size = uniform_int(3, 8);
    shape.max_len = uniform_int(1, 4);
    shape.feature_dim = shape.kind == Parameterization::kLinear ? uniform_int(1, 4) : 0;
    shape.end_token = uniform_int(0, 1) == 0 ? shape.vocab_size - 1 : -1;
    shape.hint_token = -1;

    TaskInstance sample;
    sample.id = 0;
    sample.prompt = {0};
    if (shape.kind == Parameterization::kLinear) {
      sample.observation = perturbed(Eigen::VectorXd::Zero(shape.feature_dim), 1.0, engine);
    }

    const PolicyParams old = PolicyParams::random(shape, 0.5, derive_seed(seed, attempt, 1));
    inst.triple.old = old;
    inst.triple.current = PolicyParams(shape, perturbed(old.theta(), 0.3, engine));
    inst.triple.reference = PolicyParams(shape, perturbed(old.theta(), 0.3, engine));

    inst.hp.group_size = uniform_int(2, 6);
    inst.hp.clip_epsilon = uniform(0.1, 0.3);
    inst.hp.kl_beta = uniform_int(0, 3) == 0 ? 0.0 : uniform(0.05, 0.5);
    inst.hp.lambda_temp = uniform(0.5, 2.0);
    inst.hp.dpo_beta = uniform(0.05, 1.0);
    inst.hp.no_clip = uniform_int(0, 4) == 0;
    inst.hp.full_stat_grad = uniform_int(0, 1) == 0;

    const SamplingSource source =
        algorithm == Algorithm::kDpo ? SamplingSource::kReference : SamplingSource::kOld;
    inst.rollout = sample_group(inst.triple, sample, inst.hp.group_size, derive_seed(seed, attempt, 2),
                                source);
    for (Eigen::Index i = 0; i < inst.rollout.rewards.size(); ++i) {
      inst.rollout.rewards[i] = uniform(-1.0, 2.0);
    }
    inst.value.weights =
        perturbed(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sample.observation.size()) + 1), 0.5, engine);

    const bool clipped = (algorithm == Algorithm::kPpo || algorithm == Algorithm::kGrpo) &&
                         !inst.hp.no_clip;
    if (clipped && near_clip_boundary(inst.rollout, inst.triple.current, inst.hp.clip_epsilon)) {
      continue;  // the clipped surrogate has a kink here; finite differences are meaningless
    }
    if (algorithm == Algorithm::kRegGrpo &&
        predictive_advantage(inst.rollout, inst.triple.current, inst.hp.sigma_guard).std_rho <
            kMinGradcheckSigma) {
      // Near sigma_rho = 0 the guard makes the loss curvature ~1/guard^2 and
      // central differences at h = 1e-5 stop being an oracle.
      continue;
    }
    return inst;
  }
}

namespace {

LossReport gradcheck_report(const GradcheckInstance& inst, const PolicyParams& params) {
  if (inst.algorithm == Algorithm::kRegGrpo) {
    const PredictiveAdvantages pred =
        predictive_advantage(inst.rollout, inst.triple.current, inst.hp.sigma_guard);
    return reg_grpo_loss_grad(params, inst.rollout, normalize_group(inst.rollout.rewards), pred,
                              inst.hp);
  }
  return compute_loss(inst.algorithm, params, inst.rollout, &inst.value, inst.hp);
}

}  // namespace

double gradcheck_loss(const GradcheckInstance& inst, const PolicyParams& params) {
  return gradcheck_report(inst, params).loss;
}

Eigen::VectorXd gradcheck_analytic(const GradcheckInstance& inst) {
  return gradcheck_report(inst, inst.triple.current).grad;
}

GradcheckResult run_gradcheck(Algorithm algorithm, std::uint64_t seed, int trials, bool corrupt) {
  if (trials < 1) throw ConfigError("gradcheck needs at least one trial");
  GradcheckResult result;
  result.algorithm = algorithm;
  result.trials = trials;
  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t inst_seed =
        derive_seed(seed, static_cast<std::uint64_t>(algorithm), static_cast<std::uint64_t>(trial));
    const GradcheckInstance inst = make_gradcheck_instance(algorithm, inst_seed);
    Eigen::VectorXd analytic = gradcheck_analytic(inst);
    if (corrupt) analytic[analytic.size() - 1] += 0.01 * std::max(analytic.norm(), 1.0);
    const Eigen::VectorXd numeric = finite_diff_grad(
        [&inst](const PolicyParams& p) { return gradcheck_loss(inst, p); }, inst.triple.current);
    const double err = relative_error(analytic, numeric);
    if (trial == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_seed = inst_seed;
    }
  }
  return result;
}

std::vector<OracleCheckRow> run_oracle_sweep(std::uint64_t seed, bool substitute_old) {
  std::vector<OracleCheckRow> rows;
  std::uint64_t config_index = 0;
  for (int vocab : {2, 3, 4}) {
    for (int length : {1, 2, 3}) {
      for (double lambda : {0.5, 1.0, 2.0}) {
        ++config_index;
        const PolicyShape shape = PolicyShape::tabular(vocab, length);
        const PolicyParams old = PolicyParams::random(shape, 1.0, derive_seed(seed, config_index, 1));
        TaskInstance sample;
        sample.prompt = {0};

        const auto support = enumerate_support(old, sample, length);
        std::map<TokenSeq, double> table;
        std::mt19937_64 engine(derive_seed(seed, config_index, 2));
        for (const SupportEntry& e : support) table[e.sequence] = -10.0 + 20.0 * uniform01(engine);
        const RewardFn reward_fn = [&table](const TokenSeq& y) { return table.at(y); };

        const PartitionValue z = partition_function(old, sample, reward_fn, lambda, length);
        const ExactPolicy optimal = optimal_policy(old, sample, reward_fn, lambda, length);
        const ExactPolicy as_old = exact_policy_of(old, sample, length);
        const ExactPolicy& tested = substitute_old ? as_old : optimal;

        auto add = [&](std::string check, double err, double tol, bool expect_failure) {
          OracleCheckRow row{std::move(check), vocab, length, lambda, err, tol, expect_failure, false};
          row.pass = expect_failure ? err > tol : err <= tol;
          rows.push_back(std::move(row));
        };

        double mass = 0.0;
        for (const SupportEntry& e : tested.support) mass += e.probability;
        add("normalization", std::abs(mass - 1.0), 1e-12, false);

        add("reward_identity",
            reward_identity_check(tested, old, sample, reward_fn, lambda, z), kIdentityTolerance,
            false);

        // Groups of 4 drawn from the support; constant-reward draws are retried.
        double adv_err = 0.0;
        std::uniform_int_distribution<std::size_t> pick(0, support.size() - 1);
        for (int trial = 0; trial < 5; ++trial) {
          std::vector<TokenSeq> group;
          for (int attempt = 0; attempt < 100; ++attempt) {
            group.clear();
            for (int i = 0; i < 4; ++i) group.push_back(support[pick(engine)].sequence);
            Eigen::VectorXd r(4);
            for (int i = 0; i < 4; ++i) r[i] = reward_fn(group[static_cast<std::size_t>(i)]);
            if (r.maxCoeff() - r.minCoeff() > 1e-9) break;
          }
          adv_err = std::max(
              adv_err, advantage_identity_check(tested, old, sample, group, reward_fn).max_abs_error);
        }
        add("advantage_identity", adv_err, kIdentityTolerance, false);

        // Z grows when any single reward grows.
        std::map<TokenSeq, double> bumped = table;
        bumped[support[pick(engine)].sequence] += 1.0;
        const double z_bumped =
            partition_function(old, sample, [&bumped](const TokenSeq& y) { return bumped.at(y); },
                               lambda, length)
                .z;
        add("z_monotone", std::max(0.0, z.z - z_bumped), 0.0, false);
        rows.back().pass = z_bumped > z.z;

        if (!substitute_old) {
          add("negative_control", reward_identity_check(as_old, old, sample, reward_fn, lambda, z),
              kNegativeControlFloor, true);
        }
      }
    }
  }
  return rows;
}

}  // namespace grpo_forge
