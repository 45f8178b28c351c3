#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "grpo_forge/advantages.hpp"
#include "grpo_forge/errors.hpp"
#include "grpo_forge/policy.hpp"
#include "test_util.hpp"

using namespace grpo_forge;
using grpo_forge::testing::blank_sample;
using grpo_forge::testing::make_rollout;
using grpo_forge::testing::random_sequence;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(NormalizeGroup, Examples) {
  const GroupAdvantages a = normalize_group(vec({1, 0, 0, 1}));
  EXPECT_FALSE(a.vanished);
  EXPECT_FALSE(detect_vanishing(a));
  EXPECT_EQ(a.mean_reward, 0.5);
  EXPECT_EQ(a.std_reward, 0.5);
  EXPECT_EQ(a.values, vec({1, -1, -1, 1}));

  const GroupAdvantages c = normalize_group(vec({1, 1, 1, 1}));
  EXPECT_TRUE(c.vanished);
  EXPECT_TRUE(detect_vanishing(c));
  EXPECT_EQ(c.values, Eigen::VectorXd::Zero(4));
  EXPECT_TRUE(detect_vanishing(normalize_group(vec({0, 0, 0, 0}))));

  EXPECT_EQ(normalize_group(vec({2, 0, 0, 2})).values, vec({1, -1, -1, 1}));
}

TEST(NormalizeGroup, Errors) {
  EXPECT_THROW(normalize_group(vec({1})), InvalidInput);
  EXPECT_THROW(normalize_group(vec({1, NAN})), InvalidInput);
}

TEST(NormalizeGroup, MomentsAffineInvarianceAndPermutation) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(2, 12);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  for (int rep = 0; rep < 500; ++rep) {
    const int g = size(rng);
    Eigen::VectorXd r(g);
    for (Eigen::Index i = 0; i < g; ++i) r[i] = std::round(u(rng));  // ties and constant groups occur
    const GroupAdvantages a = normalize_group(r);
    if (a.vanished) {
      EXPECT_EQ(a.values.cwiseAbs().maxCoeff(), 0.0);
      continue;
    }
    EXPECT_NEAR(a.values.mean(), 0.0, 1e-9);
    EXPECT_NEAR(a.values.array().square().mean(), 1.0, 1e-9);

    const double k = scale(rng);
    const double b = u(rng) * 10.0;
    const GroupAdvantages t = normalize_group((k * r.array() + b).matrix());
    EXPECT_LE((t.values - a.values).cwiseAbs().maxCoeff(), 1e-9);

    std::vector<int> perm(static_cast<std::size_t>(g));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::VectorXd pr(g);
    for (int i = 0; i < g; ++i) pr[i] = r[perm[static_cast<std::size_t>(i)]];
    const GroupAdvantages p = normalize_group(pr);
    for (int i = 0; i < g; ++i) EXPECT_NEAR(p.values[i], a.values[perm[static_cast<std::size_t>(i)]], 1e-13);
  }
}

TEST(StandardizeRhos, GuardedFormula) {
  const PredictiveAdvantages p = standardize_rhos(vec({0.2, -0.2}));
  EXPECT_NEAR(p.mean_rho, 0.0, 1e-17);
  EXPECT_NEAR(p.std_rho, 0.2, 1e-17);
  EXPECT_NEAR(p.values[0], 0.2 / (0.2 + kSigmaGuard), 1e-15);
  EXPECT_NEAR(p.values[1], -0.2 / (0.2 + kSigmaGuard), 1e-15);
  EXPECT_NEAR(p.values[0], 1.0, 1e-5);

  const PredictiveAdvantages z = standardize_rhos(Eigen::VectorXd::Zero(5));
  EXPECT_EQ(z.values, Eigen::VectorXd::Zero(5));
  EXPECT_EQ(z.sigma_guard, kSigmaGuard);
}

TEST(PredictiveAdvantage, ZeroAtOldPolicy) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PolicyParams p = PolicyParams::random(PolicyShape::tabular(4, 3, 3), 1.0, seed);
    const PolicyTriple triple = PolicyTriple::from_initial(p);
    const GroupRollout r = sample_group(triple, blank_sample(), 6, seed + 100);
    const PredictiveAdvantages a = predictive_advantage(r);
    EXPECT_EQ(a.rhos, Eigen::VectorXd::Zero(6));
    EXPECT_EQ(a.values, Eigen::VectorXd::Zero(6));
    EXPECT_EQ(predictive_advantage(r, p).values, Eigen::VectorXd::Zero(6));
  }
}

TEST(PredictiveAdvantage, MatchesEnumeratedRecomputation) {
  const PolicyShape shape = PolicyShape::tabular(3, 2);
  const PolicyParams old = PolicyParams::random(shape, 1.0, 11);
  PolicyParams cur = old;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < cur.theta().size(); ++i) cur.theta()[i] += 0.3 * n01(rng);

  const TaskInstance x = blank_sample();
  std::map<TokenSeq, double> log_cur;
  std::map<TokenSeq, double> log_old;
  for (const auto& e : enumerate_support(cur, x, 2)) log_cur[e.sequence] = std::log(e.probability);
  for (const auto& e : enumerate_support(old, x, 2)) log_old[e.sequence] = std::log(e.probability);

  const std::vector<TokenSeq> group{{0, 1}, {2, 2}, {1, 0}, {0, 1}, {2, 0}};
  const GroupRollout r = make_rollout(PolicyTriple{cur, old, old}, x, group, {0, 0, 0, 0, 0});
  const PredictiveAdvantages a = predictive_advantage(r);

  std::vector<double> rho;
  for (const TokenSeq& y : group) rho.push_back(log_cur[y] - log_old[y]);
  double mean = 0.0;
  for (double v : rho) mean += v / static_cast<double>(rho.size());
  double var = 0.0;
  for (double v : rho) var += (v - mean) * (v - mean) / static_cast<double>(rho.size());
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(a.rhos[ii], rho[i], 1e-10);
    EXPECT_NEAR(a.values[ii], (rho[i] - mean) / (sd + kSigmaGuard), 1e-10);
  }
  // Recomputing under `cur` explicitly agrees with the stored log-probs.
  const PredictiveAdvantages b = predictive_advantage(r, cur);
  EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PredictiveAdvantage, PermutationEquivariant) {
  const PolicyParams old = PolicyParams::random(PolicyShape::tabular(4, 3), 1.0, 1);
  const PolicyParams cur = PolicyParams::random(PolicyShape::tabular(4, 3), 1.0, 2);
  std::mt19937_64 rng(3);
  std::vector<TokenSeq> group;
  for (int i = 0; i < 7; ++i) group.push_back(random_sequence(rng, 4, 3));
  std::vector<TokenSeq> reversed(group.rbegin(), group.rend());
  const std::vector<double> zeros(7, 0.0);
  const PolicyTriple triple{cur, old, old};
  const auto a = predictive_advantage(make_rollout(triple, blank_sample(), group, zeros));
  const auto b = predictive_advantage(make_rollout(triple, blank_sample(), reversed, zeros));
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(a.values[i], b.values[6 - i], 1e-13);
}
