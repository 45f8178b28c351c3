#include <cmath>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "grpo_forge/errors.hpp"
#include "grpo_forge/trainer.hpp"
#include "test_util.hpp"

using namespace grpo_forge;
using grpo_forge::testing::slurp;
using grpo_forge::testing::spit;
using grpo_forge::testing::TempDir;

namespace {

TrainerConfig small_config(Algorithm a = Algorithm::kGrpo) {
  TrainerConfig c;
  c.algorithm = a;
  c.steps = 4;
  c.batch_size = 2;
  c.hp.group_size = 4;
  c.eval_interval = 2;
  c.eval_count = 8;
  c.task.count = 16;
  c.task.feature_dim = 4;
  c.seed = 3;
  c.task.seed = 3;
  return c;
}

/// Sets the linear weight (pos, feature f, token) so it dominates the logits.
void push(PolicyParams& p, int pos, int f, int tok, double w = 30.0) {
  const PolicyShape& s = p.shape();
  const Eigen::Index off = (static_cast<Eigen::Index>(pos) * s.feature_width() + f) * s.vocab_size + tok;
  p.theta()[off] += w;
}

/// Linear policy whose greedy output is TO a TC AO a [b] AC END, where a and b
/// are read from one-hot blocks of the observation (block k at features 1 + 10 k).
PolicyParams copy_observation_policy(const Vocab& v, int feature_dim, bool two_tokens) {
  PolicyParams p = PolicyParams::zeros(PolicyShape::linear_for(v, feature_dim, 8));
  const int k = v.content_count();
  std::vector<int> fixed{v.think_open, -1, v.think_close, v.ans_open, -1};
  if (two_tokens) fixed.push_back(-2);
  fixed.push_back(v.ans_close);
  fixed.push_back(v.end);
  for (int pos = 0; pos < static_cast<int>(fixed.size()); ++pos) {
    if (fixed[static_cast<std::size_t>(pos)] >= 0) {
      push(p, pos, 0, fixed[static_cast<std::size_t>(pos)]);
      continue;
    }
    const int block = fixed[static_cast<std::size_t>(pos)] == -1 ? 0 : 1;
    for (int c = 0; c < k; ++c) push(p, pos, 1 + block * k + c, c);
  }
  return p;
}

/// Bias-only policy emitting TO c TC AO c AC END regardless of the input.
PolicyParams fixed_answer_policy(const Vocab& v, int feature_dim, int c) {
  PolicyParams p = PolicyParams::zeros(PolicyShape::linear_for(v, feature_dim, 8));
  const std::vector<int> seq{v.think_open, c, v.think_close, v.ans_open, c, v.ans_close, v.end};
  for (int pos = 0; pos < static_cast<int>(seq.size()); ++pos) push(p, pos, 0, seq[static_cast<std::size_t>(pos)]);
  return p;
}

}  // namespace

TEST(TrainerConfig, StrictParsingAndRoundTrip) {
  const TrainerConfig c = small_config(Algorithm::kRebel);
  const nlohmann::json j = nlohmann::json::parse(c.to_json().dump());
  const TrainerConfig back = TrainerConfig::from_json(j);
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());

  EXPECT_THROW(TrainerConfig::from_json({{"stepz", 3}}), ConfigError);
  EXPECT_THROW(TrainerConfig::from_json({{"hyperparams", {{"lr", 0.1}}}}), ConfigError);
  EXPECT_THROW(TrainerConfig::from_json({{"steps", "ten"}}), ConfigError);
  EXPECT_THROW(TrainerConfig::from_json({{"steps", 1.5}}), ConfigError);
  EXPECT_THROW(TrainerConfig::from_json({{"steps", 0}}), ConfigError);
  EXPECT_THROW(TrainerConfig::from_json({{"algorithm", "sac"}}), ConfigError);
  EXPECT_THROW(TrainerConfig::from_json({{"optimizer", {{"kind", "lbfgs"}}}}), ConfigError);

  const TrainerConfig seeded = TrainerConfig::from_json({{"seed", 42}});
  EXPECT_EQ(seeded.task.seed, 42U);
  const TrainerConfig split = TrainerConfig::from_json({{"seed", 42}, {"task", {{"seed", 7}}}});
  EXPECT_EQ(split.task.seed, 7U);
}

TEST(TrainerConfig, LoadFromFile) {
  TempDir dir("load_config");
  spit(dir / "c.json", R"({"algorithm": "rloo", "steps": 7})");
  const TrainerConfig c = load_config(dir / "c.json");
  EXPECT_EQ(c.algorithm, Algorithm::kRloo);
  EXPECT_EQ(c.steps, 7);
  spit(dir / "bad.json", "{not json");
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(Trainer, OneStepForEveryAlgorithmWritesARunDirectory) {
  for (Algorithm a : kAllAlgorithms) {
    TempDir dir(std::string("one_step_") + std::string(algorithm_id(a)));
    TrainerConfig c = small_config(a);
    c.steps = 1;
    const TrainResult r = run_to_directory(c, RunOptions{dir.path(), std::nullopt, "test"});
    ASSERT_EQ(r.logs.size(), 1U) << algorithm_id(a);
    EXPECT_TRUE(std::isfinite(r.logs[0].loss));
    const std::string steps = slurp(dir / "steps.csv");
    EXPECT_EQ(std::count(steps.begin(), steps.end(), '\n'), 2) << algorithm_id(a);
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step-1.ckpt"));
    for (const char* f : {"manifest.json", "config.json", "metrics.csv", "events.jsonl", "summary.json"}) {
      EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    EXPECT_EQ(TrainerConfig::from_json(nlohmann::json::parse(slurp(dir / "config.json"))).to_json(), c.to_json());
  }
}

TEST(Trainer, RunsAreDeterministic) {
  TrainerConfig c = small_config(Algorithm::kRegGrpo);
  c.augmentation_enabled = true;
  const TrainResult a = train_run(c);
  const TrainResult b = train_run(c);
  ASSERT_EQ(a.logs.size(), b.logs.size());
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    EXPECT_EQ(steps_csv_row(a.logs[i]), steps_csv_row(b.logs[i]));
  }
  EXPECT_EQ(a.final_policy.current.theta(), b.final_policy.current.theta());
  ASSERT_EQ(a.evals.size(), 3U);  // steps 0, 2, 4
  EXPECT_EQ(a.evals.back().step, 4);

  c.seed = 4;
  c.task.seed = 4;
  EXPECT_NE(train_run(c).final_policy.current.theta(), a.final_policy.current.theta());
}

TEST(Trainer, SyncOldPolicy) {
  const PolicyParams ref = PolicyParams::random(PolicyShape::tabular(4, 2), 1.0, 1);
  PolicyTriple t = PolicyTriple::from_initial(ref);
  t.current = PolicyParams::random(PolicyShape::tabular(4, 2), 1.0, 2);
  const PolicyTriple s = sync_old_policy(t);
  EXPECT_EQ(s.old.theta(), t.current.theta());
  EXPECT_EQ(s.reference.theta(), ref.theta());
  EXPECT_EQ(sync_old_policy(s).old.theta(), s.old.theta());
  // Right after a sync every log-ratio is zero.
  const TaskInstance x = grpo_forge::testing::blank_sample();
  const GroupRollout r = sample_group(s, x, 5, 9);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(r.logprob_current[static_cast<std::size_t>(i)].total, r.logprob_old[static_cast<std::size_t>(i)].total);
}

TEST(Evaluate, PerfectPolicyReachesTheUpperBound) {
  const Vocab v = Vocab::canonical(16);
  const BinMap bins = bin_map_for(v);
  const int k = v.content_count();

  std::vector<TaskInstance> qa;
  for (int i = 0; i < 30; ++i) {
    TaskInstance x;
    x.id = i;
    x.family = TaskFamily::kGroupedQa;
    x.observation = Eigen::VectorXd::Zero(k);
    x.observation[i % k] = 1.0;
    x.prompt = {0};
    x.gt_answer = TokenSeq{i % k};
    qa.push_back(x);
  }
  const PolicyTriple qa_policy = PolicyTriple::from_initial(copy_observation_policy(v, k, false));
  const EvalReport r = evaluate(qa_policy, qa, RewardSpec::for_family(TaskFamily::kGroupedQa), v, bins);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.mean_reward, 2.0);
  EXPECT_FALSE(r.miou.has_value());

  std::vector<TaskInstance> tg;
  for (int a = 0; a < bins.bins; ++a) {
    for (int b = a; b < bins.bins; ++b) {
      TaskInstance x;
      x.id = static_cast<int>(tg.size());
      x.family = TaskFamily::kTemporalGrounding;
      x.observation = Eigen::VectorXd::Zero(2 * k);
      x.observation[a] = 1.0;
      x.observation[k + b] = 1.0;
      x.prompt = {0};
      x.gt_answer = TokenSeq{a, b};
      x.gt_interval = bins.decode(a, b);
      tg.push_back(x);
    }
  }
  const PolicyTriple tg_policy = PolicyTriple::from_initial(copy_observation_policy(v, 2 * k, true));
  const EvalReport g = evaluate(tg_policy, tg, RewardSpec::for_family(TaskFamily::kTemporalGrounding), v, bins);
  EXPECT_EQ(g.miou, 1.0);
  EXPECT_EQ(g.recall_03, 1.0);
  EXPECT_EQ(g.recall_05, 1.0);
  EXPECT_FALSE(g.accuracy.has_value());

  EXPECT_THROW(evaluate(qa_policy, {}, RewardSpec::for_family(TaskFamily::kGroupedQa), v, bins), InvalidInput);
}

TEST(Evaluate, FixedAnswerPoliciesAverageToChance) {
  TaskGenSpec s;
  s.family = TaskFamily::kGroupedQa;
  s.count = 10000;
  s.feature_dim = 4;
  s.distractor_strength = 0.3;
  const TaskGenerator gen(s);
  const auto tasks = gen.generate();
  const Vocab& v = s.vocab;
  double sum = 0.0;
  for (int c = 0; c < v.content_count(); ++c) {
    const PolicyTriple t = PolicyTriple::from_initial(fixed_answer_policy(v, 4, c));
    sum += *evaluate(t, tasks, RewardSpec::for_family(s.family), v, gen.bins()).accuracy;
  }
  EXPECT_NEAR(sum / v.content_count(), 1.0 / v.content_count(), 1e-12);
}

TEST(Checkpoint, ResumeContinuesBitIdentically) {
  TempDir dir("ckpt_resume");
  TrainerConfig c = small_config(Algorithm::kPpo);
  c.optimizer.kind = OptimizerKind::kAdam;
  c.augmentation_enabled = true;
  Trainer a(c);
  for (int i = 0; i < 3; ++i) a.step();
  checkpoint_save(dir / "s3.ckpt", a.state(), c.algorithm);

  Trainer b(c);
  b.restore(checkpoint_load(dir / "s3.ckpt", b.state().triple.current.shape()));
  EXPECT_EQ(b.state().step, 3);
  EXPECT_EQ(b.state().window.size(), a.state().window.size());
  const StepLog la = a.step();
  const StepLog lb = b.step();
  EXPECT_EQ(steps_csv_row(la), steps_csv_row(lb));
  EXPECT_EQ(a.state().triple.current.theta(), b.state().triple.current.theta());
  EXPECT_EQ(a.state().triple.reference.theta(), b.state().triple.reference.theta());
  EXPECT_EQ(a.state().value.weights, b.state().value.weights);
  EXPECT_EQ(a.state().adam.m, b.state().adam.m);
}

TEST(Checkpoint, CorruptionAndDescriptorMismatchAreRejected) {
  TempDir dir("ckpt_corrupt");
  const TrainerConfig c = small_config();
  Trainer t(c);
  t.step();
  checkpoint_save(dir / "ok.ckpt", t.state(), c.algorithm);
  EXPECT_NO_THROW(checkpoint_load(dir / "ok.ckpt"));

  std::string text = slurp(dir / "ok.ckpt");
  const std::size_t digit = text.find_first_of("123456789", text.size() / 2);
  ASSERT_NE(digit, std::string::npos);
  text[digit] = text[digit] == '9' ? '8' : static_cast<char>(text[digit] + 1);
  spit(dir / "bad.ckpt", text);
  EXPECT_THROW(checkpoint_load(dir / "bad.ckpt"), IntegrityError);

  spit(dir / "trunc.ckpt", slurp(dir / "ok.ckpt").substr(0, 200));
  EXPECT_THROW(checkpoint_load(dir / "trunc.ckpt"), IntegrityError);

  EXPECT_THROW(checkpoint_load(dir / "ok.ckpt", PolicyShape::tabular(16, 8, 15)), IntegrityError);
  TrainerConfig tab = c;
  tab.policy.parameterization = Parameterization::kTabular;
  Trainer other(tab);
  EXPECT_THROW(other.restore(checkpoint_load(dir / "ok.ckpt")), IntegrityError);
}

TEST(Trainer, ReferenceIsImmutableAndWindowIsBounded) {
  TrainerConfig c = small_config(Algorithm::kRegGrpo);
  c.steps = 12;
  c.hp.window = 5;
  c.augmentation_enabled = true;
  Trainer t(c);
  const Eigen::VectorXd ref = t.state().triple.reference.theta();
  for (int i = 0; i < c.steps; ++i) {
    t.step();
    EXPECT_EQ(t.state().triple.reference.theta(), ref);
    EXPECT_LE(t.state().window.size(), 5U);
    for (const auto& e : t.state().window.entries()) EXPECT_LT(e.step, t.state().step);
  }
  EXPECT_NE(t.state().triple.current.theta(), ref);
  EXPECT_EQ(t.state().triple.reference.theta(), initial_policy(c).theta());
}

TEST(Trainer, HugeLearningRateAbortsWithADump) {
  TrainerConfig c = small_config(Algorithm::kPpo);
  c.steps = 60;
  c.hp.learning_rate = 1e9;
  Trainer t(c);
  try {
    for (int i = 0; i < c.steps; ++i) t.step();
    FAIL() << "expected NumericAbort";
  } catch (const NumericAbort& e) {
    const nlohmann::json dump = nlohmann::json::parse(e.dump());
    EXPECT_TRUE(dump.is_object());
    EXPECT_FALSE(dump.empty());
  }
}

TEST(Trainer, AllEqualRewardsLeaveGrpoParametersUntouched) {
  // Every sample gets the same well-formed wrong answer: each group has
  // identical rewards, so with no KL term the update is exactly zero.
  TrainerConfig c = small_config(Algorithm::kGrpo);
  c.hp.kl_beta = 0.0;
  c.task.feature_dim = 4;
  const Vocab& v = c.task.vocab;
  std::vector<TaskInstance> hard;
  for (int i = 0; i < 6; ++i) {
    TaskInstance x;
    x.id = i;
    x.observation = Eigen::VectorXd::Constant(4, 0.1 * i);
    x.prompt = {1};
    x.gt_answer = TokenSeq{(i % 9) + 1};
    hard.push_back(x);
  }
  const PolicyParams init = fixed_answer_policy(v, 4, 0);
  Trainer t(c, hard, hard, init);
  for (int i = 0; i < 3; ++i) {
    const StepLog log = t.step();
    EXPECT_EQ(log.vanishing_ratio, 1.0);
    EXPECT_EQ(log.grad_norm, 0.0);
  }
  EXPECT_EQ(t.state().triple.current.theta(), init.theta());
}
