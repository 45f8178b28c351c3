#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "grpo_forge/envs.hpp"
#include "grpo_forge/errors.hpp"
#include "grpo_forge/rewards.hpp"

using namespace grpo_forge;

namespace {

TaskGenSpec spec_for(TaskFamily family, double strength, int count, std::uint64_t seed = 1) {
  TaskGenSpec s;
  s.family = family;
  s.distractor_strength = strength;
  s.count = count;
  s.seed = seed;
  return s;
}

void expect_same(const TaskInstance& a, const TaskInstance& b) {
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.family, b.family);
  ASSERT_EQ(a.observation.size(), b.observation.size());
  for (Eigen::Index k = 0; k < a.observation.size(); ++k) EXPECT_EQ(a.observation[k], b.observation[k]);
  EXPECT_EQ(a.prompt, b.prompt);
  EXPECT_EQ(a.gt_answer, b.gt_answer);
  ASSERT_EQ(a.gt_interval.has_value(), b.gt_interval.has_value());
  if (a.gt_interval) {
    EXPECT_EQ(a.gt_interval->start, b.gt_interval->start);
    EXPECT_EQ(a.gt_interval->end, b.gt_interval->end);
  }
  EXPECT_EQ(a.intrinsic_difficulty, b.intrinsic_difficulty);
}

/// Probe reward on instance i against the ground truth of instance j
/// (j = i: the probe; j != i: a chance baseline with matched marginals).
double probe_score(const TaskGenerator& gen, const TaskInstance& probed, const TaskInstance& truth) {
  const TokenSeq guess = gen.probe_answer(probed);
  if (truth.family == TaskFamily::kGroupedQa) return guess == *truth.gt_answer ? 1.0 : 0.0;
  return iou_reward(gen.bins().decode(guess[0], guess[1]), *truth.gt_interval);
}

struct ProbeStats {
  double probe = 0.0;
  double shuffled = 0.0;
  double sigma = 0.0;  // standard error of probe - shuffled
};

ProbeStats probe_vs_shuffled(TaskFamily family, double strength, int n) {
  const TaskGenerator gen(spec_for(family, strength, n));
  const auto tasks = gen.generate();
  double sum = 0.0, sum_sh = 0.0, sq = 0.0, sq_sh = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = probe_score(gen, tasks[static_cast<std::size_t>(i)], tasks[static_cast<std::size_t>(i)]);
    const double b = probe_score(gen, tasks[static_cast<std::size_t>(i)], tasks[static_cast<std::size_t>((i + n / 2 + 1) % n)]);
    sum += a;
    sq += a * a;
    sum_sh += b;
    sq_sh += b * b;
  }
  ProbeStats s;
  s.probe = sum / n;
  s.shuffled = sum_sh / n;
  const double var = sq / n - s.probe * s.probe;
  const double var_sh = sq_sh / n - s.shuffled * s.shuffled;
  s.sigma = std::sqrt((var + var_sh) / n);
  return s;
}

}  // namespace

TEST(Envs, GroupedQaNoiselessProbeIsExact) {
  const TaskGenerator gen(spec_for(TaskFamily::kGroupedQa, 0.0, 2000));
  int correct = 0;
  for (const TaskInstance& x : gen.generate()) correct += gen.probe_answer(x) == *x.gt_answer ? 1 : 0;
  EXPECT_EQ(correct, 2000);
}

TEST(Envs, GroupedQaPureNoiseProbeIsAtChance) {
  const ProbeStats s = probe_vs_shuffled(TaskFamily::kGroupedQa, 1.0, 10000);
  EXPECT_NEAR(s.probe, s.shuffled, 3.0 * s.sigma) << "probe " << s.probe << " shuffled " << s.shuffled;
  EXPECT_LT(s.probe, 0.25);
}

TEST(Envs, GroundingPureNoiseProbeMatchesRandomIntervals) {
  const ProbeStats s = probe_vs_shuffled(TaskFamily::kTemporalGrounding, 1.0, 10000);
  EXPECT_NEAR(s.probe, s.shuffled, 3.0 * s.sigma) << "probe " << s.probe << " shuffled " << s.shuffled;
}

TEST(Envs, DifficultyIsMonotoneInDistractorStrength) {
  for (TaskFamily f : {TaskFamily::kGroupedQa, TaskFamily::kTemporalGrounding}) {
    const double clean = probe_vs_shuffled(f, 0.0, 3000).probe;
    const double mid = probe_vs_shuffled(f, 0.5, 3000).probe;
    const double noise = probe_vs_shuffled(f, 1.0, 3000).probe;
    EXPECT_EQ(clean, 1.0) << family_id(f);
    EXPECT_GE(clean, mid) << family_id(f);
    EXPECT_GE(mid, noise) << family_id(f);
  }
}

TEST(Envs, GroundingTokensDecodeToTheInterval) {
  const TaskGenerator gen(spec_for(TaskFamily::kTemporalGrounding, 0.3, 500));
  for (const TaskInstance& x : gen.generate()) {
    ASSERT_TRUE(x.gt_interval.has_value());
    ASSERT_EQ(x.gt_answer->size(), 2U);
    const int a = (*x.gt_answer)[0];
    const int b = (*x.gt_answer)[1];
    EXPECT_LE(a, b);
    EXPECT_LT(b, gen.bins().bins);
    const Interval iv = gen.bins().decode(a, b);
    EXPECT_EQ(iv.start, x.gt_interval->start);
    EXPECT_EQ(iv.end, x.gt_interval->end);
    EXPECT_EQ(iou_reward(iv, *x.gt_interval), 1.0);
  }
}

TEST(Envs, ReferenceAnswerEarnsTheMaximumReward) {
  const Vocab v = Vocab::canonical(16);
  for (TaskFamily f : {TaskFamily::kGroupedQa, TaskFamily::kTemporalGrounding}) {
    const TaskGenerator gen(spec_for(f, 0.3, 200));
    const RewardSpec spec = RewardSpec::for_family(f);
    for (const TaskInstance& x : gen.generate()) {
      const TokenSeq y = reference_answer(x, v);
      const RewardBreakdown r = score_response(x, y, v, spec, gen.bins());
      EXPECT_EQ(r.format, 1);
      EXPECT_EQ(r.total, spec.max_total());
      if (f == TaskFamily::kGroupedQa) {
        EXPECT_EQ(r.accuracy, 1);
      } else {
        EXPECT_EQ(r.iou, 1.0);
      }
      EXPECT_EQ(y.back(), v.end);
    }
  }
  const TaskGenerator fo(spec_for(TaskFamily::kFormatOnly, 0.3, 1));
  EXPECT_THROW(reference_answer(fo.instance(0), v), InvalidInput);
}

TEST(Envs, FormatOnlyRewardsAnyWellFormedOutput) {
  const Vocab v = Vocab::canonical(16);
  const auto tasks = gen_format_only(spec_for(TaskFamily::kFormatOnly, 0.3, 20));
  const RewardSpec spec = RewardSpec::for_family(TaskFamily::kFormatOnly, 1.5);
  const BinMap bins = bin_map_for(v);
  for (const TaskInstance& x : tasks) {
    EXPECT_FALSE(x.gt_answer.has_value());
    EXPECT_FALSE(x.gt_interval.has_value());
    for (int c = 0; c < v.content_count(); ++c) {
      const TokenSeq y{v.think_open, c, v.think_close, v.ans_open, c, 1, v.ans_close};
      EXPECT_EQ(score_response(x, y, v, spec, bins).total, 1.5);
    }
    EXPECT_EQ(score_response(x, TokenSeq{v.ans_open, 3}, v, spec, bins).total, 0.0);
  }
  EXPECT_EQ(spec.max_total(), 1.5);
  const auto again = gen_format_only(spec_for(TaskFamily::kFormatOnly, 0.3, 20));
  for (std::size_t i = 0; i < tasks.size(); ++i) expect_same(tasks[i], again[i]);
}

TEST(Envs, GenerationIsDeterministicAndIndexable) {
  const auto a = gen_grouped_qa(spec_for(TaskFamily::kGroupedQa, 0.3, 50, 9));
  const auto b = gen_grouped_qa(spec_for(TaskFamily::kGroupedQa, 0.3, 50, 9));
  for (std::size_t i = 0; i < a.size(); ++i) expect_same(a[i], b[i]);

  const TaskGenerator gen(spec_for(TaskFamily::kGroupedQa, 0.3, 50, 9));
  const auto tail = gen.generate(40, 10);
  for (int i = 0; i < 10; ++i) expect_same(tail[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(40 + i)]);

  const auto other = gen_grouped_qa(spec_for(TaskFamily::kGroupedQa, 0.3, 50, 10));
  EXPECT_NE(other[0].observation, a[0].observation);
}

TEST(Envs, InstanceInvariants) {
  const Vocab v = Vocab::canonical(16);
  for (TaskFamily f : {TaskFamily::kGroupedQa, TaskFamily::kTemporalGrounding, TaskFamily::kFormatOnly}) {
    TaskGenSpec s = spec_for(f, 0.4, 100);
    s.feature_dim = 5;
    for (const TaskInstance& x : TaskGenerator(s).generate()) {
      EXPECT_FALSE(x.prompt.empty());
      EXPECT_EQ(x.observation.size(), 5);
      EXPECT_TRUE(x.observation.allFinite());
      EXPECT_EQ(x.intrinsic_difficulty, 0.4);
      if (f == TaskFamily::kGroupedQa) {
        ASSERT_TRUE(x.gt_answer.has_value());
        EXPECT_TRUE(v.is_content(x.gt_answer->front()));
      }
      if (f == TaskFamily::kTemporalGrounding) {
        ASSERT_TRUE(x.gt_interval.has_value());
      }
    }
  }
}

TEST(Envs, SpecValidation) {
  TaskGenSpec s;
  s.count = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = TaskGenSpec{};
  s.feature_dim = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = TaskGenSpec{};
  s.distractor_strength = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Envs, JsonLinesRoundTrip) {
  std::vector<TaskInstance> tasks = gen_grouped_qa(spec_for(TaskFamily::kGroupedQa, 0.3, 5));
  const auto tg = gen_temporal_grounding(spec_for(TaskFamily::kTemporalGrounding, 0.7, 5));
  const auto fo = gen_format_only(spec_for(TaskFamily::kFormatOnly, 0.0, 3));
  tasks.insert(tasks.end(), tg.begin(), tg.end());
  tasks.insert(tasks.end(), fo.begin(), fo.end());
  std::stringstream buf;
  write_tasks_jsonl(buf, tasks);
  const std::string text = buf.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
  const auto back = read_tasks_jsonl(buf);
  ASSERT_EQ(back.size(), tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) expect_same(back[i], tasks[i]);

  std::stringstream bad("{\"id\": 1}\n");
  EXPECT_THROW(read_tasks_jsonl(bad), InvalidInput);
}
