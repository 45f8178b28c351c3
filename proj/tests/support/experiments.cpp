#include "experiments.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "grpo_forge/numerics.hpp"

namespace grpo_forge::experiments {

namespace {

class LinearWriter {
 public:
  explicit LinearWriter(PolicyParams& p) : p_(p), s_(p.shape()) {}
  void set(int position, int token, int feature, double value) {
    const Eigen::Index v = s_.vocab_size;
    p_.theta()[position * v * s_.feature_width() + feature * v + token] = value;
  }
  int bias() const { return 0; }
  int obs(int k) const { return 1 + k; }
  int bag(int token) const { return 1 + s_.feature_dim + token; }

 private:
  PolicyParams& p_;
  PolicyShape s_;
};

}  // namespace

MixedBatch mixed_difficulty_batch(std::uint64_t seed, bool augmentation, int steps) {
  const Vocab vocab = Vocab::canonical(16);
  const int content = vocab.content_count();
  const int d = content;

  MixedBatch out;
  TrainerConfig& c = out.config;
  c.algorithm = Algorithm::kGrpo;
  c.seed = seed;
  c.steps = steps;
  c.batch_size = 8;
  c.hp.group_size = 8;
  c.augmentation_enabled = augmentation;
  c.task.vocab = vocab;
  c.task.feature_dim = d;
  c.task.seed = seed;
  c.policy.max_len = 8;
  // Accuracy only, so each rollout scores exactly 0 or 1.
  c.format_weight = 0.0;
  c.accuracy_weight = 1.0;
  c.iou_weight = 0.0;

  out.init = PolicyParams::zeros(PolicyShape::linear_for(vocab, d, c.policy.max_len));
  LinearWriter w(out.init);
  const int template_markers[] = {vocab.think_open, -1, vocab.think_close, vocab.ans_open, -1,
                                  vocab.ans_close, vocab.end, vocab.end};
  for (int pos = 0; pos < c.policy.max_len; ++pos) {
    if (template_markers[pos] >= 0) {
      w.set(pos, template_markers[pos], w.bias(), kTemplateBias);
      continue;
    }
    for (int tok = 0; tok < content; ++tok) {
      w.set(pos, tok, w.bias(), kTemplateBias);
      w.set(pos, tok, w.bag(tok), kCopyGain);
      if (pos == 4) w.set(pos, tok, w.obs(tok), kObsGain);
    }
  }

  std::mt19937_64 engine(derive_seed(seed, 0x6d6978));
  std::vector<int> tokens(static_cast<std::size_t>(content));
  std::iota(tokens.begin(), tokens.end(), 0);
  std::shuffle(tokens.begin(), tokens.end(), engine);
  const int half = 8;
  auto make = [&](int id, int gt, int pointed, double difficulty) {
    TaskInstance x;
    x.id = id;
    x.family = TaskFamily::kGroupedQa;
    x.observation = Eigen::VectorXd::Zero(d);
    x.observation[pointed] = kObsMagnitude;
    x.prompt = {0};
    x.gt_answer = TokenSeq{gt};
    x.intrinsic_difficulty = difficulty;
    return x;
  };
  for (int i = 0; i < half; ++i) {
    const int gt = tokens[static_cast<std::size_t>(i)];
    out.train.push_back(make(i, gt, gt, 0.0));
  }
  for (int j = 0; j < half; ++j) {
    // Point at an easy sample's answer, ask for something else.
    const int pointed = tokens[static_cast<std::size_t>(engine() % half)];
    int gt = static_cast<int>(engine() % static_cast<std::uint64_t>(content - 1));
    if (gt >= pointed) ++gt;
    out.train.push_back(make(half + j, gt, pointed, 1.0));
  }
  out.easy_count = half;
  out.eval = out.train;
  return out;
}

double answer_success_probability(const PolicyParams& params, const TaskInstance& sample,
                                  const Vocab& vocab) {
  const Eigen::VectorXd phi = policy_features(params.shape(), sample);
  // Linear logits ignore the previous token, so positions are independent.
  auto p = [&](int pos, int tok) { return softmax(token_logits(params, phi, pos, -1))[tok]; };
  double think_content = 0.0;
  for (int tok = 0; tok < vocab.content_count(); ++tok) think_content += p(1, tok);
  return p(0, vocab.think_open) * think_content * p(2, vocab.think_close) * p(3, vocab.ans_open) *
         p(4, (*sample.gt_answer)[0]) * p(5, vocab.ans_close);
}

double mean_vanishing_ratio(const MixedBatch& batch) {
  Trainer trainer(batch.config, batch.train, batch.eval, batch.init);
  double total = 0.0;
  for (int t = 0; t < batch.config.steps; ++t) total += trainer.step().vanishing_ratio;
  return total / batch.config.steps;
}

TrainerConfig reward_curve_config(Algorithm algorithm, std::uint64_t seed, int steps) {
  TrainerConfig c;
  c.algorithm = algorithm;
  c.seed = seed;
  c.steps = steps;
  c.task.family = TaskFamily::kGroupedQa;
  c.task.distractor_strength = 0.3;
  c.task.seed = seed;
  c.hp.group_size = 8;
  c.eval_count = 512;
  c.eval_interval = 50;
  return c;
}

}  // namespace grpo_forge::experiments
