#include "grpo_forge/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "grpo_forge/errors.hpp"

namespace grpo_forge {

ReplayWindow::ReplayWindow(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("replay window capacity must be >= 1");
}

void ReplayWindow::push(double mean_reward, int step) {
  if (!entries_.empty() && step <= entries_.back().step) {
    throw InvalidInput(
        fmt::format("window step {} does not follow step {}", step, entries_.back().step));
  }
  if (!std::isfinite(mean_reward)) throw InvalidInput("window entries must be finite");
  entries_.push_back({step, mean_reward});
  while (entries_.size() > static_cast<std::size_t>(capacity_)) entries_.pop_front();
}

double ReplayWindow::mean() const {
  if (entries_.empty()) return 0.0;
  double sum = 0.0;
  for (const Entry& e : entries_) sum += e.mean_reward;
  return sum / static_cast<double>(entries_.size());
}

ReplayWindow update_window(ReplayWindow window, double group_mean_reward, int step) {
  window.push(group_mean_reward, step);
  return window;
}

DifficultyEstimate estimate_difficulty(const ReplayWindow& window,
                                       const Eigen::Ref<const Eigen::VectorXd>& group_rewards) {
  if (group_rewards.size() < 1) throw InvalidInput("difficulty needs at least one reward");
  DifficultyEstimate est;
  est.group_mean = group_rewards.mean();
  // No reference yet: treat the sample as exactly average.
  est.buffer_mean = window.empty() ? est.group_mean : window.mean();
  est.delta = est.buffer_mean - est.group_mean;
  return est;
}

std::string_view augmentation_kind_id(AugmentationKind kind) {
  switch (kind) {
    case AugmentationKind::kNone: return "none";
    case AugmentationKind::kDecreaseDifficulty: return "decrease_difficulty";
    case AugmentationKind::kIncreaseDifficulty: return "increase_difficulty";
  }
  return "unknown";
}

void AugmentationParams::validate() const {
  if (!(delta_max > 0.0)) throw ConfigError("delta_max must be > 0");
  if (h_max < 0) throw ConfigError("h_max must be >= 0");
  if (!(sigma_max > 0.0)) throw ConfigError("sigma_max must be > 0");
}

AugmentationDecision decide_augmentation(const DifficultyEstimate& est, double delta_max) {
  if (!(delta_max > 0.0)) throw InvalidInput("delta_max must be > 0");
  AugmentationDecision d;
  d.delta = est.delta;
  if (est.delta > 0.0) {
    d.kind = AugmentationKind::kDecreaseDifficulty;
  } else if (est.delta < 0.0) {
    d.kind = AugmentationKind::kIncreaseDifficulty;
  }
  d.scale = d.kind == AugmentationKind::kNone ? 0.0 : std::min(std::abs(est.delta) / delta_max, 1.0);
  return d;
}

TaskInstance AugmentedSample::effective() const {
  TaskInstance x = base;
  if (prompt_override) x.prompt = *prompt_override;
  if (observation_override) x.observation = *observation_override;
  return x;
}

int hint_length(double scale, int h_max) {
  // Guard against 0.5 * 4 landing a hair above 2 in floating point.
  return static_cast<int>(std::ceil(scale * h_max - 1e-12));
}

AugmentedSample inject_hint(const TaskInstance& sample, const AugmentationDecision& decision,
                            const PolicyTriple& triple, int group_size, std::uint64_t seed,
                            const Vocab& vocab, const RewardSpec& spec, const BinMap& bins,
                            int h_max) {
  if (decision.kind != AugmentationKind::kDecreaseDifficulty) {
    throw InvalidInput("inject_hint needs a decrease_difficulty decision");
  }
  const TokenSeq gt = sample.gt_answer.value_or(TokenSeq{});

  TaskInstance conditioned = sample;
  conditioned.prompt.push_back(vocab.hint);
  conditioned.prompt.insert(conditioned.prompt.end(), gt.begin(), gt.end());
  const GroupRollout rollout = sample_group(triple, conditioned, group_size, seed);

  int best = -1;
  double best_reward = 0.0;
  for (int i = 0; i < rollout.group_size(); ++i) {
    const double r =
        score_response(sample, rollout.trajectories[static_cast<std::size_t>(i)], vocab, spec, bins)
            .total;
    if (r > best_reward) {
      best_reward = r;
      best = i;
    }
  }

  AugmentedSample out;
  out.base = sample;
  out.provenance = decision;
  const int n = hint_length(decision.scale, h_max);
  if (best >= 0) {
    const TokenSeq& chosen = rollout.trajectories[static_cast<std::size_t>(best)];
    out.provenance.hint_source = chosen;
    const TokenSeq think = extract_think(chosen, vocab);
    out.hint_tokens.assign(think.begin(), think.begin() + std::min<std::ptrdiff_t>(n, std::ssize(think)));
  }
  if (out.hint_tokens.empty()) {
    const int m = hint_length(decision.scale, static_cast<int>(gt.size()));
    out.hint_tokens.assign(gt.begin(), gt.begin() + std::min<std::ptrdiff_t>(m, std::ssize(gt)));
  }
  TokenSeq prompt = sample.prompt;
  prompt.push_back(vocab.hint);
  prompt.insert(prompt.end(), out.hint_tokens.begin(), out.hint_tokens.end());
  out.prompt_override = std::move(prompt);
  return out;
}

AugmentedSample inject_noise(const TaskInstance& sample, const AugmentationDecision& decision,
                             double sigma_max, std::uint64_t seed) {
  if (decision.kind != AugmentationKind::kIncreaseDifficulty) {
    throw InvalidInput("inject_noise needs an increase_difficulty decision");
  }
  if (!(sigma_max > 0.0)) throw InvalidInput("sigma_max must be > 0");
  AugmentedSample out;
  out.base = sample;
  out.provenance = decision;
  const double sigma = decision.scale * sigma_max;
  Eigen::VectorXd v = sample.observation;
  if (sigma > 0.0) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] += normal(engine);
  }
  out.observation_override = std::move(v);
  return out;
}

std::string augmentation_event_json(int step, int sample_id, const AugmentationDecision& decision) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["sample_id"] = sample_id;
  j["delta"] = decision.delta;
  j["kind"] = augmentation_kind_id(decision.kind);
  j["scale"] = decision.scale;
  return j.dump();
}

}  // namespace grpo_forge
