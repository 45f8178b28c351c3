#ifndef GRPO_FORGE_TRAINER_HPP_
#define GRPO_FORGE_TRAINER_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "grpo_forge/algorithms.hpp"
#include "grpo_forge/augmentation.hpp"
#include "grpo_forge/envs.hpp"
#include "grpo_forge/policy.hpp"
#include "grpo_forge/rewards.hpp"

namespace grpo_forge {

enum class OptimizerKind { kSgd, kAdam };

std::string_view optimizer_id(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view id);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Rescale the gradient to this norm when it is larger; 0 disables.
  double max_grad_norm = 1.0;

  void validate() const;
};

enum class PolicyInit {
  /// All parameters zero: uniform next-token distributions.
  kUniform,
  /// Gaussian parameters with standard deviation init_scale.
  kRandom,
  /// Position biases favoring the response template of the task family,
  /// uniform over content tokens, standing in for a supervised warm start.
  kFormatPrior,
};

std::string_view policy_init_id(PolicyInit init);
PolicyInit parse_policy_init(std::string_view id);

struct PolicyConfig {
  Parameterization parameterization = Parameterization::kLinear;
  int max_len = 8;
  PolicyInit init = PolicyInit::kFormatPrior;
  double init_scale = 0.01;
  double prior_strength = 5.0;
};

struct TrainerConfig {
  Algorithm algorithm = Algorithm::kGrpo;
  Hyperparams hp;
  OptimizerConfig optimizer;
  TaskGenSpec task;
  int eval_count = 128;
  PolicyConfig policy;
  AugmentationParams augmentation;
  double format_weight = 1.0;
  double accuracy_weight = 1.0;
  double iou_weight = 1.0;
  int steps = 200;
  int batch_size = 8;
  bool augmentation_enabled = false;
  int old_sync_interval = 1;
  int eval_interval = 50;
  /// Extra checkpoints every N steps; the final state is always saved. 0 disables.
  int checkpoint_interval = 0;
  std::uint64_t seed = 1;

  void validate() const;
  RewardSpec reward_spec() const;

  /// Strict parse: unknown keys and wrong types raise ConfigError. Missing
  /// keys take defaults; a missing task.seed follows the top-level seed.
  static TrainerConfig from_json(const nlohmann::json& j);
  /// Fully resolved config with every key present.
  nlohmann::ordered_json to_json() const;
};

TrainerConfig load_config(const std::filesystem::path& path);

struct StepLog {
  int step = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double kl_value = 0.0;
  double vanishing_ratio = 0.0;
  double clip_active_fraction = 0.0;
  int aug_none = 0;
  int aug_decrease = 0;
  int aug_increase = 0;
};

struct EvalReport {
  /// Number of completed updates when the evaluation ran.
  int step = 0;
  double mean_reward = 0.0;
  std::optional<double> accuracy;
  std::optional<double> miou;
  std::optional<double> recall_03;
  std::optional<double> recall_05;
  double vanishing_ratio = 0.0;
};

/// Greedy decoding under the current policy over a non-empty eval set.
EvalReport evaluate(const PolicyTriple& triple, const std::vector<TaskInstance>& eval_set,
                    const RewardSpec& spec, const Vocab& vocab, const BinMap& bins);

/// old <- current; reference untouched.
PolicyTriple sync_old_policy(PolicyTriple triple);

/// Initial policy for a config (shape from the task vocabulary).
PolicyParams initial_policy(const TrainerConfig& config);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long t = 0;
};

/// Everything needed to continue a run. Randomness is keyed by
/// (seed, step, sample), so the step counter doubles as the rng state.
struct TrainState {
  int step = 0;
  std::uint64_t seed = 0;
  PolicyTriple triple;
  ValueParams value;
  ReplayWindow window;
  AdamState adam;
};

void checkpoint_save(const std::filesystem::path& path, const TrainState& state,
                     Algorithm algorithm);
/// Throws IntegrityError on checksum mismatch, or when `expected` is given
/// and the stored parameterization differs from it.
TrainState checkpoint_load(const std::filesystem::path& path,
                           const std::optional<PolicyShape>& expected = std::nullopt);

class Trainer {
 public:
  explicit Trainer(TrainerConfig config);
  /// Custom data and initial policy (engineered batches in experiments).
  Trainer(TrainerConfig config, std::vector<TaskInstance> train_set,
          std::vector<TaskInstance> eval_set, const PolicyParams& init);

  /// One optimization step. Throws NumericAbort with a JSON dump of the
  /// offending rollout if the loss, gradient or parameters become non-finite.
  StepLog step();
  EvalReport evaluate_now() const;

  const TrainerConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  void restore(TrainState state);
  const std::vector<TaskInstance>& train_set() const { return train_set_; }
  const std::vector<TaskInstance>& eval_set() const { return eval_set_; }
  /// Augmentation events of the last step, one JSON object per entry.
  const std::vector<std::string>& last_events() const { return last_events_; }

 private:
  void apply_update(const Eigen::VectorXd& grad);

  TrainerConfig config_;
  RewardSpec reward_spec_;
  BinMap bins_;
  std::vector<TaskInstance> train_set_;
  std::vector<TaskInstance> eval_set_;
  TrainState state_;
  std::vector<std::string> last_events_;
};

struct TrainResult {
  PolicyTriple final_policy;
  std::vector<StepLog> logs;
  std::vector<EvalReport> evals;
};

/// In-memory run: evaluation at step 0, every eval_interval steps and at the end.
TrainResult train_run(const TrainerConfig& config);
TrainResult train_run(Trainer& trainer);

std::string steps_csv_header();
std::string steps_csv_row(const StepLog& log);
std::string metrics_csv_header();
std::string metrics_csv_row(const EvalReport& report);

struct RunOptions {
  std::filesystem::path out_dir;
  /// Continue from this checkpoint; logs for steps at or past it are rewritten.
  std::optional<std::filesystem::path> resume_from;
  std::string tool_version = "0.1.0";
};

/// Populates a run directory: manifest.json, config.json, steps.csv,
/// metrics.csv, events.jsonl, checkpoints/step-N.ckpt and summary.json.
/// On NumericAbort, abort.json holds the dump before the exception propagates.
TrainResult run_to_directory(const TrainerConfig& config, const RunOptions& options);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_TRAINER_HPP_
