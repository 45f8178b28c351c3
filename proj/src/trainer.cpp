#include "grpo_forge/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <boost/crc.hpp>
#include <boost/uuid/detail/sha1.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "grpo_forge/advantages.hpp"
#include "grpo_forge/errors.hpp"
#include "grpo_forge/metrics.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Stream tags for derive_seed; every random draw in a run is keyed by one of
// these plus (step, batch slot).
constexpr std::uint64_t kBatchStream = 1;
constexpr std::uint64_t kRolloutStream = 2;
constexpr std::uint64_t kHintStream = 3;
constexpr std::uint64_t kNoiseStream = 4;
constexpr std::uint64_t kAugRolloutStream = 5;
constexpr std::uint64_t kEvalStream = 6;

// ---- strict JSON reading ----------------------------------------------------

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", label()));
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw type_error(key, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw type_error(key, "an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw type_error(key, "a nonnegative integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw type_error(key, "a number");
      out = v.get<T>();
    } else {
      if (!v.is_string()) throw type_error(key, "a string");
      out = v.get<std::string>();
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError(fmt::format("unknown config key '{}{}'", prefix(), item.key()));
      }
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : where_; }
  std::string prefix() const { return where_.empty() ? "" : where_ + "."; }
  ConfigError type_error(const std::string& key, const char* what) const {
    return ConfigError(fmt::format("config key '{}{}' must be {}", prefix(), key, what));
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// ---- formatting -------------------------------------------------------------

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(
                                                  std::chrono::system_clock::now())));
}

/// Git blob hash of a byte string.
std::string git_blob_hash(const std::string& content) {
  boost::uuids::detail::sha1 sha;
  const std::string header = fmt::format("blob {}", content.size());
  sha.process_bytes(header.data(), header.size());
  const char nul = '\0';
  sha.process_bytes(&nul, 1);
  sha.process_bytes(content.data(), content.size());
  boost::uuids::detail::sha1::digest_type digest;
  sha.get_digest(digest);
  std::string out;
  for (unsigned int word : digest) out += fmt::format("{:08x}", word);
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << content;
}

json rollout_dump(const GroupRollout& rollout) {
  json j;
  j["sample_id"] = rollout.sample.id;
  j["prompt"] = rollout.sample.prompt;
  j["observation"] = std::vector<double>(rollout.sample.observation.data(),
                                         rollout.sample.observation.data() +
                                             rollout.sample.observation.size());
  j["trajectories"] = rollout.trajectories;
  j["rewards"] = std::vector<double>(rollout.rewards.data(),
                                     rollout.rewards.data() + rollout.rewards.size());
  std::vector<double> cur, old, ref;
  for (int i = 0; i < rollout.group_size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (k < rollout.logprob_current.size()) cur.push_back(rollout.logprob_current[k].total);
    old.push_back(rollout.logprob_old[k].total);
    ref.push_back(rollout.logprob_reference[k].total);
  }
  j["logprob_current"] = cur;
  j["logprob_old"] = old;
  j["logprob_reference"] = ref;
  return j;
}

PolicyParams format_prior_policy(const PolicyShape& shape, const Vocab& vocab, TaskFamily family,
                                 double strength) {
  PolicyParams p = PolicyParams::zeros(shape);
  const int answer_len = family == TaskFamily::kTemporalGrounding ? 2 : 1;
  // Template: TO c TC AO a.. AC END; -1 marks content positions.
  std::vector<int> tmpl{vocab.think_open, -1, vocab.think_close, vocab.ans_open};
  for (int i = 0; i < answer_len; ++i) tmpl.push_back(-1);
  tmpl.push_back(vocab.ans_close);
  tmpl.push_back(vocab.end);
  const Eigen::Index v = shape.vocab_size;
  const bool tabular = shape.kind == Parameterization::kTabular;
  // Tabular biases are repeated for every previous-token slot; linear biases
  // sit in the constant-feature column of each position block.
  const int slots = tabular ? shape.vocab_size + 1 : 1;
  for (int t = 0; t < shape.max_len && t < static_cast<int>(tmpl.size()); ++t) {
    const int target = tmpl[static_cast<std::size_t>(t)];
    for (int slot = 0; slot < slots; ++slot) {
      const Eigen::Index base = tabular ? (t * (v + 1) + slot) * v : t * v * shape.feature_width();
      if (target >= 0) {
        p.theta()[base + target] = strength;
      } else {
        p.theta().segment(base, vocab.content_count()).setConstant(strength);
      }
    }
  }
  return p;
}

}  // namespace

// ---- config -----------------------------------------------------------------

std::string_view optimizer_id(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view id) {
  if (id == "sgd") return OptimizerKind::kSgd;
  if (id == "adam") return OptimizerKind::kAdam;
  throw ConfigError(fmt::format("unknown optimizer '{}' (valid: sgd, adam)", id));
}

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("optimizer epsilon must be > 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0");
}

std::string_view policy_init_id(PolicyInit init) {
  switch (init) {
    case PolicyInit::kUniform: return "uniform";
    case PolicyInit::kRandom: return "random";
    case PolicyInit::kFormatPrior: return "format_prior";
  }
  return "unknown";
}

PolicyInit parse_policy_init(std::string_view id) {
  if (id == "uniform") return PolicyInit::kUniform;
  if (id == "random") return PolicyInit::kRandom;
  if (id == "format_prior") return PolicyInit::kFormatPrior;
  throw ConfigError(
      fmt::format("unknown policy init '{}' (valid: uniform, random, format_prior)", id));
}

RewardSpec TrainerConfig::reward_spec() const {
  return RewardSpec::for_family(task.family, format_weight, accuracy_weight, iou_weight);
}

void TrainerConfig::validate() const {
  hp.validate();
  optimizer.validate();
  task.validate();
  augmentation.validate();
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (old_sync_interval < 1) throw ConfigError("old_sync_interval must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
  if (eval_count < 1) throw ConfigError("eval_count must be >= 1");
  if (policy.max_len < 1) throw ConfigError("policy.max_len must be >= 1");
  if (!(policy.init_scale >= 0.0)) throw ConfigError("policy.init_scale must be >= 0");
  try {
    reward_spec().validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

TrainerConfig TrainerConfig::from_json(const json& j) {
  TrainerConfig c;
  ObjectReader top(j, "");
  std::string algorithm(algorithm_id(c.algorithm));
  top.read("algorithm", algorithm);
  c.algorithm = parse_algorithm(algorithm);
  top.read("steps", c.steps);
  top.read("batch_size", c.batch_size);
  top.read("seed", c.seed);
  top.read("old_sync_interval", c.old_sync_interval);
  top.read("eval_interval", c.eval_interval);
  top.read("checkpoint_interval", c.checkpoint_interval);
  top.read("augmentation_enabled", c.augmentation_enabled);
  c.task.seed = c.seed;

  if (const json* h = top.child("hyperparams")) {
    ObjectReader r(*h, "hyperparams");
    r.read("clip_epsilon", c.hp.clip_epsilon);
    r.read("kl_beta", c.hp.kl_beta);
    r.read("lambda_temp", c.hp.lambda_temp);
    r.read("group_size", c.hp.group_size);
    r.read("window", c.hp.window);
    r.read("dpo_beta", c.hp.dpo_beta);
    r.read("learning_rate", c.hp.learning_rate);
    r.read("no_clip", c.hp.no_clip);
    r.read("full_stat_grad", c.hp.full_stat_grad);
    r.read("sigma_guard", c.hp.sigma_guard);
    r.finish();
  }
  if (const json* o = top.child("optimizer")) {
    ObjectReader r(*o, "optimizer");
    std::string kind(optimizer_id(c.optimizer.kind));
    r.read("kind", kind);
    c.optimizer.kind = parse_optimizer(kind);
    r.read("beta1", c.optimizer.beta1);
    r.read("beta2", c.optimizer.beta2);
    r.read("epsilon", c.optimizer.epsilon);
    r.read("max_grad_norm", c.optimizer.max_grad_norm);
    r.finish();
  }
  if (const json* t = top.child("task")) {
    ObjectReader r(*t, "task");
    std::string family(family_id(c.task.family));
    r.read("family", family);
    c.task.family = parse_family(family);
    r.read("count", c.task.count);
    r.read("eval_count", c.eval_count);
    r.read("feature_dim", c.task.feature_dim);
    int vocab_size = c.task.vocab.size;
    r.read("vocab_size", vocab_size);
    try {
      c.task.vocab = Vocab::canonical(vocab_size);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
    r.read("distractor_strength", c.task.distractor_strength);
    r.read("seed", c.task.seed);
    r.finish();
  }
  if (const json* p = top.child("policy")) {
    ObjectReader r(*p, "policy");
    std::string kind(parameterization_id(c.policy.parameterization));
    r.read("parameterization", kind);
    c.policy.parameterization = parse_parameterization(kind);
    r.read("max_len", c.policy.max_len);
    std::string init(policy_init_id(c.policy.init));
    r.read("init", init);
    c.policy.init = parse_policy_init(init);
    r.read("init_scale", c.policy.init_scale);
    r.read("prior_strength", c.policy.prior_strength);
    r.finish();
  }
  if (const json* a = top.child("augmentation")) {
    ObjectReader r(*a, "augmentation");
    r.read("delta_max", c.augmentation.delta_max);
    r.read("h_max", c.augmentation.h_max);
    r.read("sigma_max", c.augmentation.sigma_max);
    r.finish();
  }
  if (const json* w = top.child("reward")) {
    ObjectReader r(*w, "reward");
    r.read("format", c.format_weight);
    r.read("accuracy", c.accuracy_weight);
    r.read("iou", c.iou_weight);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ordered_json TrainerConfig::to_json() const {
  ordered_json j;
  j["algorithm"] = algorithm_id(algorithm);
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["old_sync_interval"] = old_sync_interval;
  j["eval_interval"] = eval_interval;
  j["checkpoint_interval"] = checkpoint_interval;
  j["augmentation_enabled"] = augmentation_enabled;
  j["hyperparams"] = {{"clip_epsilon", hp.clip_epsilon}, {"kl_beta", hp.kl_beta},
                      {"lambda_temp", hp.lambda_temp},   {"group_size", hp.group_size},
                      {"window", hp.window},             {"dpo_beta", hp.dpo_beta},
                      {"learning_rate", hp.learning_rate}, {"no_clip", hp.no_clip},
                      {"full_stat_grad", hp.full_stat_grad}, {"sigma_guard", hp.sigma_guard}};
  j["optimizer"] = {{"kind", optimizer_id(optimizer.kind)}, {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},             {"epsilon", optimizer.epsilon},
                    {"max_grad_norm", optimizer.max_grad_norm}};
  j["task"] = {{"family", family_id(task.family)},
               {"count", task.count},
               {"eval_count", eval_count},
               {"feature_dim", task.feature_dim},
               {"vocab_size", task.vocab.size},
               {"distractor_strength", task.distractor_strength},
               {"seed", task.seed}};
  j["policy"] = {{"parameterization", parameterization_id(policy.parameterization)},
                 {"max_len", policy.max_len},
                 {"init", policy_init_id(policy.init)},
                 {"init_scale", policy.init_scale},
                 {"prior_strength", policy.prior_strength}};
  j["augmentation"] = {{"delta_max", augmentation.delta_max},
                       {"h_max", augmentation.h_max},
                       {"sigma_max", augmentation.sigma_max}};
  j["reward"] = {{"format", format_weight}, {"accuracy", accuracy_weight}, {"iou", iou_weight}};
  return j;
}

TrainerConfig load_config(const fs::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return TrainerConfig::from_json(j);
}

// ---- evaluation and policy helpers -----------------------------------------

EvalReport evaluate(const PolicyTriple& triple, const std::vector<TaskInstance>& eval_set,
                    const RewardSpec& spec, const Vocab& vocab, const BinMap& bins) {
  if (eval_set.empty()) throw InvalidInput("evaluation set is empty");
  EvalReport report;
  std::vector<TokenSeq> predictions, truths;
  std::vector<double> ious;
  double total = 0.0;
  for (const TaskInstance& x : eval_set) {
    const TokenSeq y = greedy_decode(triple.current, x);
    const RewardBreakdown br = score_response(x, y, vocab, spec, bins);
    total += br.total;
    if (x.gt_interval) {
      ious.push_back(br.iou);
    } else if (x.gt_answer) {
      predictions.push_back(extract_answer(y, vocab).value_or(TokenSeq{}));
      truths.push_back(*x.gt_answer);
    }
  }
  report.mean_reward = total / static_cast<double>(eval_set.size());
  if (!truths.empty()) report.accuracy = accuracy_metric(predictions, truths);
  if (!ious.empty()) {
    report.miou = miou_metric(ious);
    report.recall_03 = recall_at_m(ious, 0.3);
    report.recall_05 = recall_at_m(ious, 0.5);
  }
  return report;
}

PolicyTriple sync_old_policy(PolicyTriple triple) {
  triple.old = triple.current;
  return triple;
}

PolicyParams initial_policy(const TrainerConfig& config) {
  const Vocab& vocab = config.task.vocab;
  PolicyShape shape;
  if (config.policy.parameterization == Parameterization::kLinear) {
    shape = PolicyShape::linear_for(vocab, config.task.feature_dim, config.policy.max_len);
  } else {
    shape = PolicyShape::tabular(vocab.size, config.policy.max_len, vocab.end);
    shape.hint_token = vocab.hint;
  }
  switch (config.policy.init) {
    case PolicyInit::kUniform:
      return PolicyParams::zeros(shape);
    case PolicyInit::kRandom:
      return PolicyParams::random(shape, config.policy.init_scale, derive_seed(config.seed, 0x696e6974));
    case PolicyInit::kFormatPrior: {
      PolicyParams p = format_prior_policy(shape, vocab, config.task.family, config.policy.prior_strength);
      if (config.policy.init_scale > 0.0) {
        p.theta() += PolicyParams::random(shape, config.policy.init_scale,
                                          derive_seed(config.seed, 0x696e6974))
                         .theta();
      }
      return p;
    }
  }
  throw ConfigError("unknown policy init");
}

// ---- checkpoints ------------------------------------------------------------

namespace {

void write_vector(std::ostream& out, const char* tag, const Eigen::VectorXd& v) {
  out << tag << ' ' << v.size() << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) out << num(v[i]) << '\n';
}

Eigen::VectorXd read_vector(std::istream& in, const char* tag) {
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError(fmt::format("missing '{}' block", tag));
  std::istringstream header(line);
  std::string got;
  long long n = -1;
  header >> got >> n;
  if (got != tag || n < 0) throw IntegrityError(fmt::format("expected '{}' block, got '{}'", tag, line));
  Eigen::VectorXd v(n);
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw IntegrityError(fmt::format("truncated '{}' block", tag));
    v[i] = std::stod(line);
  }
  return v;
}

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0) {
    throw IntegrityError(fmt::format("expected '{}' line", key));
  }
  return line.substr(key.size() + 1);
}

std::uint32_t crc32_of(const std::string& s) {
  boost::crc_32_type crc;
  crc.process_bytes(s.data(), s.size());
  return crc.checksum();
}

}  // namespace

void checkpoint_save(const fs::path& path, const TrainState& state, Algorithm algorithm) {
  std::ostringstream body;
  body << "grpo-forge-checkpoint 1\n";
  body << "step " << state.step << '\n';
  body << "seed " << state.seed << '\n';
  body << "algorithm " << algorithm_id(algorithm) << '\n';
  write_policy(body, state.triple.current);
  write_policy(body, state.triple.old);
  write_policy(body, state.triple.reference);
  write_vector(body, "value", state.value.weights);
  body << "window " << state.window.capacity() << ' ' << state.window.size() << '\n';
  for (const auto& e : state.window.entries()) body << e.step << ' ' << num(e.mean_reward) << '\n';
  body << "adam_t " << state.adam.t << '\n';
  write_vector(body, "adam_m", state.adam.m);
  write_vector(body, "adam_v", state.adam.v);
  const std::string text = body.str();
  write_file(path, text + fmt::format("crc32 {:08x}\n", crc32_of(text)));
}

TrainState checkpoint_load(const fs::path& path, const std::optional<PolicyShape>& expected) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ConfigError& e) {
    throw IntegrityError(e.what());
  }
  const auto pos = text.rfind("crc32 ");
  if (pos == std::string::npos) throw IntegrityError("checkpoint has no checksum line");
  const std::string body = text.substr(0, pos);
  std::uint32_t stored = 0;
  try {
    stored = static_cast<std::uint32_t>(std::stoul(text.substr(pos + 6), nullptr, 16));
  } catch (const std::exception&) {
    throw IntegrityError("unreadable checksum");
  }
  if (stored != crc32_of(body)) {
    throw IntegrityError(fmt::format("checksum mismatch in {}", path.string()));
  }

  std::istringstream in(body);
  try {
    std::string line;
    std::getline(in, line);
    if (line != "grpo-forge-checkpoint 1") throw IntegrityError("not a checkpoint file");
    TrainState s;
    s.step = std::stoi(expect_line(in, "step"));
    s.seed = std::stoull(expect_line(in, "seed"));
    expect_line(in, "algorithm");
    s.triple.current = read_policy(in);
    s.triple.old = read_policy(in);
    s.triple.reference = read_policy(in);
    s.triple.validate();
    if (expected && !(s.triple.current.shape() == *expected)) {
      throw IntegrityError(fmt::format(
          "descriptor mismatch: checkpoint holds a {} policy (vocab {}, dim {}, max_len {}), run "
          "expects {} (vocab {}, dim {}, max_len {})",
          parameterization_id(s.triple.current.shape().kind), s.triple.current.shape().vocab_size,
          s.triple.current.shape().feature_dim, s.triple.current.shape().max_len,
          parameterization_id(expected->kind), expected->vocab_size, expected->feature_dim,
          expected->max_len));
    }
    s.value.weights = read_vector(in, "value");
    std::istringstream window_header(expect_line(in, "window"));
    int capacity = 0;
    std::size_t count = 0;
    window_header >> capacity >> count;
    s.window = ReplayWindow(capacity);
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) throw IntegrityError("truncated window block");
      std::istringstream entry(line);
      int step = 0;
      std::string value;
      entry >> step >> value;
      s.window.push(std::stod(value), step);
    }
    s.adam.t = std::stoll(expect_line(in, "adam_t"));
    s.adam.m = read_vector(in, "adam_m");
    s.adam.v = read_vector(in, "adam_v");
    return s;
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(fmt::format("malformed checkpoint: {}", e.what()));
  }
}

// ---- trainer ----------------------------------------------------------------

Trainer::Trainer(TrainerConfig config)
    : Trainer(config, TaskGenerator(config.task).generate(0, config.task.count),
              TaskGenerator(config.task).generate(config.task.count, config.eval_count),
              initial_policy(config)) {}

Trainer::Trainer(TrainerConfig config, std::vector<TaskInstance> train_set,
                 std::vector<TaskInstance> eval_set, const PolicyParams& init)
    : config_(std::move(config)),
      train_set_(std::move(train_set)),
      eval_set_(std::move(eval_set)) {
  config_.validate();
  if (train_set_.empty()) throw ConfigError("training set is empty");
  reward_spec_ = config_.reward_spec();
  bins_ = bin_map_for(config_.task.vocab);
  state_.seed = config_.seed;
  state_.triple = PolicyTriple::from_initial(init);
  state_.value = ValueParams::zeros(config_.task.feature_dim);
  state_.window = ReplayWindow(config_.hp.window);
  state_.adam.m = Eigen::VectorXd::Zero(init.theta().size());
  state_.adam.v = Eigen::VectorXd::Zero(init.theta().size());
}

void Trainer::restore(TrainState state) {
  if (!(state.triple.current.shape() == state_.triple.current.shape())) {
    throw IntegrityError("descriptor mismatch: checkpoint parameterization differs from the run");
  }
  if (state.seed != config_.seed) {
    throw IntegrityError(fmt::format("checkpoint seed {} differs from run seed {}", state.seed,
                                     config_.seed));
  }
  state_ = std::move(state);
}

EvalReport Trainer::evaluate_now() const {
  EvalReport report =
      grpo_forge::evaluate(state_.triple, eval_set_, reward_spec_, config_.task.vocab, bins_);
  report.step = state_.step;
  // Vanishing ratio of fresh groups sampled from the current policy; the
  // streams do not depend on the step, so evaluations are comparable.
  std::vector<Eigen::VectorXd> groups;
  groups.reserve(eval_set_.size());
  const PolicyTriple probe = sync_old_policy(state_.triple);
  for (std::size_t i = 0; i < eval_set_.size(); ++i) {
    const TaskInstance& x = eval_set_[i];
    GroupRollout r = sample_group(probe, x, config_.hp.group_size,
                                  derive_seed(config_.seed, kEvalStream, i));
    for (int k = 0; k < r.group_size(); ++k) {
      r.rewards[k] = score_response(x, r.trajectories[static_cast<std::size_t>(k)],
                                    config_.task.vocab, reward_spec_, bins_)
                         .total;
    }
    groups.push_back(r.rewards);
  }
  report.vanishing_ratio = vanishing_advantage_ratio(groups);
  return report;
}

void Trainer::apply_update(const Eigen::VectorXd& raw_grad) {
  Eigen::VectorXd grad = raw_grad;
  const double max_norm = config_.optimizer.max_grad_norm;
  if (max_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > max_norm) grad *= max_norm / norm;
  }
  Eigen::VectorXd& theta = state_.triple.current.theta();
  const double lr = config_.hp.learning_rate;
  if (config_.optimizer.kind == OptimizerKind::kSgd) {
    theta -= lr * grad;
    return;
  }
  AdamState& a = state_.adam;
  const double b1 = config_.optimizer.beta1;
  const double b2 = config_.optimizer.beta2;
  ++a.t;
  a.m = b1 * a.m + (1.0 - b1) * grad;
  a.v = b2 * a.v + (1.0 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(a.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(a.t));
  theta.array() -= lr * (a.m.array() / c1) / ((a.v.array() / c2).sqrt() + config_.optimizer.epsilon);
}

StepLog Trainer::step() {
  const int t = state_.step;
  const auto ut = static_cast<std::uint64_t>(t);
  const int g = config_.hp.group_size;
  const int batch = config_.batch_size;
  const Vocab& vocab = config_.task.vocab;
  last_events_.clear();

  const SamplingSource source =
      config_.algorithm == Algorithm::kDpo ? SamplingSource::kReference : SamplingSource::kOld;
  auto score = [&](GroupRollout& r, const TaskInstance& scored_as) {
    for (int i = 0; i < r.group_size(); ++i) {
      r.rewards[i] = score_response(scored_as, r.trajectories[static_cast<std::size_t>(i)], vocab,
                                    reward_spec_, bins_)
                         .total;
    }
  };

  std::mt19937_64 batch_engine(derive_seed(config_.seed, kBatchStream, ut));
  std::uniform_int_distribution<std::size_t> pick(0, train_set_.size() - 1);
  std::vector<GroupRollout> rollouts;
  Eigen::VectorXd pre_means(batch);
  for (int b = 0; b < batch; ++b) {
    const TaskInstance& x = train_set_[pick(batch_engine)];
    GroupRollout r = sample_group(state_.triple, x, g,
                                  derive_seed(config_.seed, kRolloutStream, ut, static_cast<std::uint64_t>(b)),
                                  source);
    score(r, x);
    pre_means[b] = r.rewards.mean();
    rollouts.push_back(std::move(r));
  }

  StepLog log;
  log.step = t;
  log.mean_reward = pre_means.mean();

  if (config_.augmentation_enabled) {
    for (int b = 0; b < batch; ++b) {
      const auto ub = static_cast<std::uint64_t>(b);
      GroupRollout& r = rollouts[static_cast<std::size_t>(b)];
      const TaskInstance base = r.sample;
      const AugmentationDecision decision =
          decide_augmentation(estimate_difficulty(state_.window, r.rewards), config_.augmentation.delta_max);
      last_events_.push_back(augmentation_event_json(t, base.id, decision));
      std::optional<AugmentedSample> aug;
      if (decision.kind == AugmentationKind::kDecreaseDifficulty) {
        ++log.aug_decrease;
        aug = inject_hint(base, decision, state_.triple, g,
                          derive_seed(config_.seed, kHintStream, ut, ub), vocab, reward_spec_, bins_,
                          config_.augmentation.h_max);
      } else if (decision.kind == AugmentationKind::kIncreaseDifficulty) {
        ++log.aug_increase;
        aug = inject_noise(base, decision, config_.augmentation.sigma_max,
                           derive_seed(config_.seed, kNoiseStream, ut, ub));
      } else {
        ++log.aug_none;
      }
      if (aug) {
        const TaskInstance x = aug->effective();
        r = sample_group(state_.triple, x, g, derive_seed(config_.seed, kAugRolloutStream, ut, ub),
                         source);
        score(r, x);
      }
    }
  } else {
    log.aug_none = batch;
  }

  std::vector<Eigen::VectorXd> groups;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(state_.triple.current.theta().size());
  Eigen::VectorXd value_grad = Eigen::VectorXd::Zero(state_.value.weights.size());
  for (const GroupRollout& r : rollouts) {
    groups.push_back(r.rewards);
    const LossReport rep =
        compute_loss(config_.algorithm, state_.triple.current, r, &state_.value, config_.hp);
    if (!std::isfinite(rep.loss) || !rep.grad.allFinite()) {
      throw NumericAbort(fmt::format("non-finite loss or gradient at step {}", t),
                         rollout_dump(r).dump(2));
    }
    log.loss += rep.loss / batch;
    log.kl_value += rep.kl_value / batch;
    log.clip_active_fraction += rep.clip_active_fraction / batch;
    grad += rep.grad / batch;
    if (rep.value_grad.size() == value_grad.size()) value_grad += rep.value_grad / batch;
  }
  log.vanishing_ratio = vanishing_advantage_ratio(groups);
  log.grad_norm = grad.norm();

  apply_update(grad);
  if (config_.algorithm == Algorithm::kPpo) state_.value.weights -= config_.hp.learning_rate * value_grad;
  if (!state_.triple.current.theta().allFinite() || !state_.value.weights.allFinite()) {
    throw NumericAbort(fmt::format("parameters became non-finite after step {}", t),
                       rollout_dump(rollouts.front()).dump(2));
  }

  state_.window.push(pre_means.mean(), t);
  state_.step = t + 1;
  if (state_.step % config_.old_sync_interval == 0) state_.triple = sync_old_policy(state_.triple);
  return log;
}

TrainResult train_run(Trainer& trainer) {
  TrainResult result;
  const TrainerConfig& c = trainer.config();
  if (trainer.state().step == 0) result.evals.push_back(trainer.evaluate_now());
  while (trainer.state().step < c.steps) {
    result.logs.push_back(trainer.step());
    const int done = trainer.state().step;
    if (done % c.eval_interval == 0 || done == c.steps) result.evals.push_back(trainer.evaluate_now());
  }
  result.final_policy = trainer.state().triple;
  return result;
}

TrainResult train_run(const TrainerConfig& config) {
  Trainer trainer(config);
  return train_run(trainer);
}

// ---- run directory ----------------------------------------------------------

std::string steps_csv_header() {
  return "step,mean_reward,loss,grad_norm,kl_value,vanishing_ratio,clip_active_fraction,"
         "aug_none,aug_decrease,aug_increase\n";
}

std::string steps_csv_row(const StepLog& l) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{}\n", l.step, num(l.mean_reward), num(l.loss),
                     num(l.grad_norm), num(l.kl_value), num(l.vanishing_ratio),
                     num(l.clip_active_fraction), l.aug_none, l.aug_decrease, l.aug_increase);
}

std::string metrics_csv_header() { return "step,mean_reward,acc,miou,r_at_03,r_at_05,vanishing_ratio\n"; }

std::string metrics_csv_row(const EvalReport& r) {
  return fmt::format("{},{},{},{},{},{},{}\n", r.step, num(r.mean_reward), opt_num(r.accuracy),
                     opt_num(r.miou), opt_num(r.recall_03), opt_num(r.recall_05),
                     num(r.vanishing_ratio));
}

namespace {

json eval_json(const EvalReport& r) {
  return {{"step", r.step},          {"mean_reward", r.mean_reward}, {"acc", opt_json(r.accuracy)},
          {"miou", opt_json(r.miou)}, {"r_at_03", opt_json(r.recall_03)},
          {"r_at_05", opt_json(r.recall_05)}, {"vanishing_ratio", r.vanishing_ratio}};
}

/// Keeps the header plus rows whose leading integer (CSV) or "step" field
/// (JSON lines) satisfies `keep`.
void truncate_log(const fs::path& path, bool csv, const std::function<bool(int)>& keep) {
  if (!fs::exists(path)) return;
  std::istringstream in(read_file(path));
  std::string out, line;
  bool first = true;
  while (std::getline(in, line)) {
    if (csv && first) {
      out += line + '\n';
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    int step = 0;
    if (csv) {
      step = std::stoi(line.substr(0, line.find(',')));
    } else {
      step = json::parse(line).at("step").get<int>();
    }
    if (keep(step)) out += line + '\n';
  }
  write_file(path, out);
}

}  // namespace

TrainResult run_to_directory(const TrainerConfig& config, const RunOptions& options) {
  const fs::path& dir = options.out_dir;
  fs::create_directories(dir / "checkpoints");
  const std::string config_text = config.to_json().dump(2) + "\n";
  const std::string hash = git_blob_hash(config_text);

  Trainer trainer(config);
  const fs::path steps_path = dir / "steps.csv";
  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path events_path = dir / "events.jsonl";

  if (options.resume_from) {
    TrainState state = checkpoint_load(*options.resume_from, trainer.state().triple.current.shape());
    const int k = state.step;
    trainer.restore(std::move(state));
    truncate_log(steps_path, true, [k](int s) { return s < k; });
    truncate_log(metrics_path, true, [k](int s) { return s <= k; });
    truncate_log(events_path, false, [k](int s) { return s < k; });
    spdlog::info("resuming {} at step {}", dir.string(), k);
  } else {
    ordered_json manifest;
    manifest["run_id"] = fmt::format("{}-s{}-{}", algorithm_id(config.algorithm), config.seed,
                                     hash.substr(0, 8));
    manifest["tool_version"] = options.tool_version;
    manifest["input_hash"] = hash;
    manifest["started_at"] = utc_now();
    manifest["config"] = config.to_json();
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file(dir / "config.json", config_text);
    write_file(steps_path, steps_csv_header());
    write_file(metrics_path, metrics_csv_header());
    write_file(events_path, "");
  }

  std::ofstream steps_out(steps_path, std::ios::app);
  std::ofstream metrics_out(metrics_path, std::ios::app);
  std::ofstream events_out(events_path, std::ios::app);

  TrainResult result;
  if (!options.resume_from) {
    result.evals.push_back(trainer.evaluate_now());
    metrics_out << metrics_csv_row(result.evals.back());
  }
  try {
    while (trainer.state().step < config.steps) {
      result.logs.push_back(trainer.step());
      steps_out << steps_csv_row(result.logs.back());
      for (const std::string& e : trainer.last_events()) events_out << e << '\n';
      const int done = trainer.state().step;
      if (done % config.eval_interval == 0 || done == config.steps) {
        result.evals.push_back(trainer.evaluate_now());
        metrics_out << metrics_csv_row(result.evals.back());
        spdlog::info("step {}: eval mean reward {:.4f}", done, result.evals.back().mean_reward);
      }
      if ((config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0) ||
          done == config.steps) {
        checkpoint_save(dir / "checkpoints" / fmt::format("step-{}.ckpt", done), trainer.state(),
                        config.algorithm);
      }
    }
  } catch (const NumericAbort& e) {
    steps_out.flush();
    ordered_json abort;
    abort["step"] = trainer.state().step;
    abort["error"] = e.what();
    abort["rollout"] = json::parse(e.dump());
    write_file(dir / "abort.json", abort.dump(2) + "\n");
    throw;
  }
  result.final_policy = trainer.state().triple;
  if (result.evals.empty()) result.evals.push_back(trainer.evaluate_now());

  ordered_json summary;
  summary["algorithm"] = algorithm_id(config.algorithm);
  summary["seed"] = config.seed;
  summary["steps"] = config.steps;
  summary["final_eval"] = eval_json(result.evals.back());
  if (!result.logs.empty()) {
    summary["final_step"] = {{"mean_reward", result.logs.back().mean_reward},
                             {"vanishing_ratio", result.logs.back().vanishing_ratio},
                             {"kl_value", result.logs.back().kl_value}};
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  ordered_json end;
  end["ended_at"] = utc_now();
  write_file(dir / "manifest.end.json", end.dump(2) + "\n");
  return result;
}

}  // namespace grpo_forge
