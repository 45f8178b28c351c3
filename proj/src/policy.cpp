#include "grpo_forge/policy.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "grpo_forge/errors.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

namespace {

using ConstBlock = Eigen::Map<const Eigen::MatrixXd>;
using Block = Eigen::Map<Eigen::MatrixXd>;

Eigen::Index tabular_offset(const PolicyShape& s, int position, int prev_token) {
  const Eigen::Index slot = prev_token < 0 ? 0 : prev_token + 1;
  return (static_cast<Eigen::Index>(position) * (s.vocab_size + 1) + slot) * s.vocab_size;
}

Eigen::Index linear_offset(const PolicyShape& s, int position) {
  return static_cast<Eigen::Index>(position) * s.vocab_size * s.feature_width();
}

std::int64_t checked_power(std::int64_t base, int exponent, std::int64_t cap) {
  std::int64_t value = 1;
  for (int i = 0; i < exponent; ++i) {
    value *= base;
    if (value > cap) return cap + 1;
  }
  return value;
}

struct Enumerator {
  const PolicyParams& params;
  const Eigen::VectorXd& features;
  int max_length;
  std::vector<SupportEntry>& out;
  TokenSeq prefix;

  void visit(double log_prob) {
    const int t = static_cast<int>(prefix.size());
    const int prev = prefix.empty() ? -1 : prefix.back();
    const Eigen::VectorXd lp = log_softmax(token_logits(params, features, t, prev));
    const int end = params.shape().end_token;
    for (int k = 0; k < params.shape().vocab_size; ++k) {
      prefix.push_back(k);
      const double next = log_prob + lp[k];
      if (k == end || t + 1 == max_length) {
        out.push_back({prefix, std::exp(next), next});
      } else {
        visit(next);
      }
      prefix.pop_back();
    }
  }
};

int sample_categorical(const Eigen::VectorXd& probs, double u) {
  double cumulative = 0.0;
  int last_positive = 0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    cumulative += probs[k];
    last_positive = static_cast<int>(k);
    if (u < cumulative) return static_cast<int>(k);
  }
  return last_positive;
}

}  // namespace

std::string_view parameterization_id(Parameterization p) {
  return p == Parameterization::kTabular ? "tabular" : "linear";
}

Parameterization parse_parameterization(std::string_view id) {
  if (id == "tabular") return Parameterization::kTabular;
  if (id == "linear") return Parameterization::kLinear;
  throw ConfigError(fmt::format("unknown parameterization '{}' (valid: tabular, linear)", id));
}

PolicyShape PolicyShape::linear_for(const Vocab& vocab, int feature_dim, int max_len) {
  PolicyShape s;
  s.kind = Parameterization::kLinear;
  s.vocab_size = vocab.size;
  s.feature_dim = feature_dim;
  s.max_len = max_len;
  s.end_token = vocab.end;
  s.hint_token = vocab.hint;
  s.validate();
  return s;
}

PolicyShape PolicyShape::tabular(int vocab_size, int max_len, int end_token) {
  PolicyShape s;
  s.kind = Parameterization::kTabular;
  s.vocab_size = vocab_size;
  s.feature_dim = 0;
  s.max_len = max_len;
  s.end_token = end_token;
  s.validate();
  return s;
}

Eigen::Index PolicyShape::param_count() const {
  if (kind == Parameterization::kTabular) {
    return static_cast<Eigen::Index>(max_len) * (vocab_size + 1) * vocab_size;
  }
  return static_cast<Eigen::Index>(max_len) * vocab_size * feature_width();
}

void PolicyShape::validate() const {
  if (vocab_size < 2) throw InvalidInput("policy vocab must have at least 2 tokens");
  if (max_len < 1) throw InvalidInput("policy max_len must be >= 1");
  if (feature_dim < 0) throw InvalidInput("feature_dim must be >= 0");
  if (end_token >= vocab_size || end_token < -1) throw InvalidInput("end token outside vocab");
  if (hint_token >= vocab_size || hint_token < -1) throw InvalidInput("hint token outside vocab");
}

PolicyParams::PolicyParams(PolicyShape shape, Eigen::VectorXd theta)
    : shape_(shape), theta_(std::move(theta)) {
  shape_.validate();
  if (theta_.size() != shape_.param_count()) {
    throw InvalidInput(fmt::format("parameter vector has {} entries, shape needs {}",
                                   theta_.size(), shape_.param_count()));
  }
}

PolicyParams PolicyParams::zeros(const PolicyShape& shape) {
  return PolicyParams(shape, Eigen::VectorXd::Zero(shape.param_count()));
}

PolicyParams PolicyParams::random(const PolicyShape& shape, double scale, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd theta(shape.param_count());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = normal(engine);
  return PolicyParams(shape, std::move(theta));
}

PolicyTriple PolicyTriple::from_initial(const PolicyParams& init) {
  return PolicyTriple{init, init, init};
}

void PolicyTriple::validate() const {
  if (!(current.shape() == old.shape()) || !(current.shape() == reference.shape())) {
    throw InvalidInput("policy triple members must share one parameterization");
  }
}

Eigen::VectorXd policy_features(const PolicyShape& shape, const TaskInstance& sample) {
  if (shape.kind == Parameterization::kTabular) return {};
  if (sample.observation.size() != shape.feature_dim) {
    throw InvalidInput(fmt::format("observation has dimension {}, policy expects {}",
                                   sample.observation.size(), shape.feature_dim));
  }
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(shape.feature_width());
  phi[0] = 1.0;
  phi.segment(1, shape.feature_dim) = sample.observation;
  if (shape.hint_token >= 0) {
    std::size_t begin = sample.prompt.size();
    for (std::size_t i = sample.prompt.size(); i-- > 0;) {
      if (sample.prompt[i] == shape.hint_token) {
        begin = i + 1;
        break;
      }
    }
    for (std::size_t i = begin; i < sample.prompt.size(); ++i) {
      const int tok = sample.prompt[i];
      if (tok >= 0 && tok < shape.vocab_size) phi[1 + shape.feature_dim + tok] += 1.0;
    }
  }
  return phi;
}

Eigen::VectorXd token_logits(const PolicyParams& params, const Eigen::VectorXd& features,
                             int position, int prev_token) {
  const PolicyShape& s = params.shape();
  if (s.kind == Parameterization::kTabular) {
    return params.theta().segment(tabular_offset(s, position, prev_token), s.vocab_size);
  }
  const ConstBlock block(params.theta().data() + linear_offset(s, position), s.vocab_size,
                         s.feature_width());
  return block * features;
}

void validate_sequence(const PolicyShape& shape, std::span<const int> y) {
  if (y.empty()) throw InvalidInput("sequence must contain at least one token");
  if (static_cast<int>(y.size()) > shape.max_len) {
    throw InvalidInput(fmt::format("sequence length {} exceeds max_len {}", y.size(), shape.max_len));
  }
  for (int tok : y) {
    if (tok < 0 || tok >= shape.vocab_size) {
      throw InvalidInput(fmt::format("token id {} outside vocab of size {}", tok, shape.vocab_size));
    }
  }
}

SequenceLogProb logprob_sequence(const PolicyParams& params, const TaskInstance& sample,
                                 std::span<const int> y) {
  validate_sequence(params.shape(), y);
  const Eigen::VectorXd phi = policy_features(params.shape(), sample);
  SequenceLogProb out;
  out.per_token.resize(static_cast<Eigen::Index>(y.size()));
  int prev = -1;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const Eigen::VectorXd logits = token_logits(params, phi, static_cast<int>(t), prev);
    out.per_token[static_cast<Eigen::Index>(t)] = logits[y[t]] - log_sum_exp(logits);
    prev = y[t];
  }
  out.total = out.per_token.sum();
  return out;
}

void accumulate_score(const PolicyParams& params, const TaskInstance& sample,
                      std::span<const int> y, const Eigen::Ref<const Eigen::VectorXd>& token_weights,
                      Eigen::Ref<Eigen::VectorXd> grad) {
  validate_sequence(params.shape(), y);
  const PolicyShape& s = params.shape();
  if (token_weights.size() != static_cast<Eigen::Index>(y.size())) {
    throw InvalidInput("one weight per token required");
  }
  if (grad.size() != s.param_count()) throw InvalidInput("gradient size mismatch");
  const Eigen::VectorXd phi = policy_features(s, sample);
  int prev = -1;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double w = token_weights[static_cast<Eigen::Index>(t)];
    const int pos = static_cast<int>(t);
    if (w != 0.0) {
      Eigen::VectorXd dlogits = -softmax(token_logits(params, phi, pos, prev));
      dlogits[y[t]] += 1.0;
      if (s.kind == Parameterization::kTabular) {
        grad.segment(tabular_offset(s, pos, prev), s.vocab_size) += w * dlogits;
      } else {
        Block block(grad.data() + linear_offset(s, pos), s.vocab_size, s.feature_width());
        block.noalias() += (w * dlogits) * phi.transpose();
      }
    }
    prev = y[t];
  }
}

Eigen::VectorXd grad_logprob(const PolicyParams& params, const TaskInstance& sample,
                             std::span<const int> y) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.shape().param_count());
  accumulate_score(params, sample, y, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(y.size())),
                   grad);
  return grad;
}

TokenSeq sample_sequence(const PolicyParams& params, const TaskInstance& sample,
                         std::uint64_t seed) {
  const PolicyShape& s = params.shape();
  const Eigen::VectorXd phi = policy_features(s, sample);
  std::mt19937_64 engine(seed);
  TokenSeq y;
  int prev = -1;
  for (int t = 0; t < s.max_len; ++t) {
    const int tok = sample_categorical(softmax(token_logits(params, phi, t, prev)), uniform01(engine));
    y.push_back(tok);
    if (tok == s.end_token) break;
    prev = tok;
  }
  return y;
}

TokenSeq greedy_decode(const PolicyParams& params, const TaskInstance& sample) {
  const PolicyShape& s = params.shape();
  const Eigen::VectorXd phi = policy_features(s, sample);
  TokenSeq y;
  int prev = -1;
  for (int t = 0; t < s.max_len; ++t) {
    Eigen::Index best = 0;
    token_logits(params, phi, t, prev).maxCoeff(&best);
    const int tok = static_cast<int>(best);
    y.push_back(tok);
    if (tok == s.end_token) break;
    prev = tok;
  }
  return y;
}

GroupRollout sample_group(const PolicyTriple& triple, const TaskInstance& sample, int group_size,
                          std::uint64_t seed, SamplingSource source) {
  if (group_size < 2) {
    throw ConfigError(fmt::format("group size {} < 2: group statistics undefined", group_size));
  }
  triple.validate();
  const PolicyParams& sampler = source == SamplingSource::kOld         ? triple.old
                                : source == SamplingSource::kReference ? triple.reference
                                                                       : triple.current;
  GroupRollout rollout;
  rollout.sample = sample;
  rollout.rewards = Eigen::VectorXd::Zero(group_size);
  for (int i = 0; i < group_size; ++i) {
    TokenSeq y = sample_sequence(sampler, sample, derive_seed(seed, static_cast<std::uint64_t>(i)));
    rollout.logprob_current.push_back(logprob_sequence(triple.current, sample, y));
    rollout.logprob_old.push_back(logprob_sequence(triple.old, sample, y));
    rollout.logprob_reference.push_back(logprob_sequence(triple.reference, sample, y));
    rollout.trajectories.push_back(std::move(y));
  }
  return rollout;
}

void rescore_current(GroupRollout& rollout, const PolicyParams& current) {
  for (int i = 0; i < rollout.group_size(); ++i) {
    rollout.logprob_current[static_cast<std::size_t>(i)] =
        logprob_sequence(current, rollout.sample, rollout.trajectories[static_cast<std::size_t>(i)]);
  }
}

std::vector<SupportEntry> enumerate_support(const PolicyParams& params,
                                            const TaskInstance& sample, int max_length) {
  const PolicyShape& s = params.shape();
  if (max_length < 1 || max_length > s.max_len) {
    throw InvalidInput(fmt::format("enumeration length {} outside [1, {}]", max_length, s.max_len));
  }
  const std::int64_t bound = checked_power(s.vocab_size, max_length, kEnumerationCap);
  if (bound > kEnumerationCap) {
    throw EnumerationRefused(fmt::format("vocab^L = {}^{} exceeds the enumeration cap of {}",
                                         s.vocab_size, max_length, kEnumerationCap));
  }
  const Eigen::VectorXd phi = policy_features(s, sample);
  std::vector<SupportEntry> out;
  out.reserve(static_cast<std::size_t>(bound));
  Enumerator{params, phi, max_length, out, {}}.visit(0.0);
  return out;
}

double kl_estimate(const PolicyParams& current, const PolicyParams& reference,
                   const GroupRollout& rollout) {
  if (rollout.group_size() == 0) throw InvalidInput("empty rollout");
  double total = 0.0;
  for (const TokenSeq& y : rollout.trajectories) {
    const SequenceLogProb cur = logprob_sequence(current, rollout.sample, y);
    const SequenceLogProb ref = logprob_sequence(reference, rollout.sample, y);
    for (Eigen::Index t = 0; t < cur.per_token.size(); ++t) {
      total += k3_term(ref.per_token[t] - cur.per_token[t]);
    }
  }
  return total / rollout.group_size();
}

void write_policy(std::ostream& out, const PolicyParams& params) {
  const PolicyShape& s = params.shape();
  out << fmt::format("policy {} vocab={} dim={} max_len={} end={} hint={} params={}\n",
                     parameterization_id(s.kind), s.vocab_size, s.feature_dim, s.max_len,
                     s.end_token, s.hint_token, s.param_count());
  for (Eigen::Index i = 0; i < params.theta().size(); ++i) {
    out << fmt::format("{:.17g}\n", params.theta()[i]);
  }
}

PolicyParams read_policy(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError("missing policy header");
  std::istringstream header(line);
  std::string tag, kind;
  header >> tag >> kind;
  if (tag != "policy") throw IntegrityError(fmt::format("bad policy header '{}'", line));
  PolicyShape s;
  s.kind = parse_parameterization(kind);
  Eigen::Index count = -1;
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw IntegrityError(fmt::format("bad header field '{}'", field));
    const std::string key = field.substr(0, eq);
    const long long value = std::stoll(field.substr(eq + 1));
    if (key == "vocab") s.vocab_size = static_cast<int>(value);
    else if (key == "dim") s.feature_dim = static_cast<int>(value);
    else if (key == "max_len") s.max_len = static_cast<int>(value);
    else if (key == "end") s.end_token = static_cast<int>(value);
    else if (key == "hint") s.hint_token = static_cast<int>(value);
    else if (key == "params") count = value;
    else throw IntegrityError(fmt::format("unknown header field '{}'", key));
  }
  s.validate();
  if (count != s.param_count()) {
    throw IntegrityError(fmt::format("header declares {} parameters, shape implies {}", count,
                                     s.param_count()));
  }
  Eigen::VectorXd theta(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw IntegrityError("truncated parameter list");
    theta[i] = std::stod(line);
  }
  return PolicyParams(s, std::move(theta));
}

}  // namespace grpo_forge
