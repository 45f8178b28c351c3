#include "grpo_forge/envs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "grpo_forge/errors.hpp"
#include "grpo_forge/numerics.hpp"

namespace grpo_forge {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kMapStream = 0x6d617073;
constexpr std::uint64_t kInstanceStream = 0x696e7374;

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& engine) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // Fill in a fixed row-major order so the draw sequence does not depend on storage.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(engine);
  }
  return m;
}

Eigen::VectorXd normal_vector(Eigen::Index n, std::mt19937_64& engine) {
  return normal_matrix(n, 1, engine).col(0);
}

int family_tag(TaskFamily family, const Vocab& vocab) {
  int tag = 0;
  switch (family) {
    case TaskFamily::kGroupedQa: tag = 0; break;
    case TaskFamily::kTemporalGrounding: tag = 1; break;
    case TaskFamily::kFormatOnly: tag = 2; break;
  }
  return tag % vocab.content_count();
}

double bin_center_coordinate(int bin, int bins) {
  if (bins == 1) return 0.0;
  const double mid = 0.5 * (bins - 1);
  return (bin - mid) / mid;
}

int nearest_bin(double coordinate, int bins) {
  if (bins == 1) return 0;
  const double mid = 0.5 * (bins - 1);
  const long rounded = std::lround(coordinate * mid + mid);
  return static_cast<int>(std::clamp<long>(rounded, 0, bins - 1));
}

}  // namespace

void TaskGenSpec::validate() const {
  if (count < 1) throw ConfigError("task count must be >= 1");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (!(distractor_strength >= 0.0 && distractor_strength <= 1.0)) {
    throw ConfigError("distractor_strength must lie in [0, 1]");
  }
  vocab.validate();
  if (family == TaskFamily::kTemporalGrounding && vocab.content_count() < 2) {
    throw ConfigError("temporal grounding needs at least 2 content tokens");
  }
}

BinMap bin_map_for(const Vocab& vocab) {
  BinMap bins;
  bins.bins = std::min(10, vocab.content_count());
  bins.horizon = 16.0;
  return bins;
}

TaskGenerator::TaskGenerator(TaskGenSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  bins_ = bin_map_for(spec_.vocab);
  std::mt19937_64 engine(derive_seed(spec_.seed, kMapStream));
  answer_map_ = normal_matrix(spec_.vocab.content_count(), spec_.feature_dim, engine);
  interval_map_ = normal_matrix(spec_.feature_dim, 2, engine);
  interval_pinv_ = interval_map_.completeOrthogonalDecomposition().pseudoInverse();
}

TaskInstance TaskGenerator::instance(int id) const {
  std::mt19937_64 engine(derive_seed(spec_.seed, kInstanceStream, static_cast<std::uint64_t>(id)));
  const double s = spec_.distractor_strength;
  const int d = spec_.feature_dim;

  TaskInstance x;
  x.id = id;
  x.family = spec_.family;
  x.intrinsic_difficulty = s;
  x.prompt = {family_tag(spec_.family, spec_.vocab)};

  switch (spec_.family) {
    case TaskFamily::kGroupedQa: {
      const Eigen::VectorXd z = normal_vector(d, engine);
      const Eigen::VectorXd noise = normal_vector(d, engine);
      Eigen::Index answer = 0;
      (answer_map_ * z).maxCoeff(&answer);
      x.observation = (1.0 - s) * z + s * noise;
      x.gt_answer = TokenSeq{static_cast<int>(answer)};
      break;
    }
    case TaskFamily::kTemporalGrounding: {
      const int k = bins_.bins;
      std::uniform_int_distribution<int> start_dist(0, k - 1);
      const int start_bin = start_dist(engine);
      std::uniform_int_distribution<int> end_dist(start_bin, k - 1);
      const int end_bin = end_dist(engine);
      const Eigen::Vector2d c(bin_center_coordinate(start_bin, k), bin_center_coordinate(end_bin, k));
      const Eigen::VectorXd noise = normal_vector(d, engine);
      x.observation = (1.0 - s) * (interval_map_ * c) + s * noise;
      x.gt_answer = TokenSeq{start_bin, end_bin};
      x.gt_interval = bins_.decode(start_bin, end_bin);
      break;
    }
    case TaskFamily::kFormatOnly:
      x.observation = normal_vector(d, engine);
      break;
  }
  return x;
}

std::vector<TaskInstance> TaskGenerator::generate(int first_id, int count) const {
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(instance(first_id + i));
  return out;
}

TokenSeq TaskGenerator::probe_answer(const TaskInstance& sample) const {
  switch (sample.family) {
    case TaskFamily::kGroupedQa: {
      Eigen::Index answer = 0;
      (answer_map_ * sample.observation).maxCoeff(&answer);
      return {static_cast<int>(answer)};
    }
    case TaskFamily::kTemporalGrounding: {
      const double s = spec_.distractor_strength;
      Eigen::Vector2d c = interval_pinv_ * sample.observation;
      if (s < 1.0) c /= (1.0 - s);
      int a = nearest_bin(c[0], bins_.bins);
      int b = nearest_bin(c[1], bins_.bins);
      if (a > b) std::swap(a, b);
      return {a, b};
    }
    case TaskFamily::kFormatOnly:
      break;
  }
  throw InvalidInput("format-only samples have no answer to probe");
}

std::vector<TaskInstance> gen_grouped_qa(TaskGenSpec spec) {
  spec.family = TaskFamily::kGroupedQa;
  return TaskGenerator(std::move(spec)).generate();
}

std::vector<TaskInstance> gen_temporal_grounding(TaskGenSpec spec) {
  spec.family = TaskFamily::kTemporalGrounding;
  return TaskGenerator(std::move(spec)).generate();
}

std::vector<TaskInstance> gen_format_only(TaskGenSpec spec) {
  spec.family = TaskFamily::kFormatOnly;
  return TaskGenerator(std::move(spec)).generate();
}

TokenSeq reference_answer(const TaskInstance& sample, const Vocab& vocab) {
  if (sample.family == TaskFamily::kFormatOnly || !sample.gt_answer || sample.gt_answer->empty()) {
    throw InvalidInput("no reference answer: sample has no ground truth");
  }
  const TokenSeq& gt = *sample.gt_answer;
  TokenSeq y{vocab.think_open, gt.front(), vocab.think_close, vocab.ans_open};
  y.insert(y.end(), gt.begin(), gt.end());
  y.push_back(vocab.ans_close);
  y.push_back(vocab.end);
  return y;
}

void write_tasks_jsonl(std::ostream& out, const std::vector<TaskInstance>& tasks) {
  for (const TaskInstance& x : tasks) {
    nlohmann::ordered_json j;
    j["id"] = x.id;
    j["family"] = family_id(x.family);
    j["observation"] = std::vector<double>(x.observation.data(),
                                           x.observation.data() + x.observation.size());
    j["prompt"] = x.prompt;
    j["gt_answer"] = x.gt_answer ? nlohmann::ordered_json(*x.gt_answer) : nlohmann::ordered_json();
    j["gt_interval"] = x.gt_interval
                           ? nlohmann::ordered_json::array({x.gt_interval->start, x.gt_interval->end})
                           : nlohmann::ordered_json();
    j["intrinsic_difficulty"] = x.intrinsic_difficulty;
    out << j.dump() << '\n';
  }
}

std::vector<TaskInstance> read_tasks_jsonl(std::istream& in) {
  std::vector<TaskInstance> tasks;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaskInstance x;
      x.id = j.at("id").get<int>();
      x.family = parse_family(j.at("family").get<std::string>());
      const auto obs = j.at("observation").get<std::vector<double>>();
      x.observation = Eigen::Map<const Eigen::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
      x.prompt = j.at("prompt").get<TokenSeq>();
      if (!j.at("gt_answer").is_null()) x.gt_answer = j.at("gt_answer").get<TokenSeq>();
      if (!j.at("gt_interval").is_null()) {
        const auto iv = j.at("gt_interval").get<std::vector<double>>();
        if (iv.size() != 2) throw InvalidInput("gt_interval needs two values");
        x.gt_interval = Interval{iv[0], iv[1]};
        x.gt_interval->validate();
      }
      x.intrinsic_difficulty = j.at("intrinsic_difficulty").get<double>();
      if (x.prompt.empty()) throw InvalidInput("empty prompt");
      tasks.push_back(std::move(x));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(fmt::format("task file line {}: {}", line_no, e.what()));
    }
  }
  return tasks;
}

}  // namespace grpo_forge
