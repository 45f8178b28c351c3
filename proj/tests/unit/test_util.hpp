// Small fixtures shared by the unit tests.
#ifndef GRPO_FORGE_TESTS_UNIT_TEST_UTIL_HPP_
#define GRPO_FORGE_TESTS_UNIT_TEST_UTIL_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "grpo_forge/policy.hpp"
#include "grpo_forge/types.hpp"

namespace grpo_forge::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "grpo_forge_" + tag;
    if (info != nullptr) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// Sample with no observation and a one-token prompt (tabular policies ignore both).
inline TaskInstance blank_sample(int feature_dim = 0) {
  TaskInstance x;
  x.observation = Eigen::VectorXd::Zero(feature_dim);
  x.prompt = {0};
  return x;
}

/// Rollout over explicit trajectories, scored under all three policies.
inline GroupRollout make_rollout(const PolicyTriple& triple, const TaskInstance& sample,
                                 const std::vector<TokenSeq>& trajectories,
                                 const std::vector<double>& rewards) {
  GroupRollout r;
  r.sample = sample;
  r.trajectories = trajectories;
  r.rewards = Eigen::Map<const Eigen::VectorXd>(rewards.data(),
                                                static_cast<Eigen::Index>(rewards.size()));
  for (const TokenSeq& y : trajectories) {
    r.logprob_current.push_back(logprob_sequence(triple.current, sample, y));
    r.logprob_old.push_back(logprob_sequence(triple.old, sample, y));
    r.logprob_reference.push_back(logprob_sequence(triple.reference, sample, y));
  }
  return r;
}

/// Uniformly random fixed-length sequence over [0, vocab).
inline TokenSeq random_sequence(std::mt19937_64& rng, int vocab, int length) {
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  TokenSeq y(static_cast<std::size_t>(length));
  for (int& t : y) t = tok(rng);
  return y;
}

}  // namespace grpo_forge::testing

#endif  // GRPO_FORGE_TESTS_UNIT_TEST_UTIL_HPP_
