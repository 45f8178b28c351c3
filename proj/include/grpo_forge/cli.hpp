#ifndef GRPO_FORGE_CLI_HPP_
#define GRPO_FORGE_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace grpo_forge {

/// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitVerificationFailed = 1,
  kExitUsage = 2,
  kExitNumericAbort = 3,
};

inline constexpr const char* kToolVersion = "0.1.0";

/// Reads GRPO_FORGE_LOG (trace, debug, info, warn, error, off; default warn).
void init_logging();

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> resume;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct CompareArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::vector<std::string> algorithms;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
};

int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err);

struct GradcheckArgs {
  std::uint64_t seed = 1;
  int trials = 100;
  /// Test hook: perturb every analytic gradient so the check must fail.
  bool corrupt_gradient = false;
};

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

struct OracleArgs {
  std::uint64_t seed = 1;
  /// Substitute pi_old for pi*, which the sweep must detect.
  bool negative_control = false;
};

int cmd_oracle(const OracleArgs& args, std::ostream& out, std::ostream& err);

/// Accepts a run directory (steps.csv) or a compare directory (comparison.csv).
int cmd_report(const std::filesystem::path& dir, std::ostream& out, std::ostream& err);

/// Full command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_CLI_HPP_
