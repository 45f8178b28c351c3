#include "grpo_forge/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "grpo_forge/algorithms.hpp"
#include "grpo_forge/errors.hpp"
#include "grpo_forge/oracle.hpp"
#include "grpo_forge/report.hpp"
#include "grpo_forge/trainer.hpp"

namespace grpo_forge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_config_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << text;
}

std::string cell(double v) { return std::isfinite(v) ? fmt::format("{:.17g}", v) : std::string(); }

/// Trailing moving average over up to `w` points.
std::vector<double> moving_average(const std::vector<double>& y, std::size_t w) {
  std::vector<double> out(y.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum += y[i];
    if (i >= w) sum -= y[i - w];
    out[i] = sum / static_cast<double>(std::min(i + 1, w));
  }
  return out;
}

/// Per-step mean over runs of one steps.csv column (runs may differ in length;
/// the mean covers the common prefix).
std::pair<std::vector<double>, std::vector<double>> mean_curve(const std::vector<fs::path>& runs,
                                                               const std::string& column) {
  std::vector<std::vector<double>> curves;
  std::vector<double> steps;
  for (const fs::path& run : runs) {
    const CsvTable t = read_csv(run / "steps.csv");
    curves.push_back(t.numeric(column));
    if (steps.empty() || t.rows.size() < steps.size()) steps = t.numeric("step");
  }
  std::size_t n = steps.size();
  for (const auto& c : curves) n = std::min(n, c.size());
  std::vector<double> mean(n, 0.0);
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < n; ++i) mean[i] += c[i] / static_cast<double>(curves.size());
  }
  steps.resize(n);
  return {steps, mean};
}

int report_run(const fs::path& dir, std::ostream& out) {
  const CsvTable steps = read_csv(dir / "steps.csv");
  const std::vector<double> x = steps.numeric("step");
  const std::vector<double> reward = steps.numeric("mean_reward");

  PlotOptions reward_opts;
  reward_opts.title = "Mean training reward";
  reward_opts.y_label = "mean reward";
  write_text(dir / "reward_curve.svg",
             render_line_chart({{"batch mean", x, reward}, {"10-step average", x, moving_average(reward, 10)}},
                               reward_opts));

  PlotOptions van_opts;
  van_opts.title = "Vanishing advantage ratio";
  van_opts.y_label = "fraction of groups";
  van_opts.y_range = std::make_pair(0.0, 1.0);
  const std::vector<double> van = steps.numeric("vanishing_ratio");
  write_text(dir / "vanishing_ratio.svg",
             render_line_chart({{"per step", x, van}, {"10-step average", x, moving_average(van, 10)}},
                               van_opts));

  std::string table = "step,mean_reward,acc,miou,r_at_03,r_at_05,vanishing_ratio\n";
  if (fs::exists(dir / "metrics.csv")) {
    const CsvTable m = read_csv(dir / "metrics.csv");
    for (const auto& row : m.rows) {
      std::string line;
      for (std::size_t i = 0; i < row.size(); ++i) line += (i ? "," : "") + row[i];
      table += line + '\n';
    }
  } else if (!steps.rows.empty()) {
    table += fmt::format("{},{},,,,,{}\n", steps.rows.back()[steps.column("step")],
                         steps.rows.back()[steps.column("mean_reward")],
                         steps.rows.back()[steps.column("vanishing_ratio")]);
  }
  write_text(dir / "metrics_table.csv", table);
  fmt::print(out, "wrote reward_curve.svg, vanishing_ratio.svg, metrics_table.csv to {}\n",
             dir.string());
  return kExitOk;
}

int report_comparison(const fs::path& dir, std::ostream& out) {
  const CsvTable cmp = read_csv(dir / "comparison.csv");
  const std::size_t c_alg = cmp.column("algorithm");
  const std::size_t c_seed = cmp.column("seed");
  const std::size_t c_status = cmp.column("status");
  std::vector<std::string> order;
  std::map<std::string, std::vector<fs::path>> runs;
  std::map<std::string, std::vector<double>> finals, vanish, accs;
  for (const auto& row : cmp.rows) {
    const std::string& alg = row[c_alg];
    if (!runs.count(alg)) order.push_back(alg);
    runs[alg];
    if (row[c_status] != "ok") continue;
    runs[alg].push_back(dir / alg / ("seed-" + row[c_seed]));
  }
  const auto fr = cmp.numeric("final_mean_reward");
  const auto va = cmp.numeric("vanishing_ratio");
  const auto ac = cmp.numeric("acc");
  for (std::size_t i = 0; i < cmp.rows.size(); ++i) {
    if (cmp.rows[i][c_status] != "ok") continue;
    finals[cmp.rows[i][c_alg]].push_back(fr[i]);
    vanish[cmp.rows[i][c_alg]].push_back(va[i]);
    accs[cmp.rows[i][c_alg]].push_back(ac[i]);
  }

  std::vector<PlotSeries> reward_series, van_series;
  for (const std::string& alg : order) {
    if (runs[alg].empty()) continue;
    auto [x, r] = mean_curve(runs[alg], "mean_reward");
    reward_series.push_back({alg, x, moving_average(r, 10)});
    auto [xv, v] = mean_curve(runs[alg], "vanishing_ratio");
    van_series.push_back({alg, xv, moving_average(v, 10)});
  }
  PlotOptions ro;
  ro.title = "Mean training reward (seed mean, 10-step average)";
  ro.y_label = "mean reward";
  write_text(dir / "reward_curve.svg", render_line_chart(reward_series, ro));
  PlotOptions vo;
  vo.title = "Vanishing advantage ratio (seed mean, 10-step average)";
  vo.y_label = "fraction of groups";
  vo.y_range = std::make_pair(0.0, 1.0);
  write_text(dir / "vanishing_ratio.svg", render_line_chart(van_series, vo));

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (double x : v) {
      if (std::isfinite(x)) {
        s += x;
        ++n;
      }
    }
    return n ? s / n : std::nan("");
  };
  std::string table = "algorithm,runs,final_mean_reward,acc,vanishing_ratio\n";
  for (const std::string& alg : order) {
    table += fmt::format("{},{},{},{},{}\n", alg, finals[alg].size(), cell(mean(finals[alg])),
                         cell(mean(accs[alg])), cell(mean(vanish[alg])));
  }
  write_text(dir / "metrics_table.csv", table);
  fmt::print(out, "wrote reward_curve.svg, vanishing_ratio.svg, metrics_table.csv to {}\n",
             dir.string());
  return kExitOk;
}

}  // namespace

void init_logging() {
  auto logger = spdlog::get("grpo-forge");
  if (!logger) {
    logger = spdlog::stderr_color_mt("grpo-forge");
    spdlog::set_default_logger(logger);
  }
  const char* env = std::getenv("GRPO_FORGE_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  TrainerConfig config;
  try {
    json j = read_config_json(args.config);
    if (args.seed) {
      if (!j.is_object()) throw ConfigError("config must be a JSON object");
      j["seed"] = *args.seed;
    }
    config = TrainerConfig::from_json(j);
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitUsage;
  }
  try {
    RunOptions options;
    options.out_dir = args.out;
    options.resume_from = args.resume;
    options.tool_version = kToolVersion;
    const TrainResult result = run_to_directory(config, options);
    fmt::print(out, "{}: {} steps, final eval mean reward {:.4f}\n", args.out.string(),
               config.steps, result.evals.back().mean_reward);
    return kExitOk;
  } catch (const NumericAbort& e) {
    fmt::print(err, "numeric abort: {}\ndiagnostic dump written to {}\n", e.what(),
               (args.out / "abort.json").string());
    return kExitNumericAbort;
  } catch (const IntegrityError& e) {
    fmt::print(err, "checkpoint error: {}\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitUsage;
  }
}

int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err) {
  if (args.algorithms.size() < 2) {
    fmt::print(err, "compare needs at least 2 algorithms\n");
    return kExitUsage;
  }
  if (args.seeds.empty()) {
    fmt::print(err, "compare needs at least one seed\n");
    return kExitUsage;
  }
  if (args.jobs < 1) {
    fmt::print(err, "--jobs must be >= 1\n");
    return kExitUsage;
  }
  json base;
  std::vector<TrainerConfig> configs;
  struct Cell {
    std::string algorithm;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  try {
    base = read_config_json(args.config);
    if (!base.is_object()) throw ConfigError("config must be a JSON object");
    for (const std::string& alg : args.algorithms) {
      parse_algorithm(alg);
      for (std::uint64_t seed : args.seeds) {
        json j = base;
        j["algorithm"] = alg;
        j["seed"] = seed;
        configs.push_back(TrainerConfig::from_json(j));
        cells.push_back({alg, seed});
      }
    }
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitUsage;
  }
  fs::create_directories(args.out);

  std::vector<std::string> status(cells.size(), "pending");
  std::vector<std::optional<EvalReport>> finals(cells.size());
  std::vector<int> codes(cells.size(), kExitOk);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const fs::path dir = args.out / cells[i].algorithm / fmt::format("seed-{}", cells[i].seed);
      RunOptions options;
      options.out_dir = dir;
      options.tool_version = kToolVersion;
      try {
        const TrainResult r = run_to_directory(configs[i], options);
        finals[i] = r.evals.back();
        status[i] = "ok";
      } catch (const NumericAbort& e) {
        status[i] = "numeric_abort";
        codes[i] = kExitNumericAbort;
        std::lock_guard<std::mutex> lock(io);
        fmt::print(err, "{} seed {}: numeric abort: {}\n", cells[i].algorithm, cells[i].seed, e.what());
      } catch (const std::exception& e) {
        status[i] = "failed";
        codes[i] = kExitVerificationFailed;
        std::lock_guard<std::mutex> lock(io);
        fmt::print(err, "{} seed {}: {}\n", cells[i].algorithm, cells[i].seed, e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t jobs = std::min<std::size_t>(static_cast<std::size_t>(args.jobs), cells.size());
  for (std::size_t k = 1; k < jobs; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = "algorithm,seed,status,final_mean_reward,acc,miou,r_at_03,r_at_05,vanishing_ratio\n";
  auto opt = [](const std::optional<double>& v) { return v ? cell(*v) : std::string(); };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (finals[i]) {
      const EvalReport& e = *finals[i];
      csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", cells[i].algorithm, cells[i].seed, status[i],
                         cell(e.mean_reward), opt(e.accuracy), opt(e.miou), opt(e.recall_03),
                         opt(e.recall_05), cell(e.vanishing_ratio));
    } else {
      csv += fmt::format("{},{},{},,,,,,\n", cells[i].algorithm, cells[i].seed, status[i]);
    }
  }
  write_text(args.out / "comparison.csv", csv);

  // Overlay of seed-mean reward curves, one polyline per algorithm.
  std::vector<PlotSeries> series;
  for (const std::string& alg : args.algorithms) {
    std::vector<fs::path> ok;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].algorithm == alg && status[i] == "ok") {
        ok.push_back(args.out / alg / fmt::format("seed-{}", cells[i].seed));
      }
    }
    if (ok.empty()) continue;
    auto [x, r] = mean_curve(ok, "mean_reward");
    series.push_back({alg, x, moving_average(r, 10)});
  }
  PlotOptions po;
  po.title = "Mean training reward (seed mean, 10-step average)";
  po.y_label = "mean reward";
  write_text(args.out / "reward_curves.svg", render_line_chart(series, po));

  int code = kExitOk;
  for (int c : codes) code = std::max(code, c);
  fmt::print(out, "{} runs, {} ok; wrote {}\n", cells.size(),
             std::count(status.begin(), status.end(), "ok"), (args.out / "comparison.csv").string());
  return code;
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  if (args.trials < 1) {
    fmt::print(err, "--trials must be >= 1\n");
    return kExitUsage;
  }
  fmt::print(out, "{:<18} {:>7} {:>14} {:>22}  {}\n", "algorithm", "trials", "max_rel_error",
             "worst_instance_seed", "status");
  int code = kExitOk;
  for (Algorithm a : kAllAlgorithms) {
    const GradcheckResult r = run_gradcheck(a, args.seed, args.trials, args.corrupt_gradient);
    const bool pass = r.max_rel_error <= kGradcheckTolerance;
    fmt::print(out, "{:<18} {:>7} {:>14.3e} {:>22}  {}\n", algorithm_id(a), r.trials,
               r.max_rel_error, r.worst_seed, pass ? "PASS" : "FAIL");
    if (!pass) {
      fmt::print(err, "gradient mismatch: {} instance seed {} relative error {:.3e} > {:.0e}\n",
                 algorithm_id(a), r.worst_seed, r.max_rel_error, kGradcheckTolerance);
      code = kExitVerificationFailed;
    }
  }
  return code;
}

int cmd_oracle(const OracleArgs& args, std::ostream& out, std::ostream& err) {
  const std::vector<OracleCheckRow> rows = run_oracle_sweep(args.seed, args.negative_control);
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, bool>> summary;  // worst error, all pass
  for (const auto& r : rows) {
    if (!summary.count(r.check)) {
      order.push_back(r.check);
      summary[r.check] = {r.expect_failure ? std::numeric_limits<double>::infinity() : 0.0, true};
    }
    auto& [worst, pass] = summary[r.check];
    // For negative controls the binding value is the smallest error seen.
    worst = r.expect_failure ? std::min(worst, r.max_error) : std::max(worst, r.max_error);
    pass = pass && r.pass;
  }
  fmt::print(out, "{:<24} {:>8} {:>14} {:>12}  {}\n", "identity", "configs", "max_error",
             "tolerance", "status");
  for (const std::string& name : order) {
    const auto n = std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.check == name; });
    const auto& row = *std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.check == name; });
    fmt::print(out, "{:<24} {:>8} {:>14.3e} {:>12.0e}  {}\n",
               name + (row.expect_failure ? " (min)" : ""), n, summary[name].first, row.tolerance,
               summary[name].second ? "PASS" : "FAIL");
  }
  int code = kExitOk;
  int shown = 0;
  for (const auto& r : rows) {
    if (r.pass) continue;
    code = kExitVerificationFailed;
    if (++shown > 10) continue;
    fmt::print(err, "violation: {} vocab={} L={} lambda={} error={:.3e} tolerance={:.0e}\n", r.check,
               r.vocab, r.length, r.lambda, r.max_error, r.tolerance);
  }
  if (shown > 10) fmt::print(err, "... {} more violations\n", shown - 10);
  return code;
}

int cmd_report(const fs::path& dir, std::ostream& out, std::ostream& err) {
  try {
    if (fs::exists(dir / "comparison.csv")) return report_comparison(dir, out);
    if (!fs::exists(dir / "steps.csv")) {
      fmt::print(err, "{} has neither steps.csv nor comparison.csv\n", dir.string());
      return kExitUsage;
    }
    return report_run(dir, out);
  } catch (const std::exception& e) {
    fmt::print(err, "report failed: {}\n", e.what());
    return kExitUsage;
  }
}

int run_cli(int argc, char** argv) {
  init_logging();
  CLI::App app{"Desk-scale lab for group-relative policy optimization and its baselines"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  TrainArgs train;
  std::optional<std::uint64_t> train_seed;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "Run one training job into a run directory");
  train_cmd->add_option("--config", train.config, "JSON config file")->required();
  train_cmd->add_option("--out", train.out, "Run directory")->required();
  train_cmd->add_option("--seed", train_seed, "Override the config seed");
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint file");

  CompareArgs compare;
  std::uint64_t compare_seed = 1;
  int compare_trials = 0;
  auto* compare_cmd = app.add_subcommand("compare", "Run an algorithm x seed matrix");
  compare_cmd->add_option("--config", compare.config, "Base JSON config")->required();
  compare_cmd->add_option("--out", compare.out, "Output directory")->required();
  compare_cmd->add_option("--algorithms", compare.algorithms, "Comma-separated algorithm ids")
      ->delimiter(',')
      ->required();
  compare_cmd->add_option("--seeds", compare.seeds, "Comma-separated seeds")->delimiter(',');
  compare_cmd->add_option("--seed", compare_seed, "First seed when --seeds is absent");
  compare_cmd->add_option("--trials", compare_trials, "Number of seeds when --seeds is absent");
  compare_cmd->add_option("--jobs", compare.jobs, "Parallel sub-runs");

  GradcheckArgs gradcheck;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
  grad_cmd->add_option("--seed", gradcheck.seed, "Master seed");
  grad_cmd->add_option("--trials", gradcheck.trials, "Random instances per algorithm");
  grad_cmd->add_flag("--corrupt-gradient", gradcheck.corrupt_gradient)->group("");

  OracleArgs oracle;
  auto* oracle_cmd = app.add_subcommand("oracle", "Exact-enumeration identity sweep");
  oracle_cmd->add_option("--seed", oracle.seed, "Master seed");
  oracle_cmd->add_flag("--negative-control", oracle.negative_control,
                       "Substitute the old policy for the optimal one (must fail)");

  fs::path report_dir;
  auto* report_cmd = app.add_subcommand("report", "Static plots and tables for a run or comparison");
  report_cmd->add_option("dir", report_dir, "Run or compare directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train_cmd) {
    train.seed = train_seed;
    if (!resume.empty()) train.resume = resume;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*compare_cmd) {
    if (compare.seeds.empty()) {
      const int n = compare_trials > 0 ? compare_trials : 3;
      for (int i = 0; i < n; ++i) compare.seeds.push_back(compare_seed + static_cast<std::uint64_t>(i));
    }
    return cmd_compare(compare, std::cout, std::cerr);
  }
  if (*grad_cmd) return cmd_gradcheck(gradcheck, std::cout, std::cerr);
  if (*oracle_cmd) return cmd_oracle(oracle, std::cout, std::cerr);
  if (*report_cmd) return cmd_report(report_dir, std::cout, std::cerr);
  return kExitUsage;
}

}  // namespace grpo_forge
