// Command-line front end for training, evaluating, and reporting on runs.
//
// Exit codes: 0 on success, 2 for configuration problems (bad flags, bad
// config files, unknown names), 3 for numerical failures during a run.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "svnr/harness.hpp"

namespace fs = std::filesystem;

namespace {

svnr::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw svnr::ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw svnr::ConfigError("config parse error in " + path + ": " + e.what());
  }
  return svnr::config_from_json(j);
}

// Collects completed run directories (config.json + eval.csv + metrics.csv)
// under `root` into RunRecords without retraining anything.
std::vector<svnr::RunRecord> collect_runs(const std::string& root) {
  std::vector<svnr::RunRecord> records;
  if (!fs::is_directory(root)) {
    throw svnr::ConfigError("not a directory: " + root);
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const fs::path cfg_path = dir / "config.json";
    const fs::path eval_path = dir / "eval.csv";
    if (!fs::exists(cfg_path) || !fs::exists(eval_path)) continue;
    nlohmann::json j;
    std::ifstream in(cfg_path);
    in >> j;
    const std::uint64_t seed = j.value("seed", 0ULL);
    j.erase("seed");
    svnr::RunRecord rec;
    rec.config = svnr::config_from_json(j);
    rec.seed = seed;
    rec.dir = dir.string();
    rec.eval_returns = svnr::eval_from_csv(eval_path.string());
    std::tie(rec.eval_mean, rec.eval_std) =
        svnr::detail::mean_std(rec.eval_returns);
    const fs::path metrics_path = dir / "metrics.csv";
    if (fs::exists(metrics_path)) {
      rec.metrics = svnr::metrics_from_csv(metrics_path.string());
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) {
    throw svnr::ConfigError("no completed runs under " + root);
  }
  return records;
}

std::vector<std::string> scenario_order(
    const std::vector<svnr::RunRecord>& records,
    const std::vector<std::string>& requested) {
  if (!requested.empty()) return requested;
  std::vector<std::string> order;
  for (const auto& r : records) {
    const std::string label = r.config.scenario_label();
    if (std::find(order.begin(), order.end(), label) == order.end()) {
      order.push_back(label);
    }
  }
  return order;
}

void print_run_summaries(const std::vector<svnr::RunRecord>& records) {
  for (const auto& r : records) {
    std::printf("%s seed=%llu eval=%.3f ± %.3f%s\n",
                r.config.run_dir_name(r.seed).c_str(),
                static_cast<unsigned long long>(r.seed), r.eval_mean,
                r.eval_std, r.resumed ? " (resumed)" : "");
  }
}

int cmd_train(const std::string& config_path, std::size_t jobs) {
  const svnr::ExperimentConfig cfg = load_config(config_path);
  const auto records = svnr::run(cfg, jobs);
  print_run_summaries(records);
  return 0;
}

int cmd_eval(const std::string& run_dir, std::size_t episodes,
             bool deterministic) {
  const fs::path dir(run_dir);
  nlohmann::json cj;
  {
    std::ifstream in(dir / "config.json");
    if (!in) throw svnr::ConfigError("no config.json in " + run_dir);
    in >> cj;
  }
  const std::uint64_t seed = cj.value("seed", 0ULL);
  cj.erase("seed");
  const svnr::ExperimentConfig cfg = svnr::config_from_json(cj);

  nlohmann::json ckpt;
  {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) throw svnr::ConfigError("no checkpoint.json in " + run_dir);
    in >> ckpt;
  }

  auto env = svnr::make_env(cfg.scenario, seed, cfg.s2);
  svnr::TrainConfig tc = cfg.hyper;
  tc.flavor = cfg.flavor();
  tc.seed = seed;
  svnr::PolicyBundle bundle(svnr::policy_config_for(*env, tc));
  svnr::Critic critic(svnr::critic_config_for(*env, tc));
  svnr::load_checkpoint(bundle, critic, ckpt);

  const std::size_t n_eps = episodes ? episodes : cfg.eval_episodes;
  const auto mode = deterministic ? svnr::EvalMode::deterministic
                                  : svnr::EvalMode::shared_noise;
  const svnr::EvalResult ev =
      svnr::evaluate(bundle, *env, n_eps, mode, seed + svnr::kEvalSeedOffset);
  svnr::detail::write_file((dir / "eval.csv").string(),
                           svnr::eval_to_csv(ev.returns));
  std::printf("eval %s: mean=%.4f std=%.4f episodes=%zu\n", run_dir.c_str(),
              ev.mean, ev.stddev, n_eps);
  return 0;
}

int cmd_table(const std::string& runs_dir,
              const std::vector<std::string>& scenarios,
              const std::string& out_path) {
  const auto records = collect_runs(runs_dir);
  const auto table =
      svnr::make_table(records, scenario_order(records, scenarios));
  for (const auto& w : table.warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  std::fputs(table.text.c_str(), stdout);
  if (!out_path.empty()) {
    svnr::detail::write_file(out_path, table.csv);
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_plot_scatter(const std::string& actions_path, std::size_t stride,
                     std::size_t from, std::size_t to, double range,
                     const std::string& out_prefix) {
  const auto log = svnr::actions_from_csv(actions_path);
  const auto sc = svnr::make_scatter(log, stride, from, to, range);
  svnr::detail::write_file(out_prefix + "_points.csv", sc.csv);
  svnr::detail::write_file(out_prefix + "_u1u2.svg", sc.svg_u1u2);
  std::printf("scatter: %zu points -> %s_u1u2.svg\n", sc.points,
              out_prefix.c_str());
  if (!sc.svg_u1u3.empty()) {
    svnr::detail::write_file(out_prefix + "_u1u3.svg", sc.svg_u1u3);
    std::printf("scatter: %zu points -> %s_u1u3.svg\n", sc.points,
                out_prefix.c_str());
  }
  return 0;
}

int cmd_plot_curves(const std::string& runs_dir, std::size_t window,
                    const std::string& out_prefix) {
  const auto records = collect_runs(runs_dir);
  // Group by (scenario label, algorithm); one curve set per group.
  std::map<std::string, std::vector<std::vector<svnr::MetricsRow>>> groups;
  for (const auto& r : records) {
    if (r.metrics.empty()) continue;
    groups[r.config.scenario_label() + "_" + r.config.algorithm].push_back(
        r.metrics);
  }
  if (groups.empty()) {
    throw svnr::ConfigError("no metrics found under " + runs_dir);
  }
  for (const auto& [name, seeds] : groups) {
    const auto cur = svnr::make_curves(seeds, window);
    for (const auto& w : cur.warnings) {
      std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    std::string label = name;
    for (char& ch : label) {
      if (ch == '(' || ch == ')' || ch == '.') ch = '-';
    }
    svnr::detail::write_file(out_prefix + "_" + label + ".csv", cur.csv);
    svnr::detail::write_file(out_prefix + "_" + label + ".svg", cur.svg);
    std::printf("curves: %s (%zu seeds)\n", label.c_str(), seeds.size());
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, std::size_t jobs,
              const std::vector<double>& widths,
              const std::vector<std::string>& algorithms,
              const std::string& table_out) {
  const svnr::ExperimentConfig base = load_config(config_path);
  if (base.scenario != "max_of_three") {
    throw svnr::ConfigError("sweep expects a max_of_three base config");
  }
  std::vector<svnr::RunRecord> all;
  for (double s2 : widths) {
    for (const auto& alg : algorithms) {
      svnr::ExperimentConfig cfg = base;
      cfg.s2 = s2;
      cfg.algorithm = alg;
      cfg.validate();
      std::printf("sweep: s2=%g algorithm=%s\n", s2, alg.c_str());
      auto records = svnr::run(cfg, jobs);
      print_run_summaries(records);
      all.insert(all.end(), records.begin(), records.end());
    }
  }
  const auto table = svnr::make_table(all, scenario_order(all, {}));
  for (const auto& w : table.warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  std::fputs(table.text.c_str(), stdout);
  if (!table_out.empty()) {
    svnr::detail::write_file(table_out, table.csv);
    std::printf("wrote %s\n", table_out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"svnr: multi-agent soft-policy training and reporting"};
  app.require_subcommand(1);

  std::string config_path, run_dir, runs_dir, out_path, actions_path;
  std::string out_prefix = "plot";
  std::size_t jobs = 1, episodes = 0, stride = 1, from = 1, to = 1000000000;
  std::size_t window = 25;
  double range = 10.0;
  bool deterministic = false;
  std::vector<std::string> scenarios;
  std::vector<double> widths = {3.0, 2.0, 1.5};
  std::vector<std::string> algorithms = {"nested", "full", "marginal"};

  auto* train = app.add_subcommand("train", "train all seeds of a config");
  train->add_option("-c,--config", config_path, "experiment config (json)")
      ->required();
  train->add_option("-j,--jobs", jobs, "parallel seed workers");

  auto* eval = app.add_subcommand("eval", "re-evaluate a run checkpoint");
  eval->add_option("-r,--run", run_dir, "run directory")->required();
  eval->add_option("-e,--episodes", episodes,
                   "evaluation episodes (default: config value)");
  eval->add_flag("--deterministic", deterministic, "zero exploration noise");

  auto* table = app.add_subcommand("table", "aggregate runs into a table");
  table->add_option("-r,--runs", runs_dir, "directory of run dirs")
      ->required();
  table->add_option("-s,--scenario", scenarios,
                    "column order (repeatable, scenario labels)")
      ->delimiter(',');
  table->add_option("-o,--out", out_path, "write table csv here");

  auto* plot = app.add_subcommand("plot", "render svg figures");
  plot->require_subcommand(1);
  auto* scatter = plot->add_subcommand("scatter", "joint-action scatter");
  scatter->add_option("-a,--actions", actions_path, "actions csv")
      ->required();
  scatter->add_option("--stride", stride, "keep every k-th step");
  scatter->add_option("--from", from, "first step (1-based)");
  scatter->add_option("--to", to, "last step (inclusive)");
  scatter->add_option("--range", range, "axis half-range");
  scatter->add_option("-o,--out", out_prefix, "output file prefix");
  auto* curves = plot->add_subcommand("curves", "training return curves");
  curves->add_option("-r,--runs", runs_dir, "directory of run dirs")
      ->required();
  curves->add_option("-w,--window", window, "smoothing window (episodes)");
  curves->add_option("-o,--out", out_prefix, "output file prefix");

  auto* sweep = app.add_subcommand(
      "sweep", "bowl-width sweep crossed with coalition variants");
  sweep->add_option("-c,--config", config_path, "base config (json)")
      ->required();
  sweep->add_option("-j,--jobs", jobs, "parallel seed workers");
  sweep->add_option("--s2", widths, "bowl widths to sweep")->delimiter(',');
  sweep->add_option("--algorithms", algorithms, "variants to sweep")
      ->delimiter(',');
  sweep->add_option("-o,--out", out_path, "write table csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(config_path, jobs);
    if (*eval) return cmd_eval(run_dir, episodes, deterministic);
    if (*table) return cmd_table(runs_dir, scenarios, out_path);
    if (*scatter) {
      return cmd_plot_scatter(actions_path, stride, from, to, range,
                              out_prefix);
    }
    if (*curves) return cmd_plot_curves(runs_dir, window, out_prefix);
    if (*sweep) return cmd_sweep(config_path, jobs, widths, algorithms,
                                 out_path);
  } catch (const svnr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const svnr::HarnessError& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 3;
  }
  return 0;
}
