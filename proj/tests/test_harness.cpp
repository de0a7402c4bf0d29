#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "svnr/harness.hpp"

namespace fs = std::filesystem;
using namespace svnr;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("svnr_harness_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to train in well under a second per seed.
ExperimentConfig micro_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.scenario = "max_of_three";
  cfg.s2 = 3.0;
  cfg.algorithm = "nested";
  cfg.seeds = {1, 2};
  cfg.episodes = 24;
  cfg.eval_episodes = 4;
  cfg.output_dir = out_dir;
  cfg.hyper.m_particles = 16;
  cfg.hyper.batch = 8;
  cfg.hyper.warmup_episodes = 8;
  cfg.hyper.policy_hidden = {8};
  cfg.hyper.critic_hidden = {8};
  cfg.hyper.checkpoint_every = 10;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SVNR_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("experiment config round-trips through json without loss") {
  ExperimentConfig cfg;
  cfg.scenario = "two_modalities";
  cfg.algorithm = "full";
  cfg.seeds = {7, 8, 9};
  cfg.episodes = 321;
  cfg.eval_episodes = 17;
  cfg.output_dir = "elsewhere";
  cfg.hyper.m_particles = 48;
  cfg.hyper.value_samples = 8;
  cfg.hyper.policy_lr = 1e-3;
  cfg.hyper.batch = 256;
  cfg.hyper.alpha.base = 0.5;
  cfg.hyper.alpha.spike = 250.0;
  cfg.hyper.noise_mode = TrainConfig::NoiseMode::per_step;
  cfg.hyper.policy_hidden = {32, 16};
  cfg.hyper.activation = Act::tanh;
  cfg.hyper.kernel.mode = KernelConfig::Mode::fixed;
  cfg.hyper.kernel.fixed_h = 2.5;
  cfg.hyper.discount = 0.97;
  cfg.negotiation_rounds = 55;

  const nlohmann::json j = to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  REQUIRE(to_json(back) == j);
  REQUIRE(back.hyper.m_particles == 48);
  REQUIRE(back.hyper.noise_mode == TrainConfig::NoiseMode::per_step);
  REQUIRE(back.hyper.kernel.fixed_h == 2.5);
}

TEST_CASE("shipped configs parse and validate") {
  for (const char* name :
       {"max_of_three.json", "two_modalities.json", "particle_gather.json"}) {
    const fs::path p = fs::path(SVNR_CONFIG_DIR) / name;
    CAPTURE(name);
    const ExperimentConfig cfg =
        config_from_json(nlohmann::json::parse(slurp(p)));
    REQUIRE_NOTHROW(cfg.validate());
    REQUIRE(cfg.episodes == 5000);
    REQUIRE(cfg.eval_episodes == 100);
  }
}

TEST_CASE("every config field has a usable default") {
  const ExperimentConfig cfg = config_from_json(nlohmann::json::object());
  REQUIRE(cfg.scenario == "max_of_three");
  REQUIRE(cfg.algorithm == "nested");
  REQUIRE(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  REQUIRE(cfg.episodes == 5000);
  REQUIRE(cfg.hyper.m_particles == 32);
}

TEST_CASE("config rejects unknown keys and bad values") {
  REQUIRE_THROWS_AS(config_from_json({{"scneario", "max_of_three"}}),
                    ConfigError);
  REQUIRE_THROWS_AS(
      config_from_json({{"hyperparameters", {{"m_partcles", 32}}}}),
      ConfigError);
  REQUIRE_THROWS_AS(config_from_json({{"algorithm", "psychic"}}), ConfigError);
  REQUIRE_THROWS_AS(config_from_json({{"scenario", "poker"}}), ConfigError);
  REQUIRE_THROWS_AS(
      config_from_json({{"hyperparameters", {{"m_particles", 4}}}}),
      ConfigError);
  REQUIRE_THROWS_AS(
      config_from_json({{"seeds", nlohmann::json::array()}}), ConfigError);
}

TEST_CASE("csv writers head every file with its schema version") {
  REQUIRE(metrics_to_csv({}).rfind("# svnr-metrics-v1\n", 0) == 0);
  REQUIRE(actions_to_csv({}).rfind("# svnr-actions-v1\n", 0) == 0);
  REQUIRE(eval_to_csv({}).rfind("# svnr-eval-v1\n", 0) == 0);
  const auto tbl = make_table({}, {});
  REQUIRE(tbl.csv.rfind("# svnr-table-v1\n", 0) == 0);
}

TEST_CASE("metrics csv round-trips rows exactly") {
  std::vector<MetricsRow> rows;
  rows.push_back({0, 1.25, 0.3333333333333333, 0.125, 1e-17, 3});
  rows.push_back({1, -2.7182818284590452, 1.0, 42.0, 0.5, 0});
  const fs::path dir = fresh_dir("metrics_rt");
  const std::string path = (dir / "m.csv").string();
  detail::write_file(path, metrics_to_csv(rows));
  const auto back = metrics_from_csv(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(back[i].episode == rows[i].episode);
    REQUIRE(back[i].ep_return == rows[i].ep_return);
    REQUIRE(back[i].alpha == rows[i].alpha);
    REQUIRE(back[i].critic_loss == rows[i].critic_loss);
    REQUIRE(back[i].max_direction_norm == rows[i].max_direction_norm);
    REQUIRE(back[i].clamp_count == rows[i].clamp_count);
  }
  // A file claiming a different schema is refused.
  detail::write_file(path, "# svnr-metrics-v2\nepisode\n");
  REQUIRE_THROWS_AS(metrics_from_csv(path), HarnessError);
}

TEST_CASE("action log csv round-trips with one column per coordinate") {
  std::vector<std::pair<std::vector<double>, double>> log;
  log.push_back({{0.5, -0.25, 10.0}, 7.5});
  log.push_back({{1.0, 2.0, 3.0}, -1.0});
  const fs::path dir = fresh_dir("actions_rt");
  const std::string path = (dir / "a.csv").string();
  const std::string csv = actions_to_csv(log);
  REQUIRE(csv.find("step,u1,u2,u3,reward") != std::string::npos);
  detail::write_file(path, csv);
  const auto back = actions_from_csv(path);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].step == 1);
  REQUIRE(back[0].u == std::vector<double>{0.5, -0.25, 10.0});
  REQUIRE(back[0].reward == 7.5);
  REQUIRE(back[1].step == 2);
}

TEST_CASE("run_seed persists a complete, resumable artifact set") {
  const fs::path dir = fresh_dir("run_seed");
  ExperimentConfig cfg = micro_config(dir.string());

  const RunRecord rec = run_seed(cfg, 1);
  REQUIRE_FALSE(rec.resumed);
  REQUIRE(rec.metrics.size() == cfg.episodes);
  for (std::size_t i = 1; i < rec.metrics.size(); ++i) {
    REQUIRE(rec.metrics[i].episode > rec.metrics[i - 1].episode);
  }
  REQUIRE(rec.eval_returns.size() == cfg.eval_episodes);

  const fs::path run_dir = rec.dir;
  REQUIRE(fs::exists(run_dir / "config.json"));
  REQUIRE(fs::exists(run_dir / "metrics.csv"));
  REQUIRE(fs::exists(run_dir / "actions.csv"));
  REQUIRE(fs::exists(run_dir / "eval.csv"));
  REQUIRE(fs::exists(run_dir / "checkpoint.json"));

  // The persisted config reproduces the run configuration, seed included.
  nlohmann::json cj;
  std::ifstream(run_dir / "config.json") >> cj;
  REQUIRE(cj.at("seed") == 1);
  cj.erase("seed");
  REQUIRE(to_json(config_from_json(cj)) == to_json(cfg));

  // A second call sees the finished artifacts and does not retrain.
  const std::string metrics_before = slurp(run_dir / "metrics.csv");
  const RunRecord again = run_seed(cfg, 1);
  REQUIRE(again.resumed);
  REQUIRE(slurp(run_dir / "metrics.csv") == metrics_before);
  REQUIRE(again.eval_returns == rec.eval_returns);
}

TEST_CASE("identical config and seed give byte-identical artifacts") {
  const fs::path dir_a = fresh_dir("det_a");
  const fs::path dir_b = fresh_dir("det_b");
  ExperimentConfig a = micro_config(dir_a.string());
  ExperimentConfig b = micro_config(dir_b.string());

  // Different worker counts must not change any result byte.
  const auto recs_a = run(a, 1);
  const auto recs_b = run(b, 2);
  REQUIRE(recs_a.size() == 2);
  REQUIRE(recs_b.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const fs::path ra = recs_a[i].dir;
    const fs::path rb = recs_b[i].dir;
    REQUIRE(slurp(ra / "metrics.csv") == slurp(rb / "metrics.csv"));
    REQUIRE(slurp(ra / "actions.csv") == slurp(rb / "actions.csv"));
    REQUIRE(slurp(ra / "eval.csv") == slurp(rb / "eval.csv"));
    REQUIRE(slurp(ra / "checkpoint.json") == slurp(rb / "checkpoint.json"));
  }
  // Distinct seeds explore differently.
  REQUIRE(slurp(fs::path(recs_a[0].dir) / "metrics.csv") !=
          slurp(fs::path(recs_a[1].dir) / "metrics.csv"));
}

TEST_CASE("unwritable output directory fails before any training") {
  const fs::path dir = fresh_dir("unwritable");
  detail::write_file((dir / "blocker").string(), "not a directory\n");
  ExperimentConfig cfg = micro_config((dir / "blocker" / "runs").string());
  cfg.episodes = 100000;  // would take minutes if training actually started
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE_THROWS_AS(run_seed(cfg, 1), ConfigError);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  REQUIRE(ms < 1000);
}

TEST_CASE("zero-episode runs still persist an initial checkpoint") {
  const fs::path dir = fresh_dir("zero_ep");
  ExperimentConfig cfg = micro_config(dir.string());
  cfg.episodes = 0;
  const RunRecord rec = run_seed(cfg, 1);
  REQUIRE(rec.metrics.empty());
  REQUIRE(fs::exists(fs::path(rec.dir) / "checkpoint.json"));
  REQUIRE(metrics_from_csv((fs::path(rec.dir) / "metrics.csv").string())
              .empty());
}

namespace {

RunRecord fake_record(const std::string& algorithm, double s2,
                      std::uint64_t seed, std::vector<double> returns) {
  RunRecord r;
  r.config.scenario = "max_of_three";
  r.config.s2 = s2;
  r.config.algorithm = algorithm;
  r.seed = seed;
  r.eval_returns = std::move(returns);
  std::tie(r.eval_mean, r.eval_std) = detail::mean_std(r.eval_returns);
  return r;
}

}  // namespace

TEST_CASE("table cells match an independent recomputation") {
  std::vector<RunRecord> recs;
  recs.push_back(fake_record("nested", 3.0, 1, {9.0, 11.0}));   // mean 10
  recs.push_back(fake_record("nested", 3.0, 2, {12.0, 12.0}));  // mean 12
  recs.push_back(fake_record("marginal", 3.0, 1, {4.0, 4.0}));
  const auto tbl = make_table(recs, {"max_of_three(3)"});

  // Seed-level: means {10, 12} -> 11.00 +- sqrt(2) = 1.41.
  REQUIRE(tbl.csv.find("nested,11.00 ± 1.41") != std::string::npos);
  // Episode-level pool {9,11,12,12}: mean 11, std sqrt(2) as well.
  REQUIRE(tbl.csv.find("nested,11.00 ± 1.41,11.00 ± 1.41") !=
          std::string::npos);
  // Single seed: spread across seeds is zero by convention.
  REQUIRE(tbl.csv.find("marginal,4.00 ± 0.00,4.00 ± 0.00") !=
          std::string::npos);
  REQUIRE(tbl.warnings.empty());
  // Row order is nested, full, marginal; full is absent here.
  REQUIRE(tbl.csv.find("nested") < tbl.csv.find("marginal"));
}

TEST_CASE("a degenerate run renders as 10.00 +- 0.00") {
  std::vector<RunRecord> recs;
  recs.push_back(fake_record("nested", 3.0, 1, {10.0, 10.0, 10.0}));
  const auto tbl = make_table(recs, {"max_of_three(3)"});
  REQUIRE(tbl.csv.find("10.00 ± 0.00") != std::string::npos);
}

TEST_CASE("missing table cells render as an em dash and warn") {
  std::vector<RunRecord> recs;
  recs.push_back(fake_record("nested", 3.0, 1, {10.0}));
  const auto tbl =
      make_table(recs, {"max_of_three(3)", "max_of_three(1.5)"});
  REQUIRE(tbl.csv.find("—") != std::string::npos);
  REQUIRE(tbl.warnings.size() == 1);
  REQUIRE(tbl.warnings[0].find("max_of_three(1.5)") != std::string::npos);
  // Requested column order is respected, data or not.
  const auto header_end = tbl.csv.find('\n', tbl.csv.find('\n') + 1);
  const std::string header = tbl.csv.substr(0, header_end);
  REQUIRE(header.find("max_of_three(3)") < header.find("max_of_three(1.5)"));
}

TEST_CASE("scatter keeps every stride-th step of the window") {
  std::vector<ActionRow> log;
  for (std::size_t s = 1; s <= 3000; ++s) {
    log.push_back({s, {0.1 * s, -0.1 * s, 1.0}, 0.0});
  }
  const auto sc = make_scatter(log, 3, 1, 3000, 10.0);
  REQUIRE(sc.points == 1000);
  REQUIRE(sc.csv.rfind("# svnr-scatter-v1\n", 0) == 0);
  REQUIRE_FALSE(sc.svg_u1u2.empty());
  REQUIRE_FALSE(sc.svg_u1u3.empty());  // three coordinates, two projections
  // 2-D logs get only the (u1,u2) view.
  std::vector<ActionRow> flat;
  for (std::size_t s = 1; s <= 10; ++s) flat.push_back({s, {1.0, 2.0}, 0.0});
  const auto sc2 = make_scatter(flat, 1, 1, 10, 5.0);
  REQUIRE(sc2.svg_u1u3.empty());
  REQUIRE(sc2.points == 10);
}

TEST_CASE("scatter colors the best reward with the top bin") {
  std::vector<ActionRow> log;
  for (std::size_t s = 1; s <= 9; ++s) {
    log.push_back({s, {0.0, 0.0}, 0.0});
  }
  log.push_back({10, {1.0, 1.0}, 10.0});
  const auto sc = make_scatter(log, 1, 1, 10, 2.0);
  const std::string top = detail::reward_color(10.0, 0.0, 10.0);
  const std::string bottom = detail::reward_color(0.0, 0.0, 10.0);
  REQUIRE(top != bottom);
  // Exactly one marker wears the top-bin color.
  std::size_t count = 0;
  for (std::size_t pos = sc.svg_u1u2.find(top); pos != std::string::npos;
       pos = sc.svg_u1u2.find(top, pos + 1)) {
    ++count;
  }
  REQUIRE(count == 1);
  // A flat reward landscape defaults everything to the top bin.
  REQUIRE(detail::reward_color(5.0, 5.0, 5.0) == top);
}

TEST_CASE("curves aggregate seeds with a documented smoothing window") {
  std::vector<std::vector<MetricsRow>> seeds(2);
  for (std::size_t ep = 0; ep < 10; ++ep) {
    seeds[0].push_back({ep, 5.0, 1.0, 0.0, 0.0, 0});
    seeds[1].push_back({ep, 7.0, 1.0, 0.0, 0.0, 0});
  }
  const auto cur = make_curves(seeds, 1);
  REQUIRE(cur.csv.rfind("# svnr-curves-v1\n# smoothing_window=1\n", 0) == 0);
  // mean 6, sample std sqrt(2); band edges at 6 -+ 1.414...
  REQUIRE(cur.csv.find("0,6,1.4142135623730951") != std::string::npos);
  REQUIRE(cur.warnings.empty());
  REQUIRE(cur.svg.find("<polygon") != std::string::npos);
  REQUIRE(cur.svg.find("<polyline") != std::string::npos);
}

TEST_CASE("single-seed curves collapse the band to the mean") {
  std::vector<std::vector<MetricsRow>> seeds(1);
  for (std::size_t ep = 0; ep < 6; ++ep) {
    seeds[0].push_back({ep, static_cast<double>(ep), 1.0, 0.0, 0.0, 0});
  }
  const auto cur = make_curves(seeds, 1);
  // std column is exactly zero on every row: lo == hi == mean.
  REQUIRE(cur.csv.find("3,3,0,3,3") != std::string::npos);
}

TEST_CASE("curve smoothing is a trailing moving average") {
  std::vector<std::vector<MetricsRow>> seeds(1);
  seeds[0].push_back({0, 0.0, 1.0, 0.0, 0.0, 0});
  seeds[0].push_back({1, 10.0, 1.0, 0.0, 0.0, 0});
  seeds[0].push_back({2, 10.0, 1.0, 0.0, 0.0, 0});
  const auto cur = make_curves(seeds, 2);
  REQUIRE(cur.csv.find("# smoothing_window=2") != std::string::npos);
  REQUIRE(cur.csv.find("0,0,") != std::string::npos);    // first: own value
  REQUIRE(cur.csv.find("1,5,") != std::string::npos);    // (0+10)/2
  REQUIRE(cur.csv.find("2,10,") != std::string::npos);   // (10+10)/2
}

TEST_CASE("mismatched episode grids fall back to the common grid") {
  std::vector<std::vector<MetricsRow>> seeds(2);
  for (std::size_t ep = 0; ep < 10; ++ep) {
    seeds[0].push_back({ep, 1.0, 1.0, 0.0, 0.0, 0});
  }
  for (std::size_t ep = 0; ep < 10; ep += 2) {
    seeds[1].push_back({ep, 3.0, 1.0, 0.0, 0.0, 0});
  }
  const auto cur = make_curves(seeds, 1);
  REQUIRE(cur.warnings.size() == 1);
  // Five shared episodes: 0, 2, 4, 6, 8.
  std::size_t rows = 0;
  std::istringstream ss(cur.csv);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("episode", 0) != 0) {
      ++rows;
    }
  }
  REQUIRE(rows == 5);
}

TEST_CASE("cli maps config problems to exit 2 and success to 0") {
  REQUIRE(run_cli("--help") == 0);
  REQUIRE(run_cli("train") == 2);                     // missing --config
  REQUIRE(run_cli("train -c /no/such/file.json") == 2);
  REQUIRE(run_cli("transmogrify") == 2);              // unknown subcommand

  const fs::path dir = fresh_dir("cli_e2e");
  ExperimentConfig cfg = micro_config((dir / "runs").string());
  cfg.seeds = {1};
  nlohmann::json cj = to_json(cfg);
  detail::write_file((dir / "cfg.json").string(), cj.dump(2));
  REQUIRE(run_cli("train -c " + (dir / "cfg.json").string()) == 0);

  const fs::path run_dir =
      dir / "runs" / cfg.run_dir_name(1);
  REQUIRE(fs::exists(run_dir / "metrics.csv"));

  REQUIRE(run_cli("table -r " + (dir / "runs").string() + " -o " +
                  (dir / "table.csv").string()) == 0);
  REQUIRE(slurp(dir / "table.csv").rfind("# svnr-table-v1", 0) == 0);

  REQUIRE(run_cli("plot scatter -a " + (run_dir / "actions.csv").string() +
                  " --stride 1 --range 10 -o " + (dir / "sc").string()) == 0);
  REQUIRE(fs::exists(dir / "sc_u1u2.svg"));
  REQUIRE(fs::exists(dir / "sc_points.csv"));

  REQUIRE(run_cli("plot curves -r " + (dir / "runs").string() + " -w 4 -o " +
                  (dir / "cv").string()) == 0);

  REQUIRE(run_cli("eval -r " + run_dir.string() + " -e 3") == 0);

  // A bad config file is a config error, not a crash.
  detail::write_file((dir / "bad.json").string(), "{\"algorithm\":\"x\"}");
  REQUIRE(run_cli("train -c " + (dir / "bad.json").string()) == 2);
  detail::write_file((dir / "mangled.json").string(), "{nope");
  REQUIRE(run_cli("train -c " + (dir / "mangled.json").string()) == 2);
}
