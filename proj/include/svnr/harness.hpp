#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "svnr/agent.hpp"
#include "svnr/envs.hpp"

namespace svnr {

// Bad or inconsistent experiment descriptions; maps to process exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runtime failures after a config was accepted; maps to exit code 3.
struct HarnessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string fmtg(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

// --- experiment description -----------------------------------------------------

// One experiment: a scenario, an algorithm variant, and the full
// hyperparameter block, run over a list of seeds. Every field has a default;
// serialization round-trips losslessly through to_json/from_json.
struct ExperimentConfig {
  std::string scenario = "max_of_three";  // make_env name
  double s2 = 3.0;                        // bowl width for max_of_three
  std::string algorithm = "nested";       // nested | full | marginal
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t episodes = 5000;
  std::size_t eval_episodes = 100;  // shared-noise episodes per seed
  std::string output_dir = "runs";
  TrainConfig hyper;  // flavor/episodes/seed fields are overridden per run
  // Execution-extraction knobs (exact-mode tooling); carried for completeness.
  std::size_t negotiation_rounds = 100;
  double negotiation_eps = 0.1;

  Flavor flavor() const {
    if (algorithm == "nested") return Flavor::nested;
    if (algorithm == "full") return Flavor::full;
    if (algorithm == "marginal") return Flavor::marginal;
    throw ConfigError("config: unknown algorithm '" + algorithm + "'");
  }

  void validate() const {
    flavor();
    if (scenario != "max_of_three" && scenario != "two_modalities" &&
        scenario != "particle_gather") {
      throw ConfigError("config: unknown scenario '" + scenario + "'");
    }
    if (seeds.empty()) throw ConfigError("config: need at least one seed");
    if (eval_episodes == 0) {
      throw ConfigError("config: eval_episodes must be positive");
    }
    try {
      hyper.validate();
    } catch (const AgentError& e) {
      throw ConfigError(e.what());
    }
  }

  // Scenario cell label used by tables: the bowl width is part of the cell.
  std::string scenario_label() const {
    if (scenario == "max_of_three") {
      return scenario + "(" + detail::fmtg(s2) + ")";
    }
    return scenario;
  }

  std::string run_dir_name(std::uint64_t seed) const {
    std::string s = scenario;
    if (scenario == "max_of_three") s += "-s2-" + detail::fmtg(s2);
    return s + "_" + algorithm + "_s" + std::to_string(seed);
  }
};

inline nlohmann::json hyper_to_json(const TrainConfig& c) {
  return {
      {"m_particles", c.m_particles},
      {"value_samples", c.value_samples},
      {"policy_lr", c.policy_lr},
      {"critic_lr", c.critic_lr},
      {"batch", c.batch},
      {"buffer_capacity", c.buffer_capacity},
      {"target_sync", c.target_sync},
      {"alpha_base", c.alpha.base},
      {"alpha_spike", c.alpha.spike},
      {"alpha_rate", c.alpha.rate},
      {"alpha_delay", c.alpha.delay},
      {"warmup_episodes", c.warmup_episodes},
      {"noise_mode", c.noise_mode == TrainConfig::NoiseMode::per_episode
                         ? "per_episode"
                         : "per_step"},
      {"update_every", c.update_every},
      {"updates_per_round", c.updates_per_round},
      {"policy_states", c.policy_states},
      {"policy_hidden", c.policy_hidden},
      {"critic_hidden", c.critic_hidden},
      {"activation", c.activation == Act::relu
                         ? "relu"
                         : (c.activation == Act::tanh ? "tanh" : "linear")},
      {"kernel_mode",
       c.kernel.mode == KernelConfig::Mode::median ? "median" : "fixed"},
      {"kernel_fixed_h", c.kernel.fixed_h},
      {"kernel_floor", c.kernel.floor},
      {"discount", c.discount},
      {"checkpoint_every", c.checkpoint_every},
  };
}

inline TrainConfig hyper_from_json(const nlohmann::json& j) {
  TrainConfig c;
  static const std::set<std::string> known = {
      "m_particles",     "value_samples",  "policy_lr",
      "critic_lr",       "batch",          "buffer_capacity",
      "target_sync",     "alpha_base",     "alpha_spike",
      "alpha_rate",      "alpha_delay",    "warmup_episodes",
      "noise_mode",      "update_every",   "updates_per_round",
      "policy_states",   "policy_hidden",  "critic_hidden",
      "activation",      "kernel_mode",    "kernel_fixed_h",
      "kernel_floor",    "discount",       "checkpoint_every",
  };
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError("config: unknown hyperparameter '" + key + "'");
    }
  }
  c.m_particles = j.value("m_particles", c.m_particles);
  c.value_samples = j.value("value_samples", c.value_samples);
  c.policy_lr = j.value("policy_lr", c.policy_lr);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  c.batch = j.value("batch", c.batch);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.target_sync = j.value("target_sync", c.target_sync);
  c.alpha.base = j.value("alpha_base", c.alpha.base);
  c.alpha.spike = j.value("alpha_spike", c.alpha.spike);
  c.alpha.rate = j.value("alpha_rate", c.alpha.rate);
  c.alpha.delay = j.value("alpha_delay", c.alpha.delay);
  c.warmup_episodes = j.value("warmup_episodes", c.warmup_episodes);
  const std::string nm = j.value("noise_mode", std::string("per_episode"));
  if (nm == "per_episode") {
    c.noise_mode = TrainConfig::NoiseMode::per_episode;
  } else if (nm == "per_step") {
    c.noise_mode = TrainConfig::NoiseMode::per_step;
  } else {
    throw ConfigError("config: unknown noise_mode '" + nm + "'");
  }
  c.update_every = j.value("update_every", c.update_every);
  c.updates_per_round = j.value("updates_per_round", c.updates_per_round);
  c.policy_states = j.value("policy_states", c.policy_states);
  c.policy_hidden = j.value("policy_hidden", c.policy_hidden);
  c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
  const std::string act = j.value("activation", std::string("relu"));
  if (act == "relu") {
    c.activation = Act::relu;
  } else if (act == "tanh") {
    c.activation = Act::tanh;
  } else if (act == "linear") {
    c.activation = Act::linear;
  } else {
    throw ConfigError("config: unknown activation '" + act + "'");
  }
  const std::string km = j.value("kernel_mode", std::string("median"));
  if (km == "median") {
    c.kernel.mode = KernelConfig::Mode::median;
  } else if (km == "fixed") {
    c.kernel.mode = KernelConfig::Mode::fixed;
  } else {
    throw ConfigError("config: unknown kernel_mode '" + km + "'");
  }
  c.kernel.fixed_h = j.value("kernel_fixed_h", c.kernel.fixed_h);
  c.kernel.floor = j.value("kernel_floor", c.kernel.floor);
  c.discount = j.value("discount", c.discount);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"scenario", c.scenario},
      {"s2", c.s2},
      {"algorithm", c.algorithm},
      {"seeds", c.seeds},
      {"episodes", c.episodes},
      {"eval_episodes", c.eval_episodes},
      {"output_dir", c.output_dir},
      {"hyperparameters", hyper_to_json(c.hyper)},
      {"negotiation_rounds", c.negotiation_rounds},
      {"negotiation_eps", c.negotiation_eps},
  };
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "scenario",       "s2",
      "algorithm",      "seeds",
      "episodes",       "eval_episodes",
      "output_dir",     "hyperparameters",
      "negotiation_rounds", "negotiation_eps",
  };
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  ExperimentConfig c;
  c.scenario = j.value("scenario", c.scenario);
  c.s2 = j.value("s2", c.s2);
  c.algorithm = j.value("algorithm", c.algorithm);
  c.seeds = j.value("seeds", c.seeds);
  c.episodes = j.value("episodes", c.episodes);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("hyperparameters")) {
    c.hyper = hyper_from_json(j.at("hyperparameters"));
  }
  c.negotiation_rounds = j.value("negotiation_rounds", c.negotiation_rounds);
  c.negotiation_eps = j.value("negotiation_eps", c.negotiation_eps);
  c.validate();
  return c;
}

// --- CSV schemas -----------------------------------------------------------------

inline constexpr const char* kMetricsSchema = "# svnr-metrics-v1";
inline constexpr const char* kActionsSchema = "# svnr-actions-v1";
inline constexpr const char* kEvalSchema = "# svnr-eval-v1";
inline constexpr const char* kTableSchema = "# svnr-table-v1";
inline constexpr const char* kCurvesSchema = "# svnr-curves-v1";
inline constexpr const char* kScatterSchema = "# svnr-scatter-v1";

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsSchema) + "\n" +
                    "episode,return,alpha,critic_loss,max_direction_norm,"
                    "clamp_count\n";
  for (const auto& r : rows) {
    out += std::to_string(r.episode) + "," + detail::fmt17(r.ep_return) + "," +
           detail::fmt17(r.alpha) + "," + detail::fmt17(r.critic_loss) + "," +
           detail::fmt17(r.max_direction_norm) + "," +
           std::to_string(r.clamp_count) + "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

// Schema-checked CSV body: drops the version line, the header row, and any
// further comment lines; returns data rows split on commas.
inline std::vector<std::vector<std::string>> read_csv(
    const std::string& path, const std::string& schema) {
  std::ifstream in(path);
  if (!in) throw HarnessError("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != schema) {
    throw HarnessError("csv: " + path + " does not start with " + schema);
  }
  std::vector<std::vector<std::string>> rows;
  bool header_skipped = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HarnessError("cannot write " + path);
  out << content;
  if (!out) throw HarnessError("short write to " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::vector<MetricsRow> metrics_from_csv(const std::string& path) {
  std::vector<MetricsRow> rows;
  for (const auto& f : detail::read_csv(path, kMetricsSchema)) {
    if (f.size() != 6) throw HarnessError("metrics csv: bad row in " + path);
    MetricsRow r;
    r.episode = std::stoull(f[0]);
    r.ep_return = std::stod(f[1]);
    r.alpha = std::stod(f[2]);
    r.critic_loss = std::stod(f[3]);
    r.max_direction_norm = std::stod(f[4]);
    r.clamp_count = std::stoull(f[5]);
    rows.push_back(r);
  }
  return rows;
}

inline std::string actions_to_csv(
    const std::vector<std::pair<std::vector<double>, double>>& log) {
  std::string out = std::string(kActionsSchema) + "\n";
  const std::size_t d = log.empty() ? 0 : log.front().first.size();
  out += "step";
  for (std::size_t j = 0; j < d; ++j) {
    out += ",u" + std::to_string(j + 1);
  }
  out += ",reward\n";
  for (std::size_t i = 0; i < log.size(); ++i) {
    out += std::to_string(i + 1);
    for (double v : log[i].first) out += "," + detail::fmt17(v);
    out += "," + detail::fmt17(log[i].second) + "\n";
  }
  return out;
}

struct ActionRow {
  std::size_t step = 0;
  std::vector<double> u;
  double reward = 0.0;
};

inline std::vector<ActionRow> actions_from_csv(const std::string& path) {
  std::vector<ActionRow> rows;
  for (const auto& f : detail::read_csv(path, kActionsSchema)) {
    if (f.size() < 3) throw HarnessError("actions csv: bad row in " + path);
    ActionRow r;
    r.step = std::stoull(f.front());
    for (std::size_t j = 1; j + 1 < f.size(); ++j) {
      r.u.push_back(std::stod(f[j]));
    }
    r.reward = std::stod(f.back());
    rows.push_back(r);
  }
  return rows;
}

inline std::string eval_to_csv(const std::vector<double>& returns) {
  std::string out = std::string(kEvalSchema) + "\nepisode,return\n";
  for (std::size_t i = 0; i < returns.size(); ++i) {
    out += std::to_string(i) + "," + detail::fmt17(returns[i]) + "\n";
  }
  return out;
}

inline std::vector<double> eval_from_csv(const std::string& path) {
  std::vector<double> out;
  for (const auto& f : detail::read_csv(path, kEvalSchema)) {
    if (f.size() != 2) throw HarnessError("eval csv: bad row in " + path);
    out.push_back(std::stod(f[1]));
  }
  return out;
}

// --- run orchestration -------------------------------------------------------------

struct RunRecord {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string dir;
  std::vector<MetricsRow> metrics;
  std::vector<double> eval_returns;
  double eval_mean = 0.0;
  double eval_std = 0.0;
  bool resumed = false;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x / static_cast<double>(xs.size());
  double var = 0.0;
  if (xs.size() > 1) {
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
  }
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// Offset separating evaluation RNG streams from training streams.
inline constexpr std::uint64_t kEvalSeedOffset = 900001;

// Trains one seed and persists config.json, metrics.csv, actions.csv,
// eval.csv, and checkpoint.json into its run directory. A directory that
// already holds a complete set of artifacts for this config is loaded
// instead of retrained (resume-by-skip; partial runs restart from scratch).
inline RunRecord run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.output_dir) / cfg.run_dir_name(seed);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw ConfigError("output dir not writable: " + dir.string());
  }

  RunRecord rec;
  rec.config = cfg;
  rec.seed = seed;
  rec.dir = dir.string();

  nlohmann::json cj = to_json(cfg);
  cj["seed"] = seed;
  const std::string config_path = (dir / "config.json").string();
  try {
    detail::write_file(config_path, cj.dump(2) + "\n");
  } catch (const HarnessError&) {
    throw ConfigError("output dir not writable: " + dir.string());
  }

  const std::string metrics_path = (dir / "metrics.csv").string();
  const std::string actions_path = (dir / "actions.csv").string();
  const std::string eval_path = (dir / "eval.csv").string();
  const std::string ckpt_path = (dir / "checkpoint.json").string();

  if (fs::exists(metrics_path) && fs::exists(eval_path) &&
      fs::exists(ckpt_path)) {
    auto rows = metrics_from_csv(metrics_path);
    if (rows.size() == cfg.episodes) {
      rec.metrics = std::move(rows);
      rec.eval_returns = eval_from_csv(eval_path);
      std::tie(rec.eval_mean, rec.eval_std) =
          detail::mean_std(rec.eval_returns);
      rec.resumed = true;
      return rec;
    }
  }

  auto env = make_env(cfg.scenario, seed, cfg.s2);
  TrainConfig tc = cfg.hyper;
  tc.flavor = cfg.flavor();
  tc.episodes = cfg.episodes;
  tc.seed = seed;

  TrainResult res = [&] {
    try {
      return train(*env, tc);
    } catch (const TrainError& e) {
      // Persist the last healthy snapshot next to the config for forensics.
      detail::write_file((dir / "checkpoint.failed.json").string(),
                         e.checkpoint.dump(2) + "\n");
      throw HarnessError(e.what());
    }
  }();

  auto eval_env = make_env(cfg.scenario, seed, cfg.s2);
  const EvalResult ev =
      evaluate(res.bundle, *eval_env, cfg.eval_episodes,
               EvalMode::shared_noise, seed + kEvalSeedOffset);

  rec.metrics = res.metrics;
  rec.eval_returns = ev.returns;
  rec.eval_mean = ev.mean;
  rec.eval_std = ev.stddev;

  detail::write_file(metrics_path, metrics_to_csv(res.metrics));
  detail::write_file(actions_path, actions_to_csv(res.action_log));
  detail::write_file(eval_path, eval_to_csv(ev.returns));
  detail::write_file(ckpt_path,
                     save_checkpoint(res.bundle, res.critic).dump(2) + "\n");
  return rec;
}

// Runs every seed, fanning out over `jobs` workers; records come back in
// seed-list order. Workers share nothing but the filesystem.
inline std::vector<RunRecord> run(const ExperimentConfig& cfg,
                                  std::size_t jobs = 1) {
  cfg.validate();
  if (jobs == 0) jobs = 1;
  jobs = std::min(jobs, cfg.seeds.size());
  std::vector<RunRecord> records(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfg.seeds.size()) return;
      try {
        records[i] = run_seed(cfg, cfg.seeds[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return records;
}

// --- evaluation table ----------------------------------------------------------------

struct TableResult {
  std::string csv;
  std::string text;
  std::vector<std::string> warnings;
};

// Seed-level cells (mean +- std over per-seed means) with episode-level
// pooled columns appended; rows ordered nested, full, marginal.
inline TableResult make_table(const std::vector<RunRecord>& records,
                              const std::vector<std::string>& scenarios) {
  struct Cell {
    std::vector<double> seed_means;
    std::vector<double> pooled;
  };
  std::map<std::string, std::map<std::string, Cell>> grid;
  for (const auto& r : records) {
    Cell& c = grid[r.config.algorithm][r.config.scenario_label()];
    c.seed_means.push_back(r.eval_mean);
    c.pooled.insert(c.pooled.end(), r.eval_returns.begin(),
                    r.eval_returns.end());
  }

  TableResult out;
  const std::vector<std::string> variant_order = {"nested", "full",
                                                  "marginal"};
  std::vector<std::string> variants;
  for (const auto& v : variant_order) {
    if (grid.count(v)) variants.push_back(v);
  }

  std::vector<std::vector<std::string>> cells;  // [row][col]
  std::vector<std::string> header = {"variant"};
  for (const auto& s : scenarios) header.push_back(s);
  for (const auto& s : scenarios) header.push_back(s + " (episode-level)");

  for (const auto& v : variants) {
    std::vector<std::string> row = {v};
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& s : scenarios) {
        const auto it = grid[v].find(s);
        if (it == grid[v].end() || it->second.seed_means.empty()) {
          row.push_back("—");
          if (pass == 0) {
            out.warnings.push_back("missing cell: " + v + " / " + s);
          }
          continue;
        }
        const auto& src =
            pass == 0 ? it->second.seed_means : it->second.pooled;
        const auto [m, sd] = detail::mean_std(src);
        row.push_back(detail::fmt2(m) + " ± " + detail::fmt2(sd));
      }
    }
    cells.push_back(std::move(row));
  }

  out.csv = std::string(kTableSchema) + "\n";
  for (std::size_t j = 0; j < header.size(); ++j) {
    out.csv += (j ? "," : "") + header[j];
  }
  out.csv += "\n";
  for (const auto& row : cells) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out.csv += (j ? "," : "") + row[j];
    }
    out.csv += "\n";
  }

  // Aligned text form. Note: byte length of "±"/"—" exceeds their width; pad
  // by display width, approximating multibyte glyphs as one column.
  const auto display_width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) {
      if ((ch & 0xC0) != 0x80) ++w;  // count non-continuation bytes
    }
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (std::size_t j = 0; j < header.size(); ++j) {
    widths[j] = display_width(header[j]);
    for (const auto& row : cells) {
      widths[j] = std::max(widths[j], display_width(row[j]));
    }
  }
  const auto pad = [&](const std::string& s, std::size_t w) {
    return s + std::string(w - display_width(s), ' ');
  };
  for (std::size_t j = 0; j < header.size(); ++j) {
    out.text += pad(header[j], widths[j]) + (j + 1 < header.size() ? "  " : "");
  }
  out.text += "\n";
  for (const auto& row : cells) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out.text += pad(row[j], widths[j]) + (j + 1 < row.size() ? "  " : "");
    }
    out.text += "\n";
  }
  return out;
}

// --- SVG helpers -----------------------------------------------------------------------

namespace detail {

struct SvgCanvas {
  double width = 640, height = 480, margin = 56;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  std::string body;

  double px(double x) const {
    const double t = (x - xmin) / (xmax - xmin);
    return margin + t * (width - 2 * margin);
  }
  double py(double y) const {
    const double t = (y - ymin) / (ymax - ymin);
    return height - margin - t * (height - 2 * margin);
  }

  void frame(const std::string& xlabel, const std::string& ylabel,
             const std::string& title) {
    char buf[512];
    std::snprintf(
        buf, sizeof buf,
        "<rect x='%.2f' y='%.2f' width='%.2f' height='%.2f' fill='none' "
        "stroke='#444'/>\n",
        margin, margin, width - 2 * margin, height - 2 * margin);
    body += buf;
    const auto label = [&](double x, double y, const std::string& s,
                           const char* anchor) {
      char b2[512];
      std::snprintf(b2, sizeof b2,
                    "<text x='%.2f' y='%.2f' font-size='12' "
                    "text-anchor='%s' fill='#222'>%s</text>\n",
                    x, y, anchor, s.c_str());
      body += b2;
    };
    label(width / 2, margin - 12, title, "middle");
    label(width / 2, height - 10, xlabel, "middle");
    label(14, height / 2, ylabel, "middle");
    label(margin, height - margin + 16, fmtg(xmin), "middle");
    label(width - margin, height - margin + 16, fmtg(xmax), "middle");
    label(margin - 6, height - margin + 4, fmtg(ymin), "end");
    label(margin - 6, margin + 4, fmtg(ymax), "end");
  }

  void circle(double x, double y, double r, const std::string& color) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<circle cx='%.2f' cy='%.2f' r='%.2f' fill='%s' "
                  "fill-opacity='0.75'/>\n",
                  px(x), py(y), r, color.c_str());
    body += buf;
  }

  void polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& color, double stroke) {
    std::string s = "<polyline fill='none' stroke='" + color + "' " +
                    "stroke-width='" + fmtg(stroke) + "' points='";
    for (const auto& [x, y] : pts) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x), py(y));
      s += buf;
    }
    s += "'/>\n";
    body += s;
  }

  void polygon(const std::vector<std::pair<double, double>>& pts,
               const std::string& color) {
    std::string s = "<polygon fill='" + color + "' fill-opacity='0.25' "
                    "stroke='none' points='";
    for (const auto& [x, y] : pts) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x), py(y));
      s += buf;
    }
    s += "'/>\n";
    body += s;
  }

  std::string finish() const {
    char head[256];
    std::snprintf(head, sizeof head,
                  "<svg xmlns='http://www.w3.org/2000/svg' width='%.0f' "
                  "height='%.0f' viewBox='0 0 %.0f %.0f'>\n"
                  "<rect width='100%%' height='100%%' fill='white'/>\n",
                  width, height, width, height);
    return std::string(head) + body + "</svg>\n";
  }
};

// Cold-to-hot ramp over 8 bins; the top bin is the warmest color.
inline std::string reward_color(double reward, double lo, double hi) {
  int bin = 7;
  if (hi > lo) {
    bin = static_cast<int>(std::floor((reward - lo) / (hi - lo) * 8.0));
    bin = std::max(0, std::min(7, bin));
  }
  const double t = static_cast<double>(bin) / 7.0;
  const int r = static_cast<int>(std::lround(40 + 215 * t));
  const int g = 64;
  const int b = static_cast<int>(std::lround(255 - 215 * t));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

// --- scatter figure ------------------------------------------------------------------

struct ScatterResult {
  std::string csv;
  std::string svg_u1u2;
  std::string svg_u1u3;  // empty when the joint action has fewer than 3 dims
  std::size_t points = 0;
};

// Samples every `stride`-th logged step in [from, to] (1-based, inclusive)
// and projects the joint actions onto (u1,u2) and (u1,u3), colored by reward.
inline ScatterResult make_scatter(const std::vector<ActionRow>& log,
                                  std::size_t stride, std::size_t from,
                                  std::size_t to, double axis_range) {
  if (log.empty()) throw HarnessError("scatter: empty action log");
  if (stride == 0) throw HarnessError("scatter: stride must be positive");
  if (from == 0) from = 1;

  std::vector<const ActionRow*> pick;
  for (const auto& r : log) {
    if (r.step < from || r.step > to) continue;
    if ((r.step - from) % stride != 0) continue;
    pick.push_back(&r);
  }
  ScatterResult out;
  out.points = pick.size();

  const std::size_t d = log.front().u.size();
  out.csv = std::string(kScatterSchema) + "\nstep";
  for (std::size_t j = 0; j < d; ++j) out.csv += ",u" + std::to_string(j + 1);
  out.csv += ",reward\n";
  double rlo = 0.0, rhi = 0.0;
  if (!pick.empty()) {
    rlo = rhi = pick.front()->reward;
  }
  for (const auto* r : pick) {
    out.csv += std::to_string(r->step);
    for (double v : r->u) out.csv += "," + detail::fmt17(v);
    out.csv += "," + detail::fmt17(r->reward) + "\n";
    rlo = std::min(rlo, r->reward);
    rhi = std::max(rhi, r->reward);
  }

  const auto project = [&](std::size_t cx, std::size_t cy,
                           const std::string& title) {
    detail::SvgCanvas svg;
    svg.xmin = -axis_range;
    svg.xmax = axis_range;
    svg.ymin = -axis_range;
    svg.ymax = axis_range;
    svg.frame("u" + std::to_string(cx + 1), "u" + std::to_string(cy + 1),
              title);
    for (const auto* r : pick) {
      svg.circle(r->u[cx], r->u[cy], 2.4,
                 detail::reward_color(r->reward, rlo, rhi));
    }
    return svg.finish();
  };
  if (d >= 2) out.svg_u1u2 = project(0, 1, "joint actions (u1, u2)");
  if (d >= 3) out.svg_u1u3 = project(0, 2, "joint actions (u1, u3)");
  return out;
}

// --- learning curves -------------------------------------------------------------------

struct CurvesResult {
  std::string csv;
  std::string svg;
  std::vector<std::string> warnings;
};

// Mean line with a +-1 sample-std band across seeds, after a trailing moving
// average of `window` episodes (window recorded in the CSV header). Seeds on
// different episode grids are cut down to the episodes common to all.
inline CurvesResult make_curves(
    const std::vector<std::vector<MetricsRow>>& seeds, std::size_t window = 1) {
  if (seeds.empty()) throw HarnessError("curves: no seed data");
  if (window == 0) window = 1;
  CurvesResult out;

  std::map<std::size_t, std::size_t> episode_count;
  for (const auto& rows : seeds) {
    for (const auto& r : rows) episode_count[r.episode] += 1;
  }
  std::vector<std::size_t> grid;
  for (const auto& [ep, count] : episode_count) {
    if (count == seeds.size()) grid.push_back(ep);
  }
  bool mismatched = false;
  for (const auto& rows : seeds) {
    if (rows.size() != grid.size()) mismatched = true;
  }
  if (mismatched) {
    out.warnings.push_back(
        "curves: episode grids differ; using the common grid of " +
        std::to_string(grid.size()) + " episodes");
  }
  if (grid.empty()) throw HarnessError("curves: no common episodes");

  // Per-seed return series on the common grid, smoothed.
  std::vector<std::vector<double>> series(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    std::map<std::size_t, double> by_ep;
    for (const auto& r : seeds[i]) by_ep[r.episode] = r.ep_return;
    std::vector<double>& s = series[i];
    s.reserve(grid.size());
    for (std::size_t ep : grid) s.push_back(by_ep[ep]);
    std::vector<double> smooth(s.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      acc += s[k];
      if (k >= window) acc -= s[k - window];
      smooth[k] = acc / static_cast<double>(std::min(k + 1, window));
    }
    s = std::move(smooth);
  }

  out.csv = std::string(kCurvesSchema) + "\n# smoothing_window=" +
            std::to_string(window) + "\nepisode,mean,std,lo,hi\n";
  std::vector<std::pair<double, double>> mean_pts;
  std::vector<std::pair<double, double>> band;
  std::vector<std::pair<double, double>> band_back;
  double ymin = 1e300, ymax = -1e300;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<double> xs;
    for (const auto& s : series) xs.push_back(s[k]);
    const auto [m, sd] = detail::mean_std(xs);
    const double ep = static_cast<double>(grid[k]);
    out.csv += std::to_string(grid[k]) + "," + detail::fmt17(m) + "," +
               detail::fmt17(sd) + "," + detail::fmt17(m - sd) + "," +
               detail::fmt17(m + sd) + "\n";
    mean_pts.push_back({ep, m});
    band.push_back({ep, m + sd});
    band_back.push_back({ep, m - sd});
    ymin = std::min(ymin, m - sd);
    ymax = std::max(ymax, m + sd);
  }
  if (ymax <= ymin) ymax = ymin + 1.0;

  detail::SvgCanvas svg;
  svg.xmin = static_cast<double>(grid.front());
  svg.xmax = static_cast<double>(grid.back() > grid.front() ? grid.back()
                                                            : grid.front() + 1);
  svg.ymin = ymin;
  svg.ymax = ymax;
  svg.frame("episode", "return",
            "training return (window=" + std::to_string(window) + ")");
  std::vector<std::pair<double, double>> poly = band;
  for (auto it = band_back.rbegin(); it != band_back.rend(); ++it) {
    poly.push_back(*it);
  }
  svg.polygon(poly, "#4466cc");
  svg.polyline(mean_pts, "#224499", 1.6);
  out.svg = svg.finish();
  return out;
}

}  // namespace svnr
