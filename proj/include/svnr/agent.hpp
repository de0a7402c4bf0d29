#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "svnr/envs.hpp"
#include "svnr/graph.hpp"
#include "svnr/kernels.hpp"
#include "svnr/negotiation.hpp"
#include "svnr/rng.hpp"

namespace svnr {

struct AgentError : std::runtime_error {
  explicit AgentError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an update produces non-finite numbers; carries the most recent
// healthy parameter snapshot so callers can persist it.
struct TrainError : AgentError {
  nlohmann::json checkpoint;
  TrainError(const std::string& what, nlohmann::json ckpt)
      : AgentError(what), checkpoint(std::move(ckpt)) {}
};

// --- replay -------------------------------------------------------------------

struct Transition {
  std::vector<double> state;
  std::vector<double> action;  // flat joint action, agent blocks ascending
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

// Fixed-capacity ring; push overwrites the oldest record once full.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : cap_(capacity) {
    if (capacity == 0) throw AgentError("replay: zero capacity");
    data_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(Transition t) {
    if (!std::isfinite(t.reward)) throw AgentError("replay: non-finite reward");
    if (data_.size() < cap_) {
      data_.push_back(std::move(t));
    } else {
      data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % cap_;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return cap_; }
  const Transition& at(std::size_t i) const { return data_[i]; }
  const Transition& sample(Rng& rng) const {
    if (data_.empty()) throw AgentError("replay: sample from empty buffer");
    return data_[rng.below(data_.size())];
  }

 private:
  std::size_t cap_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

// --- temperature schedule ------------------------------------------------------

// alpha(step) = base + exp(-rate * max(step - delay, 0)) * spike, with step
// counting completed episodes.
struct AlphaSchedule {
  double base = 1.0;  // alpha'
  double spike = 500.0;
  double rate = 0.1;
  std::size_t delay = 10;
};

inline double anneal_alpha(const AlphaSchedule& s, std::size_t step) {
  if (s.base <= 0.0) throw AgentError("alpha schedule: base must be positive");
  const double t = static_cast<double>(step > s.delay ? step - s.delay : 0);
  return s.base + std::exp(-s.rate * t) * s.spike;
}

// --- optimizer ----------------------------------------------------------------

// Momentum-free adaptive-moment updates: second-moment scaling only.
class AdaptiveMoment {
 public:
  explicit AdaptiveMoment(double lr, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta2_(beta2), eps_(eps) {}

  void step(Graph& g, const std::vector<std::vector<double>>& grads) {
    if (grads.size() != g.num_params()) {
      throw AgentError("optimizer: gradient count mismatch");
    }
    if (v_.empty()) {
      v_.resize(grads.size());
      for (std::size_t p = 0; p < grads.size(); ++p) {
        v_[p].assign(grads[p].size(), 0.0);
      }
    }
    ++t_;
    const double bias = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < grads.size(); ++p) {
      Tensor& w = g.param_value(p);
      for (std::size_t j = 0; j < w.data.size(); ++j) {
        const double gj = grads[p][j];
        v_[p][j] = beta2_ * v_[p][j] + (1.0 - beta2_) * gj * gj;
        w.data[j] -= lr_ * gj / (std::sqrt(v_[p][j] / bias) + eps_);
      }
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> v_;
};

namespace detail {

inline std::vector<std::vector<double>> param_grads(const Graph& g) {
  std::vector<std::vector<double>> out(g.num_params());
  for (std::size_t p = 0; p < g.num_params(); ++p) {
    out[p] = g.param_gradient(p).data;
  }
  return out;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace detail

// --- policy bundle -------------------------------------------------------------

struct PolicyConfig {
  NegotiationSchedule schedule;  // dims = per-agent action widths
  std::size_t state_dim = 1;
  std::vector<double> bounds;  // action bound per agent
  std::vector<int> hidden = {64, 64};
  Act activation = Act::relu;
  std::uint64_t seed = 0;
};

// Per-agent noise-to-action samplers u_i = bound_i * tanh(net_i(row)), where
// row = [state | own noise | noises of C_i \ {i} in ascending agent order].
class PolicyBundle {
 public:
  explicit PolicyBundle(PolicyConfig cfg) : cfg_(std::move(cfg)) {
    const std::size_t n = cfg_.schedule.num_agents;
    if (n == 0) throw AgentError("policy bundle: no agents");
    if (cfg_.bounds.size() != n) {
      throw AgentError("policy bundle: need one action bound per agent");
    }
    // Custom sets must admit an ordering witness; the named marginal flavor
    // runs as an ablation despite having none.
    if (cfg_.schedule.flavor == Flavor::custom &&
        !cfg_.schedule.witness().valid) {
      throw AgentError("policy bundle: schedule admits no ordering witness");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t own = cfg_.schedule.dims[i];
      const std::size_t blanket = cfg_.schedule.blanket_coords(i).size();
      std::vector<int> sizes;
      sizes.push_back(static_cast<int>(cfg_.state_dim + own + blanket));
      for (int h : cfg_.hidden) sizes.push_back(h);
      sizes.push_back(static_cast<int>(own));
      Graph g = mlp({sizes, cfg_.activation, cfg_.seed + 1000003 * (i + 1)});
      g.set_output(g.scale(g.tanh(g.output()), cfg_.bounds[i]));
      nets_.push_back(std::move(g));
    }
  }

  std::size_t num_agents() const { return nets_.size(); }
  std::size_t state_dim() const { return cfg_.state_dim; }
  std::size_t action_dim() const { return cfg_.schedule.joint_dim(); }
  double bound(std::size_t agent) const { return cfg_.bounds[agent]; }
  const NegotiationSchedule& schedule() const { return cfg_.schedule; }
  Graph& net(std::size_t agent) { return nets_[agent]; }
  const Graph& net(std::size_t agent) const { return nets_[agent]; }

  // Input rows for one agent given batched states (B x S) and noises (B x D).
  Tensor assemble_input(std::size_t agent, const Tensor& states,
                        const Tensor& noises) const {
    const std::size_t b = states.rows();
    if (noises.rows() != b) {
      throw AgentError("policy bundle: state/noise batch mismatch");
    }
    const auto own = cfg_.schedule.coords(agent);
    const auto blanket = cfg_.schedule.blanket_coords(agent);
    Tensor in({b, cfg_.state_dim + own.size() + blanket.size()});
    for (std::size_t r = 0; r < b; ++r) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < cfg_.state_dim; ++j) {
        in.at(r, c++) = states.at(r, j);
      }
      for (std::size_t j : own) in.at(r, c++) = noises.at(r, j);
      for (std::size_t j : blanket) in.at(r, c++) = noises.at(r, j);
    }
    return in;
  }

  // Squashed actions for one agent; B x d_i.
  Tensor agent_actions(std::size_t agent, const Tensor& states,
                       const Tensor& noises) {
    Bindings b{{"x", assemble_input(agent, states, noises)}};
    return nets_[agent].forward(b);
  }

  // Full joint actions; B x D.
  Tensor joint_actions(const Tensor& states, const Tensor& noises) {
    Tensor out({states.rows(), action_dim()});
    for (std::size_t i = 0; i < num_agents(); ++i) {
      const Tensor a = agent_actions(i, states, noises);
      const auto own = cfg_.schedule.coords(i);
      for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t j = 0; j < own.size(); ++j) {
          out.at(r, own[j]) = a.at(r, j);
        }
      }
    }
    return out;
  }

  // Standard normal noise, drawn row-major so batch layouts reproduce.
  Tensor draw_noises(std::size_t rows, Rng& rng) const {
    Tensor n({rows, action_dim()});
    for (double& v : n.data) v = rng.normal();
    return n;
  }

 private:
  PolicyConfig cfg_;
  std::vector<Graph> nets_;
};

// One shared-noise draw: every agent reads the common noise vector.
inline std::pair<std::vector<double>, std::vector<double>> sample_joint(
    PolicyBundle& bundle, const std::vector<double>& state, Rng& rng) {
  Tensor s({1, bundle.state_dim()}, std::vector<double>(state));
  const Tensor noises = bundle.draw_noises(1, rng);
  const Tensor u = bundle.joint_actions(s, noises);
  return {u.data, noises.data};
}

// --- critic --------------------------------------------------------------------

struct CriticConfig {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  std::vector<int> hidden = {64, 64};
  Act activation = Act::relu;
  std::uint64_t seed = 0;
  std::size_t target_sync_period = 100;
};

// Centralized Q(s, u) with a frozen target copy for value bootstrapping.
class Critic {
 public:
  explicit Critic(CriticConfig cfg) : cfg_(std::move(cfg)) {
    std::vector<int> sizes;
    sizes.push_back(static_cast<int>(cfg_.state_dim + cfg_.action_dim));
    for (int h : cfg_.hidden) sizes.push_back(h);
    sizes.push_back(1);
    q_ = mlp({sizes, cfg_.activation, cfg_.seed + 77});
    target_ = q_;
  }

  std::size_t state_dim() const { return cfg_.state_dim; }
  std::size_t action_dim() const { return cfg_.action_dim; }
  std::size_t target_sync_period() const { return cfg_.target_sync_period; }
  Graph& net() { return q_; }
  const Graph& net() const { return q_; }
  Graph& target_net() { return target_; }

  double alpha = 1.0;

  Tensor input_rows(const Tensor& states, const Tensor& actions) const {
    if (states.rows() != actions.rows()) {
      throw AgentError("critic: state/action batch mismatch");
    }
    Tensor in({states.rows(), cfg_.state_dim + cfg_.action_dim});
    for (std::size_t r = 0; r < states.rows(); ++r) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < cfg_.state_dim; ++j) {
        in.at(r, c++) = states.at(r, j);
      }
      for (std::size_t j = 0; j < cfg_.action_dim; ++j) {
        in.at(r, c++) = actions.at(r, j);
      }
    }
    return in;
  }

  // B x 1 values.
  Tensor values(const Tensor& states, const Tensor& actions,
                bool use_target = false) {
    Bindings b{{"x", input_rows(states, actions)}};
    return use_target ? target_.forward(b) : q_.forward(b);
  }

  void sync_target() { copy_params(q_, target_); }
  std::size_t updates = 0;

  static void copy_params(const Graph& from, Graph& to) {
    for (std::size_t p = 0; p < from.num_params(); ++p) {
      to.param_value(p) = from.param_value(p);
    }
  }

 private:
  CriticConfig cfg_;
  Graph q_;
  Graph target_;
};

// --- policy gradient direction ---------------------------------------------------

struct DeltaF {
  std::vector<Tensor> per_agent;  // M x d_i directions
  Tensor actions;                 // M x D sampled joint actions
  Tensor noises;                  // M x D noises that produced them
  double max_norm = 0.0;          // worst per-sample direction norm
};

// Particle update direction per agent: kernel-weighted critic gradients
// plus the temperature-scaled kernel repulsion, with the kernel restricted to
// the agent's own coordinates and its negotiation-set coordinates.
inline DeltaF delta_f(PolicyBundle& bundle, Critic& critic,
                      const std::vector<double>& state, std::size_t m,
                      const KernelConfig& kernel, double alpha, Rng& rng) {
  if (m == 0) throw AgentError("delta_f: need at least one sample");
  const std::size_t d = bundle.action_dim();
  DeltaF out;
  Tensor states({m, bundle.state_dim()});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < bundle.state_dim(); ++j) {
      states.at(r, j) = state[j];
    }
  }
  out.noises = bundle.draw_noises(m, rng);
  out.actions = bundle.joint_actions(states, out.noises);

  // Critic input-gradients d Q / d u at every sample, one batched pass.
  Graph& qnet = critic.net();
  Bindings qb{{"x", critic.input_rows(states, out.actions)}};
  qnet.forward(qb);
  qnet.backward_inplace(Tensor({m, 1}, std::vector<double>(m, 1.0)));
  const Tensor& xgrad = qnet.leaf_gradient("x");
  Tensor grad_q({m, d});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      grad_q.at(r, j) = xgrad.at(r, bundle.state_dim() + j);
      if (!std::isfinite(grad_q.at(r, j))) {
        throw AgentError("delta_f: non-finite critic gradient");
      }
    }
  }

  const auto& sched = bundle.schedule();
  for (std::size_t i = 0; i < bundle.num_agents(); ++i) {
    const auto own = sched.coords(i);
    const auto blanket = sched.blanket_coords(i);
    std::vector<std::size_t> support = own;
    support.insert(support.end(), blanket.begin(), blanket.end());

    std::vector<double> proj(m * support.size());
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < support.size(); ++j) {
        proj[r * support.size() + j] = out.actions.at(r, support[j]);
      }
    }
    const KernelEval ev =
        eval_with_grads(proj.data(), m, support.size(), kernel);

    Tensor dir({m, own.size()});
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) {
        const double k = ev.k(a, b);
        const double* gk = ev.grad(a, b);  // repulsion, own coords lead
        for (std::size_t j = 0; j < own.size(); ++j) {
          dir.at(a, j) += k * grad_q.at(b, own[j]) + alpha * gk[j];
        }
      }
      double sq = 0.0;
      for (std::size_t j = 0; j < own.size(); ++j) {
        dir.at(a, j) *= inv_m;
        sq += dir.at(a, j) * dir.at(a, j);
      }
      out.max_norm = std::max(out.max_norm, std::sqrt(sq));
    }
    out.per_agent.push_back(std::move(dir));
  }
  return out;
}

// Ascent step: treats each agent's direction as a fixed cotangent on its
// action output and backpropagates through the sampler (squash included).
inline void policy_step(PolicyBundle& bundle, const DeltaF& d,
                        const Tensor& states,
                        std::vector<AdaptiveMoment>& opts) {
  if (opts.size() != bundle.num_agents() ||
      d.per_agent.size() != bundle.num_agents()) {
    throw AgentError("policy_step: per-agent shape mismatch");
  }
  const std::size_t m = states.rows();
  for (std::size_t i = 0; i < bundle.num_agents(); ++i) {
    const Tensor& dir = d.per_agent[i];
    if (dir.rows() != m || d.noises.rows() != m) {
      throw AgentError("policy_step: directions do not match the batch");
    }
    Graph& net = bundle.net(i);
    Bindings b{{"x", bundle.assemble_input(i, states, d.noises)}};
    net.forward(b);
    // Mean over samples; negated because the optimizer descends.
    Tensor cot({m, dir.cols()});
    const double scale = -1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < cot.size(); ++j) {
      cot.data[j] = scale * dir.data[j];
    }
    net.backward_inplace(cot);
    opts[i].step(net, detail::param_grads(net));
  }
}

// --- soft value and critic update -------------------------------------------------

// alpha * log-mean-exp of Q(s, u)/alpha over the provided action samples,
// computed max-subtracted.
inline double soft_value(Critic& critic, const std::vector<double>& state,
                         const Tensor& actions, double alpha,
                         bool use_target = false) {
  if (alpha <= 0.0) throw AgentError("soft_value: alpha must be positive");
  if (actions.rows() == 0) throw AgentError("soft_value: no action samples");
  const std::size_t m = actions.rows();
  Tensor states({m, state.size()});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < state.size(); ++j) {
      states.at(r, j) = state[j];
    }
  }
  const Tensor q = critic.values(states, actions, use_target);
  double mx = q.data[0];
  for (double v : q.data) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : q.data) acc += std::exp((v - mx) / alpha);
  return mx + alpha * std::log(acc / static_cast<double>(m));
}

struct CriticStepStats {
  double loss = 0.0;
};

// One descent step on mean 1/2 (r + V_target(s') - Q(s,u))^2 over the batch;
// terminal transitions bootstrap V(s') = 0. The next-state value is the
// target network's soft value over value_samples fresh policy samples.
inline CriticStepStats critic_step(Critic& critic,
                                   const std::vector<const Transition*>& batch,
                                   PolicyBundle& bundle, double alpha,
                                   AdaptiveMoment& opt, Rng& rng,
                                   std::size_t value_samples,
                                   double discount = 1.0) {
  if (batch.empty()) throw AgentError("critic_step: empty batch");
  if (value_samples == 0) throw AgentError("critic_step: no value samples");
  const std::size_t b = batch.size();
  const std::size_t k = value_samples;
  const std::size_t s_dim = critic.state_dim();
  const std::size_t a_dim = critic.action_dim();

  // Bootstrapped targets, batched across every non-terminal next state.
  std::vector<double> targets(b);
  std::vector<std::size_t> open;  // indices with bootstrap terms
  for (std::size_t j = 0; j < b; ++j) {
    targets[j] = batch[j]->reward;
    if (!batch[j]->done) open.push_back(j);
  }
  if (!open.empty()) {
    Tensor states({open.size() * k, s_dim});
    for (std::size_t oj = 0; oj < open.size(); ++oj) {
      const auto& next = batch[open[oj]]->next_state;
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < s_dim; ++c) {
          states.at(oj * k + r, c) = next[c];
        }
      }
    }
    const Tensor noises = bundle.draw_noises(open.size() * k, rng);
    const Tensor actions = bundle.joint_actions(states, noises);
    const Tensor q = critic.values(states, actions, /*use_target=*/true);
    for (std::size_t oj = 0; oj < open.size(); ++oj) {
      double mx = q.at(oj * k, 0);
      for (std::size_t r = 0; r < k; ++r) mx = std::max(mx, q.at(oj * k + r, 0));
      double acc = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        acc += std::exp((q.at(oj * k + r, 0) - mx) / alpha);
      }
      const double v = mx + alpha * std::log(acc / static_cast<double>(k));
      targets[open[oj]] += discount * v;
    }
  }

  Tensor states({b, s_dim}), actions({b, a_dim});
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t c = 0; c < s_dim; ++c) states.at(j, c) = batch[j]->state[c];
    for (std::size_t c = 0; c < a_dim; ++c) {
      actions.at(j, c) = batch[j]->action[c];
    }
  }
  Graph& net = critic.net();
  Bindings bind{{"x", critic.input_rows(states, actions)}};
  const Tensor& q = net.forward(bind);

  CriticStepStats stats;
  Tensor cot({b, 1});
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t j = 0; j < b; ++j) {
    const double err = q.at(j, 0) - targets[j];
    stats.loss += 0.5 * err * err * inv_b;
    cot.at(j, 0) = err * inv_b;
  }
  if (!std::isfinite(stats.loss)) {
    throw AgentError("critic_step: non-finite loss");
  }
  net.backward_inplace(cot);
  opt.step(net, detail::param_grads(net));
  critic.updates += 1;
  return stats;
}

// --- training loop ----------------------------------------------------------------

struct TrainConfig {
  Flavor flavor = Flavor::nested;
  std::size_t episodes = 5000;
  std::size_t m_particles = 32;  // particle count, must stay in [16, 64]
  std::size_t value_samples = 0;  // 0: reuse m_particles
  double policy_lr = 3e-4;
  double critic_lr = 3e-4;
  std::size_t batch = 512;
  std::size_t buffer_capacity = 1000000;
  std::size_t target_sync = 100;
  AlphaSchedule alpha;
  std::size_t warmup_episodes = 32;  // uniform-action exploration prefix
  enum class NoiseMode { per_step, per_episode };
  NoiseMode noise_mode = NoiseMode::per_episode;
  std::size_t update_every = 1;       // environment steps between updates
  std::size_t updates_per_round = 1;  // gradient rounds per update point
  std::size_t policy_states = 1;      // replay states per policy round
  std::vector<int> policy_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};
  Act activation = Act::relu;
  KernelConfig kernel;
  double discount = 1.0;  // critic bootstrap weight; 1 = plain r + V(s')
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 100;  // episodes between healthy snapshots

  void validate() const {
    if (m_particles < 16 || m_particles > 64) {
      throw AgentError("config: m_particles must lie in [16, 64]");
    }
    if (policy_lr <= 0.0 || critic_lr <= 0.0) {
      throw AgentError("config: learning rates must be positive");
    }
    if (batch == 0) throw AgentError("config: batch must be positive");
    if (alpha.base <= 0.0) {
      throw AgentError("config: alpha base must be positive");
    }
    if (update_every == 0) {
      throw AgentError("config: update_every must be positive");
    }
  }
};

struct MetricsRow {
  std::size_t episode = 0;
  double ep_return = 0.0;
  double alpha = 0.0;
  double critic_loss = 0.0;
  double max_direction_norm = 0.0;
  std::size_t clamp_count = 0;
};

struct TrainResult {
  PolicyBundle bundle;
  Critic critic;
  std::vector<MetricsRow> metrics;
  // step, joint action, reward for every environment step taken
  std::vector<std::pair<std::vector<double>, double>> action_log;
};

inline NegotiationSchedule schedule_for(Flavor flavor, std::size_t n) {
  switch (flavor) {
    case Flavor::nested:
      return nested_schedule(n);
    case Flavor::full:
      return full_schedule(n);
    case Flavor::marginal:
      return marginal_schedule(n);
    default:
      throw AgentError("schedule_for: custom flavors need explicit sets");
  }
}

inline nlohmann::json save_checkpoint(const PolicyBundle& bundle,
                                      const Critic& critic) {
  nlohmann::json policies = nlohmann::json::array();
  for (std::size_t i = 0; i < bundle.num_agents(); ++i) {
    policies.push_back(save_parameters(bundle.net(i)));
  }
  return {{"format", "svnr-checkpoint-v1"},
          {"policy", policies},
          {"critic", save_parameters(critic.net())}};
}

inline void load_checkpoint(PolicyBundle& bundle, Critic& critic,
                            const nlohmann::json& j) {
  if (j.value("format", "") != std::string("svnr-checkpoint-v1")) {
    throw AgentError("load_checkpoint: unknown format");
  }
  const auto& policies = j.at("policy");
  if (policies.size() != bundle.num_agents()) {
    throw AgentError("load_checkpoint: agent count mismatch");
  }
  for (std::size_t i = 0; i < bundle.num_agents(); ++i) {
    load_parameters(bundle.net(i), policies[i]);
  }
  load_parameters(critic.net(), j.at("critic"));
  critic.sync_target();
}

// Algorithm-style training loop: collect, sample, update values, update
// policies, periodic target sync. Deterministic for a fixed config and seed.
inline PolicyConfig policy_config_for(const Env& env, const TrainConfig& cfg) {
  PolicyConfig pc;
  pc.schedule = schedule_for(cfg.flavor, env.num_agents());
  pc.schedule.kernel = cfg.kernel;
  pc.state_dim = env.state_dim();
  for (std::size_t i = 0; i < env.num_agents(); ++i) {
    pc.bounds.push_back(env.action_bound(i));
  }
  pc.hidden = cfg.policy_hidden;
  pc.activation = cfg.activation;
  pc.seed = cfg.seed;
  return pc;
}

inline CriticConfig critic_config_for(const Env& env, const TrainConfig& cfg) {
  CriticConfig cc;
  cc.state_dim = env.state_dim();
  cc.action_dim = schedule_for(cfg.flavor, env.num_agents()).joint_dim();
  cc.hidden = cfg.critic_hidden;
  cc.activation = cfg.activation;
  cc.seed = cfg.seed;
  cc.target_sync_period = cfg.target_sync;
  return cc;
}

inline TrainResult train(Env& env, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = env.num_agents();
  const std::size_t s_dim = env.state_dim();

  const PolicyConfig pc = policy_config_for(env, cfg);
  const CriticConfig cc = critic_config_for(env, cfg);

  TrainResult res{PolicyBundle(pc), Critic(cc), {}, {}};
  if (cfg.episodes == 0) return res;

  ReplayBuffer buffer(cfg.buffer_capacity);
  Rng rng(cfg.seed);
  std::vector<AdaptiveMoment> policy_opts(n, AdaptiveMoment(cfg.policy_lr));
  AdaptiveMoment critic_opt(cfg.critic_lr);
  env.reseed(cfg.seed);

  const std::size_t value_samples =
      cfg.value_samples == 0 ? cfg.m_particles : cfg.value_samples;
  nlohmann::json last_good = save_checkpoint(res.bundle, res.critic);
  std::size_t global_step = 0;
  std::size_t prev_clamps = 0;

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    const double alpha = anneal_alpha(cfg.alpha, ep);
    res.critic.alpha = alpha;
    std::vector<double> state = env.reset();
    Tensor ep_noise;
    if (cfg.noise_mode == TrainConfig::NoiseMode::per_episode) {
      ep_noise = res.bundle.draw_noises(1, rng);
    }
    // Warmup holds one uniform joint action for the whole episode: persistent
    // random forces cover far more of a multi-step world than a white-noise
    // walk, and for single-step games the two are the same thing.
    std::vector<double> warm_action(res.bundle.action_dim());
    if (ep < cfg.warmup_episodes) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c : pc.schedule.coords(i)) {
          warm_action[c] =
              rng.uniform(-env.action_bound(i), env.action_bound(i));
        }
      }
    }
    double ep_return = 0.0;
    double last_loss = 0.0;
    double max_dir = 0.0;
    bool done = false;

    while (!done) {
      std::vector<double> action(res.bundle.action_dim());
      if (ep < cfg.warmup_episodes) {
        action = warm_action;
      } else {
        Tensor srow({1, s_dim}, std::vector<double>(state));
        const Tensor noises =
            cfg.noise_mode == TrainConfig::NoiseMode::per_episode
                ? ep_noise
                : res.bundle.draw_noises(1, rng);
        action = res.bundle.joint_actions(srow, noises).data;
      }

      const EnvStep step = env.step(action);
      ep_return += step.reward;
      res.action_log.push_back({action, step.reward});
      buffer.push({state, action, step.reward, step.state, step.done});
      state = step.state;
      done = step.done;
      ++global_step;

      // The critic starts learning as soon as a batch is available; the
      // policy waits out the uniform warmup so it never chases the gradient
      // of an untrained critic (which slams actions into the tanh rails).
      const bool can_update = buffer.size() >= cfg.batch;
      const bool policy_ready = ep >= cfg.warmup_episodes;
      if (can_update && global_step % cfg.update_every == 0) {
        for (std::size_t round = 0; round < cfg.updates_per_round; ++round) {
          std::vector<const Transition*> batch(cfg.batch);
          for (auto& t : batch) t = &buffer.sample(rng);
          const CriticStepStats stats =
              critic_step(res.critic, batch, res.bundle, alpha, critic_opt,
                          rng, value_samples, cfg.discount);
          last_loss = stats.loss;

          const std::size_t n_ps =
              policy_ready ? std::min(cfg.policy_states, cfg.batch) : 0;
          for (std::size_t ps = 0; ps < n_ps; ++ps) {
            const std::vector<double>& upd_state = batch[ps]->state;
            const DeltaF d = delta_f(res.bundle, res.critic, upd_state,
                                     cfg.m_particles, cfg.kernel, alpha, rng);
            max_dir = std::max(max_dir, d.max_norm);
            Tensor states({cfg.m_particles, s_dim});
            for (std::size_t r = 0; r < cfg.m_particles; ++r) {
              for (std::size_t c = 0; c < s_dim; ++c) {
                states.at(r, c) = upd_state[c];
              }
            }
            policy_step(res.bundle, d, states, policy_opts);
          }

          if (res.critic.updates % cfg.target_sync == 0) {
            res.critic.sync_target();
          }
        }
      }
    }

    if (!std::isfinite(ep_return) || !std::isfinite(last_loss) ||
        !std::isfinite(max_dir)) {
      throw TrainError("train: non-finite metrics at episode " +
                           std::to_string(ep),
                       last_good);
    }
    res.metrics.push_back({ep, ep_return, alpha, last_loss, max_dir,
                           env.clamp_count() - prev_clamps});
    prev_clamps = env.clamp_count();
    if (cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0) {
      last_good = save_checkpoint(res.bundle, res.critic);
    }
  }
  return res;
}

// --- evaluation --------------------------------------------------------------------

enum class EvalMode { shared_noise, deterministic };

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over episodes
  std::vector<double> returns;
};

// shared_noise draws one common noise vector per step from a per-episode
// seeded stream; deterministic uses zero noise throughout.
inline EvalResult evaluate(PolicyBundle& bundle, Env& env,
                           std::size_t episodes, EvalMode mode,
                           std::uint64_t seed) {
  EvalResult out;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Rng rng(seed + ep);
    env.reseed(seed + ep);
    std::vector<double> state = env.reset();
    double ret = 0.0;
    bool done = false;
    while (!done) {
      Tensor srow({1, bundle.state_dim()}, std::vector<double>(state));
      Tensor noises = mode == EvalMode::deterministic
                          ? Tensor({1, bundle.action_dim()})
                          : bundle.draw_noises(1, rng);
      const std::vector<double> action =
          bundle.joint_actions(srow, noises).data;
      const EnvStep step = env.step(action);
      ret += step.reward;
      state = step.state;
      done = step.done;
    }
    out.returns.push_back(ret);
  }
  const double n = static_cast<double>(out.returns.size());
  for (double r : out.returns) out.mean += r / n;
  if (out.returns.size() > 1) {
    double acc = 0.0;
    for (double r : out.returns) acc += (r - out.mean) * (r - out.mean);
    out.stddev = std::sqrt(acc / (n - 1.0));
  }
  return out;
}

}  // namespace svnr
