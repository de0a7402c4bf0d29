#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "svnr/agent.hpp"
#include "svnr/envs.hpp"

using namespace svnr;
using Catch::Approx;

namespace {

void zero_params(Graph& g) {
  for (std::size_t p = 0; p < g.num_params(); ++p) {
    for (double& v : g.param_value(p).data) v = 0.0;
  }
}

PolicyBundle tiny_bundle(std::size_t n, double bound, std::uint64_t seed) {
  PolicyConfig pc;
  pc.schedule = nested_schedule(n);
  pc.state_dim = 1;
  pc.bounds.assign(n, bound);
  pc.hidden = {8};
  pc.activation = Act::tanh;
  pc.seed = seed;
  return PolicyBundle(pc);
}

}  // namespace

TEST_CASE("temperature schedule holds the spike through the delay") {
  AlphaSchedule s;  // base 1, spike 500, rate 0.1, delay 10
  REQUIRE(anneal_alpha(s, 0) == Approx(501.0));
  REQUIRE(anneal_alpha(s, 10) == Approx(501.0));
  REQUIRE(anneal_alpha(s, 11) ==
          Approx(1.0 + std::exp(-0.1) * 500.0).margin(1e-12));
  REQUIRE(anneal_alpha(s, 500) == Approx(1.0).margin(1e-15));
  AlphaSchedule bad;
  bad.base = 0.0;
  REQUIRE_THROWS_AS(anneal_alpha(bad, 0), AgentError);
}

TEST_CASE("replay ring evicts oldest entries exactly") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) {
    buf.push({{0.0}, {0.0}, static_cast<double>(i), {0.0}, true});
  }
  REQUIRE(buf.size() == 3);
  REQUIRE(buf.at(0).reward == 3.0);
  REQUIRE(buf.at(1).reward == 4.0);
  REQUIRE(buf.at(2).reward == 2.0);
  REQUIRE_THROWS_AS(ReplayBuffer(0), AgentError);
  ReplayBuffer empty(4);
  Rng rng(1);
  REQUIRE_THROWS_AS(empty.sample(rng), AgentError);
}

TEST_CASE("zero-weight policy emits exactly the squash center") {
  PolicyBundle bundle = tiny_bundle(3, 10.0, 42);
  for (std::size_t i = 0; i < 3; ++i) zero_params(bundle.net(i));
  Rng rng(7);
  const auto [u, xi] = sample_joint(bundle, {1.0}, rng);
  REQUIRE(u.size() == 3);
  for (double v : u) REQUIRE(v == 0.0);
  REQUIRE(xi.size() == 3);
}

TEST_CASE("sampled actions respect the bound and reproduce by seed") {
  PolicyBundle a = tiny_bundle(3, 2.5, 11);
  PolicyBundle b = tiny_bundle(3, 2.5, 11);
  Rng r1(99), r2(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [ua, _na] = sample_joint(a, {1.0}, r1);
    const auto [ub, _nb] = sample_joint(b, {1.0}, r2);
    for (std::size_t j = 0; j < ua.size(); ++j) {
      REQUIRE(ua[j] == ub[j]);
      REQUIRE(std::abs(ua[j]) <= 2.5);
    }
  }
}

TEST_CASE("policy inputs are state, own noise, then blanket noises") {
  PolicyConfig pc;
  pc.schedule = nested_schedule(3);
  pc.state_dim = 2;
  pc.bounds = {1.0, 1.0, 1.0};
  pc.hidden = {4};
  pc.seed = 5;
  PolicyBundle bundle(pc);
  Tensor states({1, 2}, {10.0, 20.0});
  Tensor noises({1, 3}, {0.1, 0.2, 0.3});
  // Agent 2's negotiation set is {0, 1, 2}: row is [s | xi_2 | xi_0, xi_1].
  const Tensor in = bundle.assemble_input(2, states, noises);
  REQUIRE(in.cols() == 5);
  REQUIRE(in.at(0, 0) == 10.0);
  REQUIRE(in.at(0, 1) == 20.0);
  REQUIRE(in.at(0, 2) == 0.3);
  REQUIRE(in.at(0, 3) == 0.1);
  REQUIRE(in.at(0, 4) == 0.2);
  // Agent 0's set is just itself.
  const Tensor in0 = bundle.assemble_input(0, states, noises);
  REQUIRE(in0.cols() == 3);
  REQUIRE(in0.at(0, 2) == 0.1);
}

TEST_CASE("soft value matches closed forms on a hand-set linear critic") {
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 1;
  cc.hidden = {};
  cc.seed = 3;
  Critic critic(cc);
  // Q(s, u) = u.
  critic.net().param_value("W0").data = {0.0, 1.0};
  critic.net().param_value("b0").data = {0.0};

  Tensor actions({2, 1}, {0.0, 2.0});
  const double v = soft_value(critic, {0.0}, actions, 1.0);
  REQUIRE(v == Approx(1.4337808304830272).margin(1e-12));

  // Small temperature recovers the max, large temperature the mean.
  REQUIRE(soft_value(critic, {0.0}, actions, 1e-9) == Approx(2.0).margin(1e-7));
  REQUIRE(soft_value(critic, {0.0}, actions, 1e9) == Approx(1.0).margin(1e-6));

  Tensor none({0, 1});
  REQUIRE_THROWS_AS(soft_value(critic, {0.0}, none, 1.0), AgentError);
  REQUIRE_THROWS_AS(soft_value(critic, {0.0}, actions, 0.0), AgentError);
}

TEST_CASE("single-sample update direction equals the critic action gradient") {
  PolicyBundle bundle = tiny_bundle(2, 3.0, 21);
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 2;
  cc.hidden = {6};
  cc.activation = Act::tanh;
  cc.seed = 9;
  Critic critic(cc);

  // With one sample the kernel weight is 1 and the repulsion term vanishes.
  Rng rng(4);
  KernelConfig kc;
  DeltaF d = delta_f(bundle, critic, {0.5}, 1, kc, 50.0, rng);
  REQUIRE(d.per_agent.size() == 2);
  REQUIRE(d.actions.rows() == 1);

  const double eps = 1e-6;
  for (std::size_t j = 0; j < 2; ++j) {
    Tensor su({1, 1}, {0.5});
    Tensor up({1, 2}, {d.actions.at(0, 0), d.actions.at(0, 1)});
    Tensor dn = up;
    up.at(0, j) += eps;
    dn.at(0, j) -= eps;
    const double fd = (critic.values(su, up).at(0, 0) -
                       critic.values(su, dn).at(0, 0)) /
                      (2.0 * eps);
    REQUIRE(d.per_agent[j].at(0, 0) == Approx(fd).margin(1e-7));
  }
}

TEST_CASE("repulsion pushes coincident samples apart") {
  PolicyBundle bundle = tiny_bundle(1, 1.0, 2);
  zero_params(bundle.net(0));  // every sample lands on 0
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 1;
  cc.hidden = {};
  cc.seed = 1;
  Critic critic(cc);
  critic.net().param_value("W0").data = {0.0, 0.0};
  critic.net().param_value("b0").data = {0.0};  // flat critic

  Rng rng(8);
  KernelConfig kc;
  const DeltaF d = delta_f(bundle, critic, {0.0}, 16, kc, 1.0, rng);
  // Flat Q and coincident points: directions are exactly zero, not NaN.
  for (std::size_t r = 0; r < 16; ++r) {
    REQUIRE(std::isfinite(d.per_agent[0].at(r, 0)));
    REQUIRE(d.per_agent[0].at(r, 0) == 0.0);
  }
}

TEST_CASE("policy steps climb a linear critic toward saturation") {
  PolicyBundle bundle = tiny_bundle(1, 1.0, 31);
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 1;
  cc.hidden = {};
  cc.seed = 1;
  Critic critic(cc);
  critic.net().param_value("W0").data = {0.0, 1.0};  // Q = u
  critic.net().param_value("b0").data = {0.0};

  Rng rng(5);
  KernelConfig kc;
  std::vector<AdaptiveMoment> opts(1, AdaptiveMoment(1e-2));
  const std::size_t m = 16;
  Tensor states({m, 1});
  for (int it = 0; it < 300; ++it) {
    const DeltaF d = delta_f(bundle, critic, {0.0}, m, kc, 1e-3, rng);
    policy_step(bundle, d, states, opts);
  }
  Rng eval_rng(123);
  double mean = 0.0;
  for (int s = 0; s < 64; ++s) {
    const auto [u, _n] = sample_joint(bundle, {0.0}, eval_rng);
    mean += u[0] / 64.0;
  }
  REQUIRE(mean > 0.5);
}

TEST_CASE("critic steps reduce the regression loss on a frozen batch") {
  PolicyBundle bundle = tiny_bundle(2, 1.0, 13);
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 2;
  cc.hidden = {16};
  cc.seed = 17;
  Critic critic(cc);

  // Terminal transitions: the target is the reward itself.
  std::vector<Transition> store;
  Rng gen(3);
  for (int i = 0; i < 32; ++i) {
    const double a0 = gen.uniform(-1.0, 1.0);
    const double a1 = gen.uniform(-1.0, 1.0);
    store.push_back({{1.0}, {a0, a1}, -a0 * a0 - a1 * a1, {1.0}, true});
  }
  std::vector<const Transition*> batch;
  for (const auto& t : store) batch.push_back(&t);

  AdaptiveMoment opt(1e-2);
  Rng rng(6);
  const double first =
      critic_step(critic, batch, bundle, 1.0, opt, rng, 4).loss;
  double last = first;
  for (int it = 0; it < 80; ++it) {
    last = critic_step(critic, batch, bundle, 1.0, opt, rng, 4).loss;
  }
  REQUIRE(last < 0.2 * first);
  REQUIRE(critic.updates == 81);
}

TEST_CASE("bootstrap ignores next states on terminal transitions") {
  PolicyBundle bundle = tiny_bundle(1, 1.0, 1);
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 1;
  cc.hidden = {};
  cc.seed = 2;
  Critic critic(cc);
  critic.net().param_value("W0").data = {0.0, 0.0};
  critic.net().param_value("b0").data = {0.0};
  critic.sync_target();

  Transition t{{0.0}, {0.0}, 2.0, {1e9}, true};
  std::vector<const Transition*> batch{&t};
  AdaptiveMoment opt(0.0);  // keep weights frozen, inspect the loss only
  Rng rng(1);
  // Q = 0 everywhere, target = r = 2, loss = 0.5 * 2^2.
  const double loss = critic_step(critic, batch, bundle, 1.0, opt, rng, 2).loss;
  REQUIRE(loss == Approx(2.0).margin(1e-12));
}

TEST_CASE("config validation enforces the sample-count window") {
  TrainConfig cfg;
  cfg.m_particles = 8;
  REQUIRE_THROWS_AS(cfg.validate(), AgentError);
  cfg.m_particles = 128;
  REQUIRE_THROWS_AS(cfg.validate(), AgentError);
  cfg.m_particles = 32;
  REQUIRE_NOTHROW(cfg.validate());
  cfg.policy_lr = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), AgentError);
}

TEST_CASE("checkpoints restore parameters bit for bit") {
  PolicyBundle bundle = tiny_bundle(2, 1.0, 77);
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 2;
  cc.hidden = {8};
  cc.seed = 78;
  Critic critic(cc);
  const nlohmann::json snap = save_checkpoint(bundle, critic);
  REQUIRE(snap.at("format") == "svnr-checkpoint-v1");

  const double before = bundle.net(0).param_value(0).data[0];
  bundle.net(0).param_value(0).data[0] = 123.0;
  critic.net().param_value(0).data[0] = -55.0;
  load_checkpoint(bundle, critic, snap);
  REQUIRE(bundle.net(0).param_value(0).data[0] == before);
  REQUIRE(critic.net().param_value(0).data[0] != -55.0);

  nlohmann::json bad = snap;
  bad["format"] = "other";
  REQUIRE_THROWS_AS(load_checkpoint(bundle, critic, bad), AgentError);
}

TEST_CASE("zero-episode training returns untouched networks") {
  auto env = make_env("max_of_three", 1);
  TrainConfig cfg;
  cfg.episodes = 0;
  cfg.seed = 4;
  TrainResult res = train(*env, cfg);
  REQUIRE(res.metrics.empty());
  PolicyConfig pc;
  pc.schedule = schedule_for(cfg.flavor, 3);
  pc.state_dim = 1;
  pc.bounds = {10.0, 10.0, 10.0};
  pc.hidden = cfg.policy_hidden;
  pc.activation = cfg.activation;
  pc.seed = cfg.seed;
  PolicyBundle fresh(pc);
  for (std::size_t p = 0; p < fresh.net(0).num_params(); ++p) {
    REQUIRE(res.bundle.net(0).param_value(p).data ==
            fresh.net(0).param_value(p).data);
  }
}

TEST_CASE("short training runs reproduce bitwise from the seed") {
  TrainConfig cfg;
  cfg.episodes = 24;
  cfg.warmup_episodes = 8;
  cfg.batch = 16;
  cfg.m_particles = 16;
  cfg.value_samples = 4;
  cfg.policy_hidden = {8};
  cfg.critic_hidden = {8};
  cfg.seed = 11;

  auto env1 = make_env("max_of_three", 0);
  auto env2 = make_env("max_of_three", 0);
  const TrainResult a = train(*env1, cfg);
  const TrainResult b = train(*env2, cfg);
  REQUIRE(a.metrics.size() == 24);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    REQUIRE(a.metrics[i].ep_return == b.metrics[i].ep_return);
    REQUIRE(a.metrics[i].critic_loss == b.metrics[i].critic_loss);
    REQUIRE(a.metrics[i].alpha == b.metrics[i].alpha);
    REQUIRE(a.metrics[i].max_direction_norm == b.metrics[i].max_direction_norm);
  }
  for (std::size_t p = 0; p < a.critic.net().num_params(); ++p) {
    REQUIRE(a.critic.net().param_value(p).data ==
            b.critic.net().param_value(p).data);
  }
}

TEST_CASE("evaluation modes are deterministic given the seed") {
  PolicyBundle bundle = tiny_bundle(3, 10.0, 3);
  auto env = make_env("max_of_three", 5);
  const EvalResult a = evaluate(bundle, *env, 6, EvalMode::shared_noise, 42);
  const EvalResult b = evaluate(bundle, *env, 6, EvalMode::shared_noise, 42);
  REQUIRE(a.returns == b.returns);
  REQUIRE(a.returns.size() == 6);

  // Zero-noise evaluation of a stateless game repeats one return exactly.
  const EvalResult d = evaluate(bundle, *env, 5, EvalMode::deterministic, 1);
  for (double r : d.returns) REQUIRE(r == d.returns[0]);
  REQUIRE(d.stddev == 0.0);
}
