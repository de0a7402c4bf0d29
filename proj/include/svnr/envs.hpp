#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "svnr/rng.hpp"

namespace svnr {

struct EnvError : std::runtime_error {
  explicit EnvError(const std::string& what) : std::runtime_error(what) {}
};

// --- differential game reward surface ---------------------------------------

struct DiffGameParams {
  double h2 = 1.0;
  double x2 = 7.0;
  double y2 = 7.0;
  double z2 = -4.0;
  double c1 = 0.0;
  double c2 = 10.0;
  double s2 = 3.0;
  double action_bound = 10.0;
};

inline DiffGameParams max_of_three_params(double s2) {
  DiffGameParams p;
  p.s2 = s2;
  return p;
}

inline DiffGameParams two_modalities_params() {
  DiffGameParams p;
  p.s2 = 2.0;
  p.z2 = -3.0;
  p.c1 = 10.0;
  p.c2 = 10.0;
  return p;
}

namespace detail {

inline double clamp_action(double u, double bound, std::size_t* clamps) {
  if (u < -bound || u > bound) {
    if (clamps) ++*clamps;
    return std::clamp(u, -bound, bound);
  }
  return u;
}

}  // namespace detail

// r(u) = max(g1, g2) with
//   g1 = 0.8 [-((u1+5)/3)^2 - ((u2+5)/3)^2 - ((u3-3)/3)^2] + c1
//   g2 = h2  [-((u1-x2)/s2)^2 - ((u2-y2)/s2)^2 - ((u3-z2)/s2)^2] + c2
inline double diff_reward(const double* u, const DiffGameParams& p,
                          std::size_t* clamp_counter = nullptr) {
  if (p.s2 <= 0.0) throw EnvError("diff_reward: s2 must be positive");
  double v[3];
  for (int i = 0; i < 3; ++i) {
    v[i] = detail::clamp_action(u[i], p.action_bound, clamp_counter);
  }
  const double a1 = (v[0] + 5.0) / 3.0;
  const double b1 = (v[1] + 5.0) / 3.0;
  const double d1 = (v[2] - 3.0) / 3.0;
  const double g1 = 0.8 * (-a1 * a1 - b1 * b1 - d1 * d1) + p.c1;
  const double a2 = (v[0] - p.x2) / p.s2;
  const double b2 = (v[1] - p.y2) / p.s2;
  const double d2 = (v[2] - p.z2) / p.s2;
  const double g2 = p.h2 * (-a2 * a2 - b2 * b2 - d2 * d2) + p.c2;
  return std::max(g1, g2);
}

// Gradient of the active branch of the max (the g1 branch on exact ties).
inline std::array<double, 3> diff_reward_grad(const double* u,
                                              const DiffGameParams& p) {
  if (p.s2 <= 0.0) throw EnvError("diff_reward_grad: s2 must be positive");
  double v[3];
  for (int i = 0; i < 3; ++i) {
    v[i] = std::clamp(u[i], -p.action_bound, p.action_bound);
  }
  const double a1 = (v[0] + 5.0) / 3.0;
  const double b1 = (v[1] + 5.0) / 3.0;
  const double d1 = (v[2] - 3.0) / 3.0;
  const double g1 = 0.8 * (-a1 * a1 - b1 * b1 - d1 * d1) + p.c1;
  const double a2 = (v[0] - p.x2) / p.s2;
  const double b2 = (v[1] - p.y2) / p.s2;
  const double d2 = (v[2] - p.z2) / p.s2;
  const double g2 = p.h2 * (-a2 * a2 - b2 * b2 - d2 * d2) + p.c2;
  std::array<double, 3> g{};
  if (g1 >= g2) {
    const double k = 0.8 * 2.0 / 3.0;
    g = {-k * a1, -k * b1, -k * d1};
  } else {
    const double k = p.h2 * 2.0 / p.s2;
    g = {-k * a2, -k * b2, -k * d2};
  }
  return g;
}

// --- environment interface ---------------------------------------------------

struct EnvStep {
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::string name() const = 0;
  virtual std::size_t num_agents() const = 0;
  virtual double action_bound(std::size_t agent) const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t horizon() const = 0;
  // Starts a fresh episode using the internal draw stream.
  virtual std::vector<double> reset() = 0;
  // One joint-action dimension per agent; out-of-range entries are clamped
  // and counted.
  virtual EnvStep step(const std::vector<double>& joint) = 0;
  virtual void reseed(std::uint64_t seed) = 0;
  virtual std::size_t clamp_count() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

// Stateless three-agent game: constant observation, one step per episode.
class DiffGameEnv final : public Env {
 public:
  DiffGameEnv(std::string name, DiffGameParams params, std::uint64_t seed)
      : name_(std::move(name)), params_(params), rng_(seed) {}

  std::string name() const override { return name_; }
  std::size_t num_agents() const override { return 3; }
  double action_bound(std::size_t) const override {
    return params_.action_bound;
  }
  std::size_t state_dim() const override { return 1; }
  std::size_t horizon() const override { return 1; }
  const DiffGameParams& params() const { return params_; }

  std::vector<double> reset() override {
    done_ = false;
    return {1.0};
  }
  EnvStep step(const std::vector<double>& joint) override {
    if (done_) throw EnvError(name_ + ": step after episode end");
    if (joint.size() != 3) throw EnvError(name_ + ": needs 3 actions");
    done_ = true;
    return {{1.0}, diff_reward(joint.data(), params_, &clamps_), true};
  }
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }
  std::size_t clamp_count() const override { return clamps_; }
  std::unique_ptr<Env> clone() const override {
    return std::make_unique<DiffGameEnv>(*this);
  }

 private:
  std::string name_;
  DiffGameParams params_;
  Rng rng_;
  bool done_ = true;
  std::size_t clamps_ = 0;
};

// Physics constants for the gather world; every value is config-visible.
struct GatherParams {
  double dt = 0.1;
  double damping = 0.25;
  double v_max = 1.0;
  double world = 1.0;            // positions clamped to [-world, world]^2
  double landmark_radius = 0.2;  // landmark fixed at the origin
  double start_r_min = 0.5;
  double start_r_max = 0.9;
  std::size_t horizon = 25;
  double reward_both = 5.0;
  double reward_one = -2.0;
  double action_bound = 1.0;
};

struct GatherState {
  // [p0x, p0y, v0x, v0y, p1x, p1y, v1x, v1y]
  std::array<double, 8> x{};
  std::size_t t = 0;
  bool done = true;

  std::vector<double> flat() const { return {x.begin(), x.end()}; }
};

// Two point particles, each driven by two single-axis agents: agents 0/1 set
// particle 0's x/y acceleration, agents 2/3 particle 1's.
class GatherEnv final : public Env {
 public:
  GatherEnv(GatherParams params, std::uint64_t seed)
      : params_(params), rng_(seed) {}

  std::string name() const override { return "particle_gather"; }
  std::size_t num_agents() const override { return 4; }
  double action_bound(std::size_t) const override {
    return params_.action_bound;
  }
  std::size_t state_dim() const override { return 8; }
  std::size_t horizon() const override { return params_.horizon; }
  const GatherParams& params() const { return params_; }
  const GatherState& raw_state() const { return state_; }

  std::vector<double> reset() override {
    state_ = GatherState{};
    state_.done = false;
    for (int particle = 0; particle < 2; ++particle) {
      constexpr double kTau = 6.283185307179586476925286766559;
      const double r =
          rng_.uniform(params_.start_r_min, params_.start_r_max);
      const double phi = rng_.uniform(0.0, kTau);
      state_.x[particle * 4 + 0] = r * std::cos(phi);
      state_.x[particle * 4 + 1] = r * std::sin(phi);
    }
    return state_.flat();
  }

  EnvStep step(const std::vector<double>& joint) override {
    if (state_.done) throw EnvError("particle_gather: step after episode end");
    if (joint.size() != 4) throw EnvError("particle_gather: needs 4 actions");
    for (int particle = 0; particle < 2; ++particle) {
      const double ax = detail::clamp_action(joint[particle * 2 + 0],
                                             params_.action_bound, &clamps_);
      const double ay = detail::clamp_action(joint[particle * 2 + 1],
                                             params_.action_bound, &clamps_);
      double* px = &state_.x[particle * 4 + 0];
      double* vx = &state_.x[particle * 4 + 2];
      vx[0] = vx[0] * (1.0 - params_.damping) + ax * params_.dt;
      vx[1] = vx[1] * (1.0 - params_.damping) + ay * params_.dt;
      const double speed = std::hypot(vx[0], vx[1]);
      if (speed > params_.v_max) {
        vx[0] *= params_.v_max / speed;
        vx[1] *= params_.v_max / speed;
      }
      px[0] = std::clamp(px[0] + vx[0] * params_.dt, -params_.world,
                         params_.world);
      px[1] = std::clamp(px[1] + vx[1] * params_.dt, -params_.world,
                         params_.world);
    }
    state_.t += 1;

    const bool in0 = std::hypot(state_.x[0], state_.x[1]) <=
                     params_.landmark_radius;
    const bool in1 = std::hypot(state_.x[4], state_.x[5]) <=
                     params_.landmark_radius;
    EnvStep out;
    if (in0 && in1) {
      out.reward = params_.reward_both;
      state_.done = true;
    } else if (in0 || in1) {
      out.reward = params_.reward_one;
      state_.done = true;
    } else {
      out.reward = 0.0;
      if (state_.t >= params_.horizon) state_.done = true;
    }
    out.done = state_.done;
    out.state = state_.flat();
    return out;
  }

  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }
  std::size_t clamp_count() const override { return clamps_; }
  std::unique_ptr<Env> clone() const override {
    return std::make_unique<GatherEnv>(*this);
  }

 private:
  GatherParams params_;
  Rng rng_;
  GatherState state_;
  std::size_t clamps_ = 0;
};

// Scenario factory. max_of_three takes the g2 width s2 (1.5 / 2.0 / 3.0 give
// the benchmark settings; any positive value is accepted).
inline std::unique_ptr<Env> make_env(const std::string& name,
                                     std::uint64_t seed, double s2 = 3.0) {
  if (name == "max_of_three") {
    return std::make_unique<DiffGameEnv>(name, max_of_three_params(s2), seed);
  }
  if (name == "two_modalities") {
    return std::make_unique<DiffGameEnv>(name, two_modalities_params(), seed);
  }
  if (name == "particle_gather") {
    return std::make_unique<GatherEnv>(GatherParams{}, seed);
  }
  throw EnvError("make_env: unknown scenario '" + name +
                 "' (options: max_of_three, two_modalities, particle_gather)");
}

}  // namespace svnr
