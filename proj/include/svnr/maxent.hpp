#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "svnr/kernels.hpp"
#include "svnr/negotiation.hpp"
#include "svnr/stein.hpp"

namespace svnr {

struct MaxEntError : std::runtime_error {
  explicit MaxEntError(const std::string& what) : std::runtime_error(what) {}
};

// Mixed-radix index over per-agent action grids; agent 0 is the most
// significant digit.
struct JointActionSpace {
  std::vector<std::size_t> sizes;

  std::size_t total() const {
    std::size_t t = 1;
    for (std::size_t s : sizes) t *= s;
    return sizes.empty() ? 0 : t;
  }
  std::vector<std::size_t> decode(std::size_t idx) const {
    std::vector<std::size_t> a(sizes.size());
    for (std::size_t i = sizes.size(); i-- > 0;) {
      a[i] = idx % sizes[i];
      idx /= sizes[i];
    }
    return a;
  }
  std::size_t encode(const std::vector<std::size_t>& a) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      idx = idx * sizes[i] + a[i];
    }
    return idx;
  }
};

// Finite team game. An empty transition table means the episode ends after a
// single step (the stateless differential-game discretizations).
struct SmallGame {
  std::size_t num_states = 1;
  std::vector<std::vector<double>> actions;  // per agent: grid action values
  std::vector<std::vector<double>> reward;   // [state][joint action]
  std::vector<std::vector<std::vector<double>>> transition;  // [s][u][s']
  double gamma = 0.0;

  std::size_t num_agents() const { return actions.size(); }
  JointActionSpace space() const {
    JointActionSpace sp;
    for (const auto& g : actions) sp.sizes.push_back(g.size());
    return sp;
  }
  std::vector<double> joint_values(std::size_t u) const {
    const auto a = space().decode(u);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = actions[i][a[i]];
    return v;
  }

  void validate() const {
    if (actions.empty()) throw MaxEntError("game: no agents");
    for (const auto& g : actions) {
      if (g.empty()) throw MaxEntError("game: agent with empty action grid");
    }
    const std::size_t t = space().total();
    if (reward.size() != num_states) {
      throw MaxEntError("game: reward table needs one row per state");
    }
    for (const auto& row : reward) {
      if (row.size() != t) throw MaxEntError("game: reward row size mismatch");
      for (double r : row) {
        if (!std::isfinite(r)) throw MaxEntError("game: non-finite reward");
      }
    }
    if (!transition.empty()) {
      if (transition.size() != num_states) {
        throw MaxEntError("game: transition needs one block per state");
      }
      for (const auto& block : transition) {
        if (block.size() != t) {
          throw MaxEntError("game: transition block size mismatch");
        }
        for (const auto& row : block) {
          if (row.size() != num_states) {
            throw MaxEntError("game: transition row size mismatch");
          }
          double sum = 0.0;
          for (double p : row) {
            if (p < 0.0) throw MaxEntError("game: negative probability");
            sum += p;
          }
          if (std::abs(sum - 1.0) > 1e-12) {
            throw MaxEntError("game: transition row does not sum to 1");
          }
        }
      }
    }
  }
};

struct SoftQTable {
  std::vector<std::vector<double>> q;  // [state][joint action]
  double alpha = 1.0;
};

// Exact form: per-state probability table over joint actions. Particle form:
// per-state clouds over continuous joint actions.
struct PerceivedJointPolicy {
  std::vector<std::vector<double>> table;
  std::vector<ParticleSet> clouds;

  bool exact() const { return !table.empty(); }
};

inline PerceivedJointPolicy uniform_policy(const SmallGame& game) {
  PerceivedJointPolicy pi;
  const std::size_t t = game.space().total();
  pi.table.assign(game.num_states,
                  std::vector<double>(t, 1.0 / static_cast<double>(t)));
  return pi;
}

// E_p[q - alpha log p] with the 0 log 0 := 0 convention.
inline double soft_state_value(const std::vector<double>& q_row,
                               const std::vector<double>& p_row,
                               double alpha) {
  double v = 0.0;
  for (std::size_t u = 0; u < q_row.size(); ++u) {
    const double p = p_row[u];
    if (p > 0.0) v += p * (q_row[u] - alpha * std::log(p));
  }
  return v;
}

// alpha * logsumexp(q/alpha), max-subtracted: the optimal soft state value.
inline double optimal_soft_value(const std::vector<double>& q_row,
                                 double alpha) {
  const double mx = *std::max_element(q_row.begin(), q_row.end());
  double acc = 0.0;
  for (double q : q_row) acc += std::exp((q - mx) / alpha);
  return mx + alpha * std::log(acc);
}

// One application of the soft Bellman operator under the perceived policy.
inline SoftQTable soft_bellman_backup(const SoftQTable& q,
                                      const PerceivedJointPolicy& pi,
                                      const SmallGame& game) {
  if (!pi.exact()) {
    throw MaxEntError("soft_bellman_backup: needs the table policy form");
  }
  SoftQTable out;
  out.alpha = q.alpha;
  out.q.assign(game.num_states, {});
  std::vector<double> v(game.num_states, 0.0);
  if (!game.transition.empty()) {
    for (std::size_t s = 0; s < game.num_states; ++s) {
      v[s] = soft_state_value(q.q[s], pi.table[s], q.alpha);
    }
  }
  const std::size_t t = game.space().total();
  for (std::size_t s = 0; s < game.num_states; ++s) {
    out.q[s].resize(t);
    for (std::size_t u = 0; u < t; ++u) {
      double backup = game.reward[s][u];
      if (!game.transition.empty()) {
        double next = 0.0;
        for (std::size_t s2 = 0; s2 < game.num_states; ++s2) {
          next += game.transition[s][u][s2] * v[s2];
        }
        backup += game.gamma * next;
      }
      out.q[s][u] = backup;
    }
  }
  return out;
}

// Iterates the backup from Q = 0 to the policy's soft Q-function.
inline SoftQTable evaluate_policy(const PerceivedJointPolicy& pi,
                                  const SmallGame& game, double alpha,
                                  double tol, std::size_t max_iters = 100000) {
  if (tol <= 0.0) throw MaxEntError("evaluate_policy: tol must be positive");
  if (!game.transition.empty() && game.gamma >= 1.0) {
    throw MaxEntError("evaluate_policy: needs gamma < 1 for contraction");
  }
  SoftQTable q;
  q.alpha = alpha;
  q.q.assign(game.num_states,
             std::vector<double>(game.space().total(), 0.0));
  for (std::size_t it = 0; it < max_iters; ++it) {
    SoftQTable next = soft_bellman_backup(q, pi, game);
    double change = 0.0;
    for (std::size_t s = 0; s < game.num_states; ++s) {
      for (std::size_t u = 0; u < next.q[s].size(); ++u) {
        change = std::max(change, std::abs(next.q[s][u] - q.q[s][u]));
      }
    }
    q = std::move(next);
    if (change < tol) return q;
  }
  throw MaxEntError("evaluate_policy: no fixed point within iteration budget");
}

namespace detail {

// One exact-table negotiation sweep: ascending agents, each replacing its
// conditional given the blanket while the marginal over the others is kept.
inline double exact_sweep(std::vector<double>& p,
                          const std::vector<double>& q_row,
                          const SmallGame& game,
                          const NegotiationSchedule& schedule, double alpha) {
  const JointActionSpace space = game.space();
  const std::size_t t = space.total();
  const std::size_t n = game.num_agents();
  double sweep_change = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> blanket;
    for (std::size_t j : schedule.c[i]) {
      if (j != i) blanket.push_back(j);
    }
    std::size_t nb = 1;
    for (std::size_t j : blanket) nb *= space.sizes[j];
    const std::size_t ni = space.sizes[i];
    const std::size_t keys = ni * nb;

    // Conditional moments of Q with (u_i, u_blanket) clamped, Eq-style: the
    // expectation over the remaining agents follows the current table. Zero
    // conditioning mass falls back to a uniform conditional so the target
    // stays defined everywhere.
    std::vector<double> mass(keys, 0.0), qmass(keys, 0.0);
    std::vector<double> quni(keys, 0.0);
    std::vector<std::size_t> count(keys, 0);
    std::vector<std::size_t> key_of(t);
    for (std::size_t u = 0; u < t; ++u) {
      const auto a = space.decode(u);
      std::size_t bk = 0;
      for (std::size_t j : blanket) bk = bk * space.sizes[j] + a[j];
      const std::size_t key = a[i] * nb + bk;
      key_of[u] = key;
      mass[key] += p[u];
      qmass[key] += p[u] * q_row[u];
      quni[key] += q_row[u];
      count[key] += 1;
    }
    std::vector<double> qbar(keys);
    for (std::size_t k = 0; k < keys; ++k) {
      qbar[k] = mass[k] > 0.0 ? qmass[k] / mass[k]
                              : quni[k] / static_cast<double>(count[k]);
    }

    // Normalize exp(qbar/alpha) over u_i per blanket assignment.
    std::vector<double> zmax(nb, -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < keys; ++k) {
      zmax[k % nb] = std::max(zmax[k % nb], qbar[k]);
    }
    std::vector<double> cond(keys), znorm(nb, 0.0);
    for (std::size_t k = 0; k < keys; ++k) {
      cond[k] = std::exp((qbar[k] - zmax[k % nb]) / alpha);
      znorm[k % nb] += cond[k];
    }
    for (std::size_t k = 0; k < keys; ++k) cond[k] /= znorm[k % nb];

    // p <- p(u_{-i}) * cond(u_i | blanket), applied live.
    const std::size_t stride_after = [&] {
      std::size_t s2 = 1;
      for (std::size_t j = i + 1; j < n; ++j) s2 *= space.sizes[j];
      return s2;
    }();
    std::vector<double> next(t);
    for (std::size_t u = 0; u < t; ++u) {
      // Marginal over agent i's digit at this joint configuration.
      const std::size_t digit = (u / stride_after) % ni;
      const std::size_t base = u - digit * stride_after;
      double marg = 0.0;
      for (std::size_t ai = 0; ai < ni; ++ai) {
        marg += p[base + ai * stride_after];
      }
      next[u] = marg * cond[key_of[u]];
      sweep_change = std::max(sweep_change, std::abs(next[u] - p[u]));
    }
    p = std::move(next);
  }
  return sweep_change;
}

}  // namespace detail

// Structured soft policy improvement in the exact table form: per state, up
// to schedule.rounds negotiation sweeps toward the Boltzmann target
// exp((Qbar(u_i, u_blanket) - Vbar(u_blanket)) / alpha).
inline PerceivedJointPolicy improve_policy(const SoftQTable& q,
                                           const PerceivedJointPolicy& pi,
                                           const SmallGame& game,
                                           const NegotiationSchedule& schedule,
                                           double alpha) {
  if (alpha <= 0.0) {
    throw MaxEntError("improve_policy: alpha must be positive");
  }
  if (!pi.exact()) {
    throw MaxEntError("improve_policy: needs the table policy form");
  }
  if (schedule.num_agents != game.num_agents()) {
    throw MaxEntError("improve_policy: schedule/game agent count mismatch");
  }
  // Named flavors are always runnable (marginal is the sanctioned ablation
  // even though it admits no witness); hand-built sets must check out.
  if (schedule.flavor == Flavor::custom && !schedule.witness().valid) {
    throw MaxEntError("improve_policy: schedule admits no ordering witness");
  }
  PerceivedJointPolicy out = pi;
  for (std::size_t s = 0; s < game.num_states; ++s) {
    for (std::size_t round = 0; round < std::max<std::size_t>(schedule.rounds, 1);
         ++round) {
      const double change =
          detail::exact_sweep(out.table[s], q.q[s], game, schedule, alpha);
      if (change < schedule.tol) break;
    }
  }
  return out;
}

struct AlphaAnneal {
  double alpha0 = 1.0;
  double decay = 0.9;
  double alpha_min = 0.05;
};

struct PolicyIterationResult {
  PerceivedJointPolicy policy;
  SoftQTable q;
  std::size_t outer_iterations = 0;
  double final_alpha = 0.0;
  std::vector<double> change_trace;
};

// Alternates soft evaluation and structured improvement while annealing the
// temperature geometrically to its floor; converges when the table stops
// moving at the floor temperature.
inline PolicyIterationResult policy_iteration(
    const SmallGame& game, const NegotiationSchedule& schedule,
    const AlphaAnneal& anneal, double tol, std::size_t max_outer = 500,
    double eval_tol = 1e-10) {
  game.validate();
  PolicyIterationResult res;
  res.policy = uniform_policy(game);
  double alpha = anneal.alpha0;
  for (std::size_t outer = 0; outer < max_outer; ++outer) {
    res.q = evaluate_policy(res.policy, game, alpha, eval_tol);
    PerceivedJointPolicy next =
        improve_policy(res.q, res.policy, game, schedule, alpha);
    double change = 0.0;
    for (std::size_t s = 0; s < game.num_states; ++s) {
      for (std::size_t u = 0; u < next.table[s].size(); ++u) {
        change = std::max(change,
                          std::abs(next.table[s][u] - res.policy.table[s][u]));
      }
    }
    res.policy = std::move(next);
    res.change_trace.push_back(change);
    res.outer_iterations = outer + 1;
    res.final_alpha = alpha;
    const bool at_floor = alpha <= anneal.alpha_min * (1.0 + 1e-12);
    if (change < tol && at_floor) return res;
    alpha = std::max(alpha * anneal.decay, anneal.alpha_min);
  }
  std::string trace = "policy_iteration: no convergence in " +
                      std::to_string(max_outer) + " iterations; last changes:";
  const std::size_t from =
      res.change_trace.size() > 5 ? res.change_trace.size() - 5 : 0;
  for (std::size_t i = from; i < res.change_trace.size(); ++i) {
    trace += " " + std::to_string(res.change_trace[i]);
  }
  throw MaxEntError(trace);
}

namespace detail {

// Joint soft Q by enumeration: soft value iteration over joint actions.
inline std::vector<std::vector<double>> joint_soft_q(const SmallGame& game,
                                                     double alpha, double tol,
                                                     std::size_t max_iters) {
  if (game.space().total() > 1000000) {
    throw MaxEntError("boltzmann_optimal: enumeration infeasible");
  }
  const std::size_t t = game.space().total();
  std::vector<std::vector<double>> q(game.num_states,
                                     std::vector<double>(t, 0.0));
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<double> v(game.num_states);
    for (std::size_t s = 0; s < game.num_states; ++s) {
      v[s] = optimal_soft_value(q[s], alpha);
    }
    double change = 0.0;
    for (std::size_t s = 0; s < game.num_states; ++s) {
      for (std::size_t u = 0; u < t; ++u) {
        double backup = game.reward[s][u];
        if (!game.transition.empty()) {
          double next = 0.0;
          for (std::size_t s2 = 0; s2 < game.num_states; ++s2) {
            next += game.transition[s][u][s2] * v[s2];
          }
          backup += game.gamma * next;
        }
        change = std::max(change, std::abs(backup - q[s][u]));
        q[s][u] = backup;
      }
    }
    if (change < tol) break;
    if (game.transition.empty()) break;  // one pass suffices
  }
  return q;
}

// log pi*(u | s) computed without leaving the log domain, so deeply
// subdominant actions keep finite log-probabilities instead of -inf.
inline std::vector<double> log_boltzmann_row(const std::vector<double>& q_row,
                                             double alpha) {
  const double vs = optimal_soft_value(q_row, alpha);
  double norm = 0.0;
  for (double q : q_row) norm += std::exp((q - vs) / alpha);
  const double logz = std::log(norm);
  std::vector<double> out(q_row.size());
  for (std::size_t u = 0; u < q_row.size(); ++u) {
    out[u] = (q_row[u] - vs) / alpha - logz;
  }
  return out;
}

}  // namespace detail

// MaxEnt-optimal joint policy by enumeration: soft value iteration on the
// joint problem, then the Boltzmann policy exp((Q* - V*)/alpha).
inline std::vector<std::vector<double>> boltzmann_optimal(
    const SmallGame& game, double alpha, double tol = 1e-12,
    std::size_t max_iters = 1000000) {
  const auto q = detail::joint_soft_q(game, alpha, tol, max_iters);
  std::vector<std::vector<double>> pi(game.num_states);
  for (std::size_t s = 0; s < game.num_states; ++s) {
    const auto logp = detail::log_boltzmann_row(q[s], alpha);
    pi[s].resize(logp.size());
    for (std::size_t u = 0; u < logp.size(); ++u) {
      pi[s][u] = std::exp(logp[u]);
    }
  }
  return pi;
}

// Perceived-RO diagnostic: how much farther (in KL) the converged perceived
// policy sits from the MaxEnt optimum than the best product policy built on
// the true optimal opponent marginal. Floored at zero; zero means PRO-free.
inline double pro_gap(const PerceivedJointPolicy& pi, const SmallGame& game,
                      double alpha) {
  if (!pi.exact()) throw MaxEntError("pro_gap: needs the table policy form");
  const std::size_t n = game.num_agents();
  if (n == 1) return 0.0;  // no opponents, no perception
  const auto qstar = detail::joint_soft_q(game, alpha, 1e-12, 1000000);
  const JointActionSpace space = game.space();
  const std::size_t t = space.total();

  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double gap_acc = 0.0;
    for (std::size_t s = 0; s < game.num_states; ++s) {
      // Log-domain optimum: keeps far-suboptimal actions finite.
      const std::vector<double> logstar =
          detail::log_boltzmann_row(qstar[s], alpha);
      double kl_hat = 0.0;
      for (std::size_t u = 0; u < t; ++u) {
        const double p = pi.table[s][u];
        if (p > 0.0) kl_hat += p * (std::log(p) - logstar[u]);
      }

      const std::size_t ni = space.sizes[i];
      const std::size_t rest = t / ni;
      // Opponent index: joint index with agent i's digit removed.
      std::vector<double> marg(rest, 0.0);
      std::size_t stride_after = 1;
      for (std::size_t j = i + 1; j < n; ++j) stride_after *= space.sizes[j];
      const auto split = [&](std::size_t u) {
        const std::size_t digit = (u / stride_after) % ni;
        const std::size_t hi = u / (stride_after * ni);
        const std::size_t lo = u % stride_after;
        return std::pair<std::size_t, std::size_t>(digit,
                                                   hi * stride_after + lo);
      };
      for (std::size_t u = 0; u < t; ++u) {
        marg[split(u).second] += std::exp(logstar[u]);
      }
      // Best own policy against the true marginal: softmax of E_marg[log pi*].
      std::vector<double> a(ni, 0.0);
      for (std::size_t u = 0; u < t; ++u) {
        const auto [digit, opp] = split(u);
        a[digit] += marg[opp] * logstar[u];
      }
      const double amax = *std::max_element(a.begin(), a.end());
      std::vector<double> best(ni);
      double norm = 0.0;
      for (std::size_t ai = 0; ai < ni; ++ai) {
        best[ai] = std::exp(a[ai] - amax);
        norm += best[ai];
      }
      for (double& b : best) b /= norm;

      double kl_best = 0.0;
      for (std::size_t u = 0; u < t; ++u) {
        const auto [digit, opp] = split(u);
        const double p = best[digit] * marg[opp];
        if (p > 0.0) kl_best += p * (std::log(p) - logstar[u]);
      }
      gap_acc += (kl_hat - kl_best) / static_cast<double>(game.num_states);
    }
    worst = std::max(worst, gap_acc);
  }
  return std::max(0.0, worst);
}

// --- particle-form improvement for differentiable stateless objectives -----

struct DiffObjective {
  std::function<double(const double*)> value;
  std::function<std::vector<double>(const double*)> grad;  // full joint grad
};

// Negotiation score for agent i at temperature alpha:
// (1/alpha) * d/du_i of the blanket-conditioned average of the objective,
// estimated from the evolving cloud with kernel weights over the blanket
// coordinates (uniform weights when the blanket is empty).
inline AgentScoreFn conditional_objective_score(const ParticleSet& cloud,
                                                const NegotiationSchedule& s,
                                                const DiffObjective& obj,
                                                double alpha) {
  if (alpha <= 0.0) {
    throw MaxEntError("conditional_objective_score: alpha must be positive");
  }
  return [&cloud, &s, obj, alpha](std::size_t agent,
                                  const double* u) -> std::vector<double> {
    const auto own = s.coords(agent);
    const auto blanket = s.blanket_coords(agent);
    std::vector<bool> clamped(s.joint_dim(), false);
    for (std::size_t c : own) clamped[c] = true;
    for (std::size_t c : blanket) clamped[c] = true;

    const std::size_t m = cloud.m;
    std::vector<double> w(m, 1.0);
    if (!blanket.empty()) {
      std::vector<double> proj(m * blanket.size());
      for (std::size_t b = 0; b < m; ++b) {
        for (std::size_t j = 0; j < blanket.size(); ++j) {
          proj[b * blanket.size() + j] = cloud.at(b, blanket[j]);
        }
      }
      const double h =
          median_bandwidth(proj.data(), m, blanket.size(), s.kernel.floor);
      for (std::size_t b = 0; b < m; ++b) {
        double sq = 0.0;
        for (std::size_t j = 0; j < blanket.size(); ++j) {
          const double diff = u[blanket[j]] - proj[b * blanket.size() + j];
          sq += diff * diff;
        }
        w[b] = std::exp(-sq / h);
      }
    }
    double wsum = 0.0;
    for (double v : w) wsum += v;
    if (!(wsum > 1e-300)) {
      std::fill(w.begin(), w.end(), 1.0);
      wsum = static_cast<double>(m);
    }

    std::vector<double> out(own.size(), 0.0);
    std::vector<double> hybrid(u, u + s.joint_dim());
    for (std::size_t b = 0; b < m; ++b) {
      for (std::size_t c = 0; c < s.joint_dim(); ++c) {
        hybrid[c] = clamped[c] ? u[c] : cloud.at(b, c);
      }
      const auto g = obj.grad(hybrid.data());
      if (g.size() != s.joint_dim()) {
        throw MaxEntError("conditional_objective_score: bad gradient size");
      }
      for (std::size_t j = 0; j < own.size(); ++j) {
        out[j] += w[b] * g[own[j]];
      }
    }
    for (double& v : out) v /= wsum * alpha;
    return out;
  };
}

// Deterministic execution draw: all agents read the same particle index.
struct ExecutionPolicy {
  std::vector<double> joint;  // particle 0 after the final annealing stage
  ParticleSet particles;
  bool all_converged = true;
  std::vector<double> stage_alphas;
};

// Re-runs negotiation while annealing the temperature toward its floor; the
// step size is scaled by min(alpha, 1) so low-temperature rounds stay stable.
inline ExecutionPolicy extract_execution(ParticleSet cloud,
                                         const NegotiationSchedule& schedule,
                                         const DiffObjective& obj,
                                         const AlphaAnneal& anneal) {
  if (anneal.alpha_min <= 0.0) {
    throw MaxEntError("extract_execution: alpha floor must be positive");
  }
  if (cloud.m == 0) throw MaxEntError("extract_execution: empty cloud");
  ExecutionPolicy out;
  double alpha = anneal.alpha0;
  for (;;) {
    NegotiationSchedule stage = schedule;
    stage.eps = schedule.eps * std::min(alpha, 1.0);
    const AgentScoreFn score =
        conditional_objective_score(cloud, stage, obj, alpha);
    const Agreement agr = negotiate_live(cloud, stage, score);
    out.stage_alphas.push_back(alpha);
    out.all_converged = out.all_converged && agr.converged;
    if (alpha <= anneal.alpha_min * (1.0 + 1e-12)) break;
    alpha = std::max(alpha * anneal.decay, anneal.alpha_min);
  }
  out.joint.assign(cloud.row(0), cloud.row(0) + cloud.d);
  out.particles = std::move(cloud);
  return out;
}

// --- JSON game description ---------------------------------------------------

using RewardFormula = std::function<double(const std::vector<double>&)>;
using FormulaRegistry = std::map<std::string, RewardFormula>;

// {"gamma": 0.9, "actions": [[..values..] | {"min","max","count"}, ...],
//  "reward": [[..row per state..]] | {"formula": "name"},
//  "transition": [[[..]]] (optional), "states": n (optional)}
inline SmallGame small_game_from_json(const nlohmann::json& j,
                                      const FormulaRegistry& formulas = {}) {
  SmallGame g;
  if (!j.contains("actions") || !j.at("actions").is_array()) {
    throw MaxEntError("game json: missing actions array");
  }
  for (const auto& spec : j.at("actions")) {
    if (spec.is_array()) {
      g.actions.push_back(spec.get<std::vector<double>>());
    } else if (spec.is_object()) {
      const double lo = spec.at("min").get<double>();
      const double hi = spec.at("max").get<double>();
      const std::size_t count = spec.at("count").get<std::size_t>();
      if (count < 1) throw MaxEntError("game json: empty action grid");
      std::vector<double> grid(count);
      for (std::size_t k = 0; k < count; ++k) {
        grid[k] = count == 1 ? lo
                             : lo + (hi - lo) * static_cast<double>(k) /
                                        static_cast<double>(count - 1);
      }
      g.actions.push_back(std::move(grid));
    } else {
      throw MaxEntError("game json: bad action grid entry");
    }
  }
  g.gamma = j.value("gamma", 0.0);
  g.num_states = j.value("states", std::size_t{1});

  const std::size_t t = g.space().total();
  if (!j.contains("reward")) throw MaxEntError("game json: missing reward");
  if (j.at("reward").is_object()) {
    const std::string name = j.at("reward").at("formula").get<std::string>();
    const auto it = formulas.find(name);
    if (it == formulas.end()) {
      throw MaxEntError("game json: unknown reward formula '" + name + "'");
    }
    std::vector<double> row(t);
    for (std::size_t u = 0; u < t; ++u) row[u] = it->second(g.joint_values(u));
    g.reward.assign(g.num_states, row);
  } else {
    g.reward = j.at("reward").get<std::vector<std::vector<double>>>();
    if (j.contains("states") && g.reward.size() != g.num_states) {
      throw MaxEntError("game json: reward rows disagree with states");
    }
    g.num_states = g.reward.size();
  }
  if (j.contains("transition")) {
    g.transition =
        j.at("transition").get<std::vector<std::vector<std::vector<double>>>>();
  }
  g.validate();
  return g;
}

}  // namespace svnr
