#pragma once

/*
 * Negotiated transport between agents. Each agent owns a coordinate block of
 * the joint action and repeatedly applies a message-passing Stein update
 * against its conditional target, sweeping agents in index order. A schedule
 * fixes who negotiates with whom: the set C_i lists the agents whose
 * coordinates agent i conditions on (listing i itself is allowed and ignored
 * for the blanket; the kernel always sees agent i's own block plus C_i).
 */

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "svnr/rng.hpp"
#include "svnr/stein.hpp"

namespace svnr {

struct NegotiationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Certificate that a negotiation-set family admits the nested factorisation:
// a permutation sigma with {i+1, ..., N-1} contained in sigma(C_{sigma^-1(i)})
// for every agent index i (0-based).
struct NestedWitness {
  bool valid = false;
  std::vector<std::size_t> sigma;
};

// Exhaustive permutation search; N is capped so the search stays exact.
inline NestedWitness validate_nested(
    const std::vector<std::vector<std::size_t>>& c, std::size_t n) {
  if (c.size() != n) {
    throw NegotiationError("validate_nested: need one set per agent");
  }
  if (n > 8) {
    throw NegotiationError(
        "validate_nested: exhaustive search is limited to 8 agents");
  }
  for (const auto& set : c) {
    for (std::size_t j : set) {
      if (j >= n) throw NegotiationError("validate_nested: agent out of range");
    }
  }
  NestedWitness w;
  if (n == 0) return w;
  std::vector<std::size_t> sigma(n);
  std::iota(sigma.begin(), sigma.end(), 0);
  do {
    std::vector<std::size_t> inv(n);
    for (std::size_t j = 0; j < n; ++j) inv[sigma[j]] = j;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      std::vector<bool> covered(n, false);
      for (std::size_t j : c[inv[i]]) covered[sigma[j]] = true;
      for (std::size_t k = i + 1; k < n; ++k) {
        if (!covered[k]) {
          ok = false;
          break;
        }
      }
    }
    if (ok) {
      w.valid = true;
      w.sigma = sigma;
      return w;
    }
  } while (std::next_permutation(sigma.begin(), sigma.end()));
  return w;
}

enum class Flavor { nested, full, marginal, custom };

inline const char* flavor_name(Flavor f) {
  switch (f) {
    case Flavor::nested: return "nested";
    case Flavor::full: return "full";
    case Flavor::marginal: return "marginal";
    case Flavor::custom: return "custom";
  }
  return "?";
}

struct NegotiationSchedule {
  std::size_t num_agents = 0;
  std::vector<std::size_t> dims;                // action width per agent
  Flavor flavor = Flavor::nested;
  std::vector<std::vector<std::size_t>> c;      // negotiation sets
  std::size_t rounds = 100;                     // K
  double eps = 0.1;
  double tol = 1e-3;
  KernelConfig kernel;

  std::size_t joint_dim() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{0});
  }
  std::size_t offset(std::size_t agent) const {
    std::size_t o = 0;
    for (std::size_t i = 0; i < agent; ++i) o += dims[i];
    return o;
  }
  std::vector<std::size_t> coords(std::size_t agent) const {
    std::vector<std::size_t> out;
    const std::size_t o = offset(agent);
    for (std::size_t j = 0; j < dims[agent]; ++j) out.push_back(o + j);
    return out;
  }
  // Coordinates of C_i excluding agent i's own block.
  std::vector<std::size_t> blanket_coords(std::size_t agent) const {
    std::vector<std::size_t> out;
    for (std::size_t other : c[agent]) {
      if (other == agent) continue;
      const std::size_t o = offset(other);
      for (std::size_t j = 0; j < dims[other]; ++j) out.push_back(o + j);
    }
    return out;
  }
  NestedWitness witness() const { return validate_nested(c, num_agents); }
};

namespace detail {

inline NegotiationSchedule make_schedule(std::size_t n, Flavor flavor,
                                         std::vector<std::size_t> dims) {
  NegotiationSchedule s;
  s.num_agents = n;
  s.flavor = flavor;
  s.dims = dims.empty() ? std::vector<std::size_t>(n, 1) : std::move(dims);
  if (s.dims.size() != n) {
    throw NegotiationError("schedule: one action width per agent");
  }
  s.c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (flavor) {
      case Flavor::nested:
        for (std::size_t j = 0; j <= i; ++j) s.c[i].push_back(j);
        break;
      case Flavor::full:
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) s.c[i].push_back(j);
        }
        break;
      case Flavor::marginal:
      case Flavor::custom:
        break;
    }
  }
  return s;
}

}  // namespace detail

inline NegotiationSchedule nested_schedule(std::size_t n,
                                           std::vector<std::size_t> dims = {}) {
  return detail::make_schedule(n, Flavor::nested, std::move(dims));
}
inline NegotiationSchedule full_schedule(std::size_t n,
                                         std::vector<std::size_t> dims = {}) {
  return detail::make_schedule(n, Flavor::full, std::move(dims));
}
inline NegotiationSchedule marginal_schedule(
    std::size_t n, std::vector<std::size_t> dims = {}) {
  return detail::make_schedule(n, Flavor::marginal, std::move(dims));
}

// Conditional score of agent i's target at a full joint point:
// d/du_i log pi~(u_i | u_{C_i}).
using AgentScoreFn =
    std::function<std::vector<double>(std::size_t, const double*)>;

inline Target schedule_target(const NegotiationSchedule& s,
                              AgentScoreFn score) {
  Target t;
  t.conditional_score = std::move(score);
  for (std::size_t i = 0; i < s.num_agents; ++i) {
    t.groups.push_back(s.coords(i));
    t.blankets.push_back(s.blanket_coords(i));
  }
  return t;
}

// One message-passing step for a single agent; other coordinates are
// untouched.
inline ParticleSet negotiation_round(ParticleSet ps,
                                     const NegotiationSchedule& s,
                                     std::size_t agent, AgentScoreFn score) {
  if (agent >= s.num_agents) throw NegotiationError("round: bad agent index");
  const Target t = schedule_target(s, std::move(score));
  const auto phi = mpsvgd_direction(ps, t, agent, s.kernel);
  transport_step(ps, phi, s.eps, t.groups[agent]);
  return ps;
}

struct Agreement {
  ParticleSet particles;
  std::size_t rounds_used = 0;
  bool converged = false;
  std::vector<double> round_norms;
};

// In-place negotiation; score closures may observe the evolving set through
// whatever state they capture. Sweeps agents in ascending index for up to
// s.rounds rounds, stopping early once every agent's direction norm is below
// s.tol within one sweep.
inline Agreement negotiate_live(ParticleSet& ps, const NegotiationSchedule& s,
                                const AgentScoreFn& score) {
  if (ps.d != s.joint_dim()) {
    throw NegotiationError("negotiate: particle dimension mismatch");
  }
  const Target t = schedule_target(s, score);
  Agreement agr;
  for (std::size_t round = 0; round < s.rounds; ++round) {
    double worst = 0.0;
    for (std::size_t i = 0; i < s.num_agents; ++i) {
      const auto phi = mpsvgd_direction(ps, t, i, s.kernel);
      const double norm = max_row_norm(phi, ps.m, s.dims[i]);
      worst = std::max(worst, norm);
      if (norm > kDivergedNorm) {
        agr.round_norms.push_back(worst);
        throw NegotiationError("negotiation diverged at round " +
                               std::to_string(round) + ", agent " +
                               std::to_string(i) + " (direction norm " +
                               std::to_string(norm) + ")");
      }
      transport_step(ps, phi, s.eps, t.groups[i]);
    }
    agr.round_norms.push_back(worst);
    agr.rounds_used = round + 1;
    if (worst < s.tol) {
      agr.converged = true;
      break;
    }
  }
  agr.particles = ps;
  return agr;
}

inline Agreement negotiate(ParticleSet ps, const NegotiationSchedule& s,
                           const AgentScoreFn& score) {
  return negotiate_live(ps, s, score);
}

enum class CloudMetric { energy };

// Energy distance (V-statistic) between two point clouds:
// 2 E|X - Y| - E|X - X'| - E|Y - Y'|. Nonnegative, zero iff equal in law.
inline double energy_distance(const double* xs, std::size_t nx,
                              const double* ys, std::size_t ny,
                              std::size_t d) {
  if (nx == 0 || ny == 0) {
    throw NegotiationError("energy_distance: empty cloud");
  }
  const auto dist = [d](const double* a, const double* b) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = a[j] - b[j];
      sq += diff * diff;
    }
    return std::sqrt(sq);
  };
  double cross = 0.0, within_x = 0.0, within_y = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      cross += dist(xs + i * d, ys + j * d);
    }
  }
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < nx; ++j) {
      within_x += dist(xs + i * d, xs + j * d);
    }
  }
  for (std::size_t i = 0; i < ny; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      within_y += dist(ys + i * d, ys + j * d);
    }
  }
  cross /= static_cast<double>(nx) * static_cast<double>(ny);
  within_x /= static_cast<double>(nx) * static_cast<double>(nx);
  within_y /= static_cast<double>(ny) * static_cast<double>(ny);
  return 2.0 * cross - within_x - within_y;
}

using ReferenceSampler = std::function<std::vector<double>(Rng&)>;

// Distance between an agreement's particle cloud and fresh samples from a
// reference distribution.
inline double agreement_distance(const Agreement& agr,
                                 const ReferenceSampler& sampler,
                                 std::size_t num_samples, Rng& rng,
                                 CloudMetric metric = CloudMetric::energy) {
  if (metric != CloudMetric::energy) {
    throw NegotiationError("agreement_distance: unknown metric");
  }
  const std::size_t d = agr.particles.d;
  std::vector<double> ref(num_samples * d);
  for (std::size_t i = 0; i < num_samples; ++i) {
    const auto pt = sampler(rng);
    if (pt.size() != d) {
      throw NegotiationError("agreement_distance: sampler dimension mismatch");
    }
    std::copy(pt.begin(), pt.end(), ref.begin() + i * d);
  }
  return energy_distance(agr.particles.x.data(), agr.particles.m, ref.data(),
                         num_samples, d);
}

}  // namespace svnr
