#pragma once

/*
 * Stein variational transport. Full updates move every coordinate against the
 * joint score; message-passing updates move one coordinate group at a time
 * against its conditional score, with the kernel restricted to the group plus
 * its Markov blanket.
 */

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "svnr/kernels.hpp"

namespace svnr {

struct SteinError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// M particles of dimension D, row-major.
struct ParticleSet {
  std::size_t m = 0, d = 0;
  std::vector<double> x;

  ParticleSet() = default;
  ParticleSet(std::size_t m_, std::size_t d_) : m(m_), d(d_), x(m_ * d_, 0.0) {}

  double* row(std::size_t a) { return x.data() + a * d; }
  const double* row(std::size_t a) const { return x.data() + a * d; }
  double& at(std::size_t a, std::size_t j) { return x[a * d + j]; }
  double at(std::size_t a, std::size_t j) const { return x[a * d + j]; }
};

// Score access for a target density. `score` is the full joint gradient of
// log p. For message passing, `groups` partitions (a subset of) coordinates,
// `blankets[g]` lists the coordinates conditioned on by group g (disjoint from
// the group itself), and `conditional_score(g, point)` returns
// d/dx_g log p(x_g | x_blanket) at the full joint point.
struct Target {
  std::function<std::vector<double>(const double*)> score;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::vector<std::size_t>> blankets;
  std::function<std::vector<double>(std::size_t, const double*)>
      conditional_score;
};

inline void validate_groups(const Target& t, std::size_t d) {
  if (t.groups.size() != t.blankets.size()) {
    throw SteinError("target: groups/blankets size mismatch");
  }
  for (std::size_t g = 0; g < t.groups.size(); ++g) {
    for (std::size_t j : t.groups[g]) {
      if (j >= d) throw SteinError("target: group index out of range");
    }
    for (std::size_t j : t.blankets[g]) {
      if (j >= d) throw SteinError("target: blanket index out of range");
      for (std::size_t own : t.groups[g]) {
        if (own == j) {
          throw SteinError("target: blanket overlaps its own group");
        }
      }
    }
  }
}

namespace detail {

inline void check_score(const std::vector<double>& s, std::size_t want,
                        const char* where) {
  if (s.size() != want) {
    throw SteinError(std::string(where) + ": score dimension mismatch");
  }
  for (double v : s) {
    if (!std::isfinite(v)) {
      throw SteinError(std::string(where) + ": non-finite score");
    }
  }
}

}  // namespace detail

// phi*(x_a) = mean_b [ k(x_a, x_b) score(x_b) + grad_{x_b} k(x_a, x_b) ].
// Returns an M x D direction matrix (row-major).
inline std::vector<double> svgd_direction(const ParticleSet& ps,
                                          const Target& target,
                                          const KernelConfig& kernel) {
  if (ps.m == 0) throw SteinError("svgd_direction: empty particle set");
  const KernelEval ev = eval_with_grads(ps.x.data(), ps.m, ps.d, kernel);
  std::vector<std::vector<double>> scores(ps.m);
  for (std::size_t b = 0; b < ps.m; ++b) {
    scores[b] = target.score(ps.row(b));
    detail::check_score(scores[b], ps.d, "svgd_direction");
  }
  std::vector<double> phi(ps.m * ps.d, 0.0);
  const double inv_m = 1.0 / static_cast<double>(ps.m);
  for (std::size_t a = 0; a < ps.m; ++a) {
    double* out = phi.data() + a * ps.d;
    for (std::size_t b = 0; b < ps.m; ++b) {
      const double k = ev.k(a, b);
      const double* gk = ev.grad(a, b);
      const double* sc = scores[b].data();
      for (std::size_t j = 0; j < ps.d; ++j) {
        out[j] += k * sc[j] + gk[j];
      }
    }
    for (std::size_t j = 0; j < ps.d; ++j) out[j] *= inv_m;
  }
  return phi;
}

// Message-passing direction for one group: the kernel sees only the group and
// its blanket, the score is the group's conditional score. Returns M rows of
// group-width columns.
inline std::vector<double> mpsvgd_direction(const ParticleSet& ps,
                                            const Target& target,
                                            std::size_t group,
                                            const KernelConfig& kernel) {
  validate_groups(target, ps.d);
  if (group >= target.groups.size()) {
    throw SteinError("mpsvgd_direction: bad group index");
  }
  const std::vector<std::size_t>& own = target.groups[group];
  std::vector<std::size_t> support = own;
  support.insert(support.end(), target.blankets[group].begin(),
                 target.blankets[group].end());

  // Project particles onto the support coordinates.
  const std::size_t sd = support.size();
  std::vector<double> proj(ps.m * sd);
  for (std::size_t a = 0; a < ps.m; ++a) {
    for (std::size_t j = 0; j < sd; ++j) {
      proj[a * sd + j] = ps.at(a, support[j]);
    }
  }
  const KernelEval ev = eval_with_grads(proj.data(), ps.m, sd, kernel);

  const std::size_t gd = own.size();
  std::vector<std::vector<double>> scores(ps.m);
  for (std::size_t b = 0; b < ps.m; ++b) {
    scores[b] = target.conditional_score(group, ps.row(b));
    detail::check_score(scores[b], gd, "mpsvgd_direction");
  }
  std::vector<double> phi(ps.m * gd, 0.0);
  const double inv_m = 1.0 / static_cast<double>(ps.m);
  for (std::size_t a = 0; a < ps.m; ++a) {
    double* out = phi.data() + a * gd;
    for (std::size_t b = 0; b < ps.m; ++b) {
      const double k = ev.k(a, b);
      const double* gk = ev.grad(a, b);  // wrt second arg, support layout
      const double* sc = scores[b].data();
      // Own coordinates come first in the support layout.
      for (std::size_t j = 0; j < gd; ++j) {
        out[j] += k * sc[j] + gk[j];
      }
    }
    for (std::size_t j = 0; j < gd; ++j) out[j] *= inv_m;
  }
  return phi;
}

// x <- x + eps * phi, applied to the listed coordinates (all if empty).
inline void transport_step(ParticleSet& ps, const std::vector<double>& phi,
                           double eps,
                           const std::vector<std::size_t>& coords = {}) {
  const std::size_t width = coords.empty() ? ps.d : coords.size();
  if (phi.size() != ps.m * width) {
    throw SteinError("transport_step: direction size mismatch");
  }
  for (std::size_t a = 0; a < ps.m; ++a) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t col = coords.empty() ? j : coords[j];
      ps.x[a * ps.d + col] += eps * phi[a * width + j];
    }
  }
}

struct TransportTrace {
  std::vector<double> max_norms;  // per iteration
  std::size_t iterations = 0;
  bool converged = false;
};

struct TransportError : SteinError {
  TransportTrace trace;
  TransportError(const std::string& what, TransportTrace t)
      : SteinError(what), trace(std::move(t)) {}
};

enum class TransportMode { full, message_passing };

inline double max_row_norm(const std::vector<double>& phi, std::size_t m,
                           std::size_t width) {
  double worst = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    double sq = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double v = phi[a * width + j];
      sq += v * v;
    }
    worst = std::max(worst, std::sqrt(sq));
  }
  return worst;
}

constexpr double kDivergedNorm = 1e6;

// Iterates transport until the largest per-particle direction norm drops
// below tol. Message passing sweeps the groups in sweep_order (all groups in
// index order if empty), updating each group before the next one is scored.
inline std::pair<ParticleSet, TransportTrace> run(
    ParticleSet ps, const Target& target, double eps, double tol,
    std::size_t max_iters, TransportMode mode,
    const KernelConfig& kernel = {},
    const std::vector<std::size_t>& sweep_order = {}) {
  TransportTrace trace;
  std::vector<std::size_t> order = sweep_order;
  if (mode == TransportMode::message_passing && order.empty()) {
    for (std::size_t g = 0; g < target.groups.size(); ++g) order.push_back(g);
  }
  for (std::size_t it = 0; it < max_iters; ++it) {
    double worst = 0.0;
    if (mode == TransportMode::full) {
      const auto phi = svgd_direction(ps, target, kernel);
      worst = max_row_norm(phi, ps.m, ps.d);
      if (worst >= tol && worst <= kDivergedNorm) {
        transport_step(ps, phi, eps);
      }
    } else {
      for (std::size_t g : order) {
        const auto phi = mpsvgd_direction(ps, target, g, kernel);
        const double norm = max_row_norm(phi, ps.m, target.groups[g].size());
        worst = std::max(worst, norm);
        if (norm <= kDivergedNorm) {
          transport_step(ps, phi, eps, target.groups[g]);
        }
      }
    }
    trace.max_norms.push_back(worst);
    trace.iterations = it + 1;
    if (worst > kDivergedNorm) {
      throw TransportError(
          "stein transport diverged at iteration " + std::to_string(it) +
              " (direction norm " + std::to_string(worst) + ")",
          trace);
    }
    if (worst < tol) {
      trace.converged = true;
      break;
    }
  }
  return {std::move(ps), std::move(trace)};
}

}  // namespace svnr
