#pragma once

/*
 * RBF kernel k(x, y) = exp(-|x - y|^2 / h) with the median-distance bandwidth
 * heuristic h = med^2 / log M. Gradients are taken with respect to the second
 * argument: grad_y k = (2/h) (x - y) k.
 */

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "svnr/tensor.hpp"

namespace svnr {

struct KernelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KernelConfig {
  enum class Mode { median, fixed };
  Mode mode = Mode::median;
  double fixed_h = 1.0;
  double floor = 1e-6;
};

struct KernelEval {
  std::size_t m = 0, d = 0;
  double bandwidth = 0.0;
  std::vector<double> gram;           // m*m, gram[a*m+b] = k(x_a, x_b)
  std::vector<double> grad_second;    // m*m*d, grad wrt second argument

  double k(std::size_t a, std::size_t b) const { return gram[a * m + b]; }
  const double* grad(std::size_t a, std::size_t b) const {
    return grad_second.data() + (a * m + b) * d;
  }
};

inline double rbf(const double* x, const double* y, std::size_t d, double h) {
  if (!(h > 0.0)) throw KernelError("rbf: bandwidth must be positive");
  double sq = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = x[j] - y[j];
    sq += diff * diff;
  }
  return std::exp(-sq / h);
}

inline double rbf(const std::vector<double>& x, const std::vector<double>& y,
                  double h) {
  if (x.size() != y.size()) throw KernelError("rbf: dimension mismatch");
  return rbf(x.data(), y.data(), x.size(), h);
}

// h = med^2 / log M over pairwise Euclidean distances. Degenerate sets
// (M <= 2, coincident points, or a computed h below the floor) get the floor.
inline double median_bandwidth(const double* pts, std::size_t m, std::size_t d,
                               double floor = 1e-6) {
  if (m <= 2) return floor;
  std::vector<double> dist;
  dist.reserve(m * (m - 1) / 2);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = pts[a * d + j] - pts[b * d + j];
        sq += diff * diff;
      }
      dist.push_back(std::sqrt(sq));
    }
  }
  const std::size_t n = dist.size();
  const std::size_t mid = n / 2;
  std::nth_element(dist.begin(), dist.begin() + mid, dist.end());
  double med = dist[mid];
  if (n % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + mid);
    med = 0.5 * (med + lower);
  }
  const double h = med * med / std::log(static_cast<double>(m));
  if (!(h >= floor)) return floor;
  return h;
}

inline double median_bandwidth(const Tensor& points, double floor = 1e-6) {
  return median_bandwidth(points.data.data(), points.rows(), points.cols(),
                          floor);
}

inline double resolve_bandwidth(const double* pts, std::size_t m, std::size_t d,
                                const KernelConfig& cfg) {
  if (cfg.mode == KernelConfig::Mode::fixed) {
    if (!(cfg.fixed_h > 0.0)) {
      throw KernelError("kernel config: fixed bandwidth must be positive");
    }
    return cfg.fixed_h;
  }
  return median_bandwidth(pts, m, d, cfg.floor);
}

// Full gram matrix plus second-argument gradients for a point set (rows are
// points). grad_second[a][b] = (2/h) (x_a - x_b) k(x_a, x_b).
inline KernelEval eval_with_grads(const double* pts, std::size_t m,
                                  std::size_t d, const KernelConfig& cfg) {
  KernelEval out;
  out.m = m;
  out.d = d;
  out.bandwidth = resolve_bandwidth(pts, m, d, cfg);
  out.gram.assign(m * m, 0.0);
  out.grad_second.assign(m * m * d, 0.0);
  const double inv_h = 1.0 / out.bandwidth;
  for (std::size_t a = 0; a < m; ++a) {
    out.gram[a * m + a] = 1.0;
    for (std::size_t b = a + 1; b < m; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = pts[a * d + j] - pts[b * d + j];
        sq += diff * diff;
      }
      const double k = std::exp(-sq * inv_h);
      out.gram[a * m + b] = k;
      out.gram[b * m + a] = k;
      double* gab = out.grad_second.data() + (a * m + b) * d;
      double* gba = out.grad_second.data() + (b * m + a) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = pts[a * d + j] - pts[b * d + j];
        const double g = 2.0 * inv_h * diff * k;
        gab[j] = g;    // d/dx_b k(x_a, x_b)
        gba[j] = -g;   // d/dx_a k(x_b, x_a)
      }
    }
  }
  return out;
}

inline KernelEval eval_with_grads(const Tensor& points,
                                  const KernelConfig& cfg) {
  return eval_with_grads(points.data.data(), points.rows(), points.cols(), cfg);
}

}  // namespace svnr
