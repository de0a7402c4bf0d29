#pragma once

/*
 * Minimal reverse-mode differentiation over a static operation graph.
 *
 * A Graph is built once (inputs, parameters, ops), then evaluated with
 * forward() and differentiated with backward(). Intermediate values are cached
 * by forward and consumed by backward; parameters live inside the graph so a
 * graph doubles as the storage for a trainable network. Everything is double
 * precision and batch-aware: rank-2 tensors are (batch rows, features).
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "svnr/rng.hpp"
#include "svnr/tensor.hpp"

namespace svnr {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Op {
  input,
  param,
  affine,   // x W^T + b
  tanh_op,
  relu,
  exp_op,
  log_op,
  sum,      // row-wise sum -> (B, 1)
  sqdist,   // row-wise squared distance -> (B, 1)
  lse,      // row-wise log-sum-exp, max-subtracted -> (B, 1)
  scale,    // constant multiple
  add,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::param: return "param";
    case Op::affine: return "affine";
    case Op::tanh_op: return "tanh";
    case Op::relu: return "relu";
    case Op::exp_op: return "exp";
    case Op::log_op: return "log";
    case Op::sum: return "sum";
    case Op::sqdist: return "sqdist";
    case Op::lse: return "lse";
    case Op::scale: return "scale";
    case Op::add: return "add";
  }
  return "?";
}

// Per-leaf gradients contracted with the cotangent handed to backward().
struct GradientReport {
  std::map<std::string, Tensor> leaf;

  const Tensor& at(const std::string& name) const {
    auto it = leaf.find(name);
    if (it == leaf.end()) throw GraphError("gradient report: no leaf " + name);
    return it->second;
  }
};

using Bindings = std::unordered_map<std::string, Tensor>;

namespace detail {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

inline Map map(Tensor& t) {
  return Map(t.data.data(), static_cast<Eigen::Index>(t.rows()),
             static_cast<Eigen::Index>(t.cols()));
}
inline CMap map(const Tensor& t) {
  return CMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}
}  // namespace detail

class Graph {
 public:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double k = 1.0;        // constant for scale
    std::string name;      // leaf name for input/param
  };

  // --- construction -------------------------------------------------------

  int input(const std::string& name) {
    require_new_leaf(name);
    nodes_.push_back({Op::input, -1, -1, -1, 1.0, name});
    leaves_[name] = id();
    input_ids_.push_back(id());
    return id();
  }

  int parameter(const std::string& name, Tensor value) {
    require_new_leaf(name);
    nodes_.push_back({Op::param, -1, -1, -1, 1.0, name});
    leaves_[name] = id();
    param_ids_.push_back(id());
    params_.push_back(std::move(value));
    return id();
  }

  int affine(int x, int w, int b) { return push({Op::affine, x, w, b}); }
  int tanh(int x) { return push({Op::tanh_op, x}); }
  int relu(int x) { return push({Op::relu, x}); }
  int exp(int x) { return push({Op::exp_op, x}); }
  int log(int x) { return push({Op::log_op, x}); }
  int sum(int x) { return push({Op::sum, x}); }
  int sqdist(int x, int y) { return push({Op::sqdist, x, y}); }
  int logsumexp(int x) { return push({Op::lse, x}); }
  int scale(int x, double k) { return push({Op::scale, x, -1, -1, k}); }
  int add(int x, int y) { return push({Op::add, x, y}); }

  void set_output(int node) {
    check_id(node, "set_output");
    output_ = node;
  }
  int output() const { return output_; }

  // --- parameter access ---------------------------------------------------

  std::size_t num_params() const { return params_.size(); }
  const std::string& param_name(std::size_t i) const {
    return nodes_[param_ids_[i]].name;
  }
  Tensor& param_value(std::size_t i) { return params_[i]; }
  const Tensor& param_value(std::size_t i) const { return params_[i]; }
  Tensor& param_value(const std::string& name) {
    return params_[param_index(name)];
  }
  const Tensor& param_value(const std::string& name) const {
    return params_[param_index(name)];
  }
  std::size_t param_index(const std::string& name) const {
    for (std::size_t i = 0; i < param_ids_.size(); ++i) {
      if (nodes_[param_ids_[i]].name == name) return i;
    }
    throw GraphError("graph: no parameter " + name);
  }

  const std::vector<int>& input_ids() const { return input_ids_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  // --- evaluation ---------------------------------------------------------

  // Runs the graph on the given input bindings and returns the output value.
  // Intermediates stay cached for backward().
  const Tensor& forward(const Bindings& bindings) {
    if (output_ < 0) throw GraphError("graph: output not set");
    values_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      eval_node(static_cast<int>(i), bindings);
    }
    forward_done_ = true;
    return value(output_);
  }

  // Accumulates cotangent * d(output)/d(node) into every node; call after
  // forward on the same bindings. Leaf gradients are then available through
  // leaf_gradient() or the returned report.
  void backward_inplace(const Tensor& cotangent) {
    if (!forward_done_) throw GraphError("graph: backward before forward");
    const Tensor& out = value(output_);
    if (!cotangent.same_shape(out)) {
      throw GraphError("graph: cotangent shape mismatch at node " +
                       std::to_string(output_));
    }
    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Tensor& g = grads_[i];
      const Tensor& v = value(static_cast<int>(i));
      g.shape = v.shape;
      g.data.assign(v.size(), 0.0);
    }
    grads_[output_].data = cotangent.data;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      propagate(i);
    }
  }

  GradientReport backward(const Bindings& bindings, const Tensor& cotangent) {
    forward(bindings);
    backward_inplace(cotangent);
    GradientReport report;
    for (const auto& [name, idx] : leaves_) report.leaf[name] = grads_[idx];
    return report;
  }

  const Tensor& leaf_gradient(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw GraphError("graph: no leaf " + name);
    return grads_[it->second];
  }
  const Tensor& param_gradient(std::size_t i) const {
    return grads_[param_ids_[i]];
  }
  const Tensor& node_value(int node) const { return value(node); }

 private:
  int id() const { return static_cast<int>(nodes_.size()) - 1; }

  int push(Node n) {
    check_id(n.a, op_name(n.op));
    if (n.b >= 0) check_id(n.b, op_name(n.op));
    if (n.c >= 0) check_id(n.c, op_name(n.op));
    nodes_.push_back(std::move(n));
    return id();
  }

  void check_id(int node, const char* where) const {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
      throw GraphError(std::string("graph: bad node reference in ") + where);
    }
  }

  void require_new_leaf(const std::string& name) const {
    if (leaves_.count(name)) throw GraphError("graph: duplicate leaf " + name);
    if (name.empty()) throw GraphError("graph: empty leaf name");
  }

  const Tensor& value(int i) const {
    const Node& n = nodes_[i];
    if (n.op == Op::param) {
      for (std::size_t p = 0; p < param_ids_.size(); ++p) {
        if (param_ids_[p] == i) return params_[p];
      }
    }
    return values_[i];
  }

  GraphError node_error(int i, const std::string& what) const {
    return GraphError("graph: node " + std::to_string(i) + " (" +
                      op_name(nodes_[i].op) + "): " + what);
  }

  void require_finite(int i) const {
    const Tensor& v = value(i);
    for (double x : v.data) {
      if (!std::isfinite(x)) throw node_error(i, "non-finite value");
    }
  }

  void eval_node(int i, const Bindings& bindings) {
    using detail::map;
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::input: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw node_error(i, "unbound input " + n.name);
        values_[i] = it->second;
        break;
      }
      case Op::param:
        break;
      case Op::affine: {
        const Tensor& x = value(n.a);
        const Tensor& w = value(n.b);
        const Tensor& bias = value(n.c);
        if (x.cols() != w.cols() || bias.size() != w.rows()) {
          throw node_error(i, "shape mismatch: x " + dims(x) + " W " + dims(w) +
                                  " b " + dims(bias));
        }
        Tensor& out = values_[i];
        out.resize(x.rows(), w.rows());
        auto O = map(out);
        O.noalias() = map(x) * map(w).transpose();
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(
            bias.data.data(), static_cast<Eigen::Index>(bias.size()));
        break;
      }
      case Op::tanh_op: {
        unary(i, n.a, [](double v) { return std::tanh(v); });
        break;
      }
      case Op::relu: {
        unary(i, n.a, [](double v) { return v > 0.0 ? v : 0.0; });
        break;
      }
      case Op::exp_op: {
        unary(i, n.a, [](double v) { return std::exp(v); });
        break;
      }
      case Op::log_op: {
        const Tensor& x = value(n.a);
        for (double v : x.data) {
          if (!(v > 0.0)) throw node_error(i, "non-positive input to log");
        }
        unary(i, n.a, [](double v) { return std::log(v); });
        break;
      }
      case Op::sum: {
        const Tensor& x = value(n.a);
        Tensor& out = values_[i];
        out.resize(x.rows(), 1);
        map(out).col(0) = map(x).rowwise().sum();
        break;
      }
      case Op::sqdist: {
        const Tensor& x = value(n.a);
        const Tensor& y = value(n.b);
        if (!x.same_shape(y)) {
          throw node_error(i, "shape mismatch: " + dims(x) + " vs " + dims(y));
        }
        Tensor& out = values_[i];
        out.resize(x.rows(), 1);
        map(out).col(0) = (map(x) - map(y)).rowwise().squaredNorm();
        break;
      }
      case Op::lse: {
        const Tensor& x = value(n.a);
        Tensor& out = values_[i];
        out.resize(x.rows(), 1);
        auto X = map(x);
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
          const double m = X.row(r).maxCoeff();
          out.data[r] = m + std::log((X.row(r).array() - m).exp().sum());
        }
        break;
      }
      case Op::scale: {
        const Tensor& x = value(n.a);
        Tensor& out = values_[i];
        out.shape = x.shape;
        out.data.resize(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) out.data[j] = n.k * x.data[j];
        break;
      }
      case Op::add: {
        const Tensor& x = value(n.a);
        const Tensor& y = value(n.b);
        if (!x.same_shape(y)) {
          throw node_error(i, "shape mismatch: " + dims(x) + " vs " + dims(y));
        }
        Tensor& out = values_[i];
        out.shape = x.shape;
        out.data.resize(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) {
          out.data[j] = x.data[j] + y.data[j];
        }
        break;
      }
    }
    require_finite(i);
  }

  template <typename F>
  void unary(int i, int arg, F f) {
    const Tensor& x = value(arg);
    Tensor& out = values_[i];
    out.shape = x.shape;
    out.data.resize(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out.data[j] = f(x.data[j]);
  }

  void propagate(int i) {
    using detail::map;
    const Node& n = nodes_[i];
    const Tensor& g = grads_[i];
    switch (n.op) {
      case Op::input:
      case Op::param:
        break;
      case Op::affine: {
        const Tensor& x = value(n.a);
        const Tensor& w = value(n.b);
        map(grads_[n.a]).noalias() += map(g) * map(w);
        map(grads_[n.b]).noalias() += map(g).transpose() * map(x);
        Eigen::Map<Eigen::RowVectorXd>(grads_[n.c].data.data(),
                                       static_cast<Eigen::Index>(
                                           grads_[n.c].data.size())) +=
            map(g).colwise().sum();
        break;
      }
      case Op::tanh_op: {
        const Tensor& y = value(i);
        Tensor& gx = grads_[n.a];
        for (std::size_t j = 0; j < y.size(); ++j) {
          gx.data[j] += g.data[j] * (1.0 - y.data[j] * y.data[j]);
        }
        break;
      }
      case Op::relu: {
        const Tensor& x = value(n.a);
        Tensor& gx = grads_[n.a];
        for (std::size_t j = 0; j < x.size(); ++j) {
          if (x.data[j] > 0.0) gx.data[j] += g.data[j];
        }
        break;
      }
      case Op::exp_op: {
        const Tensor& y = value(i);
        Tensor& gx = grads_[n.a];
        for (std::size_t j = 0; j < y.size(); ++j) {
          gx.data[j] += g.data[j] * y.data[j];
        }
        break;
      }
      case Op::log_op: {
        const Tensor& x = value(n.a);
        Tensor& gx = grads_[n.a];
        for (std::size_t j = 0; j < x.size(); ++j) {
          gx.data[j] += g.data[j] / x.data[j];
        }
        break;
      }
      case Op::sum: {
        const Tensor& x = value(n.a);
        Tensor& gx = grads_[n.a];
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) gx.data[r * c + j] += g.data[r];
        }
        break;
      }
      case Op::sqdist: {
        const Tensor& x = value(n.a);
        const Tensor& y = value(n.b);
        Tensor& gx = grads_[n.a];
        Tensor& gy = grads_[n.b];
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double gr = 2.0 * g.data[r];
          for (std::size_t j = 0; j < c; ++j) {
            const double d = x.data[r * c + j] - y.data[r * c + j];
            gx.data[r * c + j] += gr * d;
            gy.data[r * c + j] -= gr * d;
          }
        }
        break;
      }
      case Op::lse: {
        const Tensor& x = value(n.a);
        const Tensor& y = value(i);
        Tensor& gx = grads_[n.a];
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            gx.data[r * c + j] +=
                g.data[r] * std::exp(x.data[r * c + j] - y.data[r]);
          }
        }
        break;
      }
      case Op::scale: {
        Tensor& gx = grads_[n.a];
        for (std::size_t j = 0; j < g.size(); ++j) {
          gx.data[j] += n.k * g.data[j];
        }
        break;
      }
      case Op::add: {
        Tensor& gx = grads_[n.a];
        Tensor& gy = grads_[n.b];
        for (std::size_t j = 0; j < g.size(); ++j) {
          gx.data[j] += g.data[j];
          gy.data[j] += g.data[j];
        }
        break;
      }
    }
  }

  static std::string dims(const Tensor& t) {
    return "(" + std::to_string(t.rows()) + "," + std::to_string(t.cols()) + ")";
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> leaves_;
  std::vector<int> input_ids_;
  std::vector<int> param_ids_;
  std::vector<Tensor> params_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  int output_ = -1;
  bool forward_done_ = false;
};

inline const Tensor& forward(Graph& g, const Bindings& b) { return g.forward(b); }

inline GradientReport backward(Graph& g, const Bindings& b, const Tensor& ct) {
  return g.backward(b, ct);
}

// Central finite-difference check of backward() against all leaves, using the
// scalarised output sum(output). Returns the max relative error, where the
// relative error uses an absolute floor of 1e-3 in the denominator so that
// near-zero gradients are compared absolutely.
inline double check_gradient(Graph& g, Bindings bindings, double fd_step) {
  if (fd_step <= 0.0) throw GraphError("check_gradient: fd_step must be > 0");
  const auto scalar_eval = [&]() {
    const Tensor& out = g.forward(bindings);
    double s = 0.0;
    for (double v : out.data) s += v;
    return s;
  };
  const Tensor& out0 = g.forward(bindings);
  Tensor ones(out0.shape);
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  GradientReport report = g.backward(bindings, ones);

  double max_err = 0.0;
  const auto visit = [&](Tensor& leaf_value, const Tensor& grad) {
    for (std::size_t j = 0; j < leaf_value.size(); ++j) {
      const double saved = leaf_value.data[j];
      leaf_value.data[j] = saved + fd_step;
      const double fp = scalar_eval();
      leaf_value.data[j] = saved - fd_step;
      const double fm = scalar_eval();
      leaf_value.data[j] = saved;
      const double fd = (fp - fm) / (2.0 * fd_step);
      const double ad = grad.data[j];
      const double denom = std::max({1e-3, std::abs(ad), std::abs(fd)});
      max_err = std::max(max_err, std::abs(ad - fd) / denom);
    }
  };
  for (auto& [name, t] : bindings) {
    if (report.leaf.count(name)) visit(t, report.leaf.at(name));
  }
  for (std::size_t p = 0; p < g.num_params(); ++p) {
    visit(g.param_value(p), report.leaf.at(g.param_name(p)));
  }
  return max_err;
}

// --- multilayer perceptron builder ----------------------------------------

enum class Act { linear, relu, tanh };

struct MlpSpec {
  std::vector<int> sizes;   // input width, hidden widths..., output width
  Act hidden = Act::relu;
  std::uint64_t seed = 0;
  std::string input_name = "x";
};

// Fully connected net with linear output. Weights and biases start uniform in
// [-1/sqrt(fan_in), +1/sqrt(fan_in)]; identical seeds give identical graphs.
inline Graph mlp(const MlpSpec& spec) {
  if (spec.sizes.size() < 2) throw GraphError("mlp: need input and output size");
  for (int s : spec.sizes) {
    if (s <= 0) throw GraphError("mlp: non-positive layer width");
  }
  Graph g;
  Rng rng(spec.seed);
  int h = g.input(spec.input_name);
  const std::size_t layers = spec.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t fan_in = static_cast<std::size_t>(spec.sizes[l]);
    const std::size_t fan_out = static_cast<std::size_t>(spec.sizes[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w({fan_out, fan_in});
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    Tensor b({fan_out});
    for (double& v : b.data) v = rng.uniform(-bound, bound);
    const int wi = g.parameter("W" + std::to_string(l), std::move(w));
    const int bi = g.parameter("b" + std::to_string(l), std::move(b));
    h = g.affine(h, wi, bi);
    if (l + 1 < layers) {
      if (spec.hidden == Act::relu) h = g.relu(h);
      else if (spec.hidden == Act::tanh) h = g.tanh(h);
    }
  }
  g.set_output(h);
  return g;
}

// --- parameter serialization ------------------------------------------------

// Flat named-tensor layout used by checkpoints.
inline nlohmann::json save_parameters(const Graph& g) {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t p = 0; p < g.num_params(); ++p) {
    const Tensor& t = g.param_value(p);
    tensors.push_back({{"name", g.param_name(p)},
                       {"shape", t.shape},
                       {"values", t.data}});
  }
  return {{"format", "svnr-tensors-v1"}, {"tensors", tensors}};
}

inline void load_parameters(Graph& g, const nlohmann::json& j) {
  if (j.value("format", "") != std::string("svnr-tensors-v1")) {
    throw GraphError("load_parameters: unknown format");
  }
  for (const auto& entry : j.at("tensors")) {
    Tensor& t = g.param_value(entry.at("name").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape) {
      throw GraphError("load_parameters: shape mismatch for " +
                       entry.at("name").get<std::string>());
    }
    t.data = entry.at("values").get<std::vector<double>>();
  }
}

}  // namespace svnr
