#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. A Graph records one forward computation; Graph::backward walks
// the nodes in reverse creation order and accumulates parameter gradients
// into the ParamStore entries that were bound as leaves.

#include <cmath>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "slidelm/error.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::ad {

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Binds a parameter as a leaf. Only trainable leaves receive gradients.
  Var param(Parameter& p, bool trainable) {
    if (!trainable) return push(p.value, false, nullptr);
    Parameter* target = &p;
    return push(p.value, true, [target](Graph& g, int self) {
      const Mat& gr = g.nodes_[self].grad;
      if (gr.size() != 0) target->grad += gr;
    });
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `delta` into the gradient of node `id` (no-op for constants).
  template <class Expr>
  void accumulate(int id, const Expr& delta) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  /// Gradient buffer of node `id`, allocated zero-filled on first touch.
  Mat& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var loss) {
    require(loss.graph == this, "loss belongs to a different graph");
    const Mat& v = nodes_[loss.id].value;
    require(v.rows() == 1 && v.cols() == 1, "backward expects a scalar loss");
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  Var push(Mat value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), needs_grad, std::move(backward)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

inline const Mat& Var::value() const { return graph->value(id); }

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  require(a.graph == b.graph, "operands belong to different graphs");
  return *a.graph;
}

inline bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.valid() && v.graph->needs_grad(v.id)) return true;
  }
  return false;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat out = a.value() * b.value();
  const bool ng = detail::any_grad({a, b});
  return g.push(std::move(out), ng, [a, b](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(a.id)) g.accumulate(a.id, d * g.value(b.id).transpose());
    if (g.needs_grad(b.id)) g.accumulate(b.id, g.value(a.id).transpose() * d);
  });
}

/// x * W (+ bias broadcast over rows). `bias` may be an invalid Var.
inline Var linear(Var x, Var w, Var bias = {}) {
  Graph& g = detail::same_graph(x, w);
  require(x.cols() == w.rows(), "linear: input width does not match weight rows");
  Mat out = x.value() * w.value();
  if (bias.valid()) {
    require(bias.rows() == 1 && bias.cols() == w.cols(), "linear: bias shape");
    out.rowwise() += bias.value().row(0);
  }
  const bool ng = detail::any_grad({x, w, bias});
  return g.push(std::move(out), ng, [x, w, bias](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(x.id)) g.accumulate(x.id, d * g.value(w.id).transpose());
    if (g.needs_grad(w.id)) g.accumulate(w.id, g.value(x.id).transpose() * d);
    if (bias.valid() && g.needs_grad(bias.id)) g.accumulate(bias.id, d.colwise().sum());
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat out = a.value() + b.value();
  return g.push(std::move(out), detail::any_grad({a, b}), [a, b](Graph& g, int self) {
    g.accumulate(a.id, g.grad(self));
    g.accumulate(b.id, g.grad(self));
  });
}

/// a + row, with `row` (1 x n) broadcast over the rows of a.
inline Var add_row(Var a, Var row) {
  Graph& g = detail::same_graph(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return g.push(std::move(out), detail::any_grad({a, row}), [a, row](Graph& g, int self) {
    g.accumulate(a.id, g.grad(self));
    if (g.needs_grad(row.id)) g.accumulate(row.id, g.grad(self).colwise().sum());
  });
}

inline Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Mat out = a.value() * s;
  return g.push(std::move(out), detail::any_grad({a}), [a, s](Graph& g, int self) {
    g.accumulate(a.id, g.grad(self) * s);
  });
}

/// Sum of all entries as a 1x1 value.
inline Var sum(Var a) {
  Graph& g = *a.graph;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), detail::any_grad({a}), [a](Graph& g, int self) {
    const double d = g.grad(self)(0, 0);
    g.accumulate(a.id, Mat::Constant(g.value(a.id).rows(), g.value(a.id).cols(), d));
  });
}

/// Weighted sum of scalar (1x1) values.
inline Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: bad arguments");
  Graph& g = *terms[0].graph;
  Mat out = Mat::Zero(1, 1);
  bool ng = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].rows() == 1 && terms[i].cols() == 1, "weighted_sum: terms must be scalars");
    out(0, 0) += weights[i] * terms[i].scalar();
    ng = ng || g.needs_grad(terms[i].id);
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return g.push(std::move(out), ng, [ts, ws](Graph& g, int self) {
    const double d = g.grad(self)(0, 0);
    for (std::size_t i = 0; i < ts.size(); ++i) g.accumulate(ts[i].id, Mat::Constant(1, 1, d * ws[i]));
  });
}

inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

/// Exact (erf-based) GELU.
inline Var gelu(Var a) {
  Graph& g = *a.graph;
  Mat out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return g.push(std::move(out), detail::any_grad({a}), [a](Graph& g, int self) {
    Mat d = g.value(a.id).unaryExpr([](double x) { return gelu_derivative(x); });
    g.accumulate(a.id, d.cwiseProduct(g.grad(self)));
  });
}

/// Row-wise layer normalization with affine gamma/beta (each 1 x n).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = detail::same_graph(x, gamma);
  const Index n = x.cols();
  require(gamma.cols() == n && beta.cols() == n, "layer_norm: affine shape mismatch");
  const Mat& xv = x.value();
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Mat out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const bool ng = detail::any_grad({x, gamma, beta});
  return g.push(std::move(out), ng,
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int self) {
                  const Mat& d = g.grad(self);
                  if (g.needs_grad(gamma.id)) g.accumulate(gamma.id, d.cwiseProduct(xhat).colwise().sum());
                  if (g.needs_grad(beta.id)) g.accumulate(beta.id, d.colwise().sum());
                  if (!g.needs_grad(x.id)) return;
                  Mat dxhat = d.array().rowwise() * g.value(gamma.id).row(0).array();
                  const double inv_n = 1.0 / static_cast<double>(xhat.cols());
                  Mat dx(dxhat.rows(), dxhat.cols());
                  for (Index r = 0; r < dxhat.rows(); ++r) {
                    const double mean_d = dxhat.row(r).sum() * inv_n;
                    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) * inv_n;
                    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
                  }
                  g.accumulate(x.id, dx);
                });
}

/// Stacks `times` copies of x vertically.
inline Var tile_rows(Var x, Index times) {
  Graph& g = *x.graph;
  const Index r = x.rows();
  Mat out(r * times, x.cols());
  for (Index t = 0; t < times; ++t) out.middleRows(t * r, r) = x.value();
  return g.push(std::move(out), detail::any_grad({x}), [x, times, r](Graph& g, int self) {
    const Mat& d = g.grad(self);
    Mat acc = Mat::Zero(r, d.cols());
    for (Index t = 0; t < times; ++t) acc += d.middleRows(t * r, r);
    g.accumulate(x.id, acc);
  });
}

inline Var slice_rows(Var x, Index begin, Index count) {
  Graph& g = *x.graph;
  require(begin >= 0 && count >= 0 && begin + count <= x.rows(), "slice_rows: out of range");
  Mat out = x.value().middleRows(begin, count);
  return g.push(std::move(out), detail::any_grad({x}), [x, begin, count](Graph& g, int self) {
    if (g.needs_grad(x.id)) g.grad_buffer(x.id).middleRows(begin, count) += g.grad(self);
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Graph& g = *parts[0].graph;
  Index rows = 0;
  const Index cols = parts[0].cols();
  bool ng = false;
  for (const Var& p : parts) {
    require(p.graph == &g, "concat_rows: mixed graphs");
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || g.needs_grad(p.id);
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.push(std::move(out), ng, [ps](Graph& g, int self) {
    const Mat& d = g.grad(self);
    Index at = 0;
    for (const Var& p : ps) {
      const Index r = g.value(p.id).rows();
      if (g.needs_grad(p.id)) g.accumulate(p.id, d.middleRows(at, r));
      at += r;
    }
  });
}

/// out[i] = x[indices[i]]; the backward pass scatter-adds.
inline Var gather_rows(Var x, std::vector<Index> indices) {
  Graph& g = *x.graph;
  const Mat& xv = x.value();
  Mat out(static_cast<Index>(indices.size()), xv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < xv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = xv.row(indices[i]);
  }
  return g.push(std::move(out), detail::any_grad({x}), [x, idx = std::move(indices)](Graph& g, int self) {
    if (!g.needs_grad(x.id)) return;
    const Mat& d = g.grad(self);
    Mat& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += d.row(static_cast<Index>(i));
  });
}

/// Scales every row to unit Euclidean norm.
inline Var l2_normalize_rows(Var x, double eps = 1e-12) {
  Graph& g = *x.graph;
  const Mat& xv = x.value();
  Eigen::VectorXd norms = xv.rowwise().norm();
  Mat out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) out.row(r) = xv.row(r) / std::max(norms(r), eps);
  Mat y = out;
  return g.push(std::move(out), detail::any_grad({x}),
                [x, y = std::move(y), norms = std::move(norms), eps](Graph& g, int self) {
                  const Mat& d = g.grad(self);
                  Mat dx(d.rows(), d.cols());
                  for (Index r = 0; r < d.rows(); ++r) {
                    const double proj = y.row(r).dot(d.row(r));
                    dx.row(r) = (d.row(r) - proj * y.row(r)) / std::max(norms(r), eps);
                  }
                  g.accumulate(x.id, dx);
                });
}

}  // namespace slidelm::ad
