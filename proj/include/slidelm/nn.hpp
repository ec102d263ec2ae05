#pragma once

// Shared building blocks: parameter binding into a graph, pre-norm
// transformer blocks, and the matching parameter initializers.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "slidelm/attention.hpp"
#include "slidelm/autodiff.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::nn {

/// Binds named parameters into one graph, each at most once. Parameters whose
/// name starts with one of `trainable` receive gradients; all others enter the
/// graph as constants.
class Binder {
 public:
  Binder(ad::Graph& g, ParamStore& store, std::vector<std::string> trainable)
      : graph_(g), store_(store), mutable_(&store), trainable_(std::move(trainable)) {}

  /// Inference binding: every parameter enters as a constant.
  Binder(ad::Graph& g, const ParamStore& store) : graph_(g), store_(store) {}

  ad::Var operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    ad::Var v = is_trainable(name) ? graph_.param(mutable_->at(name), true) : graph_.constant(store_.at(name).value);
    cache_.emplace(name, v);
    return v;
  }

  bool is_trainable(const std::string& name) const {
    if (mutable_ == nullptr) return false;
    for (const auto& p : trainable_) {
      if (name.starts_with(p)) return true;
    }
    return false;
  }

  ad::Graph& graph() { return graph_; }
  const ParamStore& store() const { return store_; }

 private:
  ad::Graph& graph_;
  const ParamStore& store_;
  ParamStore* mutable_ = nullptr;
  std::vector<std::string> trainable_;
  std::unordered_map<std::string, ad::Var> cache_;
};

// ---- initializers --------------------------------------------------------

inline void add_linear(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias,
                       double gain = 1.0) {
  ps.add(name + ".w", random_normal(in, out, gain / std::sqrt(static_cast<double>(in)), rng));
  if (bias) ps.add(name + ".b", Mat::Zero(1, out));
}

inline void add_layer_norm(ParamStore& ps, const std::string& name, Index width) {
  ps.add(name + ".g", Mat::Ones(1, width));
  ps.add(name + ".b", Mat::Zero(1, width));
}

inline void add_mlp(ParamStore& ps, const std::string& name, Index width, Index expansion, Rng& rng) {
  add_linear(ps, name + ".fc1", width, width * expansion, rng, true);
  add_linear(ps, name + ".fc2", width * expansion, width, rng, true, 0.5);
}

/// Self-attention block parameters (ln1, q/k/v/o projections, ln2, mlp).
inline void add_block(ParamStore& ps, const std::string& name, Index width, Index expansion, Rng& rng) {
  add_layer_norm(ps, name + ".ln1", width);
  add_linear(ps, name + ".q", width, width, rng, false);
  add_linear(ps, name + ".k", width, width, rng, false);
  add_linear(ps, name + ".v", width, width, rng, false);
  add_linear(ps, name + ".o", width, width, rng, true, 0.5);
  add_layer_norm(ps, name + ".ln2", width);
  add_mlp(ps, name + ".mlp", width, expansion, rng);
}

// ---- forward pieces ------------------------------------------------------

inline ad::Var layer_norm(Binder& b, const std::string& name, ad::Var x, double eps) {
  return ad::layer_norm(x, b(name + ".g"), b(name + ".b"), eps);
}

inline ad::Var linear(Binder& b, const std::string& name, ad::Var x) {
  const std::string bias = name + ".b";
  return b.store().contains(bias) ? ad::linear(x, b(name + ".w"), b(bias)) : ad::linear(x, b(name + ".w"));
}

inline ad::Var mlp(Binder& b, const std::string& name, ad::Var x) {
  return linear(b, name + ".fc2", ad::gelu(linear(b, name + ".fc1", x)));
}

/// Pre-norm residual block: x + attn(ln1(x)), then + mlp(ln2(x)).
inline ad::Var transformer_block(Binder& b, const std::string& name, ad::Var x, Index heads, bool causal,
                                 const std::vector<AttentionSegment>& segments, double eps) {
  const Index width = x.cols();
  ad::Var h = layer_norm(b, name + ".ln1", x, eps);
  ad::Var q = linear(b, name + ".q", h);
  ad::Var k = linear(b, name + ".k", h);
  ad::Var v = linear(b, name + ".v", h);
  AttentionShape shape{heads, heads, width / heads, causal};
  ad::Var a = attention(q, k, v, shape, segments);
  x = ad::add(x, linear(b, name + ".o", a));
  return ad::add(x, mlp(b, name + ".mlp", layer_norm(b, name + ".ln2", x, eps)));
}

/// Square segments [offset, offset + len) used for self-attention.
inline std::vector<AttentionSegment> square_segments(const std::vector<Index>& lengths) {
  std::vector<AttentionSegment> segs;
  Index at = 0;
  for (Index len : lengths) {
    segs.push_back({at, len, at, len});
    at += len;
  }
  return segs;
}

}  // namespace slidelm::nn
