#pragma once

// Grouped-query scaled dot-product attention over packed row segments.
//
// Queries carry q_heads * head_dim columns; keys and values carry
// kv_groups * head_dim columns and are shared by q_heads / kv_groups
// consecutive query heads. Each segment pairs a block of query rows with a
// block of key rows, so several variable-length sequences can live in one
// buffer without padding and without attending across boundaries.

#include <cmath>
#include <limits>
#include <vector>

#include "slidelm/autodiff.hpp"

namespace slidelm {

struct AttentionShape {
  Index q_heads = 1;
  Index kv_groups = 1;
  Index head_dim = 1;
  bool causal = false;

  Index group_of(Index head) const { return head / (q_heads / kv_groups); }
};

struct AttentionSegment {
  Index q_begin = 0;
  Index q_len = 0;
  Index k_begin = 0;
  Index k_len = 0;
};

namespace detail {

inline void check_attention(const Mat& q, const Mat& k, const Mat& v, const AttentionShape& s,
                            const std::vector<AttentionSegment>& segments) {
  require(s.q_heads >= 1 && s.kv_groups >= 1 && s.q_heads % s.kv_groups == 0,
          "attention: q_heads must be a positive multiple of kv_groups");
  require(q.cols() == s.q_heads * s.head_dim, "attention: query width != q_heads * head_dim");
  require(k.cols() == s.kv_groups * s.head_dim && v.cols() == k.cols(),
          "attention: key/value width != kv_groups * head_dim");
  require(k.rows() == v.rows(), "attention: key/value row mismatch");
  for (const auto& seg : segments) {
    require(seg.k_len >= 1, "attention: zero-length key segment");
    require(seg.q_begin >= 0 && seg.q_begin + seg.q_len <= q.rows(), "attention: query segment out of range");
    require(seg.k_begin >= 0 && seg.k_begin + seg.k_len <= k.rows(), "attention: key segment out of range");
    if (s.causal) require(seg.q_len <= seg.k_len, "attention: causal segment needs q_len <= k_len");
  }
}

/// Softmax probabilities for one (segment, head): q_len x k_len.
inline Mat head_probabilities(const Mat& q, const Mat& k, const AttentionShape& s, const AttentionSegment& seg,
                              Index head) {
  const Index g = s.group_of(head);
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  Mat scores = (q.block(seg.q_begin, head * s.head_dim, seg.q_len, s.head_dim) *
                k.block(seg.k_begin, g * s.head_dim, seg.k_len, s.head_dim).transpose()) *
               scale;
  const Index shift = seg.k_len - seg.q_len;
  for (Index i = 0; i < seg.q_len; ++i) {
    const Index last = s.causal ? i + shift : seg.k_len - 1;
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j <= last; ++j) mx = std::max(mx, scores(i, j));
    double total = 0.0;
    for (Index j = 0; j <= last; ++j) {
      scores(i, j) = std::exp(scores(i, j) - mx);
      total += scores(i, j);
    }
    for (Index j = 0; j <= last; ++j) scores(i, j) /= total;
    for (Index j = last + 1; j < seg.k_len; ++j) scores(i, j) = 0.0;
  }
  return scores;
}

}  // namespace detail

/// Attention probabilities of one segment, one matrix (q_len x k_len) per head.
inline std::vector<Mat> attention_probabilities(const Mat& q, const Mat& k, const AttentionShape& shape,
                                                const AttentionSegment& segment) {
  detail::check_attention(q, k, k, shape, {segment});
  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(shape.q_heads));
  for (Index h = 0; h < shape.q_heads; ++h) out.push_back(detail::head_probabilities(q, k, shape, segment, h));
  return out;
}

/// Differentiable grouped-query attention. Query rows not covered by any
/// segment produce zero output.
inline ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const AttentionShape& shape,
                         std::vector<AttentionSegment> segments) {
  ad::Graph& g = *q.graph;
  require(k.graph == &g && v.graph == &g, "attention: operands belong to different graphs");
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  detail::check_attention(qv, kv, vv, shape, segments);

  const Index hd = shape.head_dim;
  Mat out = Mat::Zero(qv.rows(), shape.q_heads * hd);
  std::vector<Mat> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(shape.q_heads));
  for (const auto& seg : segments) {
    for (Index h = 0; h < shape.q_heads; ++h) {
      const Index grp = shape.group_of(h);
      Mat p = detail::head_probabilities(qv, kv, shape, seg, h);
      out.block(seg.q_begin, h * hd, seg.q_len, hd).noalias() =
          p * vv.block(seg.k_begin, grp * hd, seg.k_len, hd);
      probs.push_back(std::move(p));
    }
  }

  const bool ng = ad::detail::any_grad({q, k, v});
  return g.push(std::move(out), ng,
                [q, k, v, shape, segs = std::move(segments), probs = std::move(probs)](ad::Graph& g, int self) {
                  const Mat& d = g.grad(self);
                  const Mat& qv = g.value(q.id);
                  const Mat& kv = g.value(k.id);
                  const Mat& vv = g.value(v.id);
                  const Index hd = shape.head_dim;
                  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
                  const bool gq = g.needs_grad(q.id);
                  const bool gk = g.needs_grad(k.id);
                  const bool gv = g.needs_grad(v.id);
                  Mat* dq = gq ? &g.grad_buffer(q.id) : nullptr;
                  Mat* dk = gk ? &g.grad_buffer(k.id) : nullptr;
                  Mat* dv = gv ? &g.grad_buffer(v.id) : nullptr;
                  std::size_t pi = 0;
                  for (const auto& seg : segs) {
                    for (Index h = 0; h < shape.q_heads; ++h, ++pi) {
                      const Index grp = shape.group_of(h);
                      const Mat& p = probs[pi];
                      auto d_out = d.block(seg.q_begin, h * hd, seg.q_len, hd);
                      if (gv) dv->block(seg.k_begin, grp * hd, seg.k_len, hd).noalias() += p.transpose() * d_out;
                      if (!gq && !gk) continue;
                      Mat dp = d_out * vv.block(seg.k_begin, grp * hd, seg.k_len, hd).transpose();
                      // Softmax Jacobian: ds = p * (dp - rowsum(dp * p)).
                      Eigen::VectorXd rs = dp.cwiseProduct(p).rowwise().sum();
                      Mat ds = p.cwiseProduct(dp.colwise() - rs) * scale;
                      if (gq) {
                        dq->block(seg.q_begin, h * hd, seg.q_len, hd).noalias() +=
                            ds * kv.block(seg.k_begin, grp * hd, seg.k_len, hd);
                      }
                      if (gk) {
                        dk->block(seg.k_begin, grp * hd, seg.k_len, hd).noalias() +=
                            ds.transpose() * qv.block(seg.q_begin, h * hd, seg.q_len, hd);
                      }
                    }
                  }
                });
}

}  // namespace slidelm
