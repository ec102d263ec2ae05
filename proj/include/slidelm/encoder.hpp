#pragma once

// Perceiver slide encoder: K learned latents cross-attend (grouped-query) to
// the tile embeddings of one specimen, then pass through latent
// self-attention blocks. Attention pooling heads turn the latents into the
// base embedding and the survival log hazard.

#include <string>
#include <vector>

#include "slidelm/attention.hpp"
#include "slidelm/autodiff.hpp"
#include "slidelm/error.hpp"
#include "slidelm/nn.hpp"
#include "slidelm/packer.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::encoder {

struct EncoderConfig {
  int d_in = 64;
  int d_model = 64;
  int n_latents = 32;
  int n_self_layers = 2;
  int q_heads = 8;
  int kv_groups = 2;
  int mlp_expansion = 4;
  int pool_heads = 1;
  int d_embed = 64;
  double eps = 1e-5;

  int head_dim() const { return d_model / q_heads; }

  void validate() const {
    require(d_in >= 1 && d_model >= 1 && n_latents >= 1 && d_embed >= 1, "encoder: dims must be >= 1");
    require(q_heads >= 1 && kv_groups >= 1 && q_heads % kv_groups == 0, "encoder: q_heads % kv_groups != 0");
    require(d_model % q_heads == 0, "encoder: d_model % q_heads != 0");
    require(pool_heads >= 1 && d_model % pool_heads == 0, "encoder: d_model % pool_heads != 0");
    require(n_self_layers >= 0, "encoder: n_self_layers must be >= 0");
    require(mlp_expansion >= 1, "encoder: mlp_expansion must be >= 1");
    require(eps > 0, "encoder: eps must be > 0");
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct LatentState {
  Mat latents;  // K x d_model
  std::string specimen_id;
};

inline void add_pooler(ParamStore& ps, const std::string& prefix, const EncoderConfig& c, Rng& rng) {
  ps.add(prefix + ".query", random_normal(1, c.d_model, 1.0, rng));
  nn::add_layer_norm(ps, prefix + ".ln", c.d_model);
  nn::add_linear(ps, prefix + ".q", c.d_model, c.d_model, rng, false);
  nn::add_linear(ps, prefix + ".k", c.d_model, c.d_model, rng, false);
  nn::add_linear(ps, prefix + ".v", c.d_model, c.d_model, rng, false);
  nn::add_linear(ps, prefix + ".proj", c.d_model, c.d_embed, rng, false);
}

/// Adds encoder ("encoder."), base pooler ("pool.") and survival head
/// ("survival.") parameters.
inline void init_params(ParamStore& ps, const EncoderConfig& c, Rng& rng) {
  c.validate();
  const Index kv_width = static_cast<Index>(c.kv_groups) * c.head_dim();
  ps.add("encoder.latents", random_normal(c.n_latents, c.d_model, 1.0, rng));
  nn::add_layer_norm(ps, "encoder.cross.ln_q", c.d_model);
  nn::add_layer_norm(ps, "encoder.cross.ln_kv", c.d_in);
  nn::add_linear(ps, "encoder.cross.q", c.d_model, c.d_model, rng, false);
  nn::add_linear(ps, "encoder.cross.k", c.d_in, kv_width, rng, false);
  nn::add_linear(ps, "encoder.cross.v", c.d_in, kv_width, rng, false);
  nn::add_linear(ps, "encoder.cross.o", c.d_model, c.d_model, rng, true, 0.5);
  nn::add_layer_norm(ps, "encoder.cross.ln2", c.d_model);
  nn::add_mlp(ps, "encoder.cross.mlp", c.d_model, c.mlp_expansion, rng);
  for (int i = 0; i < c.n_self_layers; ++i) {
    nn::add_block(ps, "encoder.self." + std::to_string(i), c.d_model, c.mlp_expansion, rng);
  }
  add_pooler(ps, "pool", c, rng);
  add_pooler(ps, "survival.pool", c, rng);
  nn::add_linear(ps, "survival.head", c.d_embed, 1, rng, false);
}

inline std::vector<Index> check_offsets(const std::vector<Index>& offsets, Index rows) {
  require(offsets.size() >= 2, "encoder: need at least one member");
  require(offsets.front() == 0 && offsets.back() == rows, "encoder: offsets do not cover the tile buffer");
  std::vector<Index> lengths;
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    const Index len = offsets[i + 1] - offsets[i];
    if (len < 1) throw InvalidArgument("encoder: zero-length member " + std::to_string(i));
    lengths.push_back(len);
  }
  return lengths;
}

/// GQA cross-attention of `queries` (M*K rows, K per member) onto tiles.
/// Returns the attention output after the output projection.
inline ad::Var gqa_cross_attention(nn::Binder& b, const EncoderConfig& c, ad::Var queries, ad::Var tiles,
                                   const std::vector<Index>& offsets) {
  const auto lengths = check_offsets(offsets, tiles.rows());
  require(tiles.cols() == c.d_in, "encoder: tile dim " + std::to_string(tiles.cols()) + " != d_in " +
                                      std::to_string(c.d_in));
  const Index K = c.n_latents;
  require(queries.rows() == K * static_cast<Index>(lengths.size()), "encoder: query rows != K * members");
  ad::Var q = nn::linear(b, "encoder.cross.q", nn::layer_norm(b, "encoder.cross.ln_q", queries, c.eps));
  ad::Var kv_in = nn::layer_norm(b, "encoder.cross.ln_kv", tiles, c.eps);
  ad::Var k = nn::linear(b, "encoder.cross.k", kv_in);
  ad::Var v = nn::linear(b, "encoder.cross.v", kv_in);
  std::vector<AttentionSegment> segs;
  for (std::size_t m = 0; m < lengths.size(); ++m) {
    segs.push_back({static_cast<Index>(m) * K, K, offsets[m], lengths[m]});
  }
  AttentionShape shape{c.q_heads, c.kv_groups, c.head_dim(), false};
  return nn::linear(b, "encoder.cross.o", attention(q, k, v, shape, std::move(segs)));
}

/// Packed encode: tiles of M members stacked row-wise, member m at rows
/// [offsets[m], offsets[m+1]). Returns M*K latent rows, member-major.
inline ad::Var encode(nn::Binder& b, const EncoderConfig& c, ad::Var tiles, const std::vector<Index>& offsets) {
  const Index members = static_cast<Index>(offsets.size()) - 1;
  require(members >= 1, "encoder: need at least one member");
  ad::Var x = ad::tile_rows(b("encoder.latents"), members);
  x = ad::add(x, gqa_cross_attention(b, c, x, tiles, offsets));
  x = ad::add(x, nn::mlp(b, "encoder.cross.mlp", nn::layer_norm(b, "encoder.cross.ln2", x, c.eps)));
  const auto segs = nn::square_segments(std::vector<Index>(static_cast<std::size_t>(members), c.n_latents));
  for (int i = 0; i < c.n_self_layers; ++i) {
    x = nn::transformer_block(b, "encoder.self." + std::to_string(i), x, c.q_heads, false, segs, c.eps);
  }
  return x;
}

/// Attention pooling: one learned query per member over its K latents,
/// projected to d_embed (not normalized).
inline ad::Var pool(nn::Binder& b, const EncoderConfig& c, const std::string& prefix, ad::Var latents) {
  const Index K = c.n_latents;
  require(latents.rows() % K == 0 && latents.rows() > 0, "pool: latent rows not a multiple of K");
  require(latents.cols() == c.d_model, "pool: latent width != d_model");
  const Index members = latents.rows() / K;
  ad::Var kv = nn::layer_norm(b, prefix + ".ln", latents, c.eps);
  ad::Var k = nn::linear(b, prefix + ".k", kv);
  ad::Var v = nn::linear(b, prefix + ".v", kv);
  ad::Var q = ad::tile_rows(nn::linear(b, prefix + ".q", b(prefix + ".query")), members);
  std::vector<AttentionSegment> segs;
  for (Index m = 0; m < members; ++m) segs.push_back({m, 1, m * K, K});
  AttentionShape shape{c.pool_heads, c.pool_heads, c.d_model / c.pool_heads, false};
  return nn::linear(b, prefix + ".proj", attention(q, k, v, shape, std::move(segs)));
}

/// Base embedding rows, unit norm.
inline ad::Var pool_base(nn::Binder& b, const EncoderConfig& c, ad::Var latents) {
  return ad::l2_normalize_rows(pool(b, c, "pool", latents));
}

struct SurvivalOutput {
  ad::Var embedding;     // M x d_embed
  ad::Var log_hazard;    // M x 1
};

inline SurvivalOutput pool_survival(nn::Binder& b, const EncoderConfig& c, ad::Var latents) {
  SurvivalOutput out;
  out.embedding = pool(b, c, "survival.pool", latents);
  out.log_hazard = nn::linear(b, "survival.head", out.embedding);
  return out;
}

// ---- inference conveniences (no gradients) -------------------------------

inline Mat encode_tiles(const ParamStore& ps, const EncoderConfig& c, const Mat& tiles) {
  ad::Graph g;
  nn::Binder b(g, ps);
  return encode(b, c, g.constant(tiles), {0, tiles.rows()}).value();
}

/// One LatentState per pack member.
inline std::vector<LatentState> encode_packed(const ParamStore& ps, const EncoderConfig& c,
                                              const packer::PackedBatch& batch) {
  ad::Graph g;
  nn::Binder b(g, ps);
  const Mat all = encode(b, c, g.constant(batch.data), batch.offsets).value();
  std::vector<LatentState> out;
  for (std::size_t m = 0; m < batch.members(); ++m) {
    out.push_back({all.middleRows(static_cast<Index>(m) * c.n_latents, c.n_latents), batch.member_ids[m]});
  }
  return out;
}

inline Eigen::VectorXd base_embedding(const ParamStore& ps, const EncoderConfig& c, const Mat& latents) {
  ad::Graph g;
  nn::Binder b(g, ps);
  return pool_base(b, c, g.constant(latents)).value().row(0).transpose();
}

inline double log_hazard(const ParamStore& ps, const EncoderConfig& c, const Mat& latents) {
  ad::Graph g;
  nn::Binder b(g, ps);
  return pool_survival(b, c, g.constant(latents)).log_hazard.scalar();
}

/// Per-tile relevance: sum over heads and latent queries of the cross-attention
/// probability times the l2 norm of that tile's value vector in the head's group.
inline Eigen::VectorXd attention_heatmap(const ParamStore& ps, const EncoderConfig& c, const Mat& tiles) {
  require(tiles.rows() >= 1, "heatmap: empty tile set");
  require(tiles.cols() == c.d_in, "heatmap: tile dim != d_in");
  ad::Graph g;
  nn::Binder b(g, ps);
  ad::Var lat = b("encoder.latents");
  const Mat q = nn::linear(b, "encoder.cross.q", nn::layer_norm(b, "encoder.cross.ln_q", lat, c.eps)).value();
  ad::Var kv_in = nn::layer_norm(b, "encoder.cross.ln_kv", g.constant(tiles), c.eps);
  const Mat k = nn::linear(b, "encoder.cross.k", kv_in).value();
  const Mat v = nn::linear(b, "encoder.cross.v", kv_in).value();
  AttentionShape shape{c.q_heads, c.kv_groups, c.head_dim(), false};
  const auto probs = attention_probabilities(q, k, shape, {0, c.n_latents, 0, tiles.rows()});
  const Index hd = c.head_dim();
  Eigen::VectorXd score = Eigen::VectorXd::Zero(tiles.rows());
  for (Index h = 0; h < c.q_heads; ++h) {
    const Index grp = shape.group_of(h);
    const Eigen::VectorXd norms = v.middleCols(grp * hd, hd).rowwise().norm();
    const Eigen::VectorXd mass = probs[static_cast<std::size_t>(h)].colwise().sum().transpose();
    score += mass.cwiseProduct(norms);
  }
  return score;
}

}  // namespace slidelm::encoder
