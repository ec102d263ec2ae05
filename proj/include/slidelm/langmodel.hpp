#pragma once

// Text tower: a bidirectional text encoder with a prepended summary token,
// the latent adapter, and a small causal decoder whose image placeholder
// positions are filled with adapted slide latents.

#include <string>
#include <vector>

#include "slidelm/autodiff.hpp"
#include "slidelm/corpus/tokenizer.hpp"
#include "slidelm/error.hpp"
#include "slidelm/nn.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::lm {

using corpus::TokenSeq;
using corpus::Tokenizer;

struct TextConfig {
  int d_model = 64;
  int n_layers = 1;
  int n_heads = 4;
  int max_len = 128;
  int mlp_expansion = 4;
  double eps = 1e-5;

  void validate() const {
    require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "text: d_model % n_heads != 0");
    require(n_layers >= 0 && max_len >= 2 && mlp_expansion >= 1, "text: invalid config");
  }
  bool operator==(const TextConfig&) const = default;
};

struct DecoderConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_len = 384;
  int mlp_expansion = 4;
  int adapter_hidden = 64;
  double eps = 1e-5;

  void validate() const {
    require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "decoder: d_model % n_heads != 0");
    require(n_layers >= 0 && max_len >= 2 && mlp_expansion >= 1 && adapter_hidden >= 1, "decoder: invalid config");
  }
  bool operator==(const DecoderConfig&) const = default;
};

inline void init_text_params(ParamStore& ps, const TextConfig& c, int vocab, int d_embed, Rng& rng) {
  c.validate();
  ps.add("text.tok", random_normal(vocab, c.d_model, 1.0, rng));
  ps.add("text.cls", random_normal(1, c.d_model, 1.0, rng));
  ps.add("text.pos", random_normal(c.max_len, c.d_model, 0.5, rng));
  for (int i = 0; i < c.n_layers; ++i) nn::add_block(ps, "text.layers." + std::to_string(i), c.d_model, c.mlp_expansion, rng);
  nn::add_layer_norm(ps, "text.ln_f", c.d_model);
  nn::add_linear(ps, "text.proj", c.d_model, d_embed, rng, false);
}

inline void init_adapter_params(ParamStore& ps, const DecoderConfig& c, int d_latent, Rng& rng) {
  nn::add_linear(ps, "adapter.fc1", d_latent, c.adapter_hidden, rng, true);
  nn::add_linear(ps, "adapter.fc2", c.adapter_hidden, c.d_model, rng, true);
}

inline void init_decoder_params(ParamStore& ps, const DecoderConfig& c, int vocab, Rng& rng) {
  c.validate();
  ps.add("decoder.tok", random_normal(vocab, c.d_model, 1.0, rng));
  ps.add("decoder.pos", random_normal(c.max_len, c.d_model, 0.5, rng));
  for (int i = 0; i < c.n_layers; ++i) {
    nn::add_block(ps, "decoder.layers." + std::to_string(i), c.d_model, c.mlp_expansion, rng);
  }
  nn::add_layer_norm(ps, "decoder.ln_f", c.d_model);
  nn::add_linear(ps, "decoder.head", c.d_model, vocab, rng, false);
}

/// Text embeddings (N x d_embed, unit rows) for a batch of token sequences.
inline ad::Var encode_text(nn::Binder& b, const TextConfig& c, const std::vector<std::vector<int>>& texts) {
  require(!texts.empty(), "encode_text: empty batch");
  ad::Var tok = b("text.tok");
  const Index cls_id = tok.rows();
  std::vector<Index> ids;
  std::vector<Index> pos;
  std::vector<Index> lengths;
  std::vector<Index> cls_rows;
  for (const auto& t : texts) {
    if (t.empty()) throw InvalidArgument("encode_text: empty token sequence");
    const Index len = static_cast<Index>(t.size()) + 1;
    require(len <= c.max_len, "encode_text: sequence longer than max_len");
    cls_rows.push_back(static_cast<Index>(ids.size()));
    ids.push_back(cls_id);
    pos.push_back(0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      require(t[i] >= 0 && t[i] < cls_id, "encode_text: token id out of range");
      ids.push_back(t[i]);
      pos.push_back(static_cast<Index>(i) + 1);
    }
    lengths.push_back(len);
  }
  const ad::Var parts[] = {tok, b("text.cls")};
  ad::Var x = ad::add(ad::gather_rows(ad::concat_rows(parts), ids), ad::gather_rows(b("text.pos"), pos));
  const auto segs = nn::square_segments(lengths);
  for (int i = 0; i < c.n_layers; ++i) {
    x = nn::transformer_block(b, "text.layers." + std::to_string(i), x, c.n_heads, false, segs, c.eps);
  }
  x = nn::layer_norm(b, "text.ln_f", ad::gather_rows(x, cls_rows), c.eps);
  return ad::l2_normalize_rows(nn::linear(b, "text.proj", x));
}

/// Per-row two-layer GELU MLP from latent space to decoder space.
inline ad::Var adapt_latents(nn::Binder& b, ad::Var latents) {
  return nn::linear(b, "adapter.fc2", ad::gelu(nn::linear(b, "adapter.fc1", latents)));
}

/// Final-norm hidden states for a batch of sequences, stacked row-wise.
/// `prefix` holds n_prefix adapted rows for every sequence that carries an
/// image span, in batch order; it may be invalid when no sequence does.
inline ad::Var decode_hidden(nn::Binder& b, const DecoderConfig& c, ad::Var prefix, Index n_prefix,
                             const std::vector<const TokenSeq*>& seqs) {
  require(!seqs.empty(), "decode: empty batch");
  ad::Var tok = b("decoder.tok");
  const Index vocab = tok.rows();
  std::vector<Index> ids;
  std::vector<Index> pos;
  std::vector<Index> lengths;
  Index used = 0;
  for (const TokenSeq* s : seqs) {
    const Index len = static_cast<Index>(s->size());
    require(len >= 1, "decode: empty sequence");
    require(len <= c.max_len, "decode: sequence of " + std::to_string(len) + " tokens exceeds max_len " +
                                  std::to_string(c.max_len));
    Index span_begin = -1;
    Index span_len = 0;
    if (s->image_span) {
      span_begin = static_cast<Index>(s->image_span->start);
      span_len = static_cast<Index>(s->image_span->length);
      if (span_len != n_prefix) {
        throw InvalidArgument("decode: image placeholder count " + std::to_string(span_len) + " != latent count " +
                              std::to_string(n_prefix));
      }
    }
    for (Index i = 0; i < len; ++i) {
      const bool in_span = span_begin >= 0 && i >= span_begin && i < span_begin + span_len;
      if (in_span) {
        ids.push_back(vocab + used + (i - span_begin));
      } else {
        const int id = s->ids[static_cast<std::size_t>(i)];
        require(id >= 0 && id < vocab, "decode: token id out of range");
        require(id != Tokenizer::kImage, "decode: image placeholder outside the image span");
        ids.push_back(id);
      }
      pos.push_back(i);
    }
    used += span_len;
    lengths.push_back(len);
  }
  ad::Var table = tok;
  if (used > 0) {
    require(prefix.valid() && prefix.rows() == used, "decode: prefix rows do not match image spans");
    require(prefix.cols() == c.d_model, "decode: prefix width != d_dec");
    const ad::Var parts[] = {tok, prefix};
    table = ad::concat_rows(parts);
  } else {
    require(!prefix.valid() || prefix.rows() == 0, "decode: prefix given but no sequence has an image span");
  }
  ad::Var x = ad::add(ad::gather_rows(table, ids), ad::gather_rows(b("decoder.pos"), pos));
  const auto segs = nn::square_segments(lengths);
  for (int i = 0; i < c.n_layers; ++i) {
    x = nn::transformer_block(b, "decoder.layers." + std::to_string(i), x, c.n_heads, true, segs, c.eps);
  }
  return nn::layer_norm(b, "decoder.ln_f", x, c.eps);
}

inline ad::Var output_logits(nn::Binder& b, ad::Var hidden) { return nn::linear(b, "decoder.head", hidden); }

struct DecoderState {
  Mat hidden;  // L x d_dec
  Mat logits;  // L x V
};

/// Single-sequence forward from raw latents (K x d_model).
inline DecoderState decode_logits(const ParamStore& ps, const DecoderConfig& c, const Mat& latents,
                                  const TokenSeq& seq) {
  ad::Graph g;
  nn::Binder b(g, ps);
  ad::Var prefix;
  if (seq.image_span) prefix = adapt_latents(b, g.constant(latents));
  ad::Var h = decode_hidden(b, c, prefix, latents.rows(), {&seq});
  return {h.value(), output_logits(b, h).value()};
}

inline std::size_t assistant_position(const TokenSeq& seq) {
  std::size_t found = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.ids[i] == Tokenizer::kAssistant && seq.roles[i] == corpus::Role::kSpecial) {
      found = i;
      ++count;
    }
  }
  if (count != 1) {
    throw InvalidArgument("diagnostic_embedding: prompt must contain exactly one assistant tag, found " +
                          std::to_string(count));
  }
  return found;
}

/// Final-norm hidden state at the assistant tag.
inline Eigen::VectorXd diagnostic_embedding(const ParamStore& ps, const DecoderConfig& c, const Mat& latents,
                                            const TokenSeq& prompt) {
  const std::size_t at = assistant_position(prompt);
  TokenSeq head = prompt;
  head.ids.resize(at + 1);
  head.roles.resize(at + 1);
  head.loss_mask.resize(at + 1);
  ad::Graph g;
  nn::Binder b(g, ps);
  ad::Var prefix;
  if (head.image_span) prefix = adapt_latents(b, g.constant(latents));
  const Mat h = decode_hidden(b, c, prefix, latents.rows(), {&head}).value();
  return h.row(static_cast<Index>(at)).transpose();
}

/// Greedy continuation of `prompt` until <|end|> or `max_len` new tokens.
/// Returns the generated ids (without the closing <|end|>).
inline std::vector<int> generate(const ParamStore& ps, const DecoderConfig& c, const Mat& latents, TokenSeq prompt,
                                 std::size_t max_len) {
  std::vector<int> out;
  Mat prefix_value;
  if (prompt.image_span) {
    ad::Graph g;
    nn::Binder b(g, ps);
    prefix_value = adapt_latents(b, g.constant(latents)).value();
  }
  while (out.size() < max_len && static_cast<int>(prompt.size()) < c.max_len) {
    ad::Graph g;
    nn::Binder b(g, ps);
    ad::Var prefix;
    if (prompt.image_span) prefix = g.constant(prefix_value);
    ad::Var h = decode_hidden(b, c, prefix, latents.rows(), {&prompt});
    ad::Var last = ad::slice_rows(h, h.rows() - 1, 1);
    const Mat logits = output_logits(b, last).value();
    Index best = 0;
    logits.row(0).maxCoeff(&best);
    const int id = static_cast<int>(best);
    if (id == Tokenizer::kEnd) break;
    out.push_back(id);
    prompt.ids.push_back(id);
    prompt.roles.push_back(corpus::Role::kAssistant);
    prompt.loss_mask.push_back(false);
  }
  return out;
}

inline std::string generate_text(const ParamStore& ps, const DecoderConfig& c, const Tokenizer& tok,
                                 const Mat& latents, const TokenSeq& prompt, std::size_t max_len) {
  return tok.decode(generate(ps, c, latents, prompt, max_len));
}

}  // namespace slidelm::lm
