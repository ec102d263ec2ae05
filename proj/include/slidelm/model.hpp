#pragma once

// Full model: slide encoder + poolers, text encoder, adapter and decoder in
// one named parameter store, plus the SFCK1 checkpoint container.
//
// SFCK1 layout (little-endian): magic "SFCK1", u32 tensor count, then per
// tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, then
// prod(dims) float64 values in row-major order.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "slidelm/corpus/io.hpp"
#include "slidelm/corpus/tokenizer.hpp"
#include "slidelm/encoder.hpp"
#include "slidelm/hash.hpp"
#include "slidelm/langmodel.hpp"

namespace slidelm {

struct ModelConfig {
  encoder::EncoderConfig encoder;
  lm::TextConfig text;
  lm::DecoderConfig decoder;
  double init_tau = 0.1;

  void validate() const {
    encoder.validate();
    text.validate();
    decoder.validate();
    require(init_tau > 0, "init_tau must be > 0");
  }
  bool operator==(const ModelConfig&) const = default;
};

/// Small dims for finite-difference checks.
inline ModelConfig tiny_config(int d_in = 6) {
  ModelConfig c;
  c.encoder = {.d_in = d_in, .d_model = 8, .n_latents = 4, .n_self_layers = 1, .q_heads = 4, .kv_groups = 2,
               .mlp_expansion = 2, .pool_heads = 1, .d_embed = 6, .eps = 1e-5};
  c.text = {.d_model = 8, .n_layers = 1, .n_heads = 2, .max_len = 128, .mlp_expansion = 2, .eps = 1e-5};
  c.decoder = {.d_model = 8, .n_layers = 2, .n_heads = 2, .max_len = 384, .mlp_expansion = 2, .adapter_hidden = 8,
               .eps = 1e-5};
  return c;
}

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  const auto& e = c.encoder;
  const auto& t = c.text;
  const auto& d = c.decoder;
  nlohmann::ordered_json j;
  j["encoder"] = {{"d_in", e.d_in},           {"d_model", e.d_model},       {"n_latents", e.n_latents},
                  {"n_self_layers", e.n_self_layers}, {"q_heads", e.q_heads}, {"kv_groups", e.kv_groups},
                  {"mlp_expansion", e.mlp_expansion}, {"pool_heads", e.pool_heads}, {"d_embed", e.d_embed},
                  {"eps", e.eps}};
  j["text"] = {{"d_model", t.d_model}, {"n_layers", t.n_layers}, {"n_heads", t.n_heads},
               {"max_len", t.max_len}, {"mlp_expansion", t.mlp_expansion}, {"eps", t.eps}};
  j["decoder"] = {{"d_model", d.d_model},     {"n_layers", d.n_layers},
                  {"n_heads", d.n_heads},     {"max_len", d.max_len},
                  {"mlp_expansion", d.mlp_expansion}, {"adapter_hidden", d.adapter_hidden},
                  {"eps", d.eps}};
  j["init_tau"] = c.init_tau;
  return j;
}

inline ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  const auto& e = j.at("encoder");
  c.encoder = {e.at("d_in"),          e.at("d_model"),    e.at("n_latents"), e.at("n_self_layers"),
               e.at("q_heads"),       e.at("kv_groups"),  e.at("mlp_expansion"), e.at("pool_heads"),
               e.at("d_embed"),       e.at("eps")};
  const auto& t = j.at("text");
  c.text = {t.at("d_model"), t.at("n_layers"), t.at("n_heads"), t.at("max_len"), t.at("mlp_expansion"), t.at("eps")};
  const auto& d = j.at("decoder");
  c.decoder = {d.at("d_model"), d.at("n_layers"),      d.at("n_heads"),        d.at("max_len"),
               d.at("mlp_expansion"), d.at("adapter_hidden"), d.at("eps")};
  c.init_tau = j.at("init_tau");
  c.validate();
  return c;
}

/// Contrastive temperature bounds: tau = exp(log_tau) clamped into this range.
inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 1.0;

struct Model {
  ModelConfig config;
  corpus::Tokenizer tokenizer;
  ParamStore params;

  static Model init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(seed);
    const int vocab = m.tokenizer.vocab_size();
    encoder::init_params(m.params, config.encoder, rng);
    lm::init_text_params(m.params, config.text, vocab, config.encoder.d_embed, rng);
    lm::init_adapter_params(m.params, config.decoder, config.encoder.d_model, rng);
    lm::init_decoder_params(m.params, config.decoder, vocab, rng);
    Mat log_tau(1, 1);
    log_tau(0, 0) = std::log(config.init_tau);
    m.params.add("contrast.log_tau", log_tau);
    return m;
  }

  double tau() const { return std::clamp(std::exp(params.at("contrast.log_tau").value(0, 0)), kTauMin, kTauMax); }
};

// ---- SFCK1 ---------------------------------------------------------------

inline constexpr char kCheckpointMagic[5] = {'S', 'F', 'C', 'K', '1'};

inline std::string encode_checkpoint(const ParamStore& ps) {
  std::string buf(kCheckpointMagic, 5);
  corpus::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ps.size()));
  for (const auto& [name, p] : ps) {
    require(name.size() <= 0xFFFF, "checkpoint: tensor name too long");
    corpus::detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(2));
    corpus::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.rows()));
    corpus::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.cols()));
    buf.append(reinterpret_cast<const char*>(p.value.data()), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  return buf;
}

/// Parses a checkpoint into a fresh store. Rank-1 tensors load as one row.
inline ParamStore decode_checkpoint(std::string_view data) {
  if (data.size() < 5 || std::memcmp(data.data(), kCheckpointMagic, 5) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "SFCK1: bad magic");
  }
  corpus::detail::Reader in(data.substr(5));
  ParamStore ps;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint16_t>();
    std::string name(in.bytes(len));
    const auto rank = in.get<std::uint8_t>();
    if (rank > 2) throw FormatError(FormatError::Kind::kSchema, "SFCK1: unsupported rank for " + name);
    Index rows = 1;
    Index cols = 1;
    if (rank == 1) cols = in.get<std::uint32_t>();
    if (rank == 2) {
      rows = in.get<std::uint32_t>();
      cols = in.get<std::uint32_t>();
    }
    Mat m(rows, cols);
    const auto bytes = in.bytes(sizeof(double) * static_cast<std::size_t>(m.size()));
    std::memcpy(m.data(), bytes.data(), bytes.size());
    if (ps.contains(name)) throw FormatError(FormatError::Kind::kSchema, "SFCK1: duplicate tensor " + name);
    ps.add(name, std::move(m));
  }
  if (in.remaining() != 0) throw FormatError(FormatError::Kind::kSchema, "SFCK1: trailing bytes");
  return ps;
}

/// Copies every tensor of `src` into `dst`; names and shapes must match.
inline void load_into(ParamStore& dst, const ParamStore& src) {
  for (const auto& [name, p] : src) {
    if (!dst.contains(name)) throw FormatError(FormatError::Kind::kSchema, "checkpoint: unexpected tensor " + name);
    Parameter& d = dst.at(name);
    if (d.value.rows() != p.value.rows() || d.value.cols() != p.value.cols()) {
      throw FormatError(FormatError::Kind::kDimMismatch, "checkpoint: shape mismatch for " + name);
    }
    d.value = p.value;
  }
  for (const auto& [name, p] : dst) {
    if (!src.contains(name)) throw FormatError(FormatError::Kind::kSchema, "checkpoint: missing tensor " + name);
  }
}

/// Writes <dir>/model.json and <dir>/params.sfck.
inline void save_model(const Model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus::detail::write_file(dir / "model.json", config_to_json(m.config).dump(2) + "\n");
  corpus::detail::write_file(dir / "params.sfck", encode_checkpoint(m.params));
}

inline Model load_model(const std::filesystem::path& dir) {
  ModelConfig config;
  try {
    config = config_from_json(nlohmann::ordered_json::parse(corpus::detail::read_file(dir / "model.json")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kSchema, std::string("model.json: ") + e.what());
  }
  Model m = Model::init(config, 0);
  load_into(m.params, decode_checkpoint(corpus::detail::read_file(dir / "params.sfck")));
  return m;
}

}  // namespace slidelm
