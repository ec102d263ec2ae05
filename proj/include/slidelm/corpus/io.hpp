#pragma once

// Corpus persistence.
//
// Embeddings: one "PEB1" file per specimen. After the 4-byte magic, all
// integers are little-endian:
//   u32 dim, u64 total tiles, u32 slide count,
//   per slide: u16 id length, UTF-8 id bytes, u64 tile count,
//   then total*dim float32 values, row-major, slides in order.
// Records: manifest.json with schema "peb_manifest_v1".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidelm/corpus/grammar.hpp"
#include "slidelm/corpus/types.hpp"
#include "slidelm/error.hpp"

namespace slidelm::corpus {

inline constexpr char kPebMagic[4] = {'P', 'E', 'B', '1'};
inline constexpr std::string_view kManifestSchema = "peb_manifest_v1";

namespace detail {

static_assert(std::endian::native == std::endian::little, "PEB1 I/O assumes a little-endian host");

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(FormatError::Kind::kTruncated, "PEB1: truncated payload");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_peb(const TileEmbeddingSet& tiles) {
  std::string buf(kPebMagic, 4);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(tiles.dim));
  detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(tiles.total_tiles()));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(tiles.slides.size()));
  for (const auto& s : tiles.slides) {
    require(s.slide_id.size() <= 0xFFFF, "slide id too long");
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(s.slide_id.size()));
    buf += s.slide_id;
    detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(s.embeddings.rows()));
  }
  for (const auto& s : tiles.slides) {
    buf.append(reinterpret_cast<const char*>(s.embeddings.data()),
               sizeof(float) * static_cast<std::size_t>(s.embeddings.size()));
  }
  return buf;
}

/// Decodes a PEB1 buffer; `expected_dim` < 0 skips the dimension check.
inline TileEmbeddingSet decode_peb(std::string_view data, std::string specimen_id, int expected_dim = -1) {
  if (data.size() < 4 || std::memcmp(data.data(), kPebMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "PEB1: bad magic");
  }
  detail::Reader in(data.substr(4));
  TileEmbeddingSet out;
  out.specimen_id = std::move(specimen_id);
  const auto dim = in.get<std::uint32_t>();
  if (expected_dim >= 0 && static_cast<int>(dim) != expected_dim) {
    throw FormatError(FormatError::Kind::kDimMismatch,
                      "PEB1: dim mismatch (file " + std::to_string(dim) + ", expected " +
                          std::to_string(expected_dim) + ")");
  }
  out.dim = static_cast<int>(dim);
  const auto total = in.get<std::uint64_t>();
  const auto n_slides = in.get<std::uint32_t>();
  std::uint64_t sum = 0;
  for (std::uint32_t s = 0; s < n_slides; ++s) {
    Slide slide;
    const auto len = in.get<std::uint16_t>();
    slide.slide_id = std::string(in.bytes(len));
    const auto n = in.get<std::uint64_t>();
    sum += n;
    slide.embeddings.resize(static_cast<Index>(n), static_cast<Index>(dim));
    out.slides.push_back(std::move(slide));
  }
  if (sum != total) throw FormatError(FormatError::Kind::kSchema, "PEB1: slide counts do not add up to total");
  if (in.remaining() < total * dim * sizeof(float)) {
    throw FormatError(FormatError::Kind::kTruncated, "PEB1: truncated payload");
  }
  for (auto& s : out.slides) {
    const auto bytes = in.bytes(sizeof(float) * static_cast<std::size_t>(s.embeddings.size()));
    std::memcpy(s.embeddings.data(), bytes.data(), bytes.size());
  }
  return out;
}

namespace detail {

inline nlohmann::ordered_json spec_to_json(const CorpusSpec& s) {
  nlohmann::ordered_json j;
  j["n_specimens"] = s.n_specimens;
  j["n_classes"] = s.n_classes;
  j["dim"] = s.dim;
  j["tiles_per_slide"] = {s.tiles_per_slide.min, s.tiles_per_slide.max};
  j["slides_per_specimen"] = {s.slides_per_specimen.min, s.slides_per_specimen.max};
  j["class_separation"] = s.class_separation;
  j["survival_beta"] = s.survival_beta;
  j["prognostic_spread"] = s.prognostic_spread;
  j["censoring_rate"] = s.censoring_rate;
  j["base_months"] = s.base_months;
  return j;
}

inline CorpusSpec spec_from_json(const nlohmann::ordered_json& j) {
  CorpusSpec s;
  s.n_specimens = j.at("n_specimens").get<std::int64_t>();
  s.n_classes = j.at("n_classes").get<int>();
  s.dim = j.at("dim").get<int>();
  s.tiles_per_slide = {j.at("tiles_per_slide").at(0).get<std::int64_t>(), j.at("tiles_per_slide").at(1).get<std::int64_t>()};
  s.slides_per_specimen = {j.at("slides_per_specimen").at(0).get<std::int64_t>(),
                           j.at("slides_per_specimen").at(1).get<std::int64_t>()};
  s.class_separation = j.at("class_separation").get<double>();
  s.survival_beta = j.at("survival_beta").get<std::vector<double>>();
  s.prognostic_spread = j.at("prognostic_spread").get<double>();
  s.censoring_rate = j.at("censoring_rate").get<double>();
  s.base_months = j.at("base_months").get<double>();
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed: " + p.string());
}

}  // namespace detail

inline std::string manifest_json(const Corpus& corpus) {
  nlohmann::ordered_json j;
  j["schema"] = kManifestSchema;
  j["seed"] = corpus.seed;
  j["spec"] = detail::spec_to_json(corpus.spec);
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : corpus.records) {
    nlohmann::ordered_json jr;
    jr["specimen_id"] = r.specimen_id;
    jr["label"] = r.label;
    jr["embeddings"] = "embeddings/" + r.specimen_id + ".peb";
    nlohmann::ordered_json findings = nlohmann::ordered_json::array();
    for (const auto& f : r.findings) {
      nlohmann::ordered_json jf;
      jf["concept"] = grammar::concept_key(f.topic);
      jf["present"] = f.present;
      jf["attributes"] = nlohmann::ordered_json::object();
      for (const auto& [k, v] : f.attributes) jf["attributes"][k] = v;
      findings.push_back(std::move(jf));
    }
    jr["findings"] = std::move(findings);
    jr["report"] = r.report;
    jr["history"] = r.history ? nlohmann::ordered_json(*r.history) : nlohmann::ordered_json(nullptr);
    jr["specimen_desc"] = r.specimen_desc ? nlohmann::ordered_json(*r.specimen_desc) : nlohmann::ordered_json(nullptr);
    if (r.survival) {
      jr["survival"] = {{"time_months", r.survival->time_months}, {"event", r.survival->event}};
    } else {
      jr["survival"] = nullptr;
    }
    records.push_back(std::move(jr));
  }
  j["records"] = std::move(records);
  return j.dump(2) + "\n";
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (!corpus.records.empty()) fs::create_directories(dir / "embeddings");
  for (const auto& r : corpus.records) {
    detail::write_file(dir / "embeddings" / (r.specimen_id + ".peb"), encode_peb(r.tiles));
  }
  detail::write_file(dir / "manifest.json", manifest_json(corpus));
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kSchema, std::string("manifest: ") + e.what());
  }
  if (j.value("schema", "") != kManifestSchema) {
    throw FormatError(FormatError::Kind::kSchema, "manifest: unsupported schema");
  }
  Corpus corpus;
  try {
    corpus.seed = j.at("seed").get<std::uint64_t>();
    corpus.spec = detail::spec_from_json(j.at("spec"));
    for (const auto& jr : j.at("records")) {
      SpecimenRecord r;
      r.specimen_id = jr.at("specimen_id").get<std::string>();
      r.label = jr.at("label").get<int>();
      for (const auto& jf : jr.at("findings")) {
        Finding f;
        f.topic = grammar::concept_from_key(jf.at("concept").get<std::string>());
        f.present = jf.at("present").get<bool>();
        for (const auto& [k, v] : jf.at("attributes").items()) f.attributes[k] = v.get<std::string>();
        r.findings.push_back(std::move(f));
      }
      r.report = jr.at("report").get<std::string>();
      if (!jr.at("history").is_null()) r.history = jr.at("history").get<std::string>();
      if (!jr.at("specimen_desc").is_null()) r.specimen_desc = jr.at("specimen_desc").get<std::string>();
      if (!jr.at("survival").is_null()) {
        r.survival = SurvivalLabel{jr.at("survival").at("time_months").get<std::int64_t>(),
                                   jr.at("survival").at("event").get<bool>()};
      }
      const auto rel = jr.at("embeddings").get<std::string>();
      r.tiles = decode_peb(detail::read_file(dir / rel), r.specimen_id, corpus.spec.dim);
      corpus.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kSchema, std::string("manifest: ") + e.what());
  }
  return corpus;
}

}  // namespace slidelm::corpus
