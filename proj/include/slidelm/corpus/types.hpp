#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slidelm/error.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::corpus {

using FloatMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Slide {
  std::string slide_id;
  FloatMat embeddings;  // n_i x dim

  bool operator==(const Slide&) const = default;
};

/// Variable-length tile embeddings of one specimen, grouped by slide.
struct TileEmbeddingSet {
  std::string specimen_id;
  std::vector<Slide> slides;
  int dim = 0;

  std::int64_t total_tiles() const {
    std::int64_t n = 0;
    for (const auto& s : slides) n += s.embeddings.rows();
    return n;
  }

  /// All tiles stacked in slide order, widened to 64-bit.
  Mat stacked() const {
    Mat out(total_tiles(), dim);
    Index at = 0;
    for (const auto& s : slides) {
      out.middleRows(at, s.embeddings.rows()) = s.embeddings.cast<double>();
      at += s.embeddings.rows();
    }
    return out;
  }

  void validate() const {
    require(dim >= 1, "tile set " + specimen_id + ": dim must be >= 1");
    require(!slides.empty(), "tile set " + specimen_id + ": no slides");
    for (const auto& s : slides) {
      require(s.embeddings.rows() >= 1, "tile set " + specimen_id + ": empty slide " + s.slide_id);
      require(s.embeddings.cols() == dim, "tile set " + specimen_id + ": slide dim mismatch");
      require(s.embeddings.allFinite(), "tile set " + specimen_id + ": non-finite embedding");
    }
  }

  bool operator==(const TileEmbeddingSet&) const = default;
};

enum class Concept { kCarcinoma, kDcis, kNecrosis, kLymphovascularInvasion, kCalcifications, kInflammation };

inline constexpr Concept kAllConcepts[] = {Concept::kCarcinoma,      Concept::kDcis,
                                           Concept::kNecrosis,       Concept::kLymphovascularInvasion,
                                           Concept::kCalcifications, Concept::kInflammation};

struct Finding {
  Concept topic = Concept::kCarcinoma;
  bool present = false;
  std::map<std::string, std::string> attributes;

  bool operator==(const Finding&) const = default;
};

struct SurvivalLabel {
  std::int64_t time_months = 0;
  bool event = false;

  bool operator==(const SurvivalLabel&) const = default;
};

struct SpecimenRecord {
  std::string specimen_id;
  int label = 0;  // planted class
  TileEmbeddingSet tiles;
  std::vector<Finding> findings;
  std::string report;
  std::optional<std::string> history;
  std::optional<std::string> specimen_desc;
  std::optional<SurvivalLabel> survival;

  const Finding* find(Concept c) const {
    for (const auto& f : findings) {
      if (f.topic == c) return &f;
    }
    return nullptr;
  }
  bool has(Concept c) const {
    const Finding* f = find(c);
    return f != nullptr && f->present;
  }

  bool operator==(const SpecimenRecord&) const = default;
};

struct IntRange {
  std::int64_t min = 1;
  std::int64_t max = 1;

  bool operator==(const IntRange&) const = default;
};

struct CorpusSpec {
  std::int64_t n_specimens = 100;
  int n_classes = 2;
  int dim = 64;
  IntRange tiles_per_slide{16, 48};
  IntRange slides_per_specimen{1, 3};
  double class_separation = 2.0;
  // Survival labels are generated only when survival_beta is non-empty
  // (it must then have `dim` entries).
  std::vector<double> survival_beta;
  // Per-specimen spread of the tile mean along the survival_beta direction.
  double prognostic_spread = 0.0;
  double censoring_rate = 0.3;
  double base_months = 24.0;

  bool operator==(const CorpusSpec&) const = default;
};

struct Corpus {
  CorpusSpec spec;
  std::uint64_t seed = 0;
  std::vector<SpecimenRecord> records;

  const SpecimenRecord* find(const std::string& id) const {
    for (const auto& r : records) {
      if (r.specimen_id == id) return &r;
    }
    return nullptr;
  }

  bool operator==(const Corpus&) const = default;
};

}  // namespace slidelm::corpus
