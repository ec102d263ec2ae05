#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>

#include "slidelm/corpus/grammar.hpp"
#include "slidelm/corpus/types.hpp"
#include "slidelm/error.hpp"
#include "slidelm/rng.hpp"

namespace slidelm::corpus {

inline constexpr std::int64_t kDefaultTileCap = 100000;

inline void validate(const CorpusSpec& spec) {
  require(spec.n_specimens >= 0, "n_specimens must be >= 0");
  require(spec.n_classes >= 1 && spec.n_classes <= grammar::kMaxClasses, "n_classes must be in [1, 5]");
  require(spec.dim >= spec.n_classes, "dim must be >= n_classes");
  require(spec.class_separation >= 0.0, "class_separation must be >= 0");
  require(spec.tiles_per_slide.min >= 1, "tiles_per_slide.min must be >= 1");
  require(spec.tiles_per_slide.min <= spec.tiles_per_slide.max,
          "invalid tiles_per_slide range: min " + std::to_string(spec.tiles_per_slide.min) + " > max " +
              std::to_string(spec.tiles_per_slide.max));
  require(spec.slides_per_specimen.min >= 1, "slides_per_specimen.min must be >= 1");
  require(spec.slides_per_specimen.min <= spec.slides_per_specimen.max,
          "invalid slides_per_specimen range: min " + std::to_string(spec.slides_per_specimen.min) + " > max " +
              std::to_string(spec.slides_per_specimen.max));
  require(spec.survival_beta.empty() || static_cast<int>(spec.survival_beta.size()) == spec.dim,
          "survival_beta must be empty or have dim entries");
  require(spec.prognostic_spread >= 0.0, "prognostic_spread must be >= 0");
  require(spec.censoring_rate >= 0.0 && spec.censoring_rate < 1.0, "censoring_rate must be in [0, 1)");
  require(spec.base_months > 0.0, "base_months must be > 0");
}

/// Orthonormal class directions scaled so every pair of class means is
/// `separation` apart.
inline std::vector<Eigen::VectorXd> class_means(const CorpusSpec& spec, Rng& rng) {
  std::vector<Eigen::VectorXd> basis;
  for (int c = 0; c < spec.n_classes; ++c) {
    Eigen::VectorXd v(spec.dim);
    for (int i = 0; i < spec.dim; ++i) v(i) = rng.normal();
    for (const auto& b : basis) v -= b.dot(v) * b;
    v.normalize();
    basis.push_back(v);
  }
  for (auto& b : basis) b *= spec.class_separation / std::sqrt(2.0);
  return basis;
}

inline std::string specimen_name(std::int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "S%05lld", static_cast<long long>(i));
  return buf;
}

/// Synthetic corpus: tiles are unit-variance spherical noise around a
/// class-conditional mean; findings, report and survival follow the planted
/// class. Output is a pure function of (spec, seed).
inline Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  validate(spec);
  Corpus corpus;
  corpus.spec = spec;
  corpus.seed = seed;
  Rng rng(seed);
  const auto means = class_means(spec, rng);

  Eigen::VectorXd beta;
  Eigen::VectorXd beta_dir;
  if (!spec.survival_beta.empty()) {
    beta = Eigen::Map<const Eigen::VectorXd>(spec.survival_beta.data(), spec.dim);
    const double norm = beta.norm();
    beta_dir = norm > 0 ? Eigen::VectorXd(beta / norm) : Eigen::VectorXd::Zero(spec.dim);
  }

  corpus.records.reserve(static_cast<std::size_t>(spec.n_specimens));
  for (std::int64_t i = 0; i < spec.n_specimens; ++i) {
    SpecimenRecord r;
    r.specimen_id = specimen_name(i);
    r.label = static_cast<int>(i % spec.n_classes);

    Eigen::VectorXd mean = means[static_cast<std::size_t>(r.label)];
    if (beta.size() > 0 && spec.prognostic_spread > 0) mean += rng.normal(0.0, spec.prognostic_spread) * beta_dir;

    r.tiles.specimen_id = r.specimen_id;
    r.tiles.dim = spec.dim;
    const auto n_slides = rng.uniform_int(spec.slides_per_specimen.min, spec.slides_per_specimen.max);
    for (std::int64_t s = 0; s < n_slides; ++s) {
      Slide slide;
      slide.slide_id = r.specimen_id + "-" + std::to_string(s + 1);
      const auto n = rng.uniform_int(spec.tiles_per_slide.min, spec.tiles_per_slide.max);
      slide.embeddings.resize(n, spec.dim);
      for (Index t = 0; t < n; ++t) {
        for (int k = 0; k < spec.dim; ++k) slide.embeddings(t, k) = static_cast<float>(mean(k) + rng.normal());
      }
      r.tiles.slides.push_back(std::move(slide));
    }

    r.findings = grammar::sample_findings(r.label, rng);
    r.report = grammar::render_report(r.findings, 0);
    if (rng.bernoulli(0.8)) r.history = grammar::sample_history(rng);
    if (rng.bernoulli(0.8)) r.specimen_desc = grammar::sample_specimen_desc(rng);

    if (beta.size() > 0) {
      // Proportional hazards with log relative hazard beta . mean.
      const double log_hazard = beta.dot(mean);
      const double event_time = spec.base_months * rng.exponential() * std::exp(-log_hazard);
      const bool censored = rng.bernoulli(spec.censoring_rate);
      const double observed = censored ? rng.uniform() * event_time : event_time;
      SurvivalLabel label;
      label.time_months = static_cast<std::int64_t>(std::floor(std::min(observed, 1e12)));
      label.event = !censored;
      r.survival = label;
    }
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

/// Drops whole slides, largest first (ties: later slide first), until the
/// specimen holds at most `cap` tiles.
inline SpecimenRecord cap_tiles(const SpecimenRecord& record, std::int64_t cap = kDefaultTileCap) {
  require(cap >= 1, "tile cap must be >= 1");
  SpecimenRecord out = record;
  auto& slides = out.tiles.slides;
  for (const auto& s : slides) {
    if (s.embeddings.rows() > cap) {
      throw InvalidArgument("slide " + s.slide_id + " has " + std::to_string(s.embeddings.rows()) +
                            " tiles, more than the cap of " + std::to_string(cap));
    }
  }
  while (out.tiles.total_tiles() > cap) {
    auto largest = slides.begin();
    for (auto it = slides.begin(); it != slides.end(); ++it) {
      if (it->embeddings.rows() >= largest->embeddings.rows()) largest = it;
    }
    slides.erase(largest);
  }
  return out;
}

}  // namespace slidelm::corpus
