#pragma once

// Evaluation pipeline over a trained model: seeded splits, embedding
// extraction, zero-shot QA, report retrieval and report-completion
// calibration.

#include <map>
#include <string>
#include <vector>

#include "slidelm/adapt/calibration.hpp"
#include "slidelm/encoder.hpp"
#include "slidelm/langmodel.hpp"
#include "slidelm/metrics.hpp"
#include "slidelm/model.hpp"
#include "slidelm/predict.hpp"
#include "slidelm/trainer.hpp"

namespace slidelm::eval {

using train::RecordList;

struct Split {
  RecordList train;
  RecordList val;
  RecordList test;
};

/// Stratified by planted label: each class is shuffled with the seed, then
/// its first share goes to test, the next to validation, the rest to train.
/// Lists keep corpus order.
inline Split split_records(const corpus::Corpus& corpus, double test_fraction, double val_fraction,
                           std::uint64_t seed) {
  require(test_fraction >= 0 && val_fraction >= 0 && test_fraction + val_fraction < 1.0,
          "split: fractions must be >= 0 and sum below 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) by_class[corpus.records[i].label].push_back(i);
  std::vector<int> role(corpus.records.size(), 0);  // 0 train, 1 val, 2 test
  Rng rng(derive_seed(seed, 0x5B11));
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    const auto n = static_cast<double>(idx.size());
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * n + 0.5));
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * n + 0.5));
    for (std::size_t k = 0; k < idx.size(); ++k) role[idx[k]] = k < n_test ? 2 : (k < n_test + n_val ? 1 : 0);
  }
  Split s;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    (role[i] == 2 ? s.test : role[i] == 1 ? s.val : s.train).push_back(&corpus.records[i]);
  }
  return s;
}

enum class EmbeddingKind { kBase, kDiagnostic, kSurvival };

inline EmbeddingKind embedding_kind_from(const std::string& s) {
  if (s == "base") return EmbeddingKind::kBase;
  if (s == "diagnostic") return EmbeddingKind::kDiagnostic;
  if (s == "survival") return EmbeddingKind::kSurvival;
  throw InvalidArgument("embedding kind must be base, diagnostic or survival");
}

/// User text whose assistant-tag hidden state is the diagnostic embedding.
inline constexpr std::string_view kDiagnosticPrompt = "<|image|> what is the diagnosis?";

using LatentCache = std::map<std::string, Mat>;

inline LatentCache latents_of(const Model& m, const RecordList& records, std::int64_t budget = 512) {
  return train::cache_latents(m, records, budget);
}

/// One row per record.
inline Mat embeddings(const Model& m, const LatentCache& lat, const RecordList& records, EmbeddingKind kind) {
  const auto& ec = m.config.encoder;
  const Index width = kind == EmbeddingKind::kDiagnostic ? m.config.decoder.d_model : ec.d_embed;
  Mat out(static_cast<Index>(records.size()), width);
  const auto prompt =
      corpus::render_prompt(kDiagnosticPrompt, m.tokenizer, static_cast<std::size_t>(ec.n_latents));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Mat& l = lat.at(records[i]->specimen_id);
    const auto row = static_cast<Index>(i);
    switch (kind) {
      case EmbeddingKind::kBase:
        out.row(row) = encoder::base_embedding(m.params, ec, l).transpose();
        break;
      case EmbeddingKind::kDiagnostic:
        out.row(row) = lm::diagnostic_embedding(m.params, m.config.decoder, l, prompt).transpose();
        break;
      case EmbeddingKind::kSurvival: {
        ad::Graph g;
        nn::Binder b(g, m.params);
        out.row(row) = encoder::pool_survival(b, ec, g.constant(l)).embedding.value().row(0);
        break;
      }
    }
  }
  return out;
}

inline std::vector<int> labels_of(const RecordList& records) {
  std::vector<int> y;
  for (const auto* r : records) y.push_back(r->label);
  return y;
}

/// P(yes) for the standard question about `topic`.
inline std::vector<double> yes_no_probabilities(const Model& m, const LatentCache& lat, const RecordList& records,
                                                corpus::Concept topic) {
  const std::string q = corpus::grammar::yes_no_question(topic, 0);
  std::vector<double> out;
  for (const auto* r : records) out.push_back(predict::yes_probability(m, lat.at(r->specimen_id), q));
  return out;
}

inline std::vector<int> yes_no_truth(const RecordList& records, corpus::Concept topic) {
  std::vector<int> y;
  for (const auto* r : records) y.push_back(r->has(topic) ? 1 : 0);
  return y;
}

struct RetrievalResult {
  double top1_class = 0.0;  // retrieved report has the specimen's planted class
  double top1_exact = 0.0;  // retrieved report is the specimen's own
};

/// Each specimen's base embedding queries the reports of all `records`.
inline RetrievalResult report_retrieval(const Model& m, const LatentCache& lat, const RecordList& records) {
  require(!records.empty(), "report_retrieval: no records");
  std::vector<std::vector<int>> toks;
  for (const auto* r : records) toks.push_back(m.tokenizer.encode(r->report));
  Mat text;
  {
    ad::Graph g;
    nn::Binder b(g, m.params);
    text = lm::encode_text(b, m.config.text, toks).value();
  }
  const Mat img = embeddings(m, lat, records, EmbeddingKind::kBase);
  const Mat sim = img * text.transpose();
  std::size_t cls = 0, exact = 0;
  for (Index i = 0; i < sim.rows(); ++i) {
    Index j = 0;
    sim.row(i).maxCoeff(&j);
    cls += records[static_cast<std::size_t>(j)]->label == records[static_cast<std::size_t>(i)]->label ? 1 : 0;
    exact += j == i ? 1 : 0;
  }
  const double n = static_cast<double>(records.size());
  return {static_cast<double>(cls) / n, static_cast<double>(exact) / n};
}

struct FieldCalibration {
  std::string field;
  predict::FieldKind kind = predict::FieldKind::kBinary;
  std::size_t n = 0;         // specimens the field applies to
  double observed_amr = 0.0;  // argmax / threshold 0.5
  double max_amr = 0.0;       // after calibration on the same specimens
  adapt::Calibration calibration;
  bool scored = false;        // false when no class or option met the support
};

/// Observed and calibrated AMR for every schema field. Multiclass fields are
/// scored on specimens with exactly one true option.
inline std::vector<FieldCalibration> report_calibration(const Model& m, const LatentCache& lat,
                                                        const RecordList& records, const predict::ReportSchema& schema,
                                                        std::size_t min_support = metrics::kDefaultMinSupport) {
  std::vector<predict::FilledReport> filled;
  for (const auto* r : records) filled.push_back(predict::complete_report(m, lat.at(r->specimen_id), schema));
  std::vector<FieldCalibration> out;
  for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
    const auto& f = schema.fields[fi];
    FieldCalibration fc;
    fc.field = f.name;
    fc.kind = f.kind;
    try {
      if (f.kind == predict::FieldKind::kMulticlass) {
        std::vector<int> labels, pred;
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < records.size(); ++i) {
          const auto truth = predict::schema_truth(*records[i], f);
          if (std::count(truth.begin(), truth.end(), true) != 1) continue;
          labels.push_back(static_cast<int>(std::find(truth.begin(), truth.end(), true) - truth.begin()));
          rows.push_back(filled[i].fields[fi].probabilities);
          pred.push_back(static_cast<int>(predict::argmax_first(rows.back())));
        }
        fc.n = labels.size();
        if (labels.empty()) throw InvalidArgument("no applicable specimens");
        Mat probs(static_cast<Index>(rows.size()), static_cast<Index>(f.options.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t k = 0; k < rows[i].size(); ++k) probs(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
        }
        const int k = static_cast<int>(f.options.size());
        fc.observed_amr = metrics::adjusted_mean_recall(pred, labels, k, min_support);
        fc.calibration = adapt::calibrate_weights(probs, labels, min_support);
        fc.max_amr = metrics::adjusted_mean_recall(adapt::apply_weights(fc.calibration, probs), labels, k, min_support);
      } else {
        const std::size_t n_opt = f.kind == predict::FieldKind::kBinary ? 1 : f.options.size();
        Mat probs(static_cast<Index>(records.size()), static_cast<Index>(n_opt));
        std::vector<std::vector<bool>> truth, observed, calibrated;
        for (std::size_t i = 0; i < records.size(); ++i) {
          truth.push_back(predict::schema_truth(*records[i], f));
          observed.push_back(filled[i].fields[fi].selected);
          for (std::size_t o = 0; o < n_opt; ++o) {
            probs(static_cast<Index>(i), static_cast<Index>(o)) = filled[i].fields[fi].probabilities[o];
          }
        }
        fc.n = records.size();
        fc.observed_amr = metrics::adjusted_mean_recall_options(observed, truth, min_support);
        fc.calibration = adapt::calibrate_thresholds(probs, truth, min_support);
        for (std::size_t i = 0; i < records.size(); ++i) {
          calibrated.push_back(adapt::apply_thresholds(fc.calibration, filled[i].fields[fi].probabilities));
        }
        fc.max_amr = metrics::adjusted_mean_recall_options(calibrated, truth, min_support);
      }
      fc.scored = true;
    } catch (const InvalidArgument&) {
      fc.scored = false;
    }
    out.push_back(std::move(fc));
  }
  return out;
}

}  // namespace slidelm::eval
