#pragma once

// Direct prediction from a trained model: prior-corrected single-token QA,
// zero-shot ranking against per-class prompt banks, and schema-driven report
// completion.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidelm/corpus/chat.hpp"
#include "slidelm/corpus/grammar.hpp"
#include "slidelm/encoder.hpp"
#include "slidelm/langmodel.hpp"
#include "slidelm/model.hpp"

namespace slidelm::predict {

/// Question with single-token candidate answers. `prompt` is the user text
/// without the image placeholder.
struct QAQuery {
  std::string prompt;
  std::vector<std::string> completions;
  bool use_image = true;  // false omits the image from both passes
};

struct QAResult {
  std::size_t choice = 0;
  std::vector<double> scores;         // log P(c | prompt, image) - log P(c | prompt)
  std::vector<double> probabilities;  // softmax over scores
};

inline std::vector<double> softmax(const std::vector<double>& x) {
  std::vector<double> p(x.size());
  if (x.empty()) return p;
  const double mx = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (p[i] = std::exp(x[i] - mx));
  for (auto& v : p) v /= total;
  return p;
}

/// First index of the maximum.
inline std::size_t argmax_first(const std::vector<double>& x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

namespace detail {

/// Log-probabilities over the vocabulary at the assistant tag.
inline Eigen::RowVectorXd next_token_log_probs(const Model& m, const Mat& latents, const std::string& user_text,
                                               bool with_image) {
  const Index K = with_image ? latents.rows() : 0;
  const auto seq = corpus::render_prompt(user_text, m.tokenizer, static_cast<std::size_t>(K));
  const auto state = lm::decode_logits(m.params, m.config.decoder, latents, seq);
  Eigen::RowVectorXd row = state.logits.row(state.logits.rows() - 1);
  const double mx = row.maxCoeff();
  const double lse = mx + std::log((row.array() - mx).exp().sum());
  return row.array() - lse;
}

}  // namespace detail

inline std::vector<int> completion_ids(const corpus::Tokenizer& tok, const std::vector<std::string>& completions) {
  require(!completions.empty(), "qa_predict: no completions");
  std::vector<int> ids;
  for (const auto& c : completions) {
    const auto enc = tok.encode(c);
    if (enc.size() != 1) throw InvalidArgument("qa_predict: completion '" + c + "' is not a single token");
    if (std::find(ids.begin(), ids.end(), enc[0]) != ids.end()) {
      throw InvalidArgument("qa_predict: duplicate completion '" + c + "'");
    }
    ids.push_back(enc[0]);
  }
  return ids;
}

inline QAResult qa_predict(const Model& m, const Mat& latents, const QAQuery& q) {
  const auto ids = completion_ids(m.tokenizer, q.completions);
  const std::string image_text = std::string(corpus::kImageToken) + " " + q.prompt;
  const auto cond = detail::next_token_log_probs(m, latents, image_text, q.use_image);
  const auto prior = detail::next_token_log_probs(m, latents, image_text, false);
  QAResult r;
  for (int id : ids) r.scores.push_back(cond(id) - prior(id));
  r.choice = argmax_first(r.scores);
  r.probabilities = softmax(r.scores);
  return r;
}

/// Probability of "Yes" for a yes-no question.
inline double yes_probability(const Model& m, const Mat& latents, const std::string& question) {
  return qa_predict(m, latents, {question, {"Yes", "No"}}).probabilities[0];
}

// ---- contrastive -----------------------------------------------------------

struct PromptBank {
  std::vector<std::vector<std::string>> prompts;  // per class
  std::vector<Mat> embeddings;                     // per class: n_prompts x d_embed, unit rows
};

inline PromptBank build_prompt_bank(const Model& m, std::vector<std::vector<std::string>> prompts) {
  PromptBank bank;
  for (std::size_t c = 0; c < prompts.size(); ++c) {
    if (prompts[c].empty()) throw InvalidArgument("prompt bank: class " + std::to_string(c) + " has no prompts");
    std::vector<std::vector<int>> toks;
    for (const auto& p : prompts[c]) toks.push_back(m.tokenizer.encode(p));
    ad::Graph g;
    nn::Binder b(g, m.params);
    bank.embeddings.push_back(lm::encode_text(b, m.config.text, toks).value());
  }
  bank.prompts = std::move(prompts);
  return bank;
}

/// Class probabilities: softmax over the best prompt similarity per class.
inline std::vector<double> contrastive_predict(const Eigen::VectorXd& v, const PromptBank& bank) {
  require(!bank.embeddings.empty(), "contrastive_predict: empty bank");
  std::vector<double> sims;
  for (std::size_t c = 0; c < bank.embeddings.size(); ++c) {
    const Mat& e = bank.embeddings[c];
    if (e.rows() == 0) throw InvalidArgument("contrastive_predict: class " + std::to_string(c) + " has no prompts");
    require(e.cols() == v.size(), "contrastive_predict: embedding width mismatch");
    sims.push_back((e * v).maxCoeff());
  }
  return softmax(sims);
}

/// Zero-shot bank for the planted diagnosis classes: one diagnosis phrase per
/// class.
inline std::vector<std::vector<std::string>> diagnosis_prompts(int n_classes) {
  std::vector<std::vector<std::string>> out;
  const auto opts = corpus::grammar::diagnosis_options(n_classes);
  for (int c = 0; c < n_classes; ++c) out.push_back({opts[static_cast<std::size_t>(c)] + "."});
  return out;
}

// ---- report completion ------------------------------------------------------

enum class FieldKind { kMulticlass, kMultilabel, kBinary };

inline std::string field_kind_name(FieldKind k) {
  switch (k) {
    case FieldKind::kMulticlass: return "multiclass";
    case FieldKind::kMultilabel: return "multilabel";
    case FieldKind::kBinary: return "binary";
  }
  return "";
}

inline FieldKind field_kind_from(const std::string& s) {
  if (s == "multiclass") return FieldKind::kMulticlass;
  if (s == "multilabel") return FieldKind::kMultilabel;
  if (s == "binary") return FieldKind::kBinary;
  throw InvalidArgument("unknown field kind '" + s + "'");
}

/// Multiclass: `question` is asked as a lettered multiple choice over
/// `options`. Multilabel: `question` holds "{}" which each option fills, asked
/// as yes-no. Binary: `question` is itself a yes-no question.
struct SchemaField {
  std::string name;
  FieldKind kind = FieldKind::kBinary;
  std::string question;
  std::vector<std::string> options;
};

inline constexpr std::string_view kReportSchemaVersion = "caprep_v1";

struct ReportSchema {
  std::vector<SchemaField> fields;

  void validate() const {
    require(!fields.empty(), "report schema: no fields");
    for (const auto& f : fields) {
      const std::string at = "report schema field '" + f.name + "': ";
      if (f.name.empty()) throw InvalidArgument("report schema: field without a name");
      if (f.question.empty()) throw InvalidArgument(at + "empty question");
      switch (f.kind) {
        case FieldKind::kMulticlass:
          if (f.options.size() < 2 || f.options.size() > corpus::grammar::kOptionLetters.size()) {
            throw InvalidArgument(at + "multiclass needs 2..5 options");
          }
          break;
        case FieldKind::kMultilabel:
          if (f.options.empty()) throw InvalidArgument(at + "multilabel needs options");
          if (f.question.find("{}") == std::string::npos) throw InvalidArgument(at + "multilabel question lacks {}");
          break;
        case FieldKind::kBinary:
          if (!f.options.empty()) throw InvalidArgument(at + "binary fields take no options");
          break;
      }
    }
  }
};

inline std::string schema_to_json(const ReportSchema& s) {
  nlohmann::ordered_json j;
  j["schema"] = kReportSchemaVersion;
  j["fields"] = nlohmann::ordered_json::array();
  for (const auto& f : s.fields) {
    j["fields"].push_back(
        {{"name", f.name}, {"kind", field_kind_name(f.kind)}, {"question", f.question}, {"options", f.options}});
  }
  return j.dump(2) + "\n";
}

inline ReportSchema schema_from_json(std::string_view text) {
  ReportSchema s;
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    if (j.value("schema", "") != kReportSchemaVersion) {
      throw FormatError(FormatError::Kind::kSchema, "report schema: expected version caprep_v1");
    }
    for (const auto& jf : j.at("fields")) {
      SchemaField f;
      f.name = jf.at("name").get<std::string>();
      f.kind = field_kind_from(jf.at("kind").get<std::string>());
      f.question = jf.at("question").get<std::string>();
      if (jf.contains("options")) f.options = jf.at("options").get<std::vector<std::string>>();
      s.fields.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kSchema, std::string("report schema: ") + e.what());
  }
  s.validate();
  return s;
}

/// Synthetic synoptic schema: nine field groups, five multiple-choice fields
/// and nine yes-no questions in total.
inline ReportSchema default_schema(int n_classes = 2) {
  namespace gr = corpus::grammar;
  auto vec = [](const auto& arr) { return std::vector<std::string>(arr.begin(), arr.end()); };
  ReportSchema s;
  s.fields = {
      {"diagnosis", FieldKind::kMulticlass, "what is the diagnosis?", gr::diagnosis_options(std::max(2, n_classes))},
      {"invasive_carcinoma", FieldKind::kBinary, gr::yes_no_question(corpus::Concept::kCarcinoma), {}},
      {"histologic_grade", FieldKind::kMulticlass, "what is the histologic grade?", vec(gr::kGrades)},
      {"tumor_extent", FieldKind::kMulticlass, "what is the tumor extent?", vec(gr::kExtents)},
      {"dcis", FieldKind::kBinary, gr::yes_no_question(corpus::Concept::kDcis), {}},
      {"dcis_nuclear_grade", FieldKind::kMulticlass, "what is the nuclear grade of the ductal carcinoma in situ?",
       vec(gr::kGrades)},
      {"dcis_pattern", FieldKind::kMultilabel, "is there {} pattern?", vec(gr::kDcisPatterns)},
      {"ancillary_findings", FieldKind::kMultilabel, "is {} present?",
       {"necrosis", "lymphovascular invasion", "calcifications"}},
      {"inflammation", FieldKind::kMulticlass, "what is the degree of inflammation?", {"none", "mild", "marked"}},
  };
  return s;
}

inline constexpr double kDecisionThreshold = 0.5;

struct FilledField {
  std::string name;
  FieldKind kind = FieldKind::kBinary;
  std::vector<std::string> options;     // binary: {"yes"}
  std::vector<double> probabilities;    // multiclass: over options; otherwise p(yes) per option
  std::vector<bool> selected;
};

struct FilledReport {
  std::string specimen_id;
  std::vector<FilledField> fields;
};

inline std::string fill_blank(const std::string& templ, const std::string& value) {
  std::string out = templ;
  const auto at = out.find("{}");
  if (at != std::string::npos) out.replace(at, 2, value);
  return out;
}

inline FilledReport complete_report(const Model& m, const Mat& latents, const ReportSchema& schema,
                                    std::string specimen_id = {}) {
  schema.validate();
  FilledReport out;
  out.specimen_id = std::move(specimen_id);
  for (const auto& f : schema.fields) {
    FilledField ff;
    ff.name = f.name;
    ff.kind = f.kind;
    switch (f.kind) {
      case FieldKind::kMulticlass: {
        std::vector<std::string> letters;
        for (std::size_t i = 0; i < f.options.size(); ++i) {
          letters.emplace_back(corpus::grammar::kOptionLetters[i]);
        }
        const auto r = qa_predict(m, latents, {corpus::grammar::multiple_choice_prompt(f.question, f.options), letters});
        ff.options = f.options;
        ff.probabilities = r.probabilities;
        ff.selected.assign(f.options.size(), false);
        ff.selected[r.choice] = true;
        break;
      }
      case FieldKind::kMultilabel:
        ff.options = f.options;
        for (const auto& o : f.options) {
          const double p = yes_probability(m, latents, fill_blank(f.question, o));
          ff.probabilities.push_back(p);
          ff.selected.push_back(p >= kDecisionThreshold);
        }
        break;
      case FieldKind::kBinary: {
        const double p = yes_probability(m, latents, f.question);
        ff.options = {"yes"};
        ff.probabilities = {p};
        ff.selected = {p >= kDecisionThreshold};
        break;
      }
    }
    out.fields.push_back(std::move(ff));
  }
  return out;
}

inline nlohmann::ordered_json filled_report_json(const FilledReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = kReportSchemaVersion;
  j["specimen_id"] = r.specimen_id;
  j["fields"] = nlohmann::ordered_json::array();
  for (const auto& f : r.fields) {
    nlohmann::ordered_json jf;
    jf["name"] = f.name;
    jf["kind"] = field_kind_name(f.kind);
    jf["options"] = f.options;
    jf["probabilities"] = f.probabilities;
    jf["selected"] = f.selected;
    j["fields"].push_back(std::move(jf));
  }
  return j;
}

/// Ground truth for `default_schema` fields, read off a record's findings,
/// in the same layout as FilledField::selected.
inline std::vector<bool> schema_truth(const corpus::SpecimenRecord& r, const SchemaField& f) {
  using corpus::Concept;
  namespace gr = corpus::grammar;
  auto one_hot = [&](const std::string& v) {
    std::vector<bool> out(f.options.size(), false);
    for (std::size_t i = 0; i < f.options.size(); ++i) out[i] = f.options[i] == v;
    return out;
  };
  const corpus::Finding* carc = r.find(Concept::kCarcinoma);
  const corpus::Finding* dcis = r.find(Concept::kDcis);
  if (f.name == "diagnosis") return one_hot(f.options.at(static_cast<std::size_t>(r.label)));
  if (f.name == "invasive_carcinoma") return {r.has(Concept::kCarcinoma)};
  if (f.name == "histologic_grade") return one_hot(carc && carc->present ? gr::detail::attr(*carc, "grade") : "");
  if (f.name == "tumor_extent") return one_hot(carc && carc->present ? gr::detail::attr(*carc, "extent") : "");
  if (f.name == "dcis") return {r.has(Concept::kDcis)};
  if (f.name == "dcis_nuclear_grade") return one_hot(dcis && dcis->present ? gr::detail::attr(*dcis, "grade") : "");
  if (f.name == "dcis_pattern") {
    std::vector<bool> out(f.options.size(), false);
    if (dcis && dcis->present) {
      for (const auto& p : gr::split_list(gr::detail::attr(*dcis, "pattern"))) {
        for (std::size_t i = 0; i < f.options.size(); ++i) out[i] = out[i] || f.options[i] == p;
      }
    }
    return out;
  }
  if (f.name == "ancillary_findings") {
    return {r.has(Concept::kNecrosis), r.has(Concept::kLymphovascularInvasion), r.has(Concept::kCalcifications)};
  }
  if (f.name == "inflammation") {
    const corpus::Finding* inf = r.find(Concept::kInflammation);
    return one_hot(inf && inf->present ? gr::detail::attr(*inf, "severity") : "none");
  }
  throw InvalidArgument("schema_truth: no ground truth for field '" + f.name + "'");
}

}  // namespace slidelm::predict
