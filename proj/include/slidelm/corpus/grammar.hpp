#pragma once

// Closed synthetic ontology and the template grammar that renders findings
// into reports, questions and answers. Every word the grammar can emit is
// listed in vocabulary_words(); the tokenizer is built from that list.

#include <algorithm>
#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "slidelm/corpus/types.hpp"
#include "slidelm/rng.hpp"

namespace slidelm::corpus::grammar {

inline constexpr int kReportVariants = 5;
inline constexpr int kMaxClasses = 5;

inline constexpr std::array<std::string_view, 4> kTumorTypes = {"ductal", "lobular", "mucinous", "papillary"};
inline constexpr std::array<std::string_view, 3> kGrades = {"low", "intermediate", "high"};
inline constexpr std::array<std::string_view, 3> kExtents = {"focal", "multifocal", "extensive"};
inline constexpr std::array<std::string_view, 4> kDcisPatterns = {"solid", "cribriform", "papillary",
                                                                  "micropapillary"};
inline constexpr std::array<std::string_view, 2> kSeverities = {"mild", "marked"};
inline constexpr std::array<std::string_view, 5> kOptionLetters = {"A", "B", "C", "D", "E"};

inline std::string concept_key(Concept c) {
  switch (c) {
    case Concept::kCarcinoma: return "carcinoma";
    case Concept::kDcis: return "dcis";
    case Concept::kNecrosis: return "necrosis";
    case Concept::kLymphovascularInvasion: return "lymphovascular_invasion";
    case Concept::kCalcifications: return "calcifications";
    case Concept::kInflammation: return "inflammation";
  }
  return "unknown";
}

inline Concept concept_from_key(std::string_view key) {
  for (Concept c : kAllConcepts) {
    if (concept_key(c) == key) return c;
  }
  throw InvalidArgument("unknown concept: " + std::string(key));
}

/// Surface name used in sentences and questions.
inline std::string concept_phrase(Concept c) {
  switch (c) {
    case Concept::kCarcinoma: return "invasive carcinoma";
    case Concept::kDcis: return "ductal carcinoma in situ";
    case Concept::kNecrosis: return "necrosis";
    case Concept::kLymphovascularInvasion: return "lymphovascular invasion";
    case Concept::kCalcifications: return "calcifications";
    case Concept::kInflammation: return "inflammation";
  }
  return "";
}

inline std::vector<std::string> split_list(const std::string& joined) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : joined) {
    if (ch == '+') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Draws the findings of one specimen. The class is planted: class 0 is
/// benign, class c >= 1 is invasive carcinoma of type c - 1 (mod 4). All other
/// findings are drawn independently of the class.
inline std::vector<Finding> sample_findings(int label, Rng& rng) {
  std::vector<Finding> out;
  Finding carcinoma{Concept::kCarcinoma, label >= 1, {}};
  if (carcinoma.present) {
    carcinoma.attributes["type"] = std::string(kTumorTypes[static_cast<std::size_t>(label - 1) % kTumorTypes.size()]);
    carcinoma.attributes["grade"] = std::string(kGrades[rng.index(kGrades.size())]);
    carcinoma.attributes["extent"] = std::string(kExtents[rng.index(kExtents.size())]);
  }
  out.push_back(carcinoma);

  Finding dcis{Concept::kDcis, rng.bernoulli(0.5), {}};
  if (dcis.present) {
    dcis.attributes["grade"] = std::string(kGrades[rng.index(kGrades.size())]);
    std::vector<std::string> patterns;
    for (auto p : kDcisPatterns) {
      if (rng.bernoulli(0.5)) patterns.emplace_back(p);
    }
    if (patterns.empty()) patterns.emplace_back(kDcisPatterns[rng.index(kDcisPatterns.size())]);
    dcis.attributes["pattern"] = join(patterns, "+");
  }
  out.push_back(dcis);

  for (Concept c : {Concept::kNecrosis, Concept::kLymphovascularInvasion, Concept::kCalcifications}) {
    out.push_back(Finding{c, rng.bernoulli(0.5), {}});
  }
  Finding inflammation{Concept::kInflammation, rng.bernoulli(0.5), {}};
  if (inflammation.present) {
    inflammation.attributes["severity"] = std::string(kSeverities[rng.index(kSeverities.size())]);
  }
  out.push_back(inflammation);
  return out;
}

namespace detail {

inline std::string attr(const Finding& f, const std::string& key) {
  auto it = f.attributes.find(key);
  return it == f.attributes.end() ? std::string() : it->second;
}

inline std::string carcinoma_sentence(const Finding& f, int v) {
  if (!f.present) {
    switch (v) {
      case 0: return "benign breast tissue. no invasive carcinoma is identified.";
      case 1: return "the specimen shows benign breast tissue. invasive carcinoma is absent.";
      case 2: return "benign breast tissue, negative for invasive carcinoma.";
      case 3: return "diagnosis: benign breast tissue. no invasive carcinoma is seen.";
      default: return "there is benign breast tissue without invasive carcinoma.";
    }
  }
  const std::string type = attr(f, "type");
  const std::string grade = attr(f, "grade");
  const std::string extent = attr(f, "extent");
  switch (v) {
    case 0: return "invasive " + type + " carcinoma, " + grade + " grade. the tumor is " + extent + ".";
    case 1: return "the specimen shows " + grade + " grade invasive " + type + " carcinoma. the tumor is " + extent + ".";
    case 2: return "there is invasive " + type + " carcinoma of " + grade + " grade. the tumor is " + extent + ".";
    case 3: return "diagnosis: invasive " + type + " carcinoma, " + grade + " grade. the tumor is " + extent + ".";
    default: return "the tumor is " + extent + ". invasive " + type + " carcinoma, " + grade + " grade.";
  }
}

inline std::string dcis_sentence(const Finding& f, int v) {
  if (!f.present) {
    switch (v % 3) {
      case 0: return "no ductal carcinoma in situ is seen.";
      case 1: return "ductal carcinoma in situ is absent.";
      default: return "negative for ductal carcinoma in situ.";
    }
  }
  const std::string grade = attr(f, "grade");
  const std::string patterns = join(split_list(attr(f, "pattern")), " and ");
  switch (v % 3) {
    case 0: return "ductal carcinoma in situ is present, " + grade + " nuclear grade, " + patterns + " pattern.";
    case 1: return "there is ductal carcinoma in situ of " + grade + " nuclear grade with " + patterns + " pattern.";
    default: return "ductal carcinoma in situ is identified, " + patterns + " pattern, " + grade + " nuclear grade.";
  }
}

inline std::string binary_sentence(const Finding& f, int v) {
  const std::string name = concept_phrase(f.topic);
  const std::string be = f.topic == Concept::kCalcifications ? " are " : " is ";
  if (f.topic == Concept::kInflammation && f.present) {
    const std::string sev = attr(f, "severity");
    return v % 2 == 0 ? sev + " inflammation is present." : "there is " + sev + " inflammation.";
  }
  if (f.present) {
    switch (v % 3) {
      case 0: return name + be + "present.";
      case 1: return name + be + "identified.";
      default: return "there is " + name + ".";
    }
  }
  switch (v % 3) {
    case 0: return "no " + name + be + "seen.";
    case 1: return name + be + "absent.";
    default: return "negative for " + name + ".";
  }
}

}  // namespace detail

inline std::string render_finding(const Finding& f, int variant) {
  switch (f.topic) {
    case Concept::kCarcinoma: return detail::carcinoma_sentence(f, variant);
    case Concept::kDcis: return detail::dcis_sentence(f, variant);
    default: return detail::binary_sentence(f, variant);
  }
}

/// One of the five paraphrases of the report for `findings`. Variant 0 is the
/// canonical report stored on the record.
inline std::string render_report(const std::vector<Finding>& findings, int variant) {
  require(variant >= 0 && variant < kReportVariants, "report variant out of range");
  std::vector<std::string> sentences;
  for (const auto& f : findings) sentences.push_back(render_finding(f, variant));
  // Later variants rotate the order of the secondary findings.
  if (sentences.size() > 2 && variant > 0) {
    std::rotate(sentences.begin() + 1, sentences.begin() + 1 + (variant % static_cast<int>(sentences.size() - 1)),
                sentences.end());
  }
  return join(sentences, " ");
}

inline std::string sample_history(Rng& rng) {
  static constexpr std::array<std::string_view, 11> kAges = {"35", "40", "45", "50", "55", "60",
                                                            "65", "70", "75", "80", "85"};
  static constexpr std::array<std::string_view, 4> kComplaints = {
      "a palpable mass", "an abnormal mammogram", "a family history of breast cancer", "breast pain"};
  return "history: " + std::string(kAges[rng.index(kAges.size())]) + " year old woman with " +
         std::string(kComplaints[rng.index(kComplaints.size())]) + ".";
}

inline std::string sample_specimen_desc(Rng& rng) {
  static constexpr std::array<std::string_view, 3> kProcedures = {"core needle biopsy", "excisional biopsy",
                                                                 "lumpectomy"};
  static constexpr std::array<std::string_view, 2> kSides = {"left", "right"};
  return "specimen: " + std::string(kProcedures[rng.index(kProcedures.size())]) + " of the " +
         std::string(kSides[rng.index(kSides.size())]) + " breast.";
}

/// Yes-no question about the presence of a concept.
inline std::string yes_no_question(Concept c, int variant = 0) {
  const std::string name = concept_phrase(c);
  const std::string be = c == Concept::kCalcifications ? "are " : "is ";
  return variant % 2 == 0 ? be + name + " present?" : be + "there " + name + "?";
}

inline std::string yes_no_answer(bool present) { return present ? "Yes." : "No."; }

/// Diagnosis options for a corpus with `n_classes` planted classes.
inline std::vector<std::string> diagnosis_options(int n_classes) {
  std::vector<std::string> out{"benign breast tissue"};
  for (int c = 1; c < n_classes; ++c) {
    out.push_back("invasive " + std::string(kTumorTypes[static_cast<std::size_t>(c - 1) % kTumorTypes.size()]) +
                  " carcinoma");
  }
  return out;
}

inline std::string diagnosis_text(int label) { return diagnosis_options(label + 1).back(); }

inline std::string multiple_choice_prompt(const std::string& question, const std::vector<std::string>& options) {
  require(options.size() >= 2 && options.size() <= kOptionLetters.size(), "multiple choice needs 2..5 options");
  std::string out = question;
  for (std::size_t i = 0; i < options.size(); ++i) {
    out += " " + std::string(kOptionLetters[i]) + ". " + options[i];
  }
  return out;
}

inline std::string option_answer(std::size_t index) { return std::string(kOptionLetters.at(index)) + "."; }

inline constexpr std::string_view kReportInstruction = "write a report.";
inline constexpr std::string_view kMatchingInstruction = "does the following report describe this specimen?";
inline constexpr std::string_view kMatchAnswer = "Yes, the report matches.";
inline constexpr std::string_view kMismatchAnswer = "No, the report does not match. the correct report is:";

/// Planted-label polarity stated by a report: true for carcinoma, false for
/// benign, nullopt when the text states neither.
inline std::optional<bool> parse_carcinoma_polarity(std::string_view text) {
  for (auto t : kTumorTypes) {
    const std::string needle = "invasive " + std::string(t) + " carcinoma";
    if (text.find(needle) != std::string_view::npos) return true;
  }
  if (text.find("benign") != std::string_view::npos) return false;
  return std::nullopt;
}

/// Every word the grammar can emit (punctuation and special tokens excluded).
inline const std::vector<std::string>& vocabulary_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w = {
        // reports
        "benign", "breast", "tissue", "no", "invasive", "carcinoma", "is", "are", "identified", "the", "specimen", "shows",
        "absent", "negative", "for", "diagnosis", "seen", "there", "without", "grade", "tumor", "of", "ductal",
        "lobular", "mucinous", "papillary", "low", "intermediate", "high", "focal", "multifocal", "extensive", "in",
        "situ", "present", "nuclear", "pattern", "with", "and", "solid", "cribriform", "micropapillary", "necrosis",
        "lymphovascular", "invasion", "calcifications", "inflammation", "mild", "marked",
        // history / specimen
        "history", "year", "old", "woman", "a", "an", "palpable", "mass", "abnormal", "mammogram", "family", "cancer",
        "pain", "35", "40", "45", "50", "55", "60", "65", "70", "75", "80", "85", "core", "needle", "biopsy",
        "excisional", "lumpectomy", "left", "right",
        // prompts and answers
        "write", "report", "does", "following", "describe", "this", "Yes", "No", "matches", "not", "match",
        "correct", "what", "histologic", "type", "degree", "none", "A", "B", "C", "D", "E", "which", "best",
        "describes", "extent", "architectural"};
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
    return w;
  }();
  return words;
}

}  // namespace slidelm::corpus::grammar
