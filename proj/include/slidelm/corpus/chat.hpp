#pragma once

// Dialogue examples built from specimen records: report generation, yes-no,
// open-ended and multiple-choice QA, and image-text matching.

#include <span>
#include <string>
#include <vector>

#include "slidelm/corpus/grammar.hpp"
#include "slidelm/corpus/tokenizer.hpp"
#include "slidelm/corpus/types.hpp"
#include "slidelm/rng.hpp"

namespace slidelm::corpus {

enum class TaskKind { kReportGeneration, kYesNo, kOpenEnded, kMultipleChoice, kMatching };

inline constexpr TaskKind kAllTaskKinds[] = {TaskKind::kReportGeneration, TaskKind::kYesNo, TaskKind::kOpenEnded,
                                             TaskKind::kMultipleChoice, TaskKind::kMatching};
inline constexpr int kTaskKindCount = 5;

inline std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::kReportGeneration: return "report_generation";
    case TaskKind::kYesNo: return "yes_no";
    case TaskKind::kOpenEnded: return "open_ended";
    case TaskKind::kMultipleChoice: return "multiple_choice";
    case TaskKind::kMatching: return "matching";
  }
  return "";
}

struct Turn {
  Role role = Role::kUser;
  std::string text;
};

/// Alternating user/assistant turns. The first user turn starts with the image
/// placeholder; every assistant turn is a training target.
struct ChatExample {
  TaskKind kind = TaskKind::kReportGeneration;
  std::vector<Turn> turns;
  // Set for yes-no examples so grammar soundness can be checked.
  std::optional<Concept> queried;
  std::string answer_source;  // specimen whose findings the answer describes
};

struct SamplingRates {
  double history = 0.2;
  double specimen = 0.2;
  double complementary = 0.2;
};

struct QAPair {
  std::string specimen_id;  // specimen the answer is about
  Concept topic = Concept::kCarcinoma;
  std::string question;
  std::string answer;
};

inline constexpr std::string_view kImageToken = "<|image|>";

namespace detail {

inline std::string first_user_turn(const SpecimenRecord& r, const SamplingRates& rates, Rng& rng,
                                   std::string_view instruction) {
  std::string text(kImageToken);
  // Both draws always happen so the stream does not depend on record contents.
  const bool with_history = rng.bernoulli(rates.history);
  const bool with_specimen = rng.bernoulli(rates.specimen);
  if (with_history && r.history) text += " " + *r.history;
  if (with_specimen && r.specimen_desc) text += " " + *r.specimen_desc;
  text += " ";
  text += instruction;
  return text;
}

inline ChatExample two_turn(TaskKind kind, std::string user, std::string assistant, const std::string& source) {
  ChatExample ex;
  ex.kind = kind;
  ex.turns.push_back({Role::kUser, std::move(user)});
  ex.turns.push_back({Role::kAssistant, std::move(assistant)});
  ex.answer_source = source;
  return ex;
}

inline Concept sample_yes_no_concept(Rng& rng) {
  // Half the yes-no questions target the planted diagnosis.
  if (rng.bernoulli(0.5)) return Concept::kCarcinoma;
  static constexpr Concept kOthers[] = {Concept::kDcis, Concept::kNecrosis, Concept::kLymphovascularInvasion,
                                        Concept::kCalcifications, Concept::kInflammation};
  return kOthers[rng.index(std::size(kOthers))];
}

struct Question {
  std::string question;
  std::vector<std::string> options;
  std::size_t answer = 0;
  std::string open_answer;
};

/// Questions answerable from a record; the first one is always the diagnosis.
inline std::vector<Question> attribute_questions(const SpecimenRecord& r, int n_classes) {
  std::vector<Question> out;
  const auto diag = grammar::diagnosis_options(std::max(n_classes, r.label + 1));
  out.push_back({"what is the diagnosis?", diag, static_cast<std::size_t>(r.label), diag[static_cast<std::size_t>(r.label)] + "."});
  auto index_of = [](auto& arr, const std::string& v) {
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (arr[i] == v) return i;
    }
    return std::size_t{0};
  };
  auto to_vec = [](auto& arr) { return std::vector<std::string>(arr.begin(), arr.end()); };
  if (const Finding* c = r.find(Concept::kCarcinoma); c && c->present) {
    const std::string grade = grammar::detail::attr(*c, "grade");
    const std::string extent = grammar::detail::attr(*c, "extent");
    out.push_back({"what is the histologic grade?", to_vec(grammar::kGrades), index_of(grammar::kGrades, grade),
                   grade + " grade."});
    out.push_back({"what is the tumor extent?", to_vec(grammar::kExtents), index_of(grammar::kExtents, extent),
                   "the tumor is " + extent + "."});
  }
  if (const Finding* d = r.find(Concept::kDcis); d && d->present) {
    const std::string grade = grammar::detail::attr(*d, "grade");
    out.push_back({"what is the nuclear grade of the ductal carcinoma in situ?", to_vec(grammar::kGrades),
                   index_of(grammar::kGrades, grade), grade + " nuclear grade."});
  }
  if (const Finding* f = r.find(Concept::kInflammation)) {
    const std::string sev = f->present ? grammar::detail::attr(*f, "severity") : "none";
    const std::vector<std::string> opts{"none", "mild", "marked"};
    out.push_back({"what is the degree of inflammation?", opts, index_of(opts, sev),
                   f->present ? sev + " inflammation." : "no inflammation is seen."});
  }
  return out;
}

}  // namespace detail

inline QAPair yes_no_pair(const SpecimenRecord& target, Concept c, int variant) {
  return {target.specimen_id, c, grammar::yes_no_question(c, variant), grammar::yes_no_answer(target.has(c))};
}

/// Pairs questions drawn from random source specimens with random target
/// specimens; the answer is read off the target's findings. Questions come
/// from findings the source states as present, mirroring how positive
/// mentions dominate report-derived questions.
inline std::vector<QAPair> mine_complementary_qa(const Corpus& corpus, Rng& rng, std::size_t count) {
  require(!corpus.records.empty(), "mine_complementary_qa: empty corpus");
  std::vector<QAPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const SpecimenRecord& target = corpus.records[rng.index(corpus.records.size())];
    const SpecimenRecord& source = corpus.records[rng.index(corpus.records.size())];
    std::vector<Concept> positives;
    for (const auto& f : source.findings) {
      if (f.present) positives.push_back(f.topic);
    }
    const Concept c = positives.empty() ? Concept::kCarcinoma : positives[rng.index(positives.size())];
    out.push_back(yes_no_pair(target, c, static_cast<int>(rng.index(2))));
  }
  return out;
}

/// One mined pair per specimen.
inline std::vector<QAPair> mine_complementary_qa(const Corpus& corpus, Rng& rng) {
  return mine_complementary_qa(corpus, rng, corpus.records.size());
}

/// Image-text matching: with probability `mismatch_prob` the shown report
/// belongs to a different specimen and the target restates the correct one.
inline ChatExample build_matching_example(const SpecimenRecord& record, const Corpus& corpus, Rng& rng,
                                          double mismatch_prob, const SamplingRates& rates = {}) {
  require(corpus.records.size() >= 2, "build_matching_example: corpus needs >= 2 specimens");
  const bool mismatch = rng.bernoulli(mismatch_prob);
  const SpecimenRecord* shown = &record;
  if (mismatch) {
    do {
      shown = &corpus.records[rng.index(corpus.records.size())];
    } while (shown->specimen_id == record.specimen_id);
  }
  const int shown_variant = static_cast<int>(rng.index(grammar::kReportVariants));
  const int own_variant = static_cast<int>(rng.index(grammar::kReportVariants));
  std::string user = detail::first_user_turn(record, rates, rng, grammar::kMatchingInstruction);
  user += " " + grammar::render_report(shown->findings, shown_variant);
  std::string assistant = mismatch ? std::string(grammar::kMismatchAnswer) + " " +
                                         grammar::render_report(record.findings, own_variant)
                                   : std::string(grammar::kMatchAnswer);
  return detail::two_turn(TaskKind::kMatching, std::move(user), std::move(assistant), record.specimen_id);
}

struct ChatContext {
  const Corpus* corpus = nullptr;           // for matching negatives
  std::span<const QAPair> complementary;    // mined pairs targeting this record
  double mismatch_prob = 0.5;
  int n_classes = 2;
};

inline ChatExample build_chat_example(const SpecimenRecord& record, TaskKind kind, const SamplingRates& rates,
                                      Rng& rng, const ChatContext& ctx = {}) {
  require(!record.findings.empty(), "build_chat_examples: record has no findings");
  switch (kind) {
    case TaskKind::kReportGeneration: {
      std::string user = detail::first_user_turn(record, rates, rng, grammar::kReportInstruction);
      const int v = static_cast<int>(rng.index(grammar::kReportVariants));
      return detail::two_turn(kind, std::move(user), grammar::render_report(record.findings, v), record.specimen_id);
    }
    case TaskKind::kYesNo: {
      QAPair qa;
      const bool use_complementary = rng.bernoulli(rates.complementary) && !ctx.complementary.empty();
      if (use_complementary) {
        qa = ctx.complementary[rng.index(ctx.complementary.size())];
        require(qa.specimen_id == record.specimen_id, "complementary pair targets another specimen");
      } else {
        qa = yes_no_pair(record, detail::sample_yes_no_concept(rng), static_cast<int>(rng.index(2)));
      }
      std::string user = detail::first_user_turn(record, rates, rng, qa.question);
      ChatExample ex = detail::two_turn(kind, std::move(user), qa.answer, record.specimen_id);
      ex.queried = qa.topic;
      return ex;
    }
    case TaskKind::kOpenEnded: {
      auto qs = detail::attribute_questions(record, ctx.n_classes);
      const auto& q = rng.bernoulli(0.5) ? qs[0] : qs[rng.index(qs.size())];
      std::string user = detail::first_user_turn(record, rates, rng, q.question);
      return detail::two_turn(kind, std::move(user), q.open_answer, record.specimen_id);
    }
    case TaskKind::kMultipleChoice: {
      auto qs = detail::attribute_questions(record, ctx.n_classes);
      const auto& q = rng.bernoulli(0.5) ? qs[0] : qs[rng.index(qs.size())];
      std::string user =
          detail::first_user_turn(record, rates, rng, grammar::multiple_choice_prompt(q.question, q.options));
      return detail::two_turn(kind, std::move(user), grammar::option_answer(q.answer), record.specimen_id);
    }
    case TaskKind::kMatching: {
      if (ctx.corpus == nullptr || ctx.corpus->records.size() < 2) {
        std::string user = detail::first_user_turn(record, rates, rng, grammar::kMatchingInstruction);
        user += " " + grammar::render_report(record.findings, static_cast<int>(rng.index(grammar::kReportVariants)));
        return detail::two_turn(kind, std::move(user), std::string(grammar::kMatchAnswer), record.specimen_id);
      }
      return build_matching_example(record, *ctx.corpus, rng, ctx.mismatch_prob, rates);
    }
  }
  throw InvalidArgument("unknown task kind");
}

/// One example of every task kind, in kAllTaskKinds order.
inline std::vector<ChatExample> build_chat_examples(const SpecimenRecord& record, const SamplingRates& rates, Rng& rng,
                                                    const ChatContext& ctx = {}) {
  std::vector<ChatExample> out;
  for (TaskKind k : kAllTaskKinds) out.push_back(build_chat_example(record, k, rates, rng, ctx));
  return out;
}

/// Renders turns with role tags. The image placeholder in the first user turn
/// expands to `n_latents` image positions (omitted entirely when n_latents is
/// zero). Assistant content and its closing <|end|> are loss targets.
inline TokenSeq render_chat(const std::vector<Turn>& turns, const Tokenizer& tok, std::size_t n_latents,
                            bool close_last_assistant = true) {
  TokenSeq seq;
  auto push = [&](int id, Role role, bool target) {
    seq.ids.push_back(id);
    seq.roles.push_back(role);
    seq.loss_mask.push_back(target);
  };
  bool seen_image = false;
  for (std::size_t t = 0; t < turns.size(); ++t) {
    const Turn& turn = turns[t];
    const bool assistant = turn.role == Role::kAssistant;
    require(assistant == (t % 2 == 1), "chat turns must alternate starting with user");
    push(assistant ? Tokenizer::kAssistant : Tokenizer::kUser, Role::kSpecial, false);
    for (int id : tok.encode(turn.text)) {
      if (id == Tokenizer::kImage) {
        require(!seen_image && t == 0, "image placeholder must appear once, in the first user turn");
        seen_image = true;
        if (n_latents > 0) seq.image_span = ImageSpan{seq.ids.size(), n_latents};
        for (std::size_t k = 0; k < n_latents; ++k) push(Tokenizer::kImage, Role::kImage, false);
        continue;
      }
      push(id, assistant ? Role::kAssistant : Role::kUser, assistant);
    }
    if (!assistant || close_last_assistant || t + 1 < turns.size()) push(Tokenizer::kEnd, Role::kSpecial, assistant);
  }
  return seq;
}

inline TokenSeq render_chat(const ChatExample& ex, const Tokenizer& tok, std::size_t n_latents) {
  return render_chat(ex.turns, tok, n_latents);
}

/// Prompt ending at the assistant tag: <|user|> image... text <|end|> <|assistant|>.
inline TokenSeq render_prompt(std::string_view user_text, const Tokenizer& tok, std::size_t n_latents) {
  TokenSeq seq = render_chat(std::vector<Turn>{{Role::kUser, std::string(user_text)}}, tok, n_latents);
  seq.ids.push_back(Tokenizer::kAssistant);
  seq.roles.push_back(Role::kSpecial);
  seq.loss_mask.push_back(false);
  return seq;
}

}  // namespace slidelm::corpus
