#include <gtest/gtest.h>

#include <numeric>

#include "slidelm/corpus/generate.hpp"
#include "slidelm/predict.hpp"

using namespace slidelm;
using namespace slidelm::predict;

namespace {

const Model& tiny_model() {
  static const Model m = Model::init(tiny_config(6), 13);
  return m;
}

Mat latents_for(const Model& m, std::uint64_t seed) {
  Rng rng(seed);
  return random_normal(m.config.encoder.n_latents, m.config.encoder.d_model, 1.0, rng);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

PromptBank bank_of(std::vector<Mat> per_class) {
  PromptBank b;
  for (const auto& e : per_class) b.prompts.push_back(std::vector<std::string>(static_cast<std::size_t>(e.rows()), "x"));
  b.embeddings = std::move(per_class);
  return b;
}

}  // namespace

TEST(Decision, SoftmaxAndFirstMaximum) {
  EXPECT_EQ(argmax_first({1.0, 3.0, 3.0, 2.0}), 1u);
  EXPECT_EQ(argmax_first({0.5, 0.5}), 0u);
  const auto p = softmax({1000.0, 1000.0, 999.0});
  EXPECT_NEAR(sum(p), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(p[0], p[1]);
  EXPECT_TRUE(softmax({}).empty());
}

TEST(QA, ScoresArePointwiseMutualInformation) {
  const Model& m = tiny_model();
  const Mat lat = latents_for(m, 1);
  const std::string q = corpus::grammar::yes_no_question(corpus::Concept::kDcis);
  const QAResult r = qa_predict(m, lat, {q, {"Yes", "No"}});
  ASSERT_EQ(r.scores.size(), 2u);
  const std::string text = std::string(corpus::kImageToken) + " " + q;
  const std::size_t K = static_cast<std::size_t>(lat.rows());
  const Mat with = lm::decode_logits(m.params, m.config.decoder, lat, corpus::render_prompt(text, m.tokenizer, K)).logits;
  const Mat without = lm::decode_logits(m.params, m.config.decoder, lat, corpus::render_prompt(text, m.tokenizer, 0)).logits;
  auto log_p = [](const Mat& l, int id) {
    const Eigen::RowVectorXd row = l.bottomRows(1);
    return row(id) - std::log(row.array().exp().sum());
  };
  for (std::size_t i = 0; i < 2; ++i) {
    const int id = m.tokenizer.id(i == 0 ? "Yes" : "No");
    EXPECT_NEAR(r.scores[i], log_p(with, id) - log_p(without, id), 1e-10);
  }
  EXPECT_NEAR(sum(r.probabilities), 1.0, 1e-15);
  EXPECT_EQ(r.choice, argmax_first(r.scores));
  EXPECT_DOUBLE_EQ(yes_probability(m, lat, q), r.probabilities[0]);
}

TEST(QA, WithoutImageScoresTieAndTheFirstCompletionWins) {
  const Model& m = tiny_model();
  const QAResult r = qa_predict(m, latents_for(m, 2), {"what is the diagnosis?", {"B", "A", "C"}, false});
  for (double s : r.scores) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(r.choice, 0u);
  for (double p : r.probabilities) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(QA, CompletionsMustBeDistinctSingleTokens) {
  const Model& m = tiny_model();
  const Mat lat = latents_for(m, 3);
  EXPECT_THROW(qa_predict(m, lat, {"is there necrosis?", {"Yes.", "No."}}), InvalidArgument);
  EXPECT_THROW(qa_predict(m, lat, {"is there necrosis?", {"Yes", "Yes"}}), InvalidArgument);
  EXPECT_THROW(qa_predict(m, lat, {"is there necrosis?", {}}), InvalidArgument);
}

TEST(ZeroShot, EqualSimilaritiesSplitEvenly) {
  Eigen::VectorXd v(3);
  v << 1, 0, 0;
  const Mat row = v.transpose();
  const auto p = contrastive_predict(v, bank_of({row, row}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(ZeroShot, BestPromptPerClassDecides) {
  Eigen::VectorXd v(2);
  v << 1, 0;
  const Mat a = (Mat(1, 2) << 1, 0).finished();
  const Mat b = (Mat(1, 2) << 0, 1).finished();
  const auto p = contrastive_predict(v, bank_of({a, b}));
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  // A prompt scoring below the class maximum changes nothing.
  const Mat b2 = (Mat(2, 2) << 0, 1, -0.6, 0.8).finished();
  const auto q = contrastive_predict(v, bank_of({a, b2}));
  EXPECT_DOUBLE_EQ(q[0], p[0]);
  EXPECT_DOUBLE_EQ(q[1], p[1]);
}

TEST(ZeroShot, EmptyClassesAreRejected) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(contrastive_predict(v, bank_of({Mat::Ones(1, 2), Mat(0, 2)})), InvalidArgument);
  EXPECT_THROW(contrastive_predict(v, PromptBank{}), InvalidArgument);
  EXPECT_THROW(build_prompt_bank(tiny_model(), {{"carcinoma."}, {}}), InvalidArgument);
}

TEST(ZeroShot, DiagnosisBankEmbedsEveryClass) {
  const Model& m = tiny_model();
  for (int k : {2, 3, 4}) {
    const PromptBank bank = build_prompt_bank(m, diagnosis_prompts(k));
    ASSERT_EQ(bank.embeddings.size(), static_cast<std::size_t>(k));
    for (const Mat& e : bank.embeddings) EXPECT_NEAR(e.row(0).norm(), 1.0, 1e-12);
  }
}

TEST(Schema, DefaultLayout) {
  const ReportSchema s = default_schema();
  EXPECT_EQ(s.fields.size(), 9u);
  std::size_t multiclass = 0, yes_no = 0;
  for (const auto& f : s.fields) {
    if (f.kind == FieldKind::kMulticlass) ++multiclass;
    if (f.kind == FieldKind::kBinary) ++yes_no;
    if (f.kind == FieldKind::kMultilabel) yes_no += f.options.size();
  }
  EXPECT_EQ(multiclass, 5u);
  EXPECT_EQ(yes_no, 9u);
}

TEST(Schema, JsonRoundTrip) {
  const ReportSchema s = default_schema(3);
  const std::string text = schema_to_json(s);
  const ReportSchema back = schema_from_json(text);
  ASSERT_EQ(back.fields.size(), s.fields.size());
  for (std::size_t i = 0; i < s.fields.size(); ++i) {
    EXPECT_EQ(back.fields[i].name, s.fields[i].name);
    EXPECT_EQ(back.fields[i].kind, s.fields[i].kind);
    EXPECT_EQ(back.fields[i].question, s.fields[i].question);
    EXPECT_EQ(back.fields[i].options, s.fields[i].options);
  }
  EXPECT_EQ(schema_to_json(back), text);
}

TEST(Schema, InvalidDocumentsAreRejected) {
  auto kind_of = [](const std::string& text) {
    try {
      schema_from_json(text);
    } catch (const FormatError& e) {
      return static_cast<int>(e.kind());
    } catch (const InvalidArgument&) {
      return -1;
    }
    return -2;
  };
  const int schema = static_cast<int>(FormatError::Kind::kSchema);
  EXPECT_EQ(kind_of("{"), schema);
  EXPECT_EQ(kind_of(R"({"schema":"other","fields":[]})"), schema);
  EXPECT_EQ(kind_of(R"({"schema":"caprep_v1"})"), schema);
  EXPECT_EQ(kind_of(R"({"schema":"caprep_v1","fields":[]})"), -1);
  EXPECT_EQ(kind_of(R"({"schema":"caprep_v1","fields":[{"name":"a","kind":"multiclass","question":"q","options":["x"]}]})"), -1);
  EXPECT_EQ(kind_of(R"({"schema":"caprep_v1","fields":[{"name":"a","kind":"multilabel","question":"q","options":["x"]}]})"), -1);
  EXPECT_EQ(kind_of(R"({"schema":"caprep_v1","fields":[{"name":"a","kind":"ordinal","question":"q"}]})"), -1);
  EXPECT_EQ(kind_of(R"({"schema":"caprep_v1","fields":[{"name":"a","kind":"binary","question":"q"}]})"), -2);
}

TEST(Report, CompletionFollowsDecisionRules) {
  const Model& m = tiny_model();
  const ReportSchema s = default_schema(2);
  const FilledReport r = complete_report(m, latents_for(m, 4), s, "S1");
  ASSERT_EQ(r.fields.size(), s.fields.size());
  for (std::size_t i = 0; i < r.fields.size(); ++i) {
    const FilledField& f = r.fields[i];
    EXPECT_EQ(f.name, s.fields[i].name);
    ASSERT_EQ(f.selected.size(), f.probabilities.size());
    if (f.kind == FieldKind::kMulticlass) {
      EXPECT_NEAR(sum(f.probabilities), 1.0, 1e-12);
      EXPECT_EQ(std::count(f.selected.begin(), f.selected.end(), true), 1);
      EXPECT_TRUE(f.selected[argmax_first(f.probabilities)]);
    } else {
      for (std::size_t j = 0; j < f.selected.size(); ++j) {
        EXPECT_EQ(f.selected[j], f.probabilities[j] >= kDecisionThreshold);
      }
    }
  }
  const auto j = filled_report_json(r);
  EXPECT_EQ(j["schema"], "caprep_v1");
  EXPECT_EQ(j["specimen_id"], "S1");
  EXPECT_EQ(j["fields"].size(), s.fields.size());
}

TEST(Report, TruthLayoutMatchesSchema) {
  corpus::CorpusSpec spec;
  spec.n_specimens = 40;
  spec.n_classes = 3;
  spec.dim = 4;
  const auto c = corpus::generate_corpus(spec, 2);
  const ReportSchema s = default_schema(3);
  for (const auto& r : c.records) {
    for (const auto& f : s.fields) {
      const auto t = schema_truth(r, f);
      if (f.kind == FieldKind::kBinary) {
        EXPECT_EQ(t.size(), 1u);
      } else {
        EXPECT_EQ(t.size(), f.options.size());
      }
      if (f.kind == FieldKind::kMulticlass) {
        EXPECT_LE(std::count(t.begin(), t.end(), true), 1);
      }
      if (f.name == "diagnosis") {
        EXPECT_TRUE(t[static_cast<std::size_t>(r.label)]);
      }
    }
  }
}
