#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "slidelm/adapt/probe.hpp"
#include "slidelm/corpus/chat.hpp"
#include "slidelm/corpus/generate.hpp"
#include "slidelm/corpus/io.hpp"
#include "slidelm/metrics.hpp"

using namespace slidelm;
using namespace slidelm::corpus;

namespace {

CorpusSpec small_spec(std::int64_t n = 12) {
  CorpusSpec s;
  s.n_specimens = n;
  s.dim = 8;
  s.tiles_per_slide = {2, 6};
  s.slides_per_specimen = {1, 3};
  return s;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("slidelm_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

SpecimenRecord with_context(SpecimenRecord r) {
  Rng rng(99);
  r.history = grammar::sample_history(rng);
  r.specimen_desc = grammar::sample_specimen_desc(rng);
  return r;
}

Slide slide_of(const std::string& id, Index rows) {
  Slide s;
  s.slide_id = id;
  s.embeddings = FloatMat::Constant(rows, 2, 1.0f);
  return s;
}

}  // namespace

TEST(Corpus, EmptyCorpusHasValidManifestAndNoEmbeddings) {
  const Corpus c = generate_corpus(small_spec(0), 1);
  EXPECT_TRUE(c.records.empty());
  const auto dir = scratch_dir("empty");
  save_corpus(c, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "embeddings"));
  const Corpus back = load_corpus(dir);
  EXPECT_EQ(back, c);
  EXPECT_NE(manifest_json(c).find("peb_manifest_v1"), std::string::npos);
}

TEST(Corpus, SameSpecAndSeedGiveIdenticalBytes) {
  const Corpus a = generate_corpus(small_spec(), 42);
  const Corpus b = generate_corpus(small_spec(), 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(manifest_json(a), manifest_json(b));
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(encode_peb(a.records[i].tiles), encode_peb(b.records[i].tiles));
  }
  EXPECT_NE(generate_corpus(small_spec(), 43), a);
}

TEST(Corpus, InvalidRangesAreRejectedWithDiagnostic) {
  CorpusSpec s = small_spec();
  s.tiles_per_slide = {5, 2};
  try {
    generate_corpus(s, 1);
    FAIL() << "expected rejection";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("tiles_per_slide"), std::string::npos);
  }
  s = small_spec();
  s.slides_per_specimen = {3, 1};
  EXPECT_THROW(generate_corpus(s, 1), InvalidArgument);
  s = small_spec();
  s.class_separation = -1.0;
  EXPECT_THROW(generate_corpus(s, 1), InvalidArgument);
}

TEST(Corpus, RecordsSatisfyTypeInvariants) {
  CorpusSpec s = small_spec(30);
  s.survival_beta.assign(8, 0.5);
  const Corpus c = generate_corpus(s, 3);
  std::set<std::string> ids;
  for (const auto& r : c.records) {
    EXPECT_TRUE(ids.insert(r.specimen_id).second);
    EXPECT_NO_THROW(r.tiles.validate());
    EXPECT_GE(r.tiles.total_tiles(), 1);
    EXPECT_FALSE(r.findings.empty());
    EXPECT_EQ(r.report, grammar::render_report(r.findings, 0));
    ASSERT_TRUE(r.survival.has_value());
    EXPECT_GE(r.survival->time_months, 0);
  }
}

TEST(Corpus, ClassMeansAreSeparatedByTheRequestedDistance) {
  CorpusSpec s = small_spec();
  s.dim = 16;
  s.n_classes = 3;
  s.class_separation = 2.5;
  Rng rng(9);
  const auto means = class_means(s, rng);
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = i + 1; j < means.size(); ++j) EXPECT_NEAR((means[i] - means[j]).norm(), 2.5, 1e-12);
  }
}

TEST(Corpus, ZeroSeparationProbeIsAtChance) {
  CorpusSpec s = small_spec(500);
  s.class_separation = 0.0;
  s.tiles_per_slide = {4, 8};
  const Corpus c = generate_corpus(s, 11);
  Mat x(500, s.dim);
  std::vector<int> y;
  for (std::size_t i = 0; i < 500; ++i) {
    x.row(static_cast<Index>(i)) = c.records[i].tiles.stacked().colwise().mean();
    y.push_back(c.records[i].label);
  }
  const Mat xtr = x.topRows(250), xva = x.middleRows(250, 125), xte = x.bottomRows(125);
  const std::vector<int> ytr(y.begin(), y.begin() + 250), yva(y.begin() + 250, y.begin() + 375),
      yte(y.begin() + 375, y.end());
  const auto probe = adapt::fit_linear_probe(xtr, ytr, xva, yva);
  EXPECT_NEAR(metrics::auc_ovo(probe.predict_proba(xte), yte), 0.5, 0.05);
}

TEST(Corpus, SaveLoadRoundTripIsFieldForField) {
  CorpusSpec s = small_spec(10);
  s.survival_beta.assign(8, 0.0);
  s.survival_beta[0] = 1.0;
  const Corpus c = generate_corpus(s, 5);
  const auto dir = scratch_dir("roundtrip");
  save_corpus(c, dir);
  const Corpus back = load_corpus(dir);
  EXPECT_EQ(back, c);
  for (const auto& r : c.records) {
    EXPECT_EQ(detail::read_file(dir / "embeddings" / (r.specimen_id + ".peb")), encode_peb(r.tiles));
  }
}

TEST(Corpus, PebErrorsAreDistinct) {
  const Corpus c = generate_corpus(small_spec(1), 5);
  std::string buf = encode_peb(c.records[0].tiles);
  std::string bad = buf;
  bad[0] = 'X';
  try {
    decode_peb(bad, "x");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kBadMagic);
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  try {
    decode_peb(std::string_view(buf).substr(0, buf.size() - 3), "x");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kTruncated);
  }
  try {
    decode_peb(buf, "x", 99);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kDimMismatch);
  }
  EXPECT_EQ(decode_peb(buf, c.records[0].specimen_id, 8), c.records[0].tiles);
}

TEST(Corpus, PebHeaderLayout) {
  TileEmbeddingSet t;
  t.specimen_id = "a";
  t.dim = 2;
  t.slides = {slide_of("ab", 3)};
  const std::string buf = encode_peb(t);
  // magic, u32 dim, u64 total, u32 slides, u16 len + "ab", u64 rows, payload.
  ASSERT_EQ(buf.size(), 4u + 4 + 8 + 4 + 2 + 2 + 8 + 3 * 2 * 4);
  EXPECT_EQ(buf.substr(0, 4), "PEB1");
  EXPECT_EQ(static_cast<unsigned char>(buf[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(buf[8]), 3);
  EXPECT_EQ(static_cast<unsigned char>(buf[16]), 1);
  EXPECT_EQ(static_cast<unsigned char>(buf[20]), 2);
  EXPECT_EQ(buf.substr(22, 2), "ab");
}

// ---- chat examples ---------------------------------------------------------

TEST(Chat, ZeroRatesNeverIncludeContext) {
  const Corpus c = generate_corpus(small_spec(4), 2);
  const SpecimenRecord r = with_context(c.records[0]);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    for (const auto& ex : build_chat_examples(r, {0.0, 0.0, 0.0}, rng)) {
      EXPECT_EQ(ex.turns[0].text.find(*r.history), std::string::npos);
      EXPECT_EQ(ex.turns[0].text.find(*r.specimen_desc), std::string::npos);
    }
  }
}

TEST(Chat, UnitRatesAlwaysIncludeBothFields) {
  const Corpus c = generate_corpus(small_spec(4), 2);
  const SpecimenRecord r = with_context(c.records[0]);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    for (const auto& ex : build_chat_examples(r, {1.0, 1.0, 0.0}, rng)) {
      EXPECT_NE(ex.turns[0].text.find(*r.history), std::string::npos);
      EXPECT_NE(ex.turns[0].text.find(*r.specimen_desc), std::string::npos);
    }
  }
}

TEST(Chat, DefaultRatesIncludeContextAboutOneFifthOfTheTime) {
  const Corpus c = generate_corpus(small_spec(4), 2);
  const SpecimenRecord r = with_context(c.records[0]);
  Rng rng(17);
  int hist = 0, spec = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto ex = build_chat_example(r, TaskKind::kReportGeneration, SamplingRates{}, rng);
    hist += ex.turns[0].text.find(*r.history) != std::string::npos ? 1 : 0;
    spec += ex.turns[0].text.find(*r.specimen_desc) != std::string::npos ? 1 : 0;
  }
  EXPECT_NEAR(hist / double(n), 0.2, 0.02);
  EXPECT_NEAR(spec / double(n), 0.2, 0.02);
}

TEST(Chat, ExamplesAlternateRolesAndCarryTheImageToken) {
  const Corpus c = generate_corpus(small_spec(6), 4);
  Tokenizer tok;
  ChatContext ctx;
  ctx.corpus = &c;
  Rng rng(3);
  for (const auto& r : c.records) {
    const auto exs = build_chat_examples(r, SamplingRates{}, rng, ctx);
    ASSERT_EQ(exs.size(), static_cast<std::size_t>(kTaskKindCount));
    for (std::size_t k = 0; k < exs.size(); ++k) {
      const auto& ex = exs[k];
      EXPECT_EQ(ex.kind, kAllTaskKinds[k]);
      for (std::size_t t = 0; t < ex.turns.size(); ++t) {
        EXPECT_EQ(ex.turns[t].role, t % 2 == 0 ? Role::kUser : Role::kAssistant);
      }
      EXPECT_EQ(ex.turns[0].text.rfind(kImageToken, 0), 0u);
      const TokenSeq seq = render_chat(ex, tok, 4);
      ASSERT_TRUE(seq.image_span.has_value());
      EXPECT_EQ(seq.image_span->length, 4u);
      // Exactly the assistant content plus its closing tag is marked.
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const bool closes_assistant =
            seq.ids[i] == Tokenizer::kEnd && i > 0 && seq.roles[i - 1] == Role::kAssistant;
        EXPECT_EQ(seq.loss_mask[i], seq.roles[i] == Role::kAssistant || closes_assistant);
        EXPECT_LT(seq.ids[i], tok.vocab_size());
      }
    }
  }
}

TEST(Chat, YesNoAnswersMatchTheQueriedFinding) {
  const Corpus c = generate_corpus(small_spec(40), 8);
  Rng mine(1);
  std::map<std::string, std::vector<QAPair>> comp;
  for (auto& qa : mine_complementary_qa(c, mine, 400)) comp[qa.specimen_id].push_back(qa);
  Rng rng(2);
  for (const auto& r : c.records) {
    ChatContext ctx;
    ctx.complementary = comp[r.specimen_id];
    for (int i = 0; i < 20; ++i) {
      const auto ex = build_chat_example(r, TaskKind::kYesNo, {0.2, 0.2, 0.5}, rng, ctx);
      ASSERT_TRUE(ex.queried.has_value());
      EXPECT_EQ(ex.turns[1].text, grammar::yes_no_answer(r.has(*ex.queried)));
    }
  }
}

TEST(Chat, ComplementaryQaOnSingleSpecimenIsSelfPaired) {
  const Corpus c = generate_corpus(small_spec(1), 8);
  Rng rng(5);
  for (const auto& qa : mine_complementary_qa(c, rng, 50)) {
    EXPECT_EQ(qa.specimen_id, c.records[0].specimen_id);
    EXPECT_EQ(qa.answer, grammar::yes_no_answer(c.records[0].has(qa.topic)));
  }
}

TEST(Chat, ComplementaryQaAnswersNoWhenConceptAbsent) {
  const Corpus c = generate_corpus(small_spec(30), 8);
  Rng rng(5);
  for (const auto& qa : mine_complementary_qa(c, rng, 300)) {
    if (!c.find(qa.specimen_id)->has(qa.topic)) {
      EXPECT_EQ(qa.answer, "No.");
    }
  }
}

TEST(Chat, ComplementaryQaIsBalancedOnTwoClassCorpus) {
  const Corpus c = generate_corpus(small_spec(200), 8);
  Rng rng(5);
  int yes = 0;
  const auto pairs = mine_complementary_qa(c, rng, 1000);
  for (const auto& qa : pairs) yes += qa.answer == "Yes." ? 1 : 0;
  EXPECT_NEAR(yes / 1000.0, 0.5, 0.05);
}

TEST(Chat, MatchingRespectsMismatchProbability) {
  const Corpus two = generate_corpus(small_spec(2), 8);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(build_matching_example(two.records[0], two, rng, 0.0).turns[1].text, grammar::kMatchAnswer);
    const auto ex = build_matching_example(two.records[0], two, rng, 1.0);
    const std::string& a = ex.turns[1].text;
    ASSERT_EQ(a.rfind(grammar::kMismatchAnswer, 0), 0u);
    const std::string report = a.substr(grammar::kMismatchAnswer.size() + 1);
    bool matches_variant = false;
    for (int v = 0; v < grammar::kReportVariants; ++v) {
      matches_variant = matches_variant || report == grammar::render_report(two.records[0].findings, v);
    }
    EXPECT_TRUE(matches_variant);
  }
  int mismatches = 0;
  for (int i = 0; i < 2000; ++i) {
    mismatches += build_matching_example(two.records[1], two, rng, 0.5).turns[1].text != grammar::kMatchAnswer;
  }
  EXPECT_NEAR(mismatches / 2000.0, 0.5, 0.03);
}

TEST(Chat, MatchingNeedsTwoSpecimens) {
  const Corpus one = generate_corpus(small_spec(1), 8);
  Rng rng(1);
  EXPECT_THROW(build_matching_example(one.records[0], one, rng, 0.5), InvalidArgument);
}

// ---- tile cap --------------------------------------------------------------

TEST(CapTiles, UnderCapIsUnchanged) {
  SpecimenRecord r;
  r.tiles.dim = 2;
  r.tiles.slides = {slide_of("a", 20), slide_of("b", 30)};
  EXPECT_EQ(cap_tiles(r, 100).tiles, r.tiles);
  EXPECT_EQ(kDefaultTileCap, 100000);
}

TEST(CapTiles, DropsLargestSlidesFirst) {
  SpecimenRecord r;
  r.tiles.dim = 2;
  r.tiles.slides = {slide_of("a", 60), slide_of("b", 50), slide_of("c", 30)};
  const auto out = cap_tiles(r, 90);
  ASSERT_EQ(out.tiles.slides.size(), 2u);
  EXPECT_EQ(out.tiles.slides[0].slide_id, "b");
  EXPECT_EQ(out.tiles.total_tiles(), 80);
}

TEST(CapTiles, SingleOversizedSlideIsAnError) {
  SpecimenRecord r;
  r.tiles.dim = 2;
  r.tiles.slides = {slide_of("a", 120)};
  EXPECT_THROW(cap_tiles(r, 100), InvalidArgument);
}

TEST(CapTiles, RemovesNoMoreSlidesThanNeeded) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    SpecimenRecord r;
    r.tiles.dim = 2;
    const auto n = rng.uniform_int(1, 6);
    for (std::int64_t s = 0; s < n; ++s) r.tiles.slides.push_back(slide_of(std::to_string(s), rng.uniform_int(1, 40)));
    const std::int64_t cap = rng.uniform_int(40, 150);
    const auto out = cap_tiles(r, cap);
    EXPECT_LE(out.tiles.total_tiles(), std::max<std::int64_t>(cap, 0));
    EXPECT_LE(out.tiles.total_tiles(), r.tiles.total_tiles());
    if (out.tiles.slides.size() < r.tiles.slides.size()) {
      // Putting back the smallest dropped slide would break the cap.
      std::int64_t smallest_dropped = 1 << 30;
      for (const auto& s : r.tiles.slides) {
        bool kept = false;
        for (const auto& k : out.tiles.slides) kept = kept || k.slide_id == s.slide_id;
        if (!kept) smallest_dropped = std::min<std::int64_t>(smallest_dropped, s.embeddings.rows());
      }
      EXPECT_GT(out.tiles.total_tiles() + smallest_dropped, cap);
    }
  }
}

// ---- tokenizer -------------------------------------------------------------

TEST(Tokenizer, EmptyTextRoundTrips) {
  Tokenizer tok;
  const TokenSeq seq = tok.tokenize("");
  EXPECT_TRUE(seq.ids.empty());
  EXPECT_EQ(tok.decode(seq.ids), "");
}

TEST(Tokenizer, SpecialTokensHaveReservedIds) {
  Tokenizer tok;
  EXPECT_EQ(tok.encode("<|assistant|>"), std::vector<int>{Tokenizer::kAssistant});
  EXPECT_EQ(tok.encode("<|user|>"), std::vector<int>{Tokenizer::kUser});
  EXPECT_EQ(tok.encode("<|end|>"), std::vector<int>{Tokenizer::kEnd});
  EXPECT_EQ(tok.encode("<|image|>"), std::vector<int>{Tokenizer::kImage});
}

TEST(Tokenizer, OutOfVocabularyWordIsNamed) {
  Tokenizer tok;
  try {
    tok.encode("invasive zebra carcinoma");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("zebra"), std::string::npos);
  }
}

TEST(Tokenizer, GrammarOutputRoundTrips) {
  Tokenizer tok;
  CorpusSpec s = small_spec(200);
  s.n_classes = 4;
  const Corpus c = generate_corpus(s, 21);
  ChatContext ctx;
  ctx.corpus = &c;
  ctx.n_classes = 4;
  Rng rng(8);
  int checked = 0;
  for (const auto& r : c.records) {
    for (int v = 0; v < grammar::kReportVariants; ++v) {
      const std::string rep = grammar::render_report(r.findings, v);
      EXPECT_EQ(tok.decode(tok.encode(rep)), rep);
      ++checked;
    }
    for (const auto& ex : build_chat_examples(r, {1.0, 1.0, 0.2}, rng, ctx)) {
      for (const auto& t : ex.turns) EXPECT_EQ(tok.decode(tok.encode(t.text)), t.text);
    }
  }
  EXPECT_GE(checked, 1000);
}
