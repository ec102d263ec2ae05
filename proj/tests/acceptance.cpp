// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero when any selected criterion fails.
//
//   acceptance [--criterion N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <CLI11.hpp>

#include "checks.hpp"
#include "oracles.hpp"
#include "slidelm/slidelm.hpp"

using namespace slidelm;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

// Accumulates named sub-checks into one outcome.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    pass_ = pass_ && ok;
    parts_.push_back((ok ? "" : "!") + what);
  }
  Outcome done() const {
    std::string d;
    for (std::size_t i = 0; i < parts_.size(); ++i) d += (i ? "; " : "") + parts_[i];
    return {pass_, d};
  }

 private:
  bool pass_ = true;
  std::vector<std::string> parts_;
};

double rel_diff(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

train::RecordList records_of(const corpus::Corpus& c) {
  train::RecordList out;
  for (const auto& r : c.records) out.push_back(&r);
  return out;
}

// Every fifth specimen is held out.
void split_fifths(const corpus::Corpus& c, train::RecordList& tr, train::RecordList& te) {
  for (std::size_t i = 0; i < c.records.size(); ++i) (i % 5 == 4 ? te : tr).push_back(&c.records[i]);
}

// ---- 1: gradients ------------------------------------------------------------

Outcome criterion_1() {
  const auto t0 = clk::now();
  Verdict v;
  constexpr double kTol = 1e-5;
  auto report = [&](const std::string& name, const GradCheckResult& r) {
    v.check(r.max_rel_error < kTol, name + " " + fmt(r.max_rel_error));
  };
  Rng rng(1);
  {
    ParamStore ps;
    ps.add("x.v", random_normal(8, 5, 1.0, rng));
    ps.add("x.t", random_normal(8, 5, 1.0, rng));
    ps.add("x.log_tau", Mat::Constant(1, 1, std::log(0.1)));
    report("contrastive", grad_check(ps, {"x."}, [](nn::Binder& b) {
             return losses::contrastive_loss(ad::l2_normalize_rows(b("x.v")), ad::l2_normalize_rows(b("x.t")),
                                             b("x.log_tau"));
           }));
  }
  const std::vector<int> targets = {3, 0, 6, 2, 2, 5};
  const std::vector<bool> mask = {false, true, true, false, true, true};
  {
    ParamStore ps;
    ps.add("x.l", random_normal(6, 7, 1.0, rng));
    report("chat", grad_check(ps, {"x."}, [&](nn::Binder& b) {
             return losses::chat_loss(b("x.l"), targets, mask, losses::Reduction::kSum);
           }));
  }
  {
    ParamStore ps;
    ps.add("x.v", random_normal(6, 4, 1.0, rng));
    ps.add("x.t", random_normal(6, 4, 1.0, rng));
    ps.add("x.log_tau", Mat::Constant(1, 1, std::log(0.07)));
    ps.add("x.l", random_normal(6, 7, 1.0, rng));
    report("total", grad_check(ps, {"x."}, [&](nn::Binder& b) {
             const ad::Var terms[] = {
                 losses::contrastive_loss(ad::l2_normalize_rows(b("x.v")), ad::l2_normalize_rows(b("x.t")),
                                          b("x.log_tau")),
                 losses::chat_loss(b("x.l"), targets, mask, losses::Reduction::kSum)};
             const double weights[] = {0.25, 1.0};
             return ad::weighted_sum(terms, weights);
           }));
  }
  {
    ParamStore ps;
    ps.add("x.h", random_normal(12, 1, 1.0, rng));
    const std::vector<double> t = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8};
    const std::vector<bool> e = {true, false, true, true, false, true, true, false, true, true, true, false};
    report("cox", grad_check(ps, {"x."}, [&](nn::Binder& b) { return losses::cox_loss(b("x.h"), t, e); }));
  }
  {
    // Full stage-1 graph at tiny dims: d_model 8, K = 4 latents, 2-layer decoder.
    corpus::CorpusSpec s;
    s.n_specimens = 3;
    s.dim = 6;
    s.tiles_per_slide = {2, 4};
    s.slides_per_specimen = {1, 2};
    const auto c = corpus::generate_corpus(s, 5);
    Model m = Model::init(tiny_config(6), 5);
    const auto recs = records_of(c);
    std::vector<packer::SequenceRef> q;
    for (const auto* r : recs) q.push_back({r->specimen_id, r->tiles.total_tiles()});
    const auto packs = packer::pack(q, 1000);
    train::Stage1Batch batch;
    batch.tiles = packer::concat(packs.at(0), recs);
    Rng task_rng(3);
    const train::TaskData data(recs, 4);
    auto cfg = train::TrainConfig::desk(train::Stage::kStage1);
    const auto K = static_cast<std::size_t>(m.config.encoder.n_latents);
    for (const auto& id : batch.tiles.member_ids) {
      const auto* r = train::detail::lookup(recs, id);
      batch.texts.push_back(m.tokenizer.encode(r->report));
      batch.chat.seqs.push_back(
          train::chat_sequence(*r, corpus::TaskKind::kYesNo, data, cfg, task_rng, m.tokenizer, K));
    }
    // Move weights off their initial values so no gradient is trivially zero.
    Rng pr(9);
    for (auto& [name, p] : m.params) p.value += random_normal(p.value.rows(), p.value.cols(), 0.05, pr);
    const auto r = grad_check(m.params, {"encoder.", "pool.", "contrast.", "text.", "adapter.", "decoder."},
                              [&](nn::Binder& b) { return train::stage1_forward(b, m.config, batch, cfg).total; });
    report("stage-1 graph (" + std::to_string(r.checked) + " coords)", r);
  }
  const double secs = seconds_since(t0);
  v.check(secs < 120.0, "runtime " + fmt(secs) + "s");
  return v.done();
}

// ---- 2: oracles --------------------------------------------------------------

Outcome criterion_2() {
  Verdict v;
  Rng rng(2);
  {
    double worst = 0.0;
    for (Index n = 1; n <= 16; ++n) {
      for (double tau : {0.01, 0.07, 0.5, 1.0}) {
        Mat a = random_normal(n, 8, 1.0, rng), b = random_normal(n, 8, 1.0, rng);
        a.rowwise().normalize();
        b.rowwise().normalize();
        worst = std::max(worst, std::abs(losses::contrastive_loss(a, b, tau) - oracle::contrastive(a, b, tau)));
      }
    }
    v.check(worst <= 1e-12, "contrastive |diff| " + fmt(worst));
  }
  {
    int mismatches = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(2, 200));
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t i = 0; i < n; ++i) {
        y.push_back(i < 2 ? static_cast<int>(i) : static_cast<int>(rng.bernoulli(0.4)));
        s.push_back(trial % 2 == 0 ? std::round(rng.normal() * 3.0) : rng.normal() + y.back());
      }
      mismatches += metrics::auc(s, y) != oracle::auc(s, y);
    }
    v.check(mismatches == 0, "auc mismatches " + std::to_string(mismatches) + "/300");
  }
  {
    int mismatches = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(2, 100));
      std::vector<double> r, t;
      std::vector<bool> e;
      for (std::size_t i = 0; i < n; ++i) {
        r.push_back(trial % 2 == 0 ? std::round(rng.normal() * 2.0) : rng.normal());
        t.push_back(static_cast<double>(rng.uniform_int(1, 30)));
        e.push_back(i == 0 || rng.bernoulli(0.6));
      }
      t[1] = t[0] + 1.0;  // at least one comparable pair
      mismatches += metrics::c_index(r, t, e) != oracle::c_index(r, t, e);
    }
    v.check(mismatches == 0, "c-index mismatches " + std::to_string(mismatches) + "/300");
  }
  {
    double worst = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(1, 20));
      std::vector<double> h, t;
      std::vector<bool> e;
      for (std::size_t i = 0; i < n; ++i) {
        h.push_back(rng.normal() * 2.0);
        t.push_back(static_cast<double>(rng.uniform_int(1, 5)));
        e.push_back(i == 0 || rng.bernoulli(0.6));
      }
      worst = std::max(worst, std::abs(losses::cox_loss(h, t, e) - oracle::cox(h, t, e)));
    }
    v.check(worst <= 1e-10, "cox |diff| " + fmt(worst));
  }
  {
    double worst = 0.0;
    for (auto [qh, kg] : std::vector<std::pair<Index, Index>>{{8, 2}, {8, 8}, {4, 1}, {6, 3}}) {
      const Index hd = 4;
      const Mat q = random_normal(7, qh * hd, 1.0, rng), k = random_normal(11, kg * hd, 1.0, rng),
                val = random_normal(11, kg * hd, 1.0, rng);
      ad::Graph g;
      const Mat out =
          attention(g.constant(q), g.constant(k), g.constant(val), {qh, kg, hd, false}, {{0, 7, 0, 11}})
              .value();
      worst = std::max(worst, (out - oracle::gqa_repeat_kv(q, k, val, qh, kg)).cwiseAbs().maxCoeff());
    }
    v.check(worst <= 1e-6, "gqa |diff| " + fmt(worst));
  }
  {
    // Probabilities on the 1/1000 lattice, where the grid reaches every split.
    int mismatches = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(4, 80));
      std::vector<double> p;
      std::vector<int> y;
      std::vector<bool> yb;
      for (std::size_t i = 0; i < n; ++i) {
        y.push_back(i < 2 ? static_cast<int>(i) : static_cast<int>(rng.bernoulli(0.5)));
        yb.push_back(y.back() != 0);
        const double mean = 0.35 + 0.3 * y.back();
        p.push_back(static_cast<double>(std::clamp<std::int64_t>(
                        static_cast<std::int64_t>(std::llround((mean + 0.2 * rng.normal()) * 1000.0)), 0, 1000)) /
                    1000.0);
      }
      const auto cal = adapt::calibrate_threshold(p, y);
      mismatches += cal.objective_after != oracle::best_threshold_grid(p, yb);
    }
    v.check(mismatches == 0, "threshold mismatches " + std::to_string(mismatches) + "/300");
  }
  return v.done();
}

// ---- 3: structural invariants ---------------------------------------------------

Outcome criterion_3() {
  Verdict v;
  const Model m = Model::init(ModelConfig{}, 3);
  const auto& ec = m.config.encoder;
  Rng rng(3);
  {
    const Mat tiles = random_normal(37, ec.d_in, 1.0, rng);
    const Eigen::VectorXd ref = encoder::base_embedding(m.params, ec, encoder::encode_tiles(m.params, ec, tiles));
    std::vector<Index> perm(static_cast<std::size_t>(tiles.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      rng.shuffle(perm);
      Mat pt(tiles.rows(), tiles.cols());
      for (Index i = 0; i < tiles.rows(); ++i) pt.row(i) = tiles.row(perm[static_cast<std::size_t>(i)]);
      worst = std::max(worst, rel_diff(encoder::base_embedding(m.params, ec, encoder::encode_tiles(m.params, ec, pt)), ref));
    }
    v.check(worst <= 1e-5, "permutation rel " + fmt(worst));
  }
  {
    corpus::CorpusSpec s;
    s.n_specimens = 24;
    s.tiles_per_slide = {4, 24};
    const auto c = corpus::generate_corpus(s, 3);
    std::vector<packer::SequenceRef> q;
    for (const auto& r : c.records) q.push_back({r.specimen_id, r.tiles.total_tiles()});
    double worst = 0.0;
    std::size_t members = 0;
    for (const auto& sk : packer::pack(q, 256)) {
      const auto batch = packer::concat(sk, c);
      const auto states = encoder::encode_packed(m.params, ec, batch);
      for (std::size_t i = 0; i < states.size(); ++i, ++members) {
        worst = std::max(worst, rel_diff(states[i].latents, encoder::encode_tiles(m.params, ec, batch.member(i))));
      }
    }
    v.check(worst <= 1e-5 && members == c.records.size(), "packed rel " + fmt(worst));
  }
  {
    std::string first_failure;
    for (int trial = 0; trial < 10000 && first_failure.empty(); ++trial) {
      const std::int64_t budget = rng.uniform_int(1, 600);
      const auto queue = checks::random_queue(rng, budget, 60);
      first_failure = checks::packing(queue, budget, packer::pack(queue, budget));
    }
    v.check(first_failure.empty(), first_failure.empty() ? "packing 10000 multisets" : "packing: " + first_failure);
  }
  {
    // Changing the token at position p must leave logits before p untouched.
    const Mat lat = random_normal(ec.n_latents, ec.d_model, 1.0, rng);
    const std::string q = std::string(corpus::kImageToken) + " " + corpus::grammar::yes_no_question(corpus::Concept::kCarcinoma);
    const auto base = corpus::render_chat(std::vector<corpus::Turn>{{corpus::Role::kUser, q}, {corpus::Role::kAssistant, "No."}},
                                          m.tokenizer, static_cast<std::size_t>(ec.n_latents));
    const Mat ref = lm::decode_logits(m.params, m.config.decoder, lat, base).logits;
    bool causal = true;
    int probes = 0;
    for (std::size_t p = static_cast<std::size_t>(ec.n_latents) + 4; p < base.ids.size(); ++p, ++probes) {
      auto alt = base;
      alt.ids[p] = m.tokenizer.id(alt.ids[p] == m.tokenizer.id("Yes") ? "No" : "Yes");
      const Mat out = lm::decode_logits(m.params, m.config.decoder, lat, alt).logits;
      const auto keep = static_cast<Index>(p);
      causal = causal && out.topRows(keep) == ref.topRows(keep) && out.row(keep) != ref.row(keep);
    }
    v.check(causal, "decoder causality over " + std::to_string(probes) + " positions");
  }
  {
    corpus::CorpusSpec s;
    s.n_specimens = 12;
    s.dim = 6;
    s.tiles_per_slide = {2, 4};
    s.slides_per_specimen = {1, 2};
    s.survival_beta = {1, -1, 1, 0, 0, 0};
    s.prognostic_spread = 2.0;
    const auto c = corpus::generate_corpus(s, 5);
    const auto recs = records_of(c);
    Model tm = Model::init(tiny_config(6), 1);
    const std::vector<std::string> all = {"encoder.", "pool.", "contrast.", "text.", "adapter.", "decoder.", "survival."};
    auto run = [&](train::Stage stage, const std::vector<std::string>& frozen, const std::vector<std::string>& moving) {
      std::map<std::string, std::uint64_t> before;
      for (const auto& p : all) before[p] = tm.params.checksum(p);
      auto cfg = train::TrainConfig::desk(stage);
      cfg.epochs = 1;
      cfg.max_steps = 3;
      cfg.seed = 3;
      if (stage == train::Stage::kStage1) train::train_stage1(tm, recs, cfg);
      if (stage == train::Stage::kStage2) train::train_stage2(tm, recs, cfg);
      if (stage == train::Stage::kSurvival) train::finetune_survival(tm, recs, cfg);
      bool ok = true;
      for (const auto& p : frozen) ok = ok && tm.params.checksum(p) == before[p];
      for (const auto& p : moving) ok = ok && tm.params.checksum(p) != before[p];
      return ok;
    };
    v.check(run(train::Stage::kStage1, {"decoder.", "survival."}, {"encoder.", "pool.", "contrast.", "text.", "adapter."}),
            "stage-1 freeze");
    v.check(run(train::Stage::kStage2, {"encoder.", "pool.", "contrast.", "text.", "survival."}, {"adapter.", "decoder."}),
            "stage-2 freeze");
    v.check(run(train::Stage::kSurvival, {"pool.", "contrast.", "text.", "adapter.", "decoder."}, {"encoder.", "survival."}),
            "survival freeze");
  }
  return v.done();
}

// ---- 4: synthetic end-to-end ----------------------------------------------------

Outcome criterion_4() {
  const auto t0 = clk::now();
  Verdict v;
  corpus::CorpusSpec s;
  s.n_specimens = 400;
  s.n_classes = 2;
  s.class_separation = 2.0;
  const auto c = corpus::generate_corpus(s, 7);
  train::RecordList tr, te;
  split_fifths(c, tr, te);
  Model m = Model::init(ModelConfig{}, 7);
  auto c1 = train::TrainConfig::desk(train::Stage::kStage1);
  c1.seed = 7;
  train::train_stage1(m, tr, c1);
  auto c2 = train::TrainConfig::desk(train::Stage::kStage2);
  c2.seed = 7;
  train::train_stage2(m, tr, c2);
  const double train_secs = seconds_since(t0);

  train::RecordList all = tr;
  all.insert(all.end(), te.begin(), te.end());
  const auto lat = eval::latents_of(m, all);
  std::vector<int> pred;
  for (double p : eval::yes_no_probabilities(m, lat, te, corpus::Concept::kCarcinoma)) {
    pred.push_back(p >= predict::kDecisionThreshold ? 1 : 0);
  }
  const double bacc = metrics::balanced_accuracy(pred, eval::yes_no_truth(te, corpus::Concept::kCarcinoma));
  v.check(bacc >= 0.95, "yes-no bacc " + fmt(bacc));
  const auto ret = eval::report_retrieval(m, lat, te);
  v.check(ret.top1_class >= 0.90, "retrieval top-1 " + fmt(ret.top1_class) + " (own report " + fmt(ret.top1_exact) + ")");

  // Probe fitted on 240 training specimens, regularization chosen on the other 80.
  const train::RecordList ptr(tr.begin(), tr.begin() + 240), pva(tr.begin() + 240, tr.end());
  auto probe_auc = [&](eval::EmbeddingKind kind) {
    const auto pm = adapt::fit_linear_probe(eval::embeddings(m, lat, ptr, kind), eval::labels_of(ptr),
                                            eval::embeddings(m, lat, pva, kind), eval::labels_of(pva));
    return metrics::auc_ovo(pm.predict_proba(eval::embeddings(m, lat, te, kind)), eval::labels_of(te));
  };
  const double base = probe_auc(eval::EmbeddingKind::kBase);
  const double diag = probe_auc(eval::EmbeddingKind::kDiagnostic);
  v.check(base >= 0.95 && diag >= 0.95 && diag >= base - 0.02, "probe auc diag " + fmt(diag) + " base " + fmt(base));
  v.check(train_secs < 600.0, "training " + fmt(train_secs) + "s");
  return v.done();
}

// ---- 5: survival ------------------------------------------------------------------

Outcome criterion_5() {
  Verdict v;
  corpus::CorpusSpec s;
  s.n_specimens = 400;
  s.survival_beta.assign(static_cast<std::size_t>(s.dim), 0.0);
  for (int k = 0; k < 4; ++k) s.survival_beta[static_cast<std::size_t>(k)] = k % 2 == 0 ? 1.0 : -1.0;
  s.prognostic_spread = 2.5;
  s.censoring_rate = 0.3;
  const auto c = corpus::generate_corpus(s, 7);
  train::RecordList tr, te;
  split_fifths(c, tr, te);
  std::vector<double> t_te;
  std::vector<bool> e_te;
  for (const auto* r : te) {
    t_te.push_back(r->survival->time_months);
    e_te.push_back(r->survival->event);
  }
  auto held_out_c = [&](const Model& m) {
    const auto lat = eval::latents_of(m, te);
    std::vector<double> risk;
    for (const auto* r : te) risk.push_back(encoder::log_hazard(m.params, m.config.encoder, lat.at(r->specimen_id)));
    return metrics::c_index(risk, t_te, e_te);
  };

  Model m = Model::init(ModelConfig{}, 7);
  auto c1 = train::TrainConfig::desk(train::Stage::kStage1);
  c1.seed = 7;
  train::train_stage1(m, tr, c1);
  Model specialist = m;
  auto cs = train::TrainConfig::desk(train::Stage::kSurvival);
  cs.seed = 7;
  train::finetune_survival(m, tr, cs);
  auto csp = train::TrainConfig::specialist_from(c1, cs.epochs);
  csp.seed = 7;
  train::finetune_survival(specialist, tr, csp);
  const double tuned = held_out_c(m);
  const double spec = held_out_c(specialist);
  v.check(tuned >= 0.9, "fine-tuned c-index " + fmt(tuned));
  v.check(tuned >= spec - 0.02, "specialist c-index " + fmt(spec));

  // Cox on the mean tile embedding recovers the planted signs.
  auto features = [&](const train::RecordList& rs) {
    Mat x(static_cast<Index>(rs.size()), s.dim);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(s.dim);
      Index n = 0;
      for (const auto& sl : rs[i]->tiles.slides) {
        sum += sl.embeddings.cast<double>().colwise().sum();
        n += sl.embeddings.rows();
      }
      x.row(static_cast<Index>(i)) = sum / static_cast<double>(n);
    }
    return x;
  };
  const train::RecordList ctr(tr.begin(), tr.begin() + 240), cva(tr.begin() + 240, tr.end());
  auto te_of = [](const train::RecordList& rs, std::vector<double>& t, std::vector<bool>& e) {
    for (const auto* r : rs) {
      t.push_back(r->survival->time_months);
      e.push_back(r->survival->event);
    }
  };
  std::vector<double> t_tr, t_va;
  std::vector<bool> e_tr, e_va;
  te_of(ctr, t_tr, e_tr);
  te_of(cva, t_va, e_va);
  const auto cox = adapt::fit_cox(features(ctr), t_tr, e_tr, features(cva), t_va, e_va);
  int agree = 0, planted = 0;
  for (int k = 0; k < s.dim; ++k) {
    const double b = s.survival_beta[static_cast<std::size_t>(k)];
    if (b == 0.0) continue;
    ++planted;
    agree += (cox.coef(k) > 0) == (b > 0) && cox.coef(k) != 0.0;
  }
  v.check(agree == planted, "cox signs " + std::to_string(agree) + "/" + std::to_string(planted) + " (lambda " +
                                fmt(cox.lambda) + ")");
  return v.done();
}

// ---- 6: calibration -----------------------------------------------------------------

Outcome criterion_6() {
  Verdict v;
  for (int k : {2, 3, 4}) {
    corpus::CorpusSpec s;
    s.n_specimens = 120;
    s.n_classes = k;
    s.dim = 16;
    s.tiles_per_slide = {4, 12};
    const auto c = corpus::generate_corpus(s, static_cast<std::uint64_t>(60 + k));
    const auto recs = records_of(c);
    ModelConfig mc = tiny_config(s.dim);
    Model m = Model::init(mc, static_cast<std::uint64_t>(k));
    auto c1 = train::TrainConfig::desk(train::Stage::kStage1);
    c1.epochs = 1;
    train::train_stage1(m, recs, c1);
    auto c2 = train::TrainConfig::desk(train::Stage::kStage2);
    c2.epochs = 2;
    train::train_stage2(m, recs, c2);
    const auto lat = eval::latents_of(m, recs);
    const auto fields = eval::report_calibration(m, lat, recs, predict::default_schema(k));
    int scored = 0, dominated = 0;
    double worst = 1.0;
    for (const auto& f : fields) {
      if (!f.scored) continue;
      ++scored;
      dominated += f.max_amr >= f.observed_amr;
      worst = std::min(worst, f.max_amr - f.observed_amr);
    }
    v.check(scored > 0 && dominated == scored, std::to_string(k) + "-class report: " + std::to_string(dominated) + "/" +
                                                   std::to_string(scored) + " fields, min gain " + fmt(worst));
  }
  Rng rng(6);
  std::vector<int> pred, truth;
  for (int i = 0; i < 4000; ++i) {
    truth.push_back(static_cast<int>(rng.uniform_int(0, 3)));
    pred.push_back(static_cast<int>(rng.uniform_int(0, 3)));
  }
  const double amr = metrics::adjusted_mean_recall(pred, truth, 4);
  v.check(std::abs(amr) <= 0.05, "random 4-class amr " + fmt(amr));
  return v.done();
}

// ---- 7: statistics --------------------------------------------------------------------

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(SLIDELM_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p) != nullptr) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Output mentions of the run directory are the only expected difference.
std::string without_dir(std::string s, const std::string& dir) {
  for (auto pos = s.find(dir); pos != std::string::npos; pos = s.find(dir, pos)) s.replace(pos, dir.size(), "<dir>");
  return s;
}

// Runs a small seeded pipeline in `dir` and returns stdout plus every output
// file keyed by relative path.
std::map<std::string, std::string> pipeline(const fs::path& dir, std::string& error) {
  std::map<std::string, std::string> out;
  const std::string com =
      " --seed 11 --threads 1 --set corpus.dim=16 --set corpus.tiles_per_slide_min=4 --set corpus.tiles_per_slide_max=12 --set encoder.d_model=16"
      " --set encoder.n_latents=8 --set encoder.d_embed=16 --set text.d_model=16 --set decoder.d_model=16"
      " --set decoder.adapter_hidden=16 --set eval.bootstrap_iterations=200 --set eval.permutation_iterations=200";
  const std::string d = dir.string();
  const std::vector<std::string> steps = {
      "synth --out " + d + "/corpus --n 40",
      "train --stage 1 --corpus " + d + "/corpus --out " + d + "/m1 --set train.max_steps=3 --log " + d + "/m1.log",
      "train --stage 2 --corpus " + d + "/corpus --init " + d + "/m1 --out " + d + "/m2 --set train.max_steps=3",
      "embed --kind diagnostic --model " + d + "/m2 --corpus " + d + "/corpus --out " + d + "/diag.jsonl",
      "embed --kind base --model " + d + "/m2 --corpus " + d + "/corpus --out " + d + "/base.jsonl",
      "probe --embeddings " + d + "/diag.jsonl --out " + d + "/pd.json --predictions " + d + "/pd.jsonl",
      "probe --embeddings " + d + "/base.jsonl --out " + d + "/pb.json --predictions " + d + "/pb.jsonl",
      "eval --predictions " + d + "/pd.jsonl " + d + "/pb.jsonl --out " + d + "/eval.json",
  };
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const Run r = run_cli(steps[i] + com);
    out["stdout." + std::to_string(i)] = without_dir(r.out, d);
    if (r.code != 0) {
      error = "'" + steps[i] + "' exited " + std::to_string(r.code) + ": " + r.out.substr(0, 300);
      return out;
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = without_dir(std::string(std::istreambuf_iterator<char>(in), {}), d);
  }
  return out;
}

Outcome criterion_7() {
  Verdict v;
  constexpr int kReps = 200;
  {
    // Percentile bootstrap of AUC; scores are N(delta, 1) vs N(0, 1).
    const double delta = 1.0;
    const double truth = 0.5 * std::erfc(-delta / 2.0);  // Phi(delta / sqrt 2)
    int covered = 0;
    for (int rep = 0; rep < kReps; ++rep) {
      Rng rng(derive_seed(701, static_cast<std::uint64_t>(rep)));
      std::vector<double> sc;
      std::vector<int> y;
      for (int i = 0; i < 200; ++i) {
        y.push_back(i % 2);
        sc.push_back(rng.normal() + delta * y.back());
      }
      const auto ci = stats::bootstrap_ci(
          sc.size(),
          [&](const std::vector<std::size_t>& idx) {
            std::vector<double> s2;
            std::vector<int> y2;
            for (auto i : idx) {
              s2.push_back(sc[i]);
              y2.push_back(y[i]);
            }
            return metrics::auc(s2, y2);
          },
          1000, 0.95, derive_seed(702, static_cast<std::uint64_t>(rep)));
      covered += ci.lo <= truth && truth <= ci.hi;
    }
    const double coverage = static_cast<double>(covered) / kReps;
    v.check(coverage >= 0.92 && coverage <= 0.98, "bootstrap coverage " + fmt(coverage));
  }
  {
    // Two exchangeable predictors of the same labels: paired swaps are a null.
    std::vector<double> pvals;
    for (int rep = 0; rep < kReps; ++rep) {
      Rng rng(derive_seed(703, static_cast<std::uint64_t>(rep)));
      std::vector<int> y;
      std::vector<double> a, b;
      for (int i = 0; i < 100; ++i) {
        y.push_back(i % 2);
        a.push_back(rng.normal() + y.back());
        b.push_back(rng.normal() + y.back());
      }
      pvals.push_back(stats::permutation_test([&](const std::vector<double>& p) { return metrics::auc(p, y); }, a, b,
                                              999, derive_seed(704, static_cast<std::uint64_t>(rep))));
    }
    const double ks = stats::ks_uniform(pvals);
    v.check(ks < 0.1, "permutation null KS " + fmt(ks));
  }
  {
    const fs::path root = fs::temp_directory_path() / ("slidelm_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    std::string err_a, err_b;
    const auto a = pipeline(root / "a", err_a);
    const auto b = pipeline(root / "b", err_b);
    if (!err_a.empty() || !err_b.empty()) {
      v.check(false, "pipeline failed: " + (err_a.empty() ? err_b : err_a));
    } else {
      std::size_t differing = 0;
      std::string first;
      for (const auto& [k, val] : a) {
        auto it = b.find(k);
        if (it == b.end() || it->second != val) {
          if (first.empty()) first = k;
          ++differing;
        }
      }
      differing += a.size() != b.size();
      v.check(differing == 0, "reruns bit-identical over " + std::to_string(a.size()) + " outputs" +
                                  (first.empty() ? "" : " (first difference " + first + ")"));
    }
    fs::remove_all(root);
  }
  return v.done();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-7); default runs all")->check(CLI::Range(1, 7));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> criteria = {criterion_1, criterion_2, criterion_3, criterion_4,
                                                          criterion_5, criterion_6, criterion_7};
  bool all_pass = true;
  for (int n = 1; n <= 7; ++n) {
    if (only != 0 && n != only) continue;
    const auto t0 = clk::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(n - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << o.detail << " [" << fmt(seconds_since(t0))
              << "s]" << std::endl;
  }
  return all_pass ? 0 : 1;
}
