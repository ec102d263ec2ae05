#pragma once

// Training loops. Stage 1 trains the slide encoder, poolers, adapter and text
// encoder on the weighted contrastive + chat objective with the decoder
// frozen. Stage 2 freezes both encoders and tunes adapter + decoder on chat
// alone. Survival fine-tuning trains encoder + survival head on the Cox loss.

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidelm/corpus/chat.hpp"
#include "slidelm/corpus/types.hpp"
#include "slidelm/encoder.hpp"
#include "slidelm/langmodel.hpp"
#include "slidelm/losses.hpp"
#include "slidelm/model.hpp"
#include "slidelm/optim.hpp"
#include "slidelm/packer.hpp"

namespace slidelm::train {

enum class Stage { kStage1, kStage2, kSurvival };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
    case Stage::kSurvival: return "survival";
  }
  return "";
}

struct TrainConfig {
  Stage stage = Stage::kStage1;
  double lambda_con = losses::kDefaultLambdaCon;
  double lambda_chat = losses::kDefaultLambdaChat;
  losses::Reduction chat_reduction = losses::Reduction::kSum;
  std::vector<optim::GroupRule> groups;
  optim::AdamConfig adam;
  int epochs = 1;
  std::uint64_t seed = 0;
  std::int64_t budget = packer::kDefaultBudget;
  corpus::SamplingRates rates;
  double mismatch_prob = 0.5;
  double grad_clip = 0.0;       // global gradient-norm cap, 0 = off
  int patience = 2;             // stage 2: epochs without validation improvement
  double val_fraction = 0.1;    // stage 2: share of training specimens held for early stopping
  bool specialist = false;      // survival: fresh init instead of the given checkpoint
  long max_steps = 0;           // 0 = no cap

  /// Full-scale schedule for `stage`.
  static TrainConfig full(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    switch (stage) {
      case Stage::kStage1:
        c.groups = {{"encoder.", 1e-4, 0.1}, {"pool.", 1e-4, 0.0}, {"contrast.", 1e-4, 0.0},
                    {"adapter.", 1e-4, 0.0}, {"text.", 2e-5, 0.0}};
        c.adam = {0.9, 0.95, 1e-8, 500};
        c.epochs = 1;
        break;
      case Stage::kStage2:
        c.groups = {{"adapter.", 2e-5, 0.0}, {"decoder.", 2e-5, 0.0}};
        c.adam = {0.9, 0.95, 1e-8, 500};
        c.epochs = 16;
        break;
      case Stage::kSurvival:
        c.groups = {{"survival.head", 1e-3, 1e-4}, {"survival.", 1e-4, 1e-4}, {"encoder.", 1e-4, 1e-4}};
        c.adam = {0.9, 0.98, 1e-8, 4000};
        c.epochs = 10;
        break;
    }
    return c;
  }

  /// Small-corpus schedule: shorter warmups, larger rates, smaller packs.
  static TrainConfig desk(Stage stage) {
    TrainConfig c = full(stage);
    c.budget = 512;
    c.adam.warmup_steps = 50;
    c.chat_reduction = losses::Reduction::kMean;
    c.grad_clip = 1.0;
    switch (stage) {
      case Stage::kStage1:
        c.groups = {{"encoder.", 1e-3, 0.1}, {"pool.", 1e-3, 0.0}, {"contrast.", 1e-3, 0.0},
                    {"adapter.", 1e-3, 0.0}, {"text.", 1e-3, 0.0}};
        c.epochs = 2;
        break;
      case Stage::kStage2:
        c.groups = {{"adapter.", 1e-3, 0.0}, {"decoder.", 1e-3, 0.0}};
        c.epochs = 16;
        c.patience = 3;
        break;
      case Stage::kSurvival:
        c.groups = {{"survival.head", 1e-2, 1e-4}, {"survival.", 1e-3, 1e-4}, {"encoder.", 1e-3, 1e-4}};
        c.epochs = 20;
        break;
    }
    return c;
  }

  /// Schedule for the survival specialist: stage-1 hyperparameters with
  /// every survival-path component trained from a fresh initialization.
  static TrainConfig specialist_from(const TrainConfig& stage1, int epochs) {
    TrainConfig c = stage1;
    c.stage = Stage::kSurvival;
    c.epochs = epochs;
    c.specialist = true;
    c.groups.clear();
    for (const auto& g : stage1.groups) {
      if (g.prefix == "encoder.") {
        c.groups.push_back(g);
        c.groups.push_back({"survival.", g.lr, 0.0});
      }
    }
    return c;
  }
};

struct TrainStats {
  long steps = 0;
  long contrastive_evals = 0;
  long chat_evals = 0;
  long skipped_batches = 0;  // survival packs without any event
  int epochs_run = 0;
  std::vector<double> step_losses;
  std::vector<double> val_losses;
  double best_val = 0.0;
  std::map<std::string, std::uint64_t> frozen_checksums;
};

/// Sink for the JSON-lines training log; a null stream disables logging.
class TrainLog {
 public:
  explicit TrainLog(std::ostream* out = nullptr) : out_(out) {}
  void write(const nlohmann::ordered_json& j) {
    if (out_ != nullptr) *out_ << j.dump() << '\n';
  }

 private:
  std::ostream* out_;
};

// ---- batch assembly -----------------------------------------------------

using RecordList = std::vector<const corpus::SpecimenRecord*>;

struct ChatBatch {
  std::vector<corpus::TokenSeq> seqs;
};

struct Stage1Batch {
  packer::PackedBatch tiles;
  std::vector<std::vector<int>> texts;  // report paraphrase tokens, one per member
  ChatBatch chat;
};

/// Chat loss for `seqs` whose image spans take K consecutive rows each from
/// `latents`. Only assistant targets enter the loss.
inline ad::Var chat_forward(nn::Binder& b, const lm::DecoderConfig& dc, ad::Var latents, Index K,
                            const std::vector<corpus::TokenSeq>& seqs, losses::Reduction reduction) {
  std::vector<const corpus::TokenSeq*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  ad::Var prefix = lm::adapt_latents(b, latents);
  ad::Var hidden = lm::decode_hidden(b, dc, prefix, K, ptrs);
  std::vector<Index> rows;
  std::vector<int> targets;
  Index offset = 0;
  for (const auto& s : seqs) {
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (!s.loss_mask[i]) continue;
      rows.push_back(offset + static_cast<Index>(i) - 1);
      targets.push_back(s.ids[i]);
    }
    offset += static_cast<Index>(s.size());
  }
  ad::Var logits = lm::output_logits(b, ad::gather_rows(hidden, rows));
  return losses::chat_loss(logits, targets, std::vector<bool>(targets.size(), true), reduction);
}

struct Stage1Losses {
  ad::Var total;
  ad::Var contrastive;
  ad::Var chat;
};

inline Stage1Losses stage1_forward(nn::Binder& b, const ModelConfig& mc, const Stage1Batch& batch,
                                   const TrainConfig& cfg) {
  ad::Graph& g = b.graph();
  ad::Var latents = encoder::encode(b, mc.encoder, g.constant(batch.tiles.data), batch.tiles.offsets);
  ad::Var v = encoder::pool_base(b, mc.encoder, latents);
  ad::Var t = lm::encode_text(b, mc.text, batch.texts);
  Stage1Losses out;
  out.contrastive = losses::contrastive_loss(v, t, b("contrast.log_tau"));
  out.chat = chat_forward(b, mc.decoder, latents, mc.encoder.n_latents, batch.chat.seqs, cfg.chat_reduction);
  const ad::Var terms[] = {out.contrastive, out.chat};
  const double weights[] = {cfg.lambda_con, cfg.lambda_chat};
  out.total = ad::weighted_sum(terms, weights);
  return out;
}

/// Training view of a record subset: matching negatives and complementary
/// questions are drawn from these records only.
struct TaskData {
  corpus::Corpus corpus;
  std::map<std::string, std::vector<corpus::QAPair>> complementary;

  TaskData(const RecordList& records, std::uint64_t seed) {
    for (const auto* r : records) corpus.records.push_back(*r);
    Rng rng(seed);
    for (auto& qa : corpus::mine_complementary_qa(corpus, rng)) complementary[qa.specimen_id].push_back(qa);
  }

  corpus::ChatContext context(const corpus::SpecimenRecord& r, double mismatch_prob) const {
    corpus::ChatContext ctx;
    ctx.corpus = &corpus;
    auto it = complementary.find(r.specimen_id);
    if (it != complementary.end()) ctx.complementary = it->second;
    ctx.mismatch_prob = mismatch_prob;
    ctx.n_classes = corpus.records.empty() ? 2 : std::max(2, max_label() + 1);
    return ctx;
  }

  int max_label() const {
    int m = 0;
    for (const auto& r : corpus.records) m = std::max(m, r.label);
    return m;
  }
};

inline corpus::TokenSeq chat_sequence(const corpus::SpecimenRecord& r, corpus::TaskKind kind, const TaskData& data,
                                      const TrainConfig& cfg, Rng& rng, const corpus::Tokenizer& tok, Index K) {
  const auto ex = corpus::build_chat_example(r, kind, cfg.rates, rng, data.context(r, cfg.mismatch_prob));
  return corpus::render_chat(ex, tok, static_cast<std::size_t>(K));
}

/// Shuffled specimen order packed under the tile budget.
inline std::vector<packer::PackSkeleton> epoch_packs(const RecordList& records, std::int64_t budget, Rng& rng) {
  std::vector<packer::SequenceRef> queue;
  for (const auto* r : records) queue.push_back({r->specimen_id, r->tiles.total_tiles()});
  rng.shuffle(queue);
  return packer::pack(queue, budget);
}

namespace detail {

inline void check_frozen(const ParamStore& ps, const std::vector<optim::GroupRule>& rules,
                         std::map<std::string, std::uint64_t>& out) {
  for (const char* prefix : {"encoder.", "pool.", "survival.", "contrast.", "text.", "adapter.", "decoder."}) {
    bool trained = false;
    for (const auto& r : rules) trained = trained || std::string(prefix).starts_with(r.prefix) || r.prefix.starts_with(prefix);
    if (!trained) out[prefix] = ps.checksum(prefix);
  }
}

inline void verify_frozen(const ParamStore& ps, const std::map<std::string, std::uint64_t>& before) {
  for (const auto& [prefix, sum] : before) {
    if (ps.checksum(prefix) != sum) throw Error("freeze contract violated for " + prefix);
  }
}

/// Backward, clip, step; returns the loss value.
inline double apply_step(ParamStore& ps, optim::AdamW& opt, const std::vector<std::string>& names, ad::Graph& g,
                         ad::Var loss, double grad_clip) {
  ps.zero_grad();
  g.backward(loss);
  optim::clip_grad_norm(ps, names, grad_clip);
  opt.step(ps);
  return loss.scalar();
}

inline const corpus::SpecimenRecord* lookup(const RecordList& records, const std::string& id) {
  for (const auto* r : records) {
    if (r->specimen_id == id) return r;
  }
  throw InvalidArgument("unknown specimen " + id);
}

inline double lr_of(const TrainConfig& cfg, const optim::AdamW& opt) {
  return cfg.groups.empty() ? 0.0 : cfg.groups.front().lr * opt.lr_scale();
}

}  // namespace detail

// ---- stage 1 --------------------------------------------------------------

inline TrainStats train_stage1(Model& model, const RecordList& records, const TrainConfig& cfg,
                               TrainLog log = TrainLog{}) {
  require(!records.empty(), "train_stage1: empty corpus");
  TrainStats stats;
  detail::check_frozen(model.params, cfg.groups, stats.frozen_checksums);
  const TaskData data(records, derive_seed(cfg.seed, 1));
  const auto names = optim::trainable_names(model.params, cfg.groups);
  const auto prefixes = optim::rule_prefixes(cfg.groups);
  optim::AdamW opt(cfg.adam, cfg.groups);
  Rng rng(derive_seed(cfg.seed, 2));
  const Index K = model.config.encoder.n_latents;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (corpus::TaskKind kind : corpus::kAllTaskKinds) {
      for (const auto& sk : epoch_packs(records, cfg.budget, rng)) {
        if (cfg.max_steps > 0 && stats.steps >= cfg.max_steps) break;
        Stage1Batch batch;
        batch.tiles = packer::concat(sk, records);
        for (const auto& id : batch.tiles.member_ids) {
          const auto* r = detail::lookup(records, id);
          const int variant = static_cast<int>(rng.index(corpus::grammar::kReportVariants));
          batch.texts.push_back(model.tokenizer.encode(corpus::grammar::render_report(r->findings, variant)));
          batch.chat.seqs.push_back(chat_sequence(*r, kind, data, cfg, rng, model.tokenizer, K));
        }
        ad::Graph g;
        nn::Binder b(g, model.params, prefixes);
        const Stage1Losses l = stage1_forward(b, model.config, batch, cfg);
        ++stats.contrastive_evals;
        ++stats.chat_evals;
        const double loss = detail::apply_step(model.params, opt, names, g, l.total, cfg.grad_clip);
        ++stats.steps;
        stats.step_losses.push_back(loss);
        log.write({{"stage", "stage1"}, {"epoch", epoch}, {"task", corpus::task_kind_name(kind)},
                   {"step", stats.steps}, {"loss", loss}, {"l_con", l.contrastive.scalar()},
                   {"l_chat", l.chat.scalar()}, {"tau", model.tau()}, {"lr", detail::lr_of(cfg, opt)},
                   {"tokens", batch.tiles.data.rows()}, {"members", batch.tiles.members()}});
      }
    }
    ++stats.epochs_run;
  }
  detail::verify_frozen(model.params, stats.frozen_checksums);
  return stats;
}

// ---- stage 2 --------------------------------------------------------------

/// Latents of every record under the current (frozen) encoder.
inline std::map<std::string, Mat> cache_latents(const Model& model, const RecordList& records, std::int64_t budget) {
  std::map<std::string, Mat> out;
  std::vector<packer::SequenceRef> queue;
  for (const auto* r : records) queue.push_back({r->specimen_id, r->tiles.total_tiles()});
  for (const auto& sk : packer::pack(queue, std::max<std::int64_t>(budget, 1))) {
    for (auto& st : encoder::encode_packed(model.params, model.config.encoder, packer::concat(sk, records))) {
      out[st.specimen_id] = std::move(st.latents);
    }
  }
  return out;
}

inline ad::Var stage2_forward(nn::Binder& b, const ModelConfig& mc, const std::vector<const Mat*>& latents,
                              const std::vector<corpus::TokenSeq>& seqs, losses::Reduction reduction) {
  const Index K = mc.encoder.n_latents;
  Mat stacked(K * static_cast<Index>(latents.size()), mc.encoder.d_model);
  for (std::size_t i = 0; i < latents.size(); ++i) stacked.middleRows(static_cast<Index>(i) * K, K) = *latents[i];
  return chat_forward(b, mc.decoder, b.graph().constant(std::move(stacked)), K, seqs, reduction);
}

inline TrainStats train_stage2(Model& model, const RecordList& records, const TrainConfig& cfg,
                               TrainLog log = TrainLog{}) {
  require(!records.empty(), "train_stage2: empty corpus");
  TrainStats stats;
  detail::check_frozen(model.params, cfg.groups, stats.frozen_checksums);
  const Index K = model.config.encoder.n_latents;

  // Early-stopping split, fixed by the seed.
  RecordList order = records;
  Rng split_rng(derive_seed(cfg.seed, 3));
  split_rng.shuffle(order);
  const std::size_t n_val =
      records.size() >= 10 ? std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * records.size())) : 0;
  const RecordList val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  const RecordList fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  const TaskData data(fit, derive_seed(cfg.seed, 1));
  const auto latents = cache_latents(model, records, cfg.budget);
  const auto names = optim::trainable_names(model.params, cfg.groups);
  const auto prefixes = optim::rule_prefixes(cfg.groups);
  optim::AdamW opt(cfg.adam, cfg.groups);
  Rng rng(derive_seed(cfg.seed, 2));

  // Fixed validation conversations: every task kind for every held-out record.
  std::vector<corpus::TokenSeq> val_seqs;
  std::vector<const Mat*> val_lat;
  if (!val.empty()) {
    const TaskData val_data(val, derive_seed(cfg.seed, 4));
    Rng vr(derive_seed(cfg.seed, 5));
    for (const auto* r : val) {
      for (corpus::TaskKind kind : corpus::kAllTaskKinds) {
        val_seqs.push_back(chat_sequence(*r, kind, val_data, cfg, vr, model.tokenizer, K));
        val_lat.push_back(&latents.at(r->specimen_id));
      }
    }
  }
  auto val_loss = [&] {
    ad::Graph g;
    nn::Binder b(g, std::as_const(model.params));
    return stage2_forward(b, model.config, val_lat, val_seqs, losses::Reduction::kMean).scalar();
  };

  ParamStore best;
  stats.best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (corpus::TaskKind kind : corpus::kAllTaskKinds) {
      for (const auto& sk : epoch_packs(fit, cfg.budget, rng)) {
        if (cfg.max_steps > 0 && stats.steps >= cfg.max_steps) break;
        std::vector<corpus::TokenSeq> seqs;
        std::vector<const Mat*> lat;
        for (const auto& m : sk.members) {
          const auto* r = detail::lookup(fit, m.id);
          seqs.push_back(chat_sequence(*r, kind, data, cfg, rng, model.tokenizer, K));
          lat.push_back(&latents.at(m.id));
        }
        ad::Graph g;
        nn::Binder b(g, model.params, prefixes);
        ad::Var loss = stage2_forward(b, model.config, lat, seqs, cfg.chat_reduction);
        ++stats.chat_evals;
        const double value = detail::apply_step(model.params, opt, names, g, loss, cfg.grad_clip);
        ++stats.steps;
        stats.step_losses.push_back(value);
        log.write({{"stage", "stage2"}, {"epoch", epoch}, {"task", corpus::task_kind_name(kind)},
                   {"step", stats.steps}, {"loss", value}, {"l_chat", value}, {"lr", detail::lr_of(cfg, opt)},
                   {"tokens", static_cast<std::int64_t>(sk.tokens())}, {"members", sk.members.size()}});
      }
    }
    ++stats.epochs_run;
    if (val_seqs.empty()) continue;
    const double v = val_loss();
    stats.val_losses.push_back(v);
    log.write({{"stage", "stage2"}, {"epoch", epoch}, {"val_loss", v}});
    if (v < stats.best_val) {
      stats.best_val = v;
      since_best = 0;
      best = ParamStore{};
      for (const auto& n : names) best.add(n, model.params.at(n).value);
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (best.size() > 0) {
    for (const auto& [n, p] : best) model.params.at(n).value = p.value;
  }
  detail::verify_frozen(model.params, stats.frozen_checksums);
  return stats;
}

// ---- survival --------------------------------------------------------------

inline ad::Var survival_forward(nn::Binder& b, const ModelConfig& mc, const packer::PackedBatch& batch,
                                const std::vector<double>& times, const std::vector<bool>& events) {
  ad::Var latents = encoder::encode(b, mc.encoder, b.graph().constant(batch.data), batch.offsets);
  return losses::cox_loss(encoder::pool_survival(b, mc.encoder, latents).log_hazard, times, events);
}

/// Cox fine-tuning. With cfg.specialist the encoder and survival head are
/// first re-initialized from the seed, giving a from-scratch model.
inline TrainStats finetune_survival(Model& model, const RecordList& records, const TrainConfig& cfg,
                                    TrainLog log = TrainLog{}) {
  RecordList labeled;
  for (const auto* r : records) {
    if (r->survival) labeled.push_back(r);
  }
  require(!labeled.empty(), "finetune_survival: no survival labels");
  if (cfg.specialist) {
    const Model fresh = Model::init(model.config, derive_seed(cfg.seed, 9));
    for (const auto& [name, p] : fresh.params) {
      if (name.starts_with("encoder.") || name.starts_with("survival.")) model.params.at(name).value = p.value;
    }
  }
  TrainStats stats;
  detail::check_frozen(model.params, cfg.groups, stats.frozen_checksums);
  const auto names = optim::trainable_names(model.params, cfg.groups);
  const auto prefixes = optim::rule_prefixes(cfg.groups);
  optim::AdamW opt(cfg.adam, cfg.groups);
  Rng rng(derive_seed(cfg.seed, 2));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& sk : epoch_packs(labeled, cfg.budget, rng)) {
      if (cfg.max_steps > 0 && stats.steps >= cfg.max_steps) break;
      const auto batch = packer::concat(sk, labeled);
      std::vector<double> times;
      std::vector<bool> events;
      for (const auto& id : batch.member_ids) {
        const auto& s = *detail::lookup(labeled, id)->survival;
        times.push_back(static_cast<double>(s.time_months));
        events.push_back(s.event);
      }
      if (std::find(events.begin(), events.end(), true) == events.end()) {
        ++stats.skipped_batches;
        log.write({{"stage", "survival"}, {"epoch", epoch}, {"warning", "batch without events skipped"}});
        continue;
      }
      ad::Graph g;
      nn::Binder b(g, model.params, prefixes);
      const double value =
          detail::apply_step(model.params, opt, names, g, survival_forward(b, model.config, batch, times, events),
                             cfg.grad_clip);
      ++stats.steps;
      stats.step_losses.push_back(value);
      log.write({{"stage", "survival"}, {"epoch", epoch}, {"step", stats.steps}, {"loss", value},
                 {"lr", detail::lr_of(cfg, opt)}, {"tokens", batch.data.rows()}, {"members", batch.members()}});
    }
    ++stats.epochs_run;
  }
  detail::verify_frozen(model.params, stats.frozen_checksums);
  return stats;
}

}  // namespace slidelm::train
