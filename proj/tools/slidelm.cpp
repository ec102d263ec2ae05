// Command-line driver for the slide-level vision-language pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slidelm/slidelm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace slidelm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  config::RunConfig resolve() const {
    config::RunConfig rc;
    if (!config_file.empty()) rc.load_file(fs::absolute(config_file));
    for (const auto& kv : sets) rc.assign(kv);
    if (seed) rc.set("seed", std::to_string(*seed));
    if (threads) rc.set("threads", std::to_string(*threads));
    require(rc.threads() >= 1, "threads must be >= 1");
    return rc;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "Key=value configuration file");
  cmd->add_option("--set", c.sets, "Override one configuration key (key=value); repeatable");
  cmd->add_option("--seed", c.seed, "Master seed (overrides config 'seed')");
  cmd->add_option("--threads", c.threads, "Worker threads for resampling (1 = deterministic single thread)");
}

void header(const std::string& command, const config::RunConfig& rc) {
  std::cout << "# slidelm " << SLIDELM_VERSION << " command=" << command << " seed=" << rc.seed()
            << " config=" << rc.hash() << " threads=" << rc.threads() << "\n";
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + p.string());
  return out;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read " + p.string());
  std::vector<json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(FormatError::Kind::kSchema, p.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Records of one split ("all", "train", "val" or "test").
struct SplitView {
  eval::Split split;
  train::RecordList all;

  train::RecordList pick(const std::string& which) const {
    if (which == "all") return all;
    if (which == "train") return split.train;
    if (which == "val") return split.val;
    if (which == "test") return split.test;
    throw InvalidArgument("split must be all, train, val or test");
  }

  std::string role_of(const std::string& id) const {
    for (const auto* r : split.test) if (r->specimen_id == id) return "test";
    for (const auto* r : split.val) if (r->specimen_id == id) return "val";
    return "train";
  }
};

SplitView make_split(const corpus::Corpus& c, const config::RunConfig& rc) {
  SplitView v;
  v.split = eval::split_records(c, rc.get_double("split.test_fraction"), rc.get_double("split.val_fraction"), rc.seed());
  for (const auto& r : c.records) v.all.push_back(&r);
  return v;
}

train::Stage stage_of(const std::string& s) {
  if (s == "1") return train::Stage::kStage1;
  if (s == "2") return train::Stage::kStage2;
  if (s == "survival" || s == "specialist") return train::Stage::kSurvival;
  throw InvalidArgument("stage must be 1, 2, survival or specialist");
}

// ---- commands ---------------------------------------------------------------

int cmd_synth(const Common& com, const std::string& out_dir, std::optional<long long> n) {
  auto rc = com.resolve();
  if (n) rc.set("corpus.n_specimens", std::to_string(*n));
  header("synth", rc);
  const auto corpus = corpus::generate_corpus(rc.corpus_spec(), rc.seed());
  corpus::save_corpus(corpus, fs::absolute(out_dir));
  std::cout << "specimens " << corpus.records.size() << " -> " << fs::absolute(out_dir).string() << "\n";
  return 0;
}

int cmd_train(const Common& com, const std::string& stage_s, const std::string& corpus_dir, const std::string& out_dir,
              const std::string& init_dir, const std::string& log_path) {
  const auto rc = com.resolve();
  header("train", rc);
  const train::Stage stage = stage_of(stage_s);
  const auto corpus = corpus::load_corpus(fs::absolute(corpus_dir));
  const auto view = make_split(corpus, rc);
  require(!view.split.train.empty(), "train: training split is empty");

  Model model = init_dir.empty() ? Model::init(rc.model_config(corpus.spec.dim), rc.seed())
                                 : load_model(fs::absolute(init_dir));
  if (init_dir.empty() && stage != train::Stage::kStage1 && stage_s != "specialist") {
    throw InvalidArgument("train --stage " + stage_s + " needs --init <model dir>");
  }
  require(model.config.encoder.d_in == corpus.spec.dim, "train: model d_in does not match corpus dim");

  std::ofstream log_file;
  if (!log_path.empty()) log_file = open_out(fs::absolute(log_path));
  train::TrainLog log(log_path.empty() ? nullptr : &log_file);

  train::TrainStats st;
  if (stage == train::Stage::kStage1) {
    st = train::train_stage1(model, view.split.train, rc.train_config(stage), log);
  } else if (stage == train::Stage::kStage2) {
    st = train::train_stage2(model, view.split.train, rc.train_config(stage), log);
  } else if (stage_s == "survival") {
    st = train::finetune_survival(model, view.split.train, rc.train_config(stage), log);
  } else {
    const auto cfg = train::TrainConfig::specialist_from(rc.train_config(train::Stage::kStage1),
                                                         rc.train_config(train::Stage::kSurvival).epochs);
    st = train::finetune_survival(model, view.split.train, cfg, log);
  }
  save_model(model, fs::absolute(out_dir));
  std::cout << "stage " << stage_s << ": steps " << st.steps << ", epochs " << st.epochs_run;
  if (!st.step_losses.empty()) std::cout << ", final loss " << st.step_losses.back();
  if (!st.val_losses.empty()) std::cout << ", best val " << st.best_val;
  if (st.skipped_batches > 0) std::cout << ", skipped batches " << st.skipped_batches;
  std::cout << "\nfrozen tensors verified: " << st.frozen_checksums.size() << "\n";
  return 0;
}

int cmd_embed(const Common& com, const std::string& kind_s, const std::string& model_dir,
              const std::string& corpus_dir, const std::string& out_path, const std::string& which) {
  const auto rc = com.resolve();
  header("embed", rc);
  const auto kind = eval::embedding_kind_from(kind_s);
  const Model model = load_model(fs::absolute(model_dir));
  const auto corpus = corpus::load_corpus(fs::absolute(corpus_dir));
  const auto view = make_split(corpus, rc);
  const auto records = view.pick(which);
  const auto lat = eval::latents_of(model, records);
  const Mat e = eval::embeddings(model, lat, records, kind);
  auto out = open_out(fs::absolute(out_path));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto* r = records[i];
    json j;
    j["specimen_id"] = r->specimen_id;
    j["split"] = view.role_of(r->specimen_id);
    j["label"] = r->label;
    if (r->survival) {
      j["time"] = r->survival->time_months;
      j["event"] = r->survival->event;
    }
    const auto row = e.row(static_cast<Index>(i));
    j["embedding"] = std::vector<double>(row.data(), row.data() + row.size());
    out << j.dump() << "\n";
  }
  std::cout << "embeddings " << records.size() << " x " << e.cols() << " (" << kind_s << ")\n";
  return 0;
}

int cmd_predict(const Common& com, const std::string& mode, const std::string& model_dir,
                const std::string& corpus_dir, const std::string& out_path, const std::string& which,
                const std::string& concept_key, const std::string& question, const std::string& completions,
                const std::string& schema_path, const std::string& calibration_path) {
  const auto rc = com.resolve();
  header("predict " + mode, rc);
  const Model model = load_model(fs::absolute(model_dir));
  const auto corpus = corpus::load_corpus(fs::absolute(corpus_dir));
  const auto view = make_split(corpus, rc);
  const auto records = view.pick(which);
  const auto lat = eval::latents_of(model, records);
  auto out = open_out(fs::absolute(out_path));

  auto base = [&](const corpus::SpecimenRecord& r) {
    json j;
    j["specimen_id"] = r.specimen_id;
    j["split"] = view.role_of(r.specimen_id);
    return j;
  };

  if (mode == "qa") {
    if (!question.empty()) {
      std::vector<std::string> opts;
      std::stringstream ss(completions);
      for (std::string t; std::getline(ss, t, ',');) opts.push_back(t);
      for (const auto* r : records) {
        const auto res = predict::qa_predict(model, lat.at(r->specimen_id), {question, opts});
        json j = base(*r);
        j["task"] = "qa";
        j["classes"] = opts;
        j["probabilities"] = res.probabilities;
        j["scores"] = res.scores;
        out << j.dump() << "\n";
      }
    } else {
      const auto topic = corpus::grammar::concept_from_key(concept_key);
      const auto p = eval::yes_no_probabilities(model, lat, records, topic);
      for (std::size_t i = 0; i < records.size(); ++i) {
        json j = base(*records[i]);
        j["task"] = "yes_no:" + concept_key;
        j["classes"] = {"no", "yes"};
        j["probabilities"] = {1.0 - p[i], p[i]};
        j["truth"] = records[i]->has(topic) ? 1 : 0;
        out << j.dump() << "\n";
      }
    }
  } else if (mode == "contrastive") {
    const int k = corpus.spec.n_classes;
    const auto bank = predict::build_prompt_bank(model, predict::diagnosis_prompts(std::max(2, k)));
    const Mat e = eval::embeddings(model, lat, records, eval::EmbeddingKind::kBase);
    for (std::size_t i = 0; i < records.size(); ++i) {
      json j = base(*records[i]);
      j["task"] = "diagnosis";
      j["probabilities"] = predict::contrastive_predict(e.row(static_cast<Index>(i)).transpose(), bank);
      j["truth"] = records[i]->label;
      out << j.dump() << "\n";
    }
  } else if (mode == "report") {
    const auto schema = schema_path.empty()
                            ? predict::default_schema(corpus.spec.n_classes)
                            : predict::schema_from_json(corpus::detail::read_file(fs::absolute(schema_path)));
    for (const auto* r : records) {
      json j = predict::filled_report_json(predict::complete_report(model, lat.at(r->specimen_id), schema, r->specimen_id));
      j["split"] = view.role_of(r->specimen_id);
      out << j.dump() << "\n";
    }
    const auto cal = eval::report_calibration(model, lat, records, schema,
                                              static_cast<std::size_t>(rc.get_int("eval.min_support")));
    json jc = json::array();
    std::cout << "field,n,observed_amr,max_amr\n";
    for (const auto& fc : cal) {
      if (!fc.scored) {
        std::cout << fc.field << "," << fc.n << ",unsupported,unsupported\n";
        continue;
      }
      std::cout << fc.field << "," << fc.n << "," << fc.observed_amr << "," << fc.max_amr << "\n";
      json f = adapt::to_json(fc.calibration);
      f["field"] = fc.field;
      f["n"] = fc.n;
      f["observed_amr"] = fc.observed_amr;
      f["max_amr"] = fc.max_amr;
      jc.push_back(std::move(f));
    }
    if (!calibration_path.empty()) open_out(fs::absolute(calibration_path)) << jc.dump(2) << "\n";
  } else {
    throw InvalidArgument("predict mode must be qa, contrastive or report");
  }
  std::cout << "predictions " << records.size() << " -> " << fs::absolute(out_path).string() << "\n";
  return 0;
}

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<std::string> split;
  std::vector<int> label;
  std::vector<double> time;
  std::vector<bool> event;
  Mat x;

  static EmbeddingTable read(const fs::path& p) {
    EmbeddingTable t;
    const auto rows = read_jsonl(p);
    if (rows.empty()) throw InvalidArgument("embeddings file is empty: " + p.string());
    try {
      const auto width = rows.front().at("embedding").size();
      t.x.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        t.ids.push_back(r.at("specimen_id").get<std::string>());
        t.split.push_back(r.at("split").get<std::string>());
        t.label.push_back(r.at("label").get<int>());
        t.time.push_back(r.contains("time") ? r.at("time").get<double>() : 0.0);
        t.event.push_back(r.contains("event") && r.at("event").get<bool>());
        const auto e = r.at("embedding").get<std::vector<double>>();
        if (e.size() != width) throw FormatError(FormatError::Kind::kDimMismatch, "embedding width differs on row " + std::to_string(i));
        for (std::size_t k = 0; k < width; ++k) t.x(static_cast<Index>(i), static_cast<Index>(k)) = e[k];
      }
    } catch (const json::exception& e) {
      throw FormatError(FormatError::Kind::kSchema, p.string() + ": " + e.what());
    }
    return t;
  }

  std::vector<std::size_t> rows_of(const std::string& s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == s) out.push_back(i);
    }
    return out;
  }

  Mat take(const std::vector<std::size_t>& rows) const {
    Mat out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(rows[i]));
    return out;
  }
  template <class T>
  static std::vector<T> take(const std::vector<T>& v, const std::vector<std::size_t>& rows) {
    std::vector<T> out;
    for (auto r : rows) out.push_back(v[r]);
    return out;
  }
};

int cmd_probe(const Common& com, const std::string& emb_path, const std::string& out_path,
              const std::string& pred_path) {
  const auto rc = com.resolve();
  header("probe", rc);
  const auto t = EmbeddingTable::read(fs::absolute(emb_path));
  const auto tr = t.rows_of("train"), va = t.rows_of("val"), te = t.rows_of("test");
  require(!tr.empty() && !va.empty(), "probe: embeddings need train and val rows");
  const auto model = adapt::fit_linear_probe(t.take(tr), EmbeddingTable::take(t.label, tr), t.take(va),
                                             EmbeddingTable::take(t.label, va));
  json j = adapt::to_json(model);
  if (!te.empty()) {
    const Mat p = model.predict_proba(t.take(te));
    const auto y = EmbeddingTable::take(t.label, te);
    j["test_auc"] = metrics::auc_ovo(p, y);
    std::cout << "probe: l2 " << model.chosen_l2 << ", test AUC " << j["test_auc"].get<double>() << "\n";
    if (!pred_path.empty()) {
      auto out = open_out(fs::absolute(pred_path));
      for (std::size_t i = 0; i < te.size(); ++i) {
        const auto row = p.row(static_cast<Index>(i));
        json jp;
        jp["specimen_id"] = t.ids[te[i]];
        jp["split"] = "test";
        jp["task"] = "probe";
        jp["probabilities"] = std::vector<double>(row.data(), row.data() + row.size());
        jp["truth"] = y[i];
        out << jp.dump() << "\n";
      }
    }
  } else {
    std::cout << "probe: l2 " << model.chosen_l2 << "\n";
  }
  open_out(fs::absolute(out_path)) << j.dump(2) << "\n";
  return 0;
}

int cmd_cox(const Common& com, const std::string& emb_path, const std::string& out_path, const std::string& pred_path) {
  const auto rc = com.resolve();
  header("cox", rc);
  const auto t = EmbeddingTable::read(fs::absolute(emb_path));
  const auto tr = t.rows_of("train"), va = t.rows_of("val"), te = t.rows_of("test");
  require(!tr.empty() && !va.empty(), "cox: embeddings need train and val rows");
  using T = EmbeddingTable;
  const auto model = adapt::fit_cox(t.take(tr), T::take(t.time, tr), T::take(t.event, tr), t.take(va),
                                    T::take(t.time, va), T::take(t.event, va));
  json j = adapt::to_json(model);
  if (!te.empty()) {
    const auto risk = model.risk(t.take(te));
    j["test_c_index"] = metrics::c_index(risk, T::take(t.time, te), T::take(t.event, te));
    std::cout << "cox: lambda " << model.lambda << ", test C-index " << j["test_c_index"].get<double>() << "\n";
    if (!pred_path.empty()) {
      auto out = open_out(fs::absolute(pred_path));
      for (std::size_t i = 0; i < te.size(); ++i) {
        json jp;
        jp["specimen_id"] = t.ids[te[i]];
        jp["split"] = "test";
        jp["task"] = "survival";
        jp["risk"] = risk[i];
        jp["time"] = t.time[te[i]];
        jp["event"] = static_cast<bool>(t.event[te[i]]);
        out << jp.dump() << "\n";
      }
    }
  } else {
    std::cout << "cox: lambda " << model.lambda << "\n";
  }
  open_out(fs::absolute(out_path)) << j.dump(2) << "\n";
  return 0;
}

// Predictions flattened for resampling: one row of `width` values per specimen.
struct PredictionSet {
  std::string task;
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<int> truth;
  std::vector<double> time;
  std::vector<bool> event;
  bool survival = false;

  std::size_t size() const { return width == 0 ? 0 : values.size() / width; }

  static PredictionSet read(const fs::path& p) {
    PredictionSet s;
    const auto rows = read_jsonl(p);
    if (rows.empty()) throw InvalidArgument("predictions file is empty: " + p.string());
    try {
      s.task = rows.front().value("task", "");
      s.survival = rows.front().contains("risk");
      for (const auto& r : rows) {
        if (s.survival) {
          s.values.push_back(r.at("risk").get<double>());
          s.time.push_back(r.at("time").get<double>());
          s.event.push_back(r.at("event").get<bool>());
          s.width = 1;
        } else {
          const auto p = r.at("probabilities").get<std::vector<double>>();
          if (s.width == 0) s.width = p.size();
          if (p.size() != s.width) throw FormatError(FormatError::Kind::kDimMismatch, "ragged probability rows");
          s.values.insert(s.values.end(), p.begin(), p.end());
          if (!r.contains("truth")) throw InvalidArgument("predictions without ground truth cannot be evaluated");
          s.truth.push_back(r.at("truth").get<int>());
        }
      }
    } catch (const json::exception& e) {
      throw FormatError(FormatError::Kind::kSchema, p.string() + ": " + e.what());
    }
    return s;
  }
};

using IndexedMetric = std::function<double(const std::vector<double>&, const std::vector<std::size_t>&)>;

IndexedMetric metric_for(const std::string& name, const PredictionSet& s) {
  const std::size_t w = s.width;
  auto probs = [w](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    Mat p(static_cast<Index>(idx.size()), static_cast<Index>(w));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t k = 0; k < w; ++k) p(static_cast<Index>(i), static_cast<Index>(k)) = v[idx[i] * w + k];
    }
    return p;
  };
  auto argmax = [w](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    for (auto i : idx) {
      out.push_back(static_cast<int>(std::max_element(v.begin() + static_cast<std::ptrdiff_t>(i * w),
                                                      v.begin() + static_cast<std::ptrdiff_t>((i + 1) * w)) -
                                     (v.begin() + static_cast<std::ptrdiff_t>(i * w))));
    }
    return out;
  };
  auto truth = [&s](const std::vector<std::size_t>& idx) {
    std::vector<int> y;
    for (auto i : idx) y.push_back(s.truth[i]);
    return y;
  };
  if (name == "c_index") {
    if (!s.survival) throw InvalidArgument("c_index needs survival predictions (risk, time, event)");
    return [&s](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
      std::vector<double> r, t;
      std::vector<bool> e;
      for (auto i : idx) {
        r.push_back(v[i]);
        t.push_back(s.time[i]);
        e.push_back(s.event[i]);
      }
      return metrics::c_index(r, t, e);
    };
  }
  if (s.survival) throw InvalidArgument("survival predictions support only the c_index metric");
  if (name == "auc") {
    return [=](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
      return metrics::auc_ovo(probs(v, idx), truth(idx));
    };
  }
  if (name == "balanced_accuracy") {
    return [=](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
      return metrics::balanced_accuracy(argmax(v, idx), truth(idx));
    };
  }
  if (name == "amr") {
    return [=](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
      return metrics::adjusted_mean_recall(argmax(v, idx), truth(idx), static_cast<int>(std::max<std::size_t>(w, 2)));
    };
  }
  throw InvalidArgument("metric must be auc, balanced_accuracy, amr or c_index");
}

int cmd_eval(const Common& com, const std::vector<std::string>& pred_paths, const std::string& metric,
             const std::string& out_path, const std::string& csv_path) {
  const auto rc = com.resolve();
  header("eval", rc);
  std::vector<PredictionSet> sets;
  for (const auto& p : pred_paths) sets.push_back(PredictionSet::read(fs::absolute(p)));
  const int n_boot = static_cast<int>(rc.get_int("eval.bootstrap_iterations"));
  const int n_perm = static_cast<int>(rc.get_int("eval.permutation_iterations"));
  const double level = rc.get_double("eval.level");
  std::vector<metrics::EvalReport> reports;
  for (std::size_t a = 0; a < sets.size(); ++a) {
    const auto& s = sets[a];
    const auto m = metric_for(metric, s);
    std::vector<std::size_t> all(s.size());
    std::iota(all.begin(), all.end(), 0);
    metrics::EvalReport r;
    r.task = pred_paths[a];
    r.metric = metric;
    r.n = s.size();
    r.point = m(s.values, all);
    r.ci = stats::bootstrap_ci(
        s.size(), [&](const std::vector<std::size_t>& idx) { return m(s.values, idx); }, n_boot, level, rc.seed(),
        rc.threads());
    for (std::size_t b = 0; b < sets.size(); ++b) {
      if (b == a) continue;
      const auto& o = sets[b];
      if (o.size() != s.size() || o.width != s.width || o.truth != s.truth || o.time != s.time) {
        throw InvalidArgument("eval: " + pred_paths[a] + " and " + pred_paths[b] + " do not cover the same specimens");
      }
      r.p_values[pred_paths[a] + "|" + pred_paths[b]] = stats::permutation_test_rows(
          [&](const std::vector<double>& v) { return m(v, all); }, s.values, o.values, s.width, n_perm, rc.seed(),
          rc.threads());
    }
    reports.push_back(std::move(r));
  }
  metrics::write_csv(reports, std::cout);
  if (!out_path.empty()) open_out(fs::absolute(out_path)) << metrics::to_json(reports).dump(2) << "\n";
  if (!csv_path.empty()) {
    auto out = open_out(fs::absolute(csv_path));
    metrics::write_csv(reports, out);
  }
  return 0;
}

int cmd_heatmap(const Common& com, const std::string& model_dir, const std::string& corpus_dir,
                const std::string& specimen, const std::string& out_path) {
  const auto rc = com.resolve();
  header("heatmap", rc);
  const Model model = load_model(fs::absolute(model_dir));
  const auto corpus = corpus::load_corpus(fs::absolute(corpus_dir));
  const auto* r = corpus.find(specimen);
  if (r == nullptr) throw InvalidArgument("heatmap: unknown specimen '" + specimen + "'");
  const auto scores = encoder::attention_heatmap(model.params, model.config.encoder, r->tiles.stacked());
  auto out = open_out(fs::absolute(out_path));
  out << "slide_id,tile,score\n";
  Index row = 0;
  for (const auto& s : r->tiles.slides) {
    for (Index t = 0; t < s.embeddings.rows(); ++t) out << s.slide_id << "," << t << "," << scores(row++) << "\n";
  }
  std::cout << "heatmap " << scores.size() << " tiles -> " << fs::absolute(out_path).string() << "\n";
  return 0;
}

int cmd_pack_stats(const Common& com, const std::string& corpus_dir, std::optional<std::int64_t> budget_opt,
                   std::size_t workers, const std::string& out_path) {
  const auto rc = com.resolve();
  header("pack-stats", rc);
  const auto corpus = corpus::load_corpus(fs::absolute(corpus_dir));
  const std::int64_t budget = budget_opt.value_or(rc.train_config(train::Stage::kStage1).budget);
  std::vector<packer::SequenceRef> queue;
  for (const auto& r : corpus.records) queue.push_back({r.specimen_id, r.tiles.total_tiles()});
  Rng rng(rc.seed());
  rng.shuffle(queue);
  const auto packs = packer::pack(queue, budget);
  const auto st = packer::balance_report(packs, workers);
  std::int64_t tokens = 0;
  for (const auto& p : packs) tokens += p.tokens();
  std::cout << "packs " << packs.size() << ", tokens " << tokens << ", budget " << budget << ", fill "
            << (packs.empty() ? 0.0 : static_cast<double>(tokens) / (static_cast<double>(packs.size()) * budget))
            << "\nworkers " << workers << ", per-worker tokens min " << st.min_tokens << " max " << st.max_tokens
            << " mean " << st.mean_tokens << ", idle fraction " << st.idle_fraction << "\n";
  if (!out_path.empty()) {
    auto out = open_out(fs::absolute(out_path));
    packer::write_balance_csv(st, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slide-level vision-language pipeline on synthetic pathology data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(SLIDELM_VERSION));
  Common com;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::string out_dir;
  std::optional<long long> n_specimens;
  synth->add_option("--out", out_dir, "Output corpus directory")->required();
  synth->add_option("--n", n_specimens, "Number of specimens (overrides corpus.n_specimens)");
  add_common(synth, com);

  auto* trainc = app.add_subcommand("train", "Train one stage");
  std::string stage, corpus_dir, init_dir, log_path;
  trainc->add_option("--stage", stage, "1, 2, survival or specialist")
      ->required()
      ->check(CLI::IsMember({"1", "2", "survival", "specialist"}));
  trainc->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  trainc->add_option("--out", out_dir, "Output model directory")->required();
  trainc->add_option("--init", init_dir, "Model directory to start from");
  trainc->add_option("--log", log_path, "JSON-lines training log");
  add_common(trainc, com);

  auto* embed = app.add_subcommand("embed", "Write specimen embeddings as JSON lines");
  std::string kind = "base", model_dir, out_path, which = "all";
  embed->add_option("--kind", kind, "base, diagnostic or survival")
      ->check(CLI::IsMember({"base", "diagnostic", "survival"}));
  embed->add_option("--model", model_dir, "Model directory")->required();
  embed->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  embed->add_option("--out", out_path, "Output file")->required();
  embed->add_option("--split", which, "all, train, val or test")->check(CLI::IsMember({"all", "train", "val", "test"}));
  add_common(embed, com);

  auto* pred = app.add_subcommand("predict", "Zero-shot predictions");
  std::string mode, concept_key = "carcinoma", question, completions = "Yes,No", schema_path, calibration_path;
  pred->add_option("mode", mode, "qa, contrastive or report")->required()->check(CLI::IsMember({"qa", "contrastive", "report"}));
  pred->add_option("--model", model_dir, "Model directory")->required();
  pred->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  pred->add_option("--out", out_path, "Output file (JSON lines)")->required();
  pred->add_option("--split", which, "all, train, val or test")->check(CLI::IsMember({"all", "train", "val", "test"}));
  pred->add_option("--concept", concept_key, "qa: finding asked about with the standard yes-no question");
  pred->add_option("--question", question, "qa: free question (no ground truth written)");
  pred->add_option("--completions", completions, "qa: comma-separated single-token answers");
  pred->add_option("--schema", schema_path, "report: schema JSON (default: built-in)");
  pred->add_option("--calibration", calibration_path, "report: write per-field calibration JSON");
  add_common(pred, com);

  auto* probe = app.add_subcommand("probe", "Linear probe over an embeddings file");
  std::string emb_path, pred_path;
  probe->add_option("--embeddings", emb_path, "Embeddings file from 'embed'")->required();
  probe->add_option("--out", out_path, "Probe JSON")->required();
  probe->add_option("--predictions", pred_path, "Write test-split predictions");
  add_common(probe, com);

  auto* cox = app.add_subcommand("cox", "Elastic-net Cox regression over an embeddings file");
  cox->add_option("--embeddings", emb_path, "Embeddings file from 'embed' (survival corpus)")->required();
  cox->add_option("--out", out_path, "Cox JSON")->required();
  cox->add_option("--predictions", pred_path, "Write test-split risk predictions");
  add_common(cox, com);

  auto* evalc = app.add_subcommand("eval", "Metrics with bootstrap CIs and paired permutation tests");
  std::vector<std::string> pred_paths;
  std::string metric = "auc", csv_path;
  evalc->add_option("--predictions", pred_paths, "Prediction files; two or more are compared pairwise")->required();
  evalc->add_option("--metric", metric, "auc, balanced_accuracy, amr or c_index")
      ->check(CLI::IsMember({"auc", "balanced_accuracy", "amr", "c_index"}));
  evalc->add_option("--out", out_path, "Report JSON");
  evalc->add_option("--csv", csv_path, "Summary CSV");
  add_common(evalc, com);

  auto* heat = app.add_subcommand("heatmap", "Per-tile attention relevance for one specimen");
  std::string specimen;
  heat->add_option("--model", model_dir, "Model directory")->required();
  heat->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  heat->add_option("--specimen", specimen, "Specimen id")->required();
  heat->add_option("--out", out_path, "Output CSV")->required();
  add_common(heat, com);

  auto* packs = app.add_subcommand("pack-stats", "Packing and worker-balance statistics");
  std::optional<std::int64_t> budget;
  std::size_t workers = 1;
  packs->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  packs->add_option("--budget", budget, "Tile budget per pack (default: stage-1 preset)");
  packs->add_option("--workers", workers, "Simulated data-parallel workers")->check(CLI::PositiveNumber);
  packs->add_option("--out", out_path, "Per-step CSV");
  add_common(packs, com);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(com, out_dir, n_specimens);
    if (*trainc) return cmd_train(com, stage, corpus_dir, out_dir, init_dir, log_path);
    if (*embed) return cmd_embed(com, kind, model_dir, corpus_dir, out_path, which);
    if (*pred) {
      return cmd_predict(com, mode, model_dir, corpus_dir, out_path, which, concept_key, question, completions,
                         schema_path, calibration_path);
    }
    if (*probe) return cmd_probe(com, emb_path, out_path, pred_path);
    if (*cox) return cmd_cox(com, emb_path, out_path, pred_path);
    if (*evalc) return cmd_eval(com, pred_paths, metric, out_path, csv_path);
    if (*heat) return cmd_heatmap(com, model_dir, corpus_dir, specimen, out_path);
    if (*packs) return cmd_pack_stats(com, corpus_dir, budget, workers, out_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
