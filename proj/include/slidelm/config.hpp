#pragma once

// Run configuration: a flat map of dotted keys (e.g. encoder.n_latents=32)
// read from a text file and overridden by command-line assignments. Every key
// has a default; unknown keys are rejected.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slidelm/corpus/types.hpp"
#include "slidelm/error.hpp"
#include "slidelm/hash.hpp"
#include "slidelm/model.hpp"
#include "slidelm/trainer.hpp"

namespace slidelm::config {

class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  /// Known keys and their defaults. An empty value means "use the preset".
  static std::map<std::string, std::string> defaults() {
    return {
        {"seed", "0"},
        {"threads", "1"},
        {"preset", "desk"},
        {"corpus.n_specimens", "100"},
        {"corpus.n_classes", "2"},
        {"corpus.dim", "64"},
        {"corpus.tiles_per_slide_min", "16"},
        {"corpus.tiles_per_slide_max", "48"},
        {"corpus.slides_per_specimen_min", "1"},
        {"corpus.slides_per_specimen_max", "3"},
        {"corpus.class_separation", "2.0"},
        {"corpus.survival_beta", ""},
        {"corpus.prognostic_spread", "0"},
        {"corpus.censoring_rate", "0.3"},
        {"corpus.base_months", "24"},
        {"encoder.d_model", "64"},
        {"encoder.n_latents", "32"},
        {"encoder.n_self_layers", "2"},
        {"encoder.q_heads", "8"},
        {"encoder.kv_groups", "2"},
        {"encoder.mlp_expansion", "4"},
        {"encoder.d_embed", "64"},
        {"text.d_model", "64"},
        {"text.n_layers", "1"},
        {"text.n_heads", "4"},
        {"decoder.d_model", "64"},
        {"decoder.n_layers", "2"},
        {"decoder.n_heads", "4"},
        {"decoder.adapter_hidden", "64"},
        {"model.init_tau", "0.1"},
        {"train.epochs", ""},
        {"train.budget", ""},
        {"train.lambda_con", "0.25"},
        {"train.lambda_chat", "1.0"},
        {"train.chat_reduction", ""},
        {"train.warmup_steps", ""},
        {"train.lr_scale", "1"},
        {"train.grad_clip", ""},
        {"train.patience", ""},
        {"train.val_fraction", "0.1"},
        {"train.mismatch_prob", "0.5"},
        {"train.max_steps", "0"},
        {"split.test_fraction", "0.2"},
        {"split.val_fraction", "0.2"},
        {"eval.bootstrap_iterations", "1000"},
        {"eval.permutation_iterations", "1000"},
        {"eval.level", "0.95"},
        {"eval.min_support", "10"},
    };
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("unknown config key '" + key + "'");
    it->second = value;
  }

  /// "key=value" form.
  void assign(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config assignment '" + kv + "' lacks '='");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  /// Reads key=value lines; '#' starts a comment.
  void load(std::istream& in, const std::string& source = "config") {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        assign(line);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(source + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read config " + path.string());
    load(in, path.string());
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("unknown config key '" + key + "'");
    return it->second;
  }
  bool is_set(const std::string& key) const { return !get(key).empty(); }

  long long get_int(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw InvalidArgument("config key " + key + ": expected an integer, got '" + v + "'");
    return out;
  }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    double out = 0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw InvalidArgument("config key " + key + ": expected a number, got '" + v + "'");
    return out;
  }

  /// Comma-separated numbers; empty value gives an empty list.
  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw InvalidArgument("config key " + key + ": bad list element '" + item + "'");
      }
    }
    return out;
  }

  /// Sorted key=value lines; the basis of the hash.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
    return buf;
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }
  int threads() const { return static_cast<int>(get_int("threads")); }

  corpus::CorpusSpec corpus_spec() const {
    corpus::CorpusSpec s;
    s.n_specimens = get_int("corpus.n_specimens");
    s.n_classes = static_cast<int>(get_int("corpus.n_classes"));
    s.dim = static_cast<int>(get_int("corpus.dim"));
    s.tiles_per_slide = {get_int("corpus.tiles_per_slide_min"), get_int("corpus.tiles_per_slide_max")};
    s.slides_per_specimen = {get_int("corpus.slides_per_specimen_min"), get_int("corpus.slides_per_specimen_max")};
    s.class_separation = get_double("corpus.class_separation");
    // A short beta list is padded with zeros to the tile dimension.
    s.survival_beta = get_list("corpus.survival_beta");
    if (!s.survival_beta.empty()) {
      require(static_cast<int>(s.survival_beta.size()) <= s.dim, "corpus.survival_beta longer than corpus.dim");
      s.survival_beta.resize(static_cast<std::size_t>(s.dim), 0.0);
    }
    s.prognostic_spread = get_double("corpus.prognostic_spread");
    s.censoring_rate = get_double("corpus.censoring_rate");
    s.base_months = get_double("corpus.base_months");
    return s;
  }

  ModelConfig model_config(int d_in) const {
    ModelConfig c;
    auto i = [&](const char* k) { return static_cast<int>(get_int(k)); };
    c.encoder.d_in = d_in;
    c.encoder.d_model = i("encoder.d_model");
    c.encoder.n_latents = i("encoder.n_latents");
    c.encoder.n_self_layers = i("encoder.n_self_layers");
    c.encoder.q_heads = i("encoder.q_heads");
    c.encoder.kv_groups = i("encoder.kv_groups");
    c.encoder.mlp_expansion = i("encoder.mlp_expansion");
    c.encoder.d_embed = i("encoder.d_embed");
    c.text.d_model = i("text.d_model");
    c.text.n_layers = i("text.n_layers");
    c.text.n_heads = i("text.n_heads");
    c.decoder.d_model = i("decoder.d_model");
    c.decoder.n_layers = i("decoder.n_layers");
    c.decoder.n_heads = i("decoder.n_heads");
    c.decoder.adapter_hidden = i("decoder.adapter_hidden");
    c.init_tau = get_double("model.init_tau");
    c.encoder.validate();
    return c;
  }

  /// Preset schedule for `stage` with any explicit train.* overrides.
  train::TrainConfig train_config(train::Stage stage) const {
    const std::string& preset = get("preset");
    train::TrainConfig c;
    if (preset == "desk") {
      c = train::TrainConfig::desk(stage);
    } else if (preset == "full") {
      c = train::TrainConfig::full(stage);
    } else {
      throw InvalidArgument("preset must be 'desk' or 'full', got '" + preset + "'");
    }
    c.seed = seed();
    c.lambda_con = get_double("train.lambda_con");
    c.lambda_chat = get_double("train.lambda_chat");
    require(c.lambda_con >= 0 && c.lambda_chat >= 0, "train.lambda_* must be >= 0");
    if (is_set("train.epochs")) c.epochs = static_cast<int>(get_int("train.epochs"));
    if (is_set("train.budget")) c.budget = get_int("train.budget");
    if (is_set("train.warmup_steps")) c.adam.warmup_steps = static_cast<int>(get_int("train.warmup_steps"));
    require(c.adam.warmup_steps >= 0, "train.warmup_steps must be >= 0");
    if (is_set("train.grad_clip")) c.grad_clip = get_double("train.grad_clip");
    if (is_set("train.patience")) c.patience = static_cast<int>(get_int("train.patience"));
    if (is_set("train.chat_reduction")) {
      const std::string& r = get("train.chat_reduction");
      if (r == "sum") {
        c.chat_reduction = losses::Reduction::kSum;
      } else if (r == "mean") {
        c.chat_reduction = losses::Reduction::kMean;
      } else {
        throw InvalidArgument("train.chat_reduction must be 'sum' or 'mean'");
      }
    }
    const double scale = get_double("train.lr_scale");
    require(scale > 0, "train.lr_scale must be > 0");
    for (auto& g : c.groups) g.lr *= scale;
    c.val_fraction = get_double("train.val_fraction");
    c.mismatch_prob = get_double("train.mismatch_prob");
    c.max_steps = static_cast<long>(get_int("train.max_steps"));
    return c;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace slidelm::config
