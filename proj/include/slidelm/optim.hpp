#pragma once

// AdamW with decoupled weight decay, prefix-based parameter groups and a
// linear-warmup-then-constant learning-rate schedule.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "slidelm/error.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::optim {

/// Parameters whose name starts with `prefix` train with these settings. The
/// first matching rule wins; parameters matching no rule are frozen.
struct GroupRule {
  std::string prefix;
  double lr = 1e-4;
  double weight_decay = 0.0;

  bool operator==(const GroupRule&) const = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  int warmup_steps = 500;

  bool operator==(const AdamConfig&) const = default;
};

/// Multiplier on the base rate at 1-based step `step`.
inline double warmup_factor(long step, int warmup_steps) {
  if (warmup_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

inline const GroupRule* match_group(const std::vector<GroupRule>& rules, const std::string& name) {
  for (const auto& r : rules) {
    if (name.starts_with(r.prefix)) return &r;
  }
  return nullptr;
}

/// Names of all parameters covered by `rules`, i.e. the trainable set.
inline std::vector<std::string> trainable_names(const ParamStore& ps, const std::vector<GroupRule>& rules) {
  std::vector<std::string> out;
  for (const auto& [name, p] : ps) {
    if (match_group(rules, name) != nullptr) out.push_back(name);
  }
  return out;
}

inline std::vector<std::string> rule_prefixes(const std::vector<GroupRule>& rules) {
  std::vector<std::string> out;
  for (const auto& r : rules) out.push_back(r.prefix);
  return out;
}

class AdamW {
 public:
  AdamW(AdamConfig config, std::vector<GroupRule> rules) : config_(config), rules_(std::move(rules)) {
    require(config_.warmup_steps >= 0, "adamw: warmup_steps must be >= 0");
    for (const auto& r : rules_) require(r.lr >= 0 && r.weight_decay >= 0, "adamw: lr and weight decay must be >= 0");
  }

  long steps() const { return t_; }
  double lr_scale() const { return warmup_factor(t_, config_.warmup_steps); }

  /// One update of every grouped parameter from its accumulated gradient.
  void step(ParamStore& ps) {
    ++t_;
    const double scale = warmup_factor(t_, config_.warmup_steps);
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : ps) {
      const GroupRule* rule = match_group(rules_, name);
      if (rule == nullptr) continue;
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Mat::Zero(p.value.rows(), p.value.cols());
        st.v = Mat::Zero(p.value.rows(), p.value.cols());
      }
      require(st.m.rows() == p.value.rows() && st.m.cols() == p.value.cols(), "adamw: state shape mismatch");
      const double lr = rule->lr * scale;
      st.m = config_.beta1 * st.m + (1.0 - config_.beta1) * p.grad;
      st.v = config_.beta2 * st.v + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
      p.value *= (1.0 - lr * rule->weight_decay);
      p.value.array() -= lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + config_.eps);
    }
  }

 private:
  struct State {
    Mat m;
    Mat v;
  };
  AdamConfig config_;
  std::vector<GroupRule> rules_;
  std::map<std::string, State> state_;
  long t_ = 0;
};

/// Rescales all gradients so their global l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& ps, const std::vector<std::string>& names, double max_norm) {
  double sq = 0.0;
  for (const auto& n : names) sq += ps.at(n).grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& n : names) ps.at(n).grad *= s;
  }
  return norm;
}

}  // namespace slidelm::optim
