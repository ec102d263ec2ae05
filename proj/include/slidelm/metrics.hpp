#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "slidelm/error.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::metrics {

/// Binary AUC as the normalized Mann-Whitney U statistic; tied scores count
/// one half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidArgument("auc: need both positive and negative samples");
  const double u = rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Multiclass one-vs-one AUC: mean over class pairs (j, k) of
/// [AUC(p_j | j vs k) + AUC(p_k | k vs j)] / 2. `probs` is n x classes.
inline double auc_ovo(const Mat& probs, const std::vector<int>& labels) {
  require(probs.rows() == static_cast<Index>(labels.size()), "auc_ovo: length mismatch");
  std::set<int> present(labels.begin(), labels.end());
  if (present.size() < 2) throw InvalidArgument("auc_ovo: need at least two classes");
  if (probs.cols() == 2 && present.size() == 2 && *present.begin() == 0 && *present.rbegin() == 1) {
    std::vector<double> s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) s[i] = probs(static_cast<Index>(i), 1);
    return auc(s, labels);
  }
  const std::vector<int> cls(present.begin(), present.end());
  double total = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < cls.size(); ++a) {
    for (std::size_t b = a + 1; b < cls.size(); ++b) {
      require(cls[b] < probs.cols(), "auc_ovo: label outside probability columns");
      std::vector<double> sa, sb;
      std::vector<int> ya, yb;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != cls[a] && labels[i] != cls[b]) continue;
        sa.push_back(probs(static_cast<Index>(i), cls[a]));
        ya.push_back(labels[i] == cls[a] ? 1 : 0);
        sb.push_back(probs(static_cast<Index>(i), cls[b]));
        yb.push_back(labels[i] == cls[b] ? 1 : 0);
      }
      total += (auc(sa, ya) + auc(sb, yb)) / 2.0;
      ++pairs;
    }
  }
  return total / pairs;
}

/// Unweighted mean of per-class recall over classes present in `labels`.
inline double balanced_accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  require(pred.size() == labels.size() && !labels.empty(), "balanced_accuracy: length mismatch or empty");
  std::map<int, std::pair<std::size_t, std::size_t>> per;  // class -> (hits, support)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hit, sup] = per[labels[i]];
    ++sup;
    if (pred[i] == labels[i]) ++hit;
  }
  double total = 0.0;
  for (const auto& [c, hs] : per) total += static_cast<double>(hs.first) / static_cast<double>(hs.second);
  return total / static_cast<double>(per.size());
}

inline constexpr std::size_t kDefaultMinSupport = 10;

/// Per-class recall with support.
struct ClassRecall {
  int label = 0;
  std::size_t support = 0;
  double recall = 0.0;
};

inline std::vector<ClassRecall> class_recalls(const std::vector<int>& pred, const std::vector<int>& labels) {
  require(pred.size() == labels.size(), "class_recalls: length mismatch");
  std::map<int, std::pair<std::size_t, std::size_t>> per;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hit, sup] = per[labels[i]];
    ++sup;
    if (pred[i] == labels[i]) ++hit;
  }
  std::vector<ClassRecall> out;
  for (const auto& [c, hs] : per) {
    out.push_back({c, hs.second, static_cast<double>(hs.first) / static_cast<double>(hs.second)});
  }
  return out;
}

/// (mean recall - chance) / (1 - chance) over recalls whose support reaches
/// `min_support`.
inline double adjusted_mean_recall(const std::vector<ClassRecall>& recalls, double chance,
                                   std::size_t min_support = kDefaultMinSupport) {
  require(chance >= 0.0 && chance < 1.0, "adjusted_mean_recall: chance must be in [0, 1)");
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& r : recalls) {
    if (r.support < min_support) continue;
    total += r.recall;
    ++used;
  }
  if (used == 0) throw InvalidArgument("adjusted_mean_recall: no class or option meets the minimum support");
  return (total / static_cast<double>(used) - chance) / (1.0 - chance);
}

/// Multiclass AMR with chance 1 / n_classes.
inline double adjusted_mean_recall(const std::vector<int>& pred, const std::vector<int>& labels, int n_classes,
                                   std::size_t min_support = kDefaultMinSupport) {
  require(n_classes >= 2, "adjusted_mean_recall: need >= 2 classes");
  return adjusted_mean_recall(class_recalls(pred, labels), 1.0 / n_classes, min_support);
}

/// Yes-no options: both the yes and the no recall of each option enter the
/// mean (when supported); chance is 0.5. Rows are specimens, columns options.
inline double adjusted_mean_recall_options(const std::vector<std::vector<bool>>& pred,
                                           const std::vector<std::vector<bool>>& truth,
                                           std::size_t min_support = kDefaultMinSupport) {
  require(pred.size() == truth.size() && !truth.empty(), "adjusted_mean_recall_options: shape mismatch");
  const std::size_t n_opt = truth.front().size();
  std::vector<ClassRecall> all;
  for (std::size_t o = 0; o < n_opt; ++o) {
    std::vector<int> p, y;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      require(truth[i].size() == n_opt && pred[i].size() == n_opt, "adjusted_mean_recall_options: ragged rows");
      p.push_back(pred[i][o] ? 1 : 0);
      y.push_back(truth[i][o] ? 1 : 0);
    }
    for (const auto& r : class_recalls(p, y)) all.push_back(r);
  }
  return adjusted_mean_recall(all, 0.5, min_support);
}

namespace detail {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i, std::int64_t v) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) tree_[i] += v;
  }
  /// Sum over [0, i).
  std::int64_t prefix(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

}  // namespace detail

/// Harrell's C-index. Comparable pairs: t_i < t_j with an event at i;
/// concordant when risk_i > risk_j, risk ties count one half.
inline double c_index(const std::vector<double>& risk, const std::vector<double>& time, const std::vector<bool>& event) {
  require(risk.size() == time.size() && risk.size() == event.size(), "c_index: length mismatch");
  const std::size_t n = risk.size();
  std::vector<double> sorted_risk = risk;
  std::sort(sorted_risk.begin(), sorted_risk.end());
  sorted_risk.erase(std::unique(sorted_risk.begin(), sorted_risk.end()), sorted_risk.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risk.begin(), sorted_risk.end(), r) - sorted_risk.begin());
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });
  detail::Fenwick fw(sorted_risk.size());
  std::int64_t inserted = 0;
  double concordant2 = 0.0;  // twice the concordance credit, kept integral
  double comparable = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && time[order[j]] == time[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t s = order[k];
      if (!event[s]) continue;
      const std::size_t r = rank_of(risk[s]);
      const std::int64_t lower = fw.prefix(r);
      const std::int64_t equal = fw.prefix(r + 1) - lower;
      concordant2 += 2.0 * static_cast<double>(lower) + static_cast<double>(equal);
      comparable += static_cast<double>(inserted);
    }
    for (std::size_t k = i; k < j; ++k) fw.add(rank_of(risk[order[k]]), 1);
    inserted += static_cast<std::int64_t>(j - i);
    i = j;
  }
  if (comparable == 0.0) throw InvalidArgument("c_index: no comparable pairs");
  return concordant2 / (2.0 * comparable);
}

enum class Pooling { kMicro, kMacro };

/// Micro pools all folds before one metric evaluation; macro averages the
/// per-fold metric.
template <class Metric>
double pooled(const std::vector<std::vector<double>>& fold_scores, const std::vector<std::vector<int>>& fold_labels,
              Pooling pooling, Metric metric) {
  require(fold_scores.size() == fold_labels.size() && !fold_scores.empty(), "pooled: fold count mismatch");
  if (pooling == Pooling::kMacro) {
    double total = 0.0;
    for (std::size_t f = 0; f < fold_scores.size(); ++f) total += metric(fold_scores[f], fold_labels[f]);
    return total / static_cast<double>(fold_scores.size());
  }
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t f = 0; f < fold_scores.size(); ++f) {
    s.insert(s.end(), fold_scores[f].begin(), fold_scores[f].end());
    y.insert(y.end(), fold_labels[f].begin(), fold_labels[f].end());
  }
  return metric(s, y);
}

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

/// For each model, the number of tasks where its AUC, rounded to two decimals,
/// reaches the k-th best rounded AUC of that task (ties at the cutoff count).
/// `auc_by_task[task][model]`.
inline std::map<std::string, int> top_k_tally(const std::map<std::string, std::map<std::string, double>>& auc_by_task,
                                              std::size_t k) {
  require(k >= 1, "top_k_tally: k must be >= 1");
  std::map<std::string, int> out;
  for (const auto& [task, by_model] : auc_by_task) {
    std::vector<double> vals;
    for (const auto& [m, a] : by_model) {
      vals.push_back(round2(a));
      out.emplace(m, 0);
    }
    std::sort(vals.begin(), vals.end(), std::greater<>());
    const double cutoff = vals[std::min(k, vals.size()) - 1];
    for (const auto& [m, a] : by_model) {
      if (round2(a) >= cutoff) ++out[m];
    }
  }
  return out;
}

}  // namespace slidelm::metrics
