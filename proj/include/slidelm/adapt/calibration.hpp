#pragma once

// Post-hoc calibration of predicted probabilities: per-option decision
// thresholds for yes-no fields and per-class weights for multiclass fields.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidelm/error.hpp"
#include "slidelm/metrics.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::adapt {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr int kMaxWeightPasses = 100;

struct Calibration {
  enum class Kind { kThresholds, kWeights };
  Kind kind = Kind::kThresholds;
  std::vector<double> thresholds;  // one per option; predict yes when p >= t
  std::vector<bool> calibrated;    // false for options left at the default
  std::vector<double> weights;     // one per class, weights[0] == 1
  std::vector<std::string> notices;
  double objective_before = 0.0;
  double objective_after = 0.0;
  int passes = 0;
};

namespace detail {

/// Mean recall over the yes and no sides of one option whose support reaches
/// `min_support`; NaN when neither side qualifies.
inline double option_mean_recall(const std::vector<double>& p, const std::vector<bool>& y, double t,
                                 std::size_t min_support) {
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = p[i] >= t;
    if (y[i]) {
      ++pos;
      tp += pred ? 1 : 0;
    } else {
      ++neg;
      tn += pred ? 0 : 1;
    }
  }
  double total = 0.0;
  int used = 0;
  if (pos >= min_support && pos > 0) {
    total += static_cast<double>(tp) / static_cast<double>(pos);
    ++used;
  }
  if (neg >= min_support && neg > 0) {
    total += static_cast<double>(tn) / static_cast<double>(neg);
    ++used;
  }
  return used == 0 ? std::nan("") : total / used;
}

/// Every threshold in (0, 1) that induces a distinct yes/no split under
/// p >= t: midpoints of sorted unique probabilities plus one point below the
/// smallest and one above the largest when those stay inside (0, 1).
inline std::vector<double> threshold_candidates(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  std::vector<double> out;
  if (p.empty()) return out;
  if (p.front() > 0.0) out.push_back(p.front() / 2.0);
  for (std::size_t i = 0; i + 1 < p.size(); ++i) out.push_back((p[i] + p[i + 1]) / 2.0);
  if (p.back() < 1.0) out.push_back((p.back() + 1.0) / 2.0);
  return out;
}

inline std::size_t argmax_weighted(const Mat& probs, Index row, const std::vector<double>& w) {
  std::size_t best = 0;
  double best_v = w[0] * probs(row, 0);
  for (Index c = 1; c < probs.cols(); ++c) {
    const double v = w[static_cast<std::size_t>(c)] * probs(row, c);
    if (v > best_v) {
      best_v = v;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

/// Mean recall over classes whose support reaches `min_support`.
inline double weighted_mean_recall(const Mat& probs, const std::vector<int>& labels, const std::vector<double>& w,
                                   std::size_t min_support) {
  std::vector<int> pred(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pred[i] = static_cast<int>(argmax_weighted(probs, static_cast<Index>(i), w));
  }
  double total = 0.0;
  int used = 0;
  for (const auto& r : metrics::class_recalls(pred, labels)) {
    if (r.support < min_support) continue;
    total += r.recall;
    ++used;
  }
  require(used > 0, "calibrate_weights: no class meets the minimum support");
  return total / used;
}

}  // namespace detail

/// Per-option threshold maximizing that option's supported mean recall.
/// `probs` is n x options; `labels[i][o]` is the truth for specimen i.
/// Ties go to the smallest threshold. Options lacking either label are left
/// at the default threshold and reported in `notices`.
inline Calibration calibrate_thresholds(const Mat& probs, const std::vector<std::vector<bool>>& labels,
                                        std::size_t min_support = 1) {
  require(probs.rows() == static_cast<Index>(labels.size()) && probs.rows() > 0,
          "calibrate_thresholds: shape mismatch");
  Calibration cal;
  cal.kind = Calibration::Kind::kThresholds;
  const auto n_opt = static_cast<std::size_t>(probs.cols());
  cal.thresholds.assign(n_opt, kDefaultThreshold);
  cal.calibrated.assign(n_opt, false);
  double before = 0.0, after = 0.0;
  int scored = 0;
  for (std::size_t o = 0; o < n_opt; ++o) {
    std::vector<double> p(labels.size());
    std::vector<bool> y(labels.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      require(labels[i].size() == n_opt, "calibrate_thresholds: ragged labels");
      p[i] = probs(static_cast<Index>(i), static_cast<Index>(o));
      y[i] = labels[i][o];
      pos += y[i] ? 1 : 0;
    }
    if (pos == 0 || pos == labels.size()) {
      cal.notices.push_back("option " + std::to_string(o) + ": single label present, threshold left at 0.5");
      continue;
    }
    const double base = detail::option_mean_recall(p, y, kDefaultThreshold, min_support);
    if (std::isnan(base)) {
      cal.notices.push_back("option " + std::to_string(o) + ": below minimum support, threshold left at 0.5");
      continue;
    }
    double best_t = kDefaultThreshold;
    double best_v = -1.0;
    for (double t : detail::threshold_candidates(p)) {
      const double v = detail::option_mean_recall(p, y, t, min_support);
      if (v > best_v) {
        best_v = v;
        best_t = t;
      }
    }
    cal.thresholds[o] = best_t;
    cal.calibrated[o] = true;
    before += base;
    after += best_v;
    ++scored;
  }
  if (scored > 0) {
    cal.objective_before = before / scored;
    cal.objective_after = after / scored;
  }
  return cal;
}

/// Single-option convenience form.
inline Calibration calibrate_threshold(const std::vector<double>& probs, const std::vector<int>& labels,
                                       std::size_t min_support = 1) {
  require(probs.size() == labels.size(), "calibrate_threshold: length mismatch");
  Mat p(static_cast<Index>(probs.size()), 1);
  std::vector<std::vector<bool>> y(labels.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    p(static_cast<Index>(i), 0) = probs[i];
    y[i] = {labels[i] != 0};
  }
  return calibrate_thresholds(p, y, min_support);
}

/// Positive class weights maximizing the supported mean recall of
/// argmax(w * p). Coordinate passes over w[1..]; each coordinate update scans
/// every interval between the points where some specimen's prediction flips,
/// so a single coordinate step is exact. Stops when a full pass does not
/// strictly improve.
inline Calibration calibrate_weights(const Mat& probs, const std::vector<int>& labels,
                                     std::size_t min_support = 1) {
  require(probs.cols() >= 2, "calibrate_weights: need >= 2 classes");
  require(probs.rows() == static_cast<Index>(labels.size()) && probs.rows() > 0, "calibrate_weights: shape mismatch");
  require((probs.array() >= 0.0).all(), "calibrate_weights: negative probability");
  for (int y : labels) require(y >= 0 && y < probs.cols(), "calibrate_weights: label outside [0, classes)");
  const auto n_cls = static_cast<std::size_t>(probs.cols());
  const auto n = static_cast<Index>(labels.size());
  std::vector<double> w(n_cls, 1.0);
  double current = detail::weighted_mean_recall(probs, labels, w, min_support);
  Calibration cal;
  cal.kind = Calibration::Kind::kWeights;
  cal.objective_before = current;
  for (int pass = 0; pass < kMaxWeightPasses; ++pass) {
    ++cal.passes;
    bool improved = false;
    for (std::size_t k = 1; k < n_cls; ++k) {
      std::vector<double> breaks;
      for (Index i = 0; i < n; ++i) {
        const double pk = probs(i, static_cast<Index>(k));
        if (pk <= 0.0) continue;
        double rival = 0.0;
        for (std::size_t j = 0; j < n_cls; ++j) {
          if (j != k) rival = std::max(rival, w[j] * probs(i, static_cast<Index>(j)));
        }
        if (rival > 0.0) breaks.push_back(rival / pk);
      }
      std::sort(breaks.begin(), breaks.end());
      breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
      if (breaks.empty()) continue;
      std::vector<double> cands;
      cands.push_back(breaks.front() / 2.0);
      for (std::size_t b = 0; b + 1 < breaks.size(); ++b) cands.push_back(std::sqrt(breaks[b] * breaks[b + 1]));
      cands.push_back(breaks.back() * 2.0);
      double best_w = w[k];
      double best_v = current;
      for (double c : cands) {
        std::vector<double> trial = w;
        trial[k] = c;
        const double v = detail::weighted_mean_recall(probs, labels, trial, min_support);
        if (v > best_v) {
          best_v = v;
          best_w = c;
        }
      }
      if (best_v > current) {
        w[k] = best_w;
        current = best_v;
        improved = true;
      }
    }
    if (!improved) break;
  }
  cal.weights = w;
  cal.objective_after = current;
  return cal;
}

/// Applies per-option thresholds to one row of probabilities.
inline std::vector<bool> apply_thresholds(const Calibration& cal, const std::vector<double>& p) {
  require(cal.kind == Calibration::Kind::kThresholds && p.size() == cal.thresholds.size(),
          "apply_thresholds: calibration does not match");
  std::vector<bool> out(p.size());
  for (std::size_t o = 0; o < p.size(); ++o) out[o] = p[o] >= cal.thresholds[o];
  return out;
}

/// Weighted argmax for every row.
inline std::vector<int> apply_weights(const Calibration& cal, const Mat& probs) {
  require(cal.kind == Calibration::Kind::kWeights && probs.cols() == static_cast<Index>(cal.weights.size()),
          "apply_weights: calibration does not match");
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<int>(detail::argmax_weighted(probs, i, cal.weights));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Calibration& cal) {
  nlohmann::ordered_json j;
  j["kind"] = cal.kind == Calibration::Kind::kThresholds ? "thresholds" : "weights";
  if (cal.kind == Calibration::Kind::kThresholds) {
    j["thresholds"] = cal.thresholds;
    j["calibrated"] = cal.calibrated;
  } else {
    j["weights"] = cal.weights;
    j["passes"] = cal.passes;
  }
  j["objective_before"] = cal.objective_before;
  j["objective_after"] = cal.objective_after;
  j["notices"] = cal.notices;
  return j;
}

}  // namespace slidelm::adapt
