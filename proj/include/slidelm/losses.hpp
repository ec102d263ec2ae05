#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "slidelm/autodiff.hpp"
#include "slidelm/error.hpp"
#include "slidelm/model.hpp"

namespace slidelm::losses {

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  return mx + std::log((row.array() - mx).exp().sum());
}

inline Mat row_softmax(const Mat& s) {
  Mat p(s.rows(), s.cols());
  for (Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace detail

/// Temperature from its log parameterization, clamped to [kTauMin, kTauMax].
inline double clamp_tau(double log_tau) { return std::clamp(std::exp(log_tau), kTauMin, kTauMax); }

/// Symmetric InfoNCE over the N x N similarity matrix v_i . t_j / tau:
///   -(1/N) * (sum_i log softmax_row(i)_i + sum_i log softmax_col(i)_i).
inline double contrastive_loss(const Mat& v, const Mat& t, double tau) {
  if (!(tau > 0)) throw InvalidArgument("contrastive_loss: tau must be > 0");
  require(v.rows() == t.rows() && v.cols() == t.cols() && v.rows() >= 1, "contrastive_loss: shape mismatch");
  const Mat s = (v * t.transpose()) / tau;
  const Index n = s.rows();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    total += s(i, i) - detail::log_sum_exp(s.row(i));
    total += s(i, i) - detail::log_sum_exp(s.col(i).transpose());
  }
  return -total / static_cast<double>(n);
}

/// Differentiable contrastive loss; the temperature is exp(log_tau) clamped,
/// with zero gradient to log_tau while clamped.
inline ad::Var contrastive_loss(ad::Var v, ad::Var t, ad::Var log_tau) {
  ad::Graph& g = *v.graph;
  const double s = log_tau.scalar();
  const double tau = clamp_tau(s);
  const bool clamped = std::exp(s) != tau;
  const Mat a = v.value() * t.value().transpose();
  const Mat logits = a / tau;
  const Index n = a.rows();
  Mat out(1, 1);
  out(0, 0) = contrastive_loss(v.value(), t.value(), tau);
  const bool ng = ad::detail::any_grad({v, t, log_tau});
  return g.push(std::move(out), ng, [v, t, log_tau, a, logits, tau, clamped, n](ad::Graph& g, int self) {
    const double up = g.grad(self)(0, 0);
    const Mat pr = detail::row_softmax(logits);
    const Mat pc = detail::row_softmax(logits.transpose()).transpose();
    Mat ds = (pr + pc - 2.0 * Mat::Identity(n, n)) * (up / static_cast<double>(n));
    if (g.needs_grad(v.id)) g.accumulate(v.id, (ds * g.value(t.id)) / tau);
    if (g.needs_grad(t.id)) g.accumulate(t.id, (ds.transpose() * g.value(v.id)) / tau);
    if (g.needs_grad(log_tau.id) && !clamped) {
      // d logits / d log_tau = -logits.
      Mat d(1, 1);
      d(0, 0) = -(ds.array() * logits.array()).sum();
      g.accumulate(log_tau.id, d);
    }
  });
}

enum class Reduction { kSum, kMean };

/// Negative log-likelihood of `targets` over rows where `mask` is set. The sum
/// is the canonical form; kMean divides by the number of masked rows.
inline double chat_loss(const Mat& logits, const std::vector<int>& targets, const std::vector<bool>& mask,
                        Reduction reduction = Reduction::kSum) {
  require(static_cast<Index>(targets.size()) == logits.rows() && mask.size() == targets.size(),
          "chat_loss: targets/mask length != logits rows");
  double total = 0.0;
  std::size_t m = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const int y = targets[static_cast<std::size_t>(i)];
    require(y >= 0 && y < logits.cols(), "chat_loss: target out of range");
    total += detail::log_sum_exp(logits.row(i)) - logits(i, y);
    ++m;
  }
  if (m == 0) throw InvalidArgument("chat_loss: empty assistant mask");
  return reduction == Reduction::kMean ? total / static_cast<double>(m) : total;
}

inline ad::Var chat_loss(ad::Var logits, std::vector<int> targets, std::vector<bool> mask,
                         Reduction reduction = Reduction::kSum) {
  ad::Graph& g = *logits.graph;
  Mat out(1, 1);
  out(0, 0) = chat_loss(logits.value(), targets, mask, reduction);
  const std::size_t m = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  const double w = reduction == Reduction::kMean ? 1.0 / static_cast<double>(m) : 1.0;
  return g.push(std::move(out), ad::detail::any_grad({logits}),
                [logits, y = std::move(targets), mk = std::move(mask), w](ad::Graph& g, int self) {
                  const double up = g.grad(self)(0, 0) * w;
                  const Mat& l = g.value(logits.id);
                  Mat d = Mat::Zero(l.rows(), l.cols());
                  for (Index i = 0; i < l.rows(); ++i) {
                    if (!mk[static_cast<std::size_t>(i)]) continue;
                    const double mx = l.row(i).maxCoeff();
                    d.row(i) = (l.row(i).array() - mx).exp().matrix();
                    d.row(i) /= d.row(i).sum();
                    d(i, y[static_cast<std::size_t>(i)]) -= 1.0;
                  }
                  g.accumulate(logits.id, d * up);
                });
}

inline constexpr double kDefaultLambdaCon = 0.25;
inline constexpr double kDefaultLambdaChat = 1.0;

inline double total_loss(double l_con, double l_chat, double lambda_con = kDefaultLambdaCon,
                         double lambda_chat = kDefaultLambdaChat) {
  return lambda_con * l_con + lambda_chat * l_chat;
}

/// Cox negative partial log-likelihood with Breslow ties:
///   -sum_{i: event} [h_i - log sum_{j: t_j >= t_i} exp(h_j)].
inline double cox_loss(const std::vector<double>& h, const std::vector<double>& times, const std::vector<bool>& events) {
  require(h.size() == times.size() && h.size() == events.size(), "cox_loss: length mismatch");
  if (std::find(events.begin(), events.end(), true) == events.end()) {
    throw InvalidArgument("cox_loss: no events in batch");
  }
  const std::size_t n = h.size();
  const double mx = *std::max_element(h.begin(), h.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  double total = 0.0;
  double risk = 0.0;  // sum of exp(h - mx) over t_j >= current time
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) risk += std::exp(h[order[j++]] - mx);
    const double log_risk = mx + std::log(risk);
    for (std::size_t k = i; k < j; ++k) {
      if (events[order[k]]) total += h[order[k]] - log_risk;
    }
    i = j;
  }
  return -total;
}

/// Gradient of cox_loss with respect to each hazard.
inline std::vector<double> cox_loss_grad(const std::vector<double>& h, const std::vector<double>& t,
                                         const std::vector<bool>& e) {
  require(h.size() == t.size() && h.size() == e.size(), "cox_loss: length mismatch");
  const std::size_t n = h.size();
  if (n == 0) return {};
  const double mx = *std::max_element(h.begin(), h.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return t[a] > t[b]; });
  // Per tie group: risk-set sum R and events d; subject k collects d/R from
  // its own group and every later group in this order.
  std::vector<std::size_t> group_end;
  std::vector<double> inv;
  double risk = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && t[order[j]] == t[order[i]]) risk += std::exp(h[order[j++]] - mx);
    double d = 0.0;
    for (std::size_t k = i; k < j; ++k) d += e[order[k]] ? 1.0 : 0.0;
    group_end.push_back(j);
    inv.push_back(d / risk);
    i = j;
  }
  double acc = 0.0;
  std::vector<double> suffix(inv.size());
  for (std::size_t gi = inv.size(); gi-- > 0;) {
    acc += inv[gi];
    suffix[gi] = acc;
  }
  std::vector<double> grad(n, 0.0);
  std::size_t begin = 0;
  for (std::size_t gi = 0; gi < group_end.size(); ++gi) {
    for (std::size_t k = begin; k < group_end[gi]; ++k) {
      const std::size_t s = order[k];
      grad[s] = std::exp(h[s] - mx) * suffix[gi] - (e[s] ? 1.0 : 0.0);
    }
    begin = group_end[gi];
  }
  return grad;
}

inline ad::Var cox_loss(ad::Var log_hazard, std::vector<double> times, std::vector<bool> events) {
  require(log_hazard.cols() == 1, "cox_loss: hazards must be a column");
  ad::Graph& g = *log_hazard.graph;
  const Mat& hv = log_hazard.value();
  std::vector<double> h(hv.data(), hv.data() + hv.rows());
  Mat out(1, 1);
  out(0, 0) = cox_loss(h, times, events);
  return g.push(std::move(out), ad::detail::any_grad({log_hazard}),
                [log_hazard, h, t = std::move(times), e = std::move(events)](ad::Graph& g, int self) {
                  const std::vector<double> dh = cox_loss_grad(h, t, e);
                  const double up = g.grad(self)(0, 0);
                  Mat d(static_cast<Index>(dh.size()), 1);
                  for (std::size_t k = 0; k < dh.size(); ++k) d(static_cast<Index>(k), 0) = up * dh[k];
                  g.accumulate(log_hazard.id, d);
                });
}

}  // namespace slidelm::losses
