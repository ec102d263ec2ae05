#pragma once

// Elastic-net Cox regression fitted by accelerated proximal gradient.

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "slidelm/adapt/probe.hpp"
#include "slidelm/error.hpp"
#include "slidelm/losses.hpp"
#include "slidelm/metrics.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::adapt {

inline constexpr double kCoxL1Ratio = 1e-4;

inline std::vector<double> cox_grid() { return log_grid(1e-5, 10.0); }

struct CoxOptions {
  double l1_ratio = kCoxL1Ratio;
  double tolerance = 1e-9;  // max-norm of the step between iterates
  int max_iterations = 20000;
};

struct CoxPoint {
  double lambda = 0.0;
  double val_c_index = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct CoxModel {
  Eigen::VectorXd coef;
  double lambda = 0.0;
  double l1_ratio = kCoxL1Ratio;
  std::vector<CoxPoint> grid;

  std::vector<double> risk(const Mat& x) const {
    require(x.cols() == coef.size(), "cox: feature dim mismatch");
    const Eigen::VectorXd r = x * coef;
    return {r.data(), r.data() + r.size()};
  }
};

/// Smooth part: NLL(X b) / n + lambda (1 - ratio) / 2 ||b||^2.
/// Nonsmooth part: lambda ratio ||b||_1.
struct CoxObjective {
  const Mat& x;
  const std::vector<double>& time;
  const std::vector<bool>& event;
  double lambda;
  double l1_ratio;

  double l2() const { return lambda * (1.0 - l1_ratio); }
  double l1() const { return lambda * l1_ratio; }

  std::vector<double> hazards(const Eigen::VectorXd& b) const {
    const Eigen::VectorXd h = x * b;
    return {h.data(), h.data() + h.size()};
  }

  double smooth(const Eigen::VectorXd& b) const {
    const double n = static_cast<double>(x.rows());
    return losses::cox_loss(hazards(b), time, event) / n + 0.5 * l2() * b.squaredNorm();
  }

  Eigen::VectorXd smooth_grad(const Eigen::VectorXd& b) const {
    const double n = static_cast<double>(x.rows());
    const std::vector<double> dh = losses::cox_loss_grad(hazards(b), time, event);
    const Eigen::Map<const Eigen::VectorXd> d(dh.data(), static_cast<Index>(dh.size()));
    return x.transpose() * d / n + l2() * b;
  }

  double total(const Eigen::VectorXd& b) const { return smooth(b) + l1() * b.lpNorm<1>(); }

  Eigen::VectorXd prox(const Eigen::VectorXd& v, double step) const {
    const double t = step * l1();
    return v.unaryExpr([t](double a) { return std::copysign(std::max(std::abs(a) - t, 0.0), a); });
  }
};

/// FISTA with backtracking from `start`.
inline CoxModel fit_cox_at(const Mat& x, const std::vector<double>& time, const std::vector<bool>& event,
                           double lambda, const CoxOptions& opt = {}, const Eigen::VectorXd* start = nullptr,
                           CoxPoint* info = nullptr) {
  require(x.rows() == static_cast<Index>(time.size()) && time.size() == event.size(), "cox: X/t/e size mismatch");
  if (std::find(event.begin(), event.end(), true) == event.end()) throw InvalidArgument("cox: no events in training set");
  require(lambda >= 0.0 && opt.l1_ratio >= 0.0 && opt.l1_ratio <= 1.0, "cox: invalid regularization");
  const CoxObjective f{x, time, event, lambda, opt.l1_ratio};
  Eigen::VectorXd b = start != nullptr ? *start : Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd y = b;
  double momentum = 1.0;
  double step = 1.0;
  int it = 0;
  bool converged = false;
  for (; it < opt.max_iterations; ++it) {
    const double fy = f.smooth(y);
    const Eigen::VectorXd gy = f.smooth_grad(y);
    Eigen::VectorXd next;
    for (;;) {
      next = f.prox(y - step * gy, step);
      const Eigen::VectorXd diff = next - y;
      if (f.smooth(next) <= fy + gy.dot(diff) + diff.squaredNorm() / (2.0 * step) + 1e-15) break;
      step *= 0.5;
      require(step > 1e-20, "cox: line search failed");
    }
    // Restart momentum when the objective goes up. From y == b an increase
    // can only be rounding, so b is already optimal.
    if (f.total(next) > f.total(b)) {
      if (y == b || (next - b).lpNorm<Eigen::Infinity>() < opt.tolerance) {
        converged = true;
        ++it;
        break;
      }
      momentum = 1.0;
      y = b;
      continue;
    }
    const double next_momentum = (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
    const double delta = (next - b).lpNorm<Eigen::Infinity>();
    y = next + ((momentum - 1.0) / next_momentum) * (next - b);
    b = std::move(next);
    momentum = next_momentum;
    step *= 1.25;
    if (delta < opt.tolerance) {
      converged = true;
      ++it;
      break;
    }
  }
  CoxModel m;
  m.coef = b;
  m.lambda = lambda;
  m.l1_ratio = opt.l1_ratio;
  if (info != nullptr) {
    info->lambda = lambda;
    info->objective = f.total(b);
    info->iterations = it;
    info->converged = converged;
  }
  return m;
}

/// Sweeps `grid` from the largest penalty down with warm starts; keeps the
/// point with the best validation C-index (first in grid order on ties).
inline CoxModel fit_cox(const Mat& x_train, const std::vector<double>& t_train, const std::vector<bool>& e_train,
                        const Mat& x_val, const std::vector<double>& t_val, const std::vector<bool>& e_val,
                        const std::vector<double>& grid = cox_grid(), const CoxOptions& opt = {}) {
  require(!grid.empty(), "cox: empty grid");
  if (std::find(e_val.begin(), e_val.end(), true) == e_val.end()) {
    throw InvalidArgument("cox: no events in validation set");
  }
  std::vector<std::size_t> order(grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });
  std::vector<CoxPoint> points(grid.size());
  std::vector<CoxModel> models(grid.size());
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(x_train.cols());
  for (std::size_t gi : order) {
    models[gi] = fit_cox_at(x_train, t_train, e_train, grid[gi], opt, &warm, &points[gi]);
    warm = models[gi].coef;
    points[gi].val_c_index = metrics::c_index(models[gi].risk(x_val), t_val, e_val);
  }
  std::size_t best = 0;
  for (std::size_t gi = 1; gi < grid.size(); ++gi) {
    if (points[gi].val_c_index > points[best].val_c_index) best = gi;
  }
  CoxModel out = std::move(models[best]);
  out.grid = std::move(points);
  return out;
}

inline nlohmann::ordered_json to_json(const CoxModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = "cox";
  j["lambda"] = m.lambda;
  j["l1_ratio"] = m.l1_ratio;
  j["grid"] = nlohmann::ordered_json::array();
  for (const auto& p : m.grid) {
    j["grid"].push_back({{"lambda", p.lambda},
                         {"val_c_index", p.val_c_index},
                         {"objective", p.objective},
                         {"iterations", p.iterations},
                         {"converged", p.converged}});
  }
  j["coef"] = std::vector<double>(m.coef.data(), m.coef.data() + m.coef.size());
  return j;
}

}  // namespace slidelm::adapt
