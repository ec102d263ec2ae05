#pragma once

// Multinomial logistic-regression probe with an L2 sweep and validation
// selection.

#include <cmath>
#include <set>
#include <vector>

#include <ceres/ceres.h>
#include <json.hpp>

#include "slidelm/error.hpp"
#include "slidelm/metrics.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::adapt {

inline constexpr int kGridPoints = 24;

/// n log-uniform points from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, int n = kGridPoints) {
  require(lo > 0 && hi >= lo && n >= 1, "log_grid: invalid range");
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    out.push_back(std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo))));
  }
  return out;
}

inline std::vector<double> probe_grid() { return log_grid(1e-6, 1e3); }

struct ProbeOptions {
  double gradient_tolerance = 1e-6;
  int max_iterations = 10000;
};

struct ProbePoint {
  double l2 = 0.0;
  double val_auc = 0.0;
  double objective = 0.0;
  double gradient_norm = 0.0;  // max-norm of the final gradient
  int iterations = 0;
};

struct ProbeModel {
  Mat weights;            // classes x d
  Eigen::VectorXd bias;   // classes
  double chosen_l2 = 0.0;
  std::vector<ProbePoint> grid;

  int n_classes() const { return static_cast<int>(weights.rows()); }

  /// Row-wise class probabilities.
  Mat predict_proba(const Mat& x) const {
    require(x.cols() == weights.cols(), "probe: feature dim mismatch");
    Mat z = x * weights.transpose();
    z.rowwise() += bias.transpose();
    for (Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      z.row(i) = (z.row(i).array() - mx).exp().matrix();
      z.row(i) /= z.row(i).sum();
    }
    return z;
  }
};

namespace detail {

/// (1/n) sum_i CE(softmax(W x_i + b), y_i) + (l2/2) ||W||^2; parameters are
/// W (row-major, classes x d) followed by b.
class ProbeObjective final : public ceres::FirstOrderFunction {
 public:
  ProbeObjective(const Mat& x, const std::vector<int>& y, int classes, double l2)
      : x_(x), y_(y), c_(classes), l2_(l2) {}

  bool Evaluate(const double* p, double* cost, double* grad) const override {
    const Index d = x_.cols();
    Eigen::Map<const Mat> w(p, c_, d);
    Eigen::Map<const Eigen::VectorXd> b(p + c_ * d, c_);
    Mat z = x_ * w.transpose();
    z.rowwise() += b.transpose();
    const double n = static_cast<double>(x_.rows());
    double loss = 0.0;
    for (Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      z.row(i) = (z.row(i).array() - mx).exp().matrix();
      const double s = z.row(i).sum();
      loss += std::log(s) + mx - (std::log(z(i, y_[static_cast<std::size_t>(i)])) + mx);
      z.row(i) /= s;
      z(i, y_[static_cast<std::size_t>(i)]) -= 1.0;
    }
    *cost = loss / n + 0.5 * l2_ * w.squaredNorm();
    if (grad != nullptr) {
      Eigen::Map<Mat> gw(grad, c_, d);
      Eigen::Map<Eigen::VectorXd> gb(grad + c_ * d, c_);
      gw = (z.transpose() * x_) / n + l2_ * w;
      gb = z.colwise().sum().transpose() / n;
    }
    return true;
  }

  int NumParameters() const override { return static_cast<int>(c_ * x_.cols() + c_); }

 private:
  const Mat& x_;
  const std::vector<int>& y_;
  Index c_;
  double l2_;
};

}  // namespace detail

/// Fits one grid point to the gradient tolerance or the iteration cap.
inline ProbeModel fit_probe_at(const Mat& x, const std::vector<int>& y, int classes, double l2,
                               const ProbeOptions& opt = {}, ProbePoint* info = nullptr) {
  require(x.rows() == static_cast<Index>(y.size()) && x.rows() > 0, "probe: X/y size mismatch");
  const std::set<int> present(y.begin(), y.end());
  if (present.size() < 2) throw InvalidArgument("probe: training set has a single class");
  require(*present.begin() >= 0 && *present.rbegin() < classes, "probe: label outside [0, classes)");
  auto* objective = new detail::ProbeObjective(x, y, classes, l2);
  std::vector<double> params(static_cast<std::size_t>(objective->NumParameters()), 0.0);
  ceres::GradientProblem problem(objective);
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = opt.max_iterations;
  options.gradient_tolerance = opt.gradient_tolerance;
  options.function_tolerance = 0.0;
  options.parameter_tolerance = 0.0;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, params.data(), &summary);

  ProbeModel m;
  const Index d = x.cols();
  m.weights = Eigen::Map<const Mat>(params.data(), classes, d);
  m.bias = Eigen::Map<const Eigen::VectorXd>(params.data() + classes * d, classes);
  m.chosen_l2 = l2;
  if (info != nullptr) {
    std::vector<double> g(params.size());
    double cost = 0.0;
    problem.Evaluate(params.data(), &cost, g.data());
    info->l2 = l2;
    info->objective = cost;
    info->gradient_norm = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Index>(g.size())).lpNorm<Eigen::Infinity>();
    info->iterations = static_cast<int>(summary.iterations.size());
  }
  return m;
}

/// Sweeps `grid`, keeping the point with the best validation one-vs-one AUC
/// (first in grid order on ties).
inline ProbeModel fit_linear_probe(const Mat& x_train, const std::vector<int>& y_train, const Mat& x_val,
                                   const std::vector<int>& y_val, const std::vector<double>& grid = probe_grid(),
                                   const ProbeOptions& opt = {}) {
  require(!grid.empty(), "probe: empty grid");
  int classes = 0;
  for (int v : y_train) classes = std::max(classes, v + 1);
  for (int v : y_val) classes = std::max(classes, v + 1);
  ProbeModel best;
  std::vector<ProbePoint> points;
  double best_auc = -1.0;
  for (double l2 : grid) {
    ProbePoint info;
    ProbeModel m = fit_probe_at(x_train, y_train, classes, l2, opt, &info);
    info.val_auc = metrics::auc_ovo(m.predict_proba(x_val), y_val);
    points.push_back(info);
    if (info.val_auc > best_auc) {
      best_auc = info.val_auc;
      best = std::move(m);
    }
  }
  best.grid = std::move(points);
  return best;
}

inline nlohmann::ordered_json to_json(const ProbeModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = "linear_probe";
  j["chosen_l2"] = m.chosen_l2;
  j["grid"] = nlohmann::ordered_json::array();
  for (const auto& p : m.grid) {
    j["grid"].push_back({{"l2", p.l2},
                         {"val_auc", p.val_auc},
                         {"objective", p.objective},
                         {"gradient_norm", p.gradient_norm},
                         {"iterations", p.iterations}});
  }
  j["weights"] = nlohmann::ordered_json::array();
  for (Index c = 0; c < m.weights.rows(); ++c) {
    j["weights"].push_back(std::vector<double>(m.weights.row(c).data(), m.weights.row(c).data() + m.weights.cols()));
  }
  j["bias"] = std::vector<double>(m.bias.data(), m.bias.data() + m.bias.size());
  return j;
}

}  // namespace slidelm::adapt
