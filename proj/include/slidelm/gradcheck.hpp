#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "slidelm/autodiff.hpp"
#include "slidelm/nn.hpp"
#include "slidelm/rng.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm {

struct GradCheckOptions {
  // Central-difference order: 2 uses f(x +- h); 4 adds f(x +- 2h), cutting
  // truncation error to O(h^4) so a larger h keeps roundoff small.
  int order = 4;
  double step = 1e-3;
  // Denominator floor so coordinates with near-zero gradients are compared
  // in absolute terms.
  double floor = 1e-6;
  // Coordinates checked per tensor; 0 checks all of them.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

using LossFn = std::function<ad::Var(nn::Binder&)>;

/// Compares reverse-mode gradients of `loss` against central differences for
/// every parameter whose name starts with one of `prefixes`.
inline GradCheckResult grad_check(ParamStore& ps, const std::vector<std::string>& prefixes, const LossFn& loss,
                                  const GradCheckOptions& opt = {}) {
  require(opt.order == 2 || opt.order == 4, "grad_check: order must be 2 or 4");
  ps.zero_grad();
  {
    ad::Graph g;
    nn::Binder b(g, ps, prefixes);
    g.backward(loss(b));
  }
  auto eval = [&] {
    ad::Graph g;
    nn::Binder b(g, std::as_const(ps));
    return loss(b).scalar();
  };
  GradCheckResult res;
  Rng rng(opt.seed);
  for (const auto& [name, p] : ps) {
    bool selected = false;
    for (const auto& pre : prefixes) selected = selected || name.starts_with(pre);
    if (!selected) continue;
    std::vector<Index> coords(static_cast<std::size_t>(p.value.size()));
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<Index>(i);
    if (opt.max_per_tensor > 0 && coords.size() > opt.max_per_tensor) {
      rng.shuffle(coords);
      coords.resize(opt.max_per_tensor);
    }
    for (Index c : coords) {
      double& x = ps.at(name).value.data()[c];
      const double saved = x;
      auto at = [&](double offset) {
        x = saved + offset;
        const double v = eval();
        x = saved;
        return v;
      };
      const double h = opt.step;
      const double numeric =
          opt.order == 2 ? (at(h) - at(-h)) / (2.0 * h)
                         : (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
      const double analytic = p.grad.data()[c];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_error || res.worst_index < 0) {
        res.max_rel_error = std::max(res.max_rel_error, rel);
        res.worst_param = name;
        res.worst_index = c;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace slidelm
