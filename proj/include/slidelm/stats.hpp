#pragma once

// Resampling statistics. Every iteration draws from its own generator seeded
// by derive_seed(master, iteration), so results do not depend on the number
// of threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include "slidelm/error.hpp"
#include "slidelm/rng.hpp"

namespace slidelm::stats {

inline constexpr int kDefaultIterations = 1000;
inline constexpr double kDefaultLevel = 0.95;
inline constexpr int kMaxRedraws = 10;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double level = kDefaultLevel;
};

/// Linear-interpolated quantile of sorted data (q in [0, 1]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  require(!sorted.empty(), "quantile: empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Runs body(i) for i in [0, n) over `threads` workers in contiguous chunks.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const std::size_t t = std::max(1, threads);
  if (t == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  const std::size_t chunk = (n + t - 1) / t;
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Metric over a resample, given as indices into the original n specimens.
/// Throwing slidelm::Error marks the resample as undefined.
using ResampleMetric = std::function<double(const std::vector<std::size_t>&)>;

/// Percentile bootstrap over specimens. An undefined resample is redrawn up
/// to kMaxRedraws times before the whole call fails.
inline Interval bootstrap_ci(std::size_t n, const ResampleMetric& metric, int n_iter = kDefaultIterations,
                             double level = kDefaultLevel, std::uint64_t seed = 0, int threads = 1) {
  require(n >= 1, "bootstrap_ci: empty data");
  require(n_iter >= 1 && level > 0.0 && level < 1.0, "bootstrap_ci: invalid iterations or level");
  std::vector<double> values(static_cast<std::size_t>(n_iter));
  parallel_for(values.size(), threads, [&](std::size_t it) {
    const std::uint64_t iter_seed = derive_seed(seed, it);
    for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
      Rng rng(derive_seed(iter_seed, static_cast<std::uint64_t>(attempt)));
      std::vector<std::size_t> idx(n);
      for (auto& i : idx) i = rng.index(n);
      try {
        values[it] = metric(idx);
        return;
      } catch (const Error&) {
      }
    }
    throw Error("bootstrap_ci: metric undefined on " + std::to_string(kMaxRedraws + 1) +
                " consecutive resamples");
  });
  std::sort(values.begin(), values.end());
  const double alpha = (1.0 - level) / 2.0;
  return {quantile_sorted(values, alpha), quantile_sorted(values, 1.0 - alpha), level};
}

/// Metric of one full prediction vector; labels are captured by the closure.
using PairedMetric = std::function<double(const std::vector<double>&)>;

/// Two-sided paired permutation test over specimens whose predictions span
/// `width` consecutive entries of `a` and `b`: each specimen's (a, b) rows are
/// swapped with probability 1/2; p = (k + 1) / (n_iter + 1) where k counts
/// permuted |delta| >= observed |delta|.
inline double permutation_test_rows(const PairedMetric& metric, const std::vector<double>& a,
                                    const std::vector<double>& b, std::size_t width, int n_iter = kDefaultIterations,
                                    std::uint64_t seed = 0, int threads = 1) {
  require(width >= 1, "permutation_test: row width must be >= 1");
  require(a.size() == b.size() && !a.empty() && a.size() % width == 0,
          "permutation_test: prediction vectors must align");
  require(n_iter >= 1, "permutation_test: n_iter must be >= 1");
  const double observed = std::abs(metric(a) - metric(b));
  const std::size_t rows = a.size() / width;
  std::vector<char> hit(static_cast<std::size_t>(n_iter), 0);
  parallel_for(hit.size(), threads, [&](std::size_t it) {
    Rng rng(derive_seed(seed, it));
    std::vector<double> pa = a;
    std::vector<double> pb = b;
    for (std::size_t i = 0; i < rows; ++i) {
      if (!rng.bernoulli(0.5)) continue;
      for (std::size_t k = i * width; k < (i + 1) * width; ++k) std::swap(pa[k], pb[k]);
    }
    hit[it] = std::abs(metric(pa) - metric(pb)) >= observed ? 1 : 0;
  });
  const auto k = std::count(hit.begin(), hit.end(), 1);
  return static_cast<double>(k + 1) / static_cast<double>(n_iter + 1);
}

/// One prediction per specimen.
inline double permutation_test(const PairedMetric& metric, const std::vector<double>& a, const std::vector<double>& b,
                               int n_iter = kDefaultIterations, std::uint64_t seed = 0, int threads = 1) {
  return permutation_test_rows(metric, a, b, 1, n_iter, seed, threads);
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1).
inline double ks_uniform(std::vector<double> sample) {
  require(!sample.empty(), "ks_uniform: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double x = std::clamp(sample[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - x, x - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace slidelm::stats
