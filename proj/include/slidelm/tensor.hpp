#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "slidelm/error.hpp"
#include "slidelm/hash.hpp"
#include "slidelm/rng.hpp"

namespace slidelm {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Parameter {
  Mat value;
  Mat grad;
};

/// Named parameter tensors, iterated in lexicographic name order. Groups are
/// expressed as name prefixes ("encoder.", "decoder.", ...).
class ParamStore {
 public:
  Parameter& add(const std::string& name, Mat init) {
    require(!params_.contains(name), "duplicate parameter: " + name);
    Parameter p;
    p.grad = Mat::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.contains(name); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.setZero();
  }

  std::vector<std::string> names(std::string_view prefix = {}) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) {
      if (name.starts_with(prefix)) out.push_back(name);
    }
    return out;
  }

  /// Checksum over names, shapes and raw bytes of every tensor under `prefix`.
  std::uint64_t checksum(std::string_view prefix = {}) const {
    Fnv1a h;
    for (const auto& [name, p] : params_) {
      if (!name.starts_with(prefix)) continue;
      h.update(name);
      const Index dims[2] = {p.value.rows(), p.value.cols()};
      h.update(dims, sizeof(dims));
      h.update(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
    }
    return h.digest();
  }

  std::size_t count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) {
      if (name.starts_with(prefix)) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
  }

 private:
  std::map<std::string, Parameter, std::less<>> params_;
};

inline Mat random_normal(Index rows, Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  return m;
}

}  // namespace slidelm
