#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidelm/stats.hpp"

namespace slidelm::metrics {

struct EvalReport {
  std::string task;
  std::string metric;
  double point = 0.0;
  stats::Interval ci;
  std::size_t n = 0;
  // Pairwise p-values keyed by "a|b".
  std::map<std::string, double> p_values;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["metric"] = r.metric;
  j["point"] = r.point;
  j["ci"] = {{"lo", r.ci.lo}, {"hi", r.ci.hi}, {"level", r.ci.level}};
  j["n"] = r.n;
  if (!r.p_values.empty()) j["p_values"] = r.p_values;
  return j;
}

inline nlohmann::ordered_json to_json(const std::vector<EvalReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) j.push_back(to_json(r));
  return j;
}

inline void write_csv(const std::vector<EvalReport>& reports, std::ostream& out) {
  out << "task,metric,point,lo,hi,n\n";
  const auto old = out.precision(10);
  for (const auto& r : reports) {
    out << r.task << ',' << r.metric << ',' << r.point << ',' << r.ci.lo << ',' << r.ci.hi << ',' << r.n << '\n';
  }
  out.precision(old);
}

}  // namespace slidelm::metrics
