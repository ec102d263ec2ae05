#pragma once

// Property checks shared by the unit suite and the acceptance runner. Each
// returns an empty string on success or a description of the first failure.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "slidelm/packer.hpp"
#include "slidelm/rng.hpp"

namespace checks {

using slidelm::packer::PackSkeleton;
using slidelm::packer::SequenceRef;

/// Partition, budget and greedy-replay properties of one pack() result.
inline std::string packing(const std::vector<SequenceRef>& queue, std::int64_t budget,
                           const std::vector<PackSkeleton>& packs) {
  std::vector<std::string> flat;
  std::int64_t total_in = 0, total_out = 0;
  for (const auto& s : queue) total_in += s.length;
  for (std::size_t p = 0; p < packs.size(); ++p) {
    if (packs[p].members.empty()) return "empty pack " + std::to_string(p);
    if (packs[p].tokens() > budget) return "pack " + std::to_string(p) + " exceeds budget";
    // A pack is sealed only when the next queued sequence would overflow it.
    if (p + 1 < packs.size() && packs[p].tokens() + packs[p + 1].members.front().length <= budget) {
      return "pack " + std::to_string(p) + " sealed although the next sequence fits";
    }
    for (const auto& m : packs[p].members) {
      flat.push_back(m.id);
      total_out += m.length;
    }
  }
  if (total_in != total_out) return "token totals differ";
  if (flat.size() != queue.size()) return "member count differs";
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] != queue[i].id) return "queue order not preserved at " + std::to_string(i);
  }
  return {};
}

/// Random queue of 1..max_count sequences with lengths in [1, budget].
inline std::vector<SequenceRef> random_queue(slidelm::Rng& rng, std::int64_t budget, std::int64_t max_count) {
  std::vector<SequenceRef> q;
  const auto n = rng.uniform_int(1, max_count);
  for (std::int64_t i = 0; i < n; ++i) q.push_back({"s" + std::to_string(i), rng.uniform_int(1, budget)});
  return q;
}

}  // namespace checks
