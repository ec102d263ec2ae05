#pragma once

// Sequence packing under a per-pack token budget, and the load-balance
// accounting for dealing packs to data-parallel workers.

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "slidelm/corpus/types.hpp"
#include "slidelm/error.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm::packer {

inline constexpr std::int64_t kDefaultBudget = 4096;

struct SequenceRef {
  std::string id;
  std::int64_t length = 0;
};

/// Membership of one pack before any data is gathered.
struct PackSkeleton {
  std::vector<SequenceRef> members;

  std::int64_t tokens() const {
    std::int64_t n = 0;
    for (const auto& m : members) n += m.length;
    return n;
  }
};

/// Member sequences stacked row-wise; member i occupies rows
/// [offsets[i], offsets[i + 1]).
struct PackedBatch {
  Mat data;
  std::vector<Index> offsets;
  std::vector<std::string> member_ids;

  std::size_t members() const { return member_ids.size(); }
  Index length(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  Mat member(std::size_t i) const { return data.middleRows(offsets[i], length(i)); }
};

/// Greedy first-fit in queue order: a sequence joins the open pack iff it
/// fits, otherwise the pack is sealed and a new one opened.
inline std::vector<PackSkeleton> pack(const std::vector<SequenceRef>& queue, std::int64_t budget = kDefaultBudget) {
  require(budget >= 1, "pack: budget must be >= 1");
  std::vector<PackSkeleton> packs;
  PackSkeleton open;
  std::int64_t used = 0;
  for (const auto& seq : queue) {
    require(seq.length >= 1, "pack: sequence " + seq.id + " has length < 1");
    if (seq.length > budget) {
      throw InvalidArgument("pack: sequence " + seq.id + " of length " + std::to_string(seq.length) +
                            " exceeds budget " + std::to_string(budget));
    }
    if (used + seq.length > budget) {
      packs.push_back(std::move(open));
      open = PackSkeleton{};
      used = 0;
    }
    open.members.push_back(seq);
    used += seq.length;
  }
  if (!open.members.empty()) packs.push_back(std::move(open));
  return packs;
}

/// Gathers member tiles from `records` (looked up by id) into one buffer.
inline PackedBatch concat(const PackSkeleton& skeleton, const std::vector<const corpus::SpecimenRecord*>& records) {
  PackedBatch out;
  out.offsets.push_back(0);
  std::vector<const corpus::TileEmbeddingSet*> sets;
  int dim = -1;
  for (const auto& m : skeleton.members) {
    const corpus::SpecimenRecord* found = nullptr;
    for (const auto* r : records) {
      if (r->specimen_id == m.id) {
        found = r;
        break;
      }
    }
    if (found == nullptr) throw InvalidArgument("concat: unknown specimen " + m.id);
    if (found->tiles.total_tiles() != m.length) {
      throw InvalidArgument("concat: length mismatch for " + m.id + " (declared " + std::to_string(m.length) +
                            ", stored " + std::to_string(found->tiles.total_tiles()) + ")");
    }
    if (dim < 0) dim = found->tiles.dim;
    require(found->tiles.dim == dim, "concat: members disagree on embedding dim");
    sets.push_back(&found->tiles);
    out.member_ids.push_back(m.id);
    out.offsets.push_back(out.offsets.back() + m.length);
  }
  out.data.resize(out.offsets.back(), std::max(dim, 0));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out.data.middleRows(out.offsets[i], out.length(i)) = sets[i]->stacked();
  }
  return out;
}

inline PackedBatch concat(const PackSkeleton& skeleton, const corpus::Corpus& corpus) {
  std::vector<const corpus::SpecimenRecord*> records;
  for (const auto& r : corpus.records) records.push_back(&r);
  return concat(skeleton, records);
}

/// A single sequence as a one-member batch.
inline PackedBatch single(const corpus::TileEmbeddingSet& tiles) {
  PackedBatch out;
  out.data = tiles.stacked();
  out.offsets = {0, out.data.rows()};
  out.member_ids = {tiles.specimen_id};
  return out;
}

struct WorkerStep {
  std::size_t worker = 0;
  std::size_t step = 0;
  std::int64_t tokens = 0;
};

struct BalanceStats {
  std::vector<std::int64_t> per_worker_tokens;
  std::int64_t max_tokens = 0;
  std::int64_t min_tokens = 0;
  double mean_tokens = 0.0;
  // 1 - mean/max accumulated over steps: the share of worker-time spent
  // waiting at the per-step synchronization point.
  double idle_fraction = 0.0;
  std::vector<WorkerStep> trace;
};

/// Deals packs round-robin: step s gives pack s*W + w to worker w.
inline BalanceStats balance_report(const std::vector<PackSkeleton>& packs, std::size_t n_workers) {
  require(n_workers >= 1, "balance_report: n_workers must be >= 1");
  BalanceStats st;
  st.per_worker_tokens.assign(n_workers, 0);
  const std::size_t steps = (packs.size() + n_workers - 1) / n_workers;
  double busy = 0.0;
  double capacity = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    std::int64_t step_max = 0;
    std::int64_t step_sum = 0;
    for (std::size_t w = 0; w < n_workers; ++w) {
      const std::size_t p = s * n_workers + w;
      const std::int64_t t = p < packs.size() ? packs[p].tokens() : 0;
      st.per_worker_tokens[w] += t;
      st.trace.push_back({w, s, t});
      step_max = std::max(step_max, t);
      step_sum += t;
    }
    busy += static_cast<double>(step_sum);
    capacity += static_cast<double>(step_max) * static_cast<double>(n_workers);
  }
  st.max_tokens = *std::max_element(st.per_worker_tokens.begin(), st.per_worker_tokens.end());
  st.min_tokens = *std::min_element(st.per_worker_tokens.begin(), st.per_worker_tokens.end());
  std::int64_t total = 0;
  for (auto t : st.per_worker_tokens) total += t;
  st.mean_tokens = static_cast<double>(total) / static_cast<double>(n_workers);
  st.idle_fraction = capacity > 0 ? 1.0 - busy / capacity : 0.0;
  return st;
}

inline void write_balance_csv(const BalanceStats& st, std::ostream& out) {
  out << "worker,step,tokens\n";
  for (const auto& ws : st.trace) out << ws.worker << ',' << ws.step << ',' << ws.tokens << '\n';
}

}  // namespace slidelm::packer
