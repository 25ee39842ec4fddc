#pragma once

#include <string>
#include <vector>

#include "prunelab/criteria.hpp"
#include "prunelab/network.hpp"

namespace prunelab {

/// Removal set for one surgery pass. Bound to the network revision the
/// scores were computed on; surgery refuses a plan made for another network.
struct PrunePlan {
  std::vector<StructureId> removals;
  double ratio = 0.0;
  int iteration = 0;
  StructureId::Kind kind = StructureId::Kind::Filter;
  std::uint64_t net_revision = 0;
  std::string arch_tag;
};

/// Picks the ceil(p * |prunable|) lowest-scoring structures, ties broken by
/// ascending (layer, filter) index. A candidate whose removal would empty a
/// conv layer (or leave a stage without blocks) is passed over; if the quota
/// cannot be met the call fails naming the blocking layer. Deterministic and
/// idempotent on a fixed table.
PrunePlan select_removals(const NetworkGraph& net, const ImportanceTable& table,
                          double ratio);

/// Plan removing exactly one structure (single-element sweeps).
PrunePlan single_removal_plan(const NetworkGraph& net, const StructureId& id);

/// Physically removes the planned structures and rewires consumers: filter
/// removal drops the kernel row, bias and batchnorm channel plus the
/// matching input slice of every consumer; block removal splices the block
/// out (legal only for identity joins). Returns a new, validated, strictly
/// smaller network.
NetworkGraph surgery(const NetworkGraph& net, const PrunePlan& plan);

std::string prune_plan_to_json(const PrunePlan& plan);

}  // namespace prunelab
