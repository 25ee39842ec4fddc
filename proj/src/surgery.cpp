#include "prunelab/surgery.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>

#include <json.hpp>

namespace prunelab {

namespace {

int removal_quota(double ratio, size_t prunable_count) {
  // The tiny slack keeps exact multiples (0.1 * 60) from ceiling upward due
  // to float representation.
  return static_cast<int>(
      std::ceil(ratio * static_cast<double>(prunable_count) - 1e-9));
}

std::vector<int> keep_complement(int total, const std::vector<int>& removed) {
  std::vector<int> keep;
  keep.reserve(static_cast<size_t>(total) - removed.size());
  size_t r = 0;
  for (int i = 0; i < total; ++i) {
    if (r < removed.size() && removed[r] == i) {
      ++r;
    } else {
      keep.push_back(i);
    }
  }
  return keep;
}

Tensor take_rows4(const Tensor& w, const std::vector<int>& keep) {
  const int in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t per_row = static_cast<std::int64_t>(in) * kh * kw;
  std::vector<float> out(keep.size() * static_cast<size_t>(per_row));
  const float* src = w.values().data();
  for (size_t i = 0; i < keep.size(); ++i) {
    std::copy(src + keep[i] * per_row, src + (keep[i] + 1) * per_row,
              out.data() + static_cast<std::int64_t>(i) * per_row);
  }
  return Tensor::from_values({static_cast<int>(keep.size()), in, kh, kw},
                             std::move(out));
}

Tensor take_cols4(const Tensor& w, const std::vector<int>& keep) {
  const int out_ch = w.dim(0), in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(kh) * kw;
  std::vector<float> out(static_cast<size_t>(out_ch) * keep.size() *
                         static_cast<size_t>(plane));
  const float* src = w.values().data();
  std::int64_t o = 0;
  for (int co = 0; co < out_ch; ++co) {
    for (size_t i = 0; i < keep.size(); ++i) {
      const float* s = src + (static_cast<std::int64_t>(co) * in + keep[i]) * plane;
      std::copy(s, s + plane, out.data() + o);
      o += plane;
    }
  }
  return Tensor::from_values(
      {out_ch, static_cast<int>(keep.size()), kh, kw}, std::move(out));
}

Tensor take1(const Tensor& v, const std::vector<int>& keep) {
  std::vector<float> out(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    out[i] = v.values()[static_cast<size_t>(keep[i])];
  }
  return Tensor::from_values({static_cast<int>(keep.size())}, std::move(out));
}

std::vector<float> take_vec(const std::vector<float>& v,
                            const std::vector<int>& keep) {
  std::vector<float> out(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) out[i] = v[static_cast<size_t>(keep[i])];
  return out;
}

std::vector<int> remap_origin(const std::vector<int>& origin,
                              const std::vector<int>& keep) {
  std::vector<int> out(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) out[i] = origin[static_cast<size_t>(keep[i])];
  return out;
}

void slice_out_channels(ConvUnit& u, const std::vector<int>& keep) {
  check(!keep.empty(), "surgery would empty conv ", u.conv_id);
  const std::string wname = u.weight.name(), bname = u.bias.name();
  const std::string gname = u.gamma.name(), btname = u.beta.name();
  u.weight = take_rows4(u.weight, keep).set_name(wname).set_requires_grad(true);
  u.bias = take1(u.bias, keep).set_name(bname).set_requires_grad(true);
  u.gamma = take1(u.gamma, keep).set_name(gname).set_requires_grad(true);
  u.beta = take1(u.beta, keep).set_name(btname).set_requires_grad(true);
  u.bn_state.running_mean = take_vec(u.bn_state.running_mean, keep);
  u.bn_state.running_var = take_vec(u.bn_state.running_var, keep);
  u.origin_filters = remap_origin(u.origin_filters, keep);
}

void slice_in_channels(ConvUnit& u, const std::vector<int>& keep) {
  const std::string wname = u.weight.name();
  u.weight = take_cols4(u.weight, keep).set_name(wname).set_requires_grad(true);
  u.origin_inputs = remap_origin(u.origin_inputs, keep);
}

}  // namespace

PrunePlan select_removals(const NetworkGraph& net, const ImportanceTable& table,
                          double ratio) {
  check(ratio > 0.0 && ratio < 1.0, "pruning ratio must lie in (0,1), got ",
        ratio);
  check(table.net_revision == net.revision && table.arch_tag == net.arch_tag,
        "importance table was computed on a different network (revision ",
        table.net_revision, " vs ", net.revision, ")");
  check(!table.scores.empty(), "importance table is empty");

  // All entries of one table share a structure kind.
  const StructureId::Kind kind = table.scores.begin()->first.kind;

  struct Candidate {
    double score;
    StructureId id;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(table.scores.size());
  for (const auto& [id, score] : table.scores) {
    check(std::isfinite(score), "non-finite importance score for ", id.str());
    check(id.kind == kind, "importance table mixes structure kinds");
    candidates.push_back({score, id});
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.score != b.score) return a.score < b.score;
              return a.id < b.id;
            });

  const int quota = removal_quota(ratio, candidates.size());

  // Remaining-count guards: a conv may not be emptied; a stage may not lose
  // all of its blocks.
  std::map<int, int> remaining;  // conv_id -> filters, or stage -> blocks
  std::map<int, int> group_of_block;
  if (kind == StructureId::Kind::Filter) {
    for (const auto& c : candidates) ++remaining[c.id.layer_index];
  } else {
    for (const ResidualBlock& b : net.blocks) {
      ++remaining[b.stage];
      group_of_block[b.block_id] = b.stage;
    }
  }

  PrunePlan plan;
  plan.ratio = ratio;
  plan.kind = kind;
  plan.net_revision = net.revision;
  plan.arch_tag = net.arch_tag;

  int last_blocked_group = -1;
  for (const Candidate& c : candidates) {
    if (static_cast<int>(plan.removals.size()) >= quota) break;
    const int group = kind == StructureId::Kind::Filter
                          ? c.id.layer_index
                          : group_of_block.at(c.id.layer_index);
    if (remaining.at(group) <= 1) {
      last_blocked_group = group;
      continue;
    }
    --remaining.at(group);
    plan.removals.push_back(c.id);
  }
  if (static_cast<int>(plan.removals.size()) < quota) {
    if (kind == StructureId::Kind::Filter) {
      fail("pruning ratio ", ratio, " would empty conv layer ",
           last_blocked_group, " (only ", plan.removals.size(), " of ", quota,
           " removals are possible)");
    }
    fail("pruning ratio ", ratio, " would remove every block of stage ",
         last_blocked_group, " (only ", plan.removals.size(), " of ", quota,
         " removals are possible)");
  }
  std::sort(plan.removals.begin(), plan.removals.end());
  return plan;
}

PrunePlan single_removal_plan(const NetworkGraph& net, const StructureId& id) {
  const auto prunable = structure_registry(net);
  const auto it = std::find_if(prunable.begin(), prunable.end(),
                               [&](const StructureEntry& e) { return e.id == id; });
  check(it != prunable.end(), "structure ", id.str(), " is not in the registry");
  check(it->prunable, "structure ", id.str(), " is pinned and cannot be removed");
  PrunePlan plan;
  plan.removals = {id};
  plan.kind = id.kind;
  plan.net_revision = net.revision;
  plan.arch_tag = net.arch_tag;
  return plan;
}

NetworkGraph surgery(const NetworkGraph& net, const PrunePlan& plan) {
  check(plan.net_revision == net.revision && plan.arch_tag == net.arch_tag,
        "prune plan was computed on a different network (revision ",
        plan.net_revision, " vs ", net.revision, ")");
  check(!plan.removals.empty(), "prune plan is empty");

  NetworkGraph out = clone_network(net);
  const std::int64_t params_before = out.param_count();

  if (plan.kind == StructureId::Kind::Filter) {
    std::map<int, std::vector<int>> removing;  // conv_id -> filter indices
    for (const StructureId& id : plan.removals) {
      check(id.kind == StructureId::Kind::Filter, "plan mixes structure kinds");
      removing[id.layer_index].push_back(id.filter_index);
    }
    for (auto& [conv_id, filters] : removing) std::sort(filters.begin(), filters.end());

    // Validate against the registry (pinned convs never appear in plans).
    out.for_each_conv([&](ConvUnit& u) {
      auto it = removing.find(u.conv_id);
      if (it == removing.end()) return;
      check(u.prunable, "conv ", u.conv_id, " is pinned and cannot lose filters");
      for (int f : it->second) {
        check(f >= 0 && f < u.out_channels(), "filter index ", f,
              " out of range for conv ", u.conv_id);
      }
    });

    // Walk the graph in execution order propagating the kept-channel list of
    // the producing layer into each consumer. `edge_keep` is engaged while
    // the flowing activation lost channels that consumers still have slices
    // for.
    std::optional<std::vector<int>> edge_keep;
    for (TrunkStep& step : out.trunk) {
      auto* u = std::get_if<ConvUnit>(&step);
      if (!u) continue;  // pooling leaves channels untouched
      if (edge_keep) slice_in_channels(*u, *edge_keep);
      auto it = removing.find(u->conv_id);
      if (it != removing.end()) {
        const std::vector<int> keep = keep_complement(u->out_channels(), it->second);
        slice_out_channels(*u, keep);
        edge_keep = keep;
      } else {
        edge_keep.reset();
      }
    }
    for (ResidualBlock& b : out.blocks) {
      // Block inputs are produced by pinned convs (stem, conv2, projections),
      // so the incoming edge is always intact here; anything else would break
      // the residual join.
      check(!edge_keep, "internal error: sliced edge enters residual block ",
            b.block_id);
      auto it = removing.find(b.conv1.conv_id);
      if (it != removing.end()) {
        const std::vector<int> keep =
            keep_complement(b.conv1.out_channels(), it->second);
        slice_out_channels(b.conv1, keep);
        slice_in_channels(b.conv2, keep);
      }
    }
    if (edge_keep) {
      const std::vector<int>& cur = *edge_keep;
      const std::string hw = out.head.weight.name();
      const int classes = out.head.weight.dim(1);
      std::vector<float> vals(cur.size() * static_cast<size_t>(classes));
      const float* src = out.head.weight.values().data();
      for (size_t i = 0; i < cur.size(); ++i) {
        std::copy(src + static_cast<std::int64_t>(cur[i]) * classes,
                  src + static_cast<std::int64_t>(cur[i] + 1) * classes,
                  vals.data() + static_cast<std::int64_t>(i) * classes);
      }
      out.head.weight =
          Tensor::from_values({static_cast<int>(cur.size()), classes},
                              std::move(vals))
              .set_name(hw)
              .set_requires_grad(true);
      out.head.origin_inputs = remap_origin(out.head.origin_inputs, cur);
    }
  } else {
    std::set<int> removing;
    for (const StructureId& id : plan.removals) {
      check(id.kind == StructureId::Kind::Block, "plan mixes structure kinds");
      removing.insert(id.layer_index);
    }
    for (const ResidualBlock& b : out.blocks) {
      if (!removing.count(b.block_id)) continue;
      check(b.prunable, "block ", b.block_id,
            " is a stage transition and cannot be removed");
      check(b.in_channels() == b.out_channels(), "block ", b.block_id,
            " changes channel width and cannot be spliced out");
    }
    std::erase_if(out.blocks, [&](const ResidualBlock& b) {
      return removing.count(b.block_id) != 0;
    });
  }

  out.revision = next_revision();
  validate_channels(out);
  check(out.param_count() < params_before,
        "surgery failed to reduce the parameter count");
  return out;
}

std::string prune_plan_to_json(const PrunePlan& plan) {
  nlohmann::json out;
  out["ratio"] = plan.ratio;
  out["iteration"] = plan.iteration;
  out["kind"] = plan.kind == StructureId::Kind::Filter ? "filters" : "blocks";
  out["arch_tag"] = plan.arch_tag;
  nlohmann::json removals = nlohmann::json::array();
  for (const StructureId& id : plan.removals) {
    removals.push_back({{"structure", id.str()},
                        {"layer", id.layer_index},
                        {"filter", id.filter_index}});
  }
  out["removals"] = std::move(removals);
  return out.dump(2);
}

}  // namespace prunelab
