#include "prunelab/pruning.hpp"

#include <algorithm>
#include <cmath>

namespace prunelab {

std::string structure_mode_name(StructureMode mode) {
  switch (mode) {
    case StructureMode::Filters: return "filters";
    case StructureMode::Layers: return "layers";
    case StructureMode::Both: return "both";
  }
  fail("unreachable structure mode");
}

StructureMode structure_mode_from_name(const std::string& name) {
  if (name == "filters") return StructureMode::Filters;
  if (name == "layers") return StructureMode::Layers;
  if (name == "both") return StructureMode::Both;
  fail("unknown structure mode '", name, "' (expected filters, layers or both)");
}

std::string AdjustScheme::name() const {
  switch (kind) {
    case Kind::FineTune: return "finetune";
    case Kind::ScratchSame: return "scratch-same";
    case Kind::ScratchDouble: return "scratch-double";
    case Kind::WinningTicket: return "wticket";
  }
  fail("unreachable adjust scheme");
}

AdjustScheme AdjustScheme::from_name(const std::string& name,
                                     int finetune_epochs, int rewind_epoch) {
  AdjustScheme s;
  s.finetune_epochs = finetune_epochs;
  s.rewind_epoch = rewind_epoch;
  if (name == "finetune") {
    s.kind = Kind::FineTune;
  } else if (name == "scratch-same") {
    s.kind = Kind::ScratchSame;
  } else if (name == "scratch-double") {
    s.kind = Kind::ScratchDouble;
  } else if (name == "wticket") {
    s.kind = Kind::WinningTicket;
  } else {
    fail("unknown adjustment scheme '", name,
         "' (expected finetune, scratch-same, scratch-double or wticket)");
  }
  return s;
}

namespace {

void reinitialize_surviving(NetworkGraph& net, std::uint64_t seed) {
  Rng rng(seed);
  net.for_each_conv([&](ConvUnit& u) {
    const int in = u.in_channels();
    const int k = u.weight.dim(2);
    const double stddev = std::sqrt(2.0 / (in * k * k));
    for (float& v : u.weight.values_mut()) {
      v = static_cast<float>(rng.normal() * stddev);
    }
    std::fill(u.bias.values_mut().begin(), u.bias.values_mut().end(), 0.0f);
    std::fill(u.gamma.values_mut().begin(), u.gamma.values_mut().end(), 1.0f);
    std::fill(u.beta.values_mut().begin(), u.beta.values_mut().end(), 0.0f);
    u.bn_state = BatchNormState::identity(u.out_channels());
  });
  const double stddev = std::sqrt(2.0 / net.head.weight.dim(0));
  for (float& v : net.head.weight.values_mut()) {
    v = static_cast<float>(rng.normal() * stddev);
  }
  std::fill(net.head.bias.values_mut().begin(), net.head.bias.values_mut().end(),
            0.0f);
  net.epoch_counter = 0;
}

void copy_surviving_from(NetworkGraph& net, const NetworkGraph& snapshot) {
  // Match convs by id; blocks removed by surgery simply have no counterpart
  // left in `net`.
  std::map<int, const ConvUnit*> source;
  const_cast<NetworkGraph&>(snapshot).for_each_conv(
      [&](ConvUnit& u) { source[u.conv_id] = &u; });

  net.for_each_conv([&](ConvUnit& u) {
    const auto it = source.find(u.conv_id);
    check(it != source.end(), "snapshot misses conv ", u.conv_id);
    const ConvUnit& s = *it->second;
    const int k = u.weight.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(k) * k;
    float* dst = u.weight.values_mut().data();
    const float* src = s.weight.values().data();
    const std::int64_t s_in = s.in_channels();
    for (int o = 0; o < u.out_channels(); ++o) {
      const int so = u.origin_filters[static_cast<size_t>(o)];
      for (int i = 0; i < u.in_channels(); ++i) {
        const int si = u.origin_inputs[static_cast<size_t>(i)];
        std::copy(src + (so * s_in + si) * plane, src + (so * s_in + si + 1) * plane,
                  dst + (static_cast<std::int64_t>(o) * u.in_channels() + i) * plane);
      }
      u.bias.values_mut()[static_cast<size_t>(o)] = s.bias.values()[static_cast<size_t>(so)];
      u.gamma.values_mut()[static_cast<size_t>(o)] = s.gamma.values()[static_cast<size_t>(so)];
      u.beta.values_mut()[static_cast<size_t>(o)] = s.beta.values()[static_cast<size_t>(so)];
      u.bn_state.running_mean[static_cast<size_t>(o)] =
          s.bn_state.running_mean[static_cast<size_t>(so)];
      u.bn_state.running_var[static_cast<size_t>(o)] =
          s.bn_state.running_var[static_cast<size_t>(so)];
    }
    u.bn_state.initialized = s.bn_state.initialized;
  });

  const int classes = net.head.weight.dim(1);
  float* dst = net.head.weight.values_mut().data();
  const float* src = snapshot.head.weight.values().data();
  for (int i = 0; i < net.head.weight.dim(0); ++i) {
    const int si = net.head.origin_inputs[static_cast<size_t>(i)];
    std::copy(src + static_cast<std::int64_t>(si) * classes,
              src + static_cast<std::int64_t>(si + 1) * classes,
              dst + static_cast<std::int64_t>(i) * classes);
  }
  std::copy(snapshot.head.bias.values().begin(), snapshot.head.bias.values().end(),
            net.head.bias.values_mut().begin());
  net.epoch_counter = 0;
}

}  // namespace

TrainResult adjust(NetworkGraph& net, const AdjustScheme& scheme,
                   const DatasetSplit& train_data, const TrainHyper& hyper,
                   const std::vector<TrainSnapshot>& snapshots) {
  TrainHyper run = hyper;
  run.start_epoch = 0;
  run.snapshot_epochs.clear();

  switch (scheme.kind) {
    case AdjustScheme::Kind::FineTune:
      run.epochs = scheme.finetune_epochs;
      run.lr = hyper.lr * 0.1f;
      run.seed = mix_seed(hyper.seed, 31);
      break;
    case AdjustScheme::Kind::ScratchSame:
      reinitialize_surviving(net, mix_seed(hyper.seed, 32));
      run.epochs = hyper.epochs;
      run.seed = mix_seed(hyper.seed, 33);
      break;
    case AdjustScheme::Kind::ScratchDouble:
      reinitialize_surviving(net, mix_seed(hyper.seed, 34));
      run.epochs = hyper.epochs * 2;
      run.seed = mix_seed(hyper.seed, 35);
      break;
    case AdjustScheme::Kind::WinningTicket: {
      const auto it = std::find_if(
          snapshots.begin(), snapshots.end(), [&](const TrainSnapshot& s) {
            return s.epoch == scheme.rewind_epoch;
          });
      check(it != snapshots.end(),
            "winning ticket requires a snapshot at epoch ", scheme.rewind_epoch);
      copy_surviving_from(net, it->net);
      run.epochs = hyper.epochs;
      run.seed = mix_seed(hyper.seed, 36);
      break;
    }
  }
  return train(net, train_data, run);
}

PruneRunResult prune_iterative(const NetworkGraph& base,
                               const DatasetSplit& train_data,
                               const DatasetSplit& test_data,
                               const PruneRunOptions& options,
                               const TrainHyper& hyper,
                               const std::vector<TrainSnapshot>& snapshots) {
  check(options.iterations >= 1, "iterations must be at least 1, got ",
        options.iterations);
  if (options.structure != StructureMode::Filters) {
    check(base.arch == ArchKind::MiniResNet,
          "layer pruning requires a residual architecture; ",
          arch_kind_name(base.arch), " has no removable blocks");
  }

  const int calib =
      std::min(train_data.size(), std::max(options.calibration_size, 2));
  const DatasetSplit calibration = train_data.slice(0, calib);

  PruneRunResult result;
  NetworkGraph current = clone_network(base);

  for (int k = 1; k <= options.iterations; ++k) {
    // One surgery pass per structure kind this iteration ("both" runs blocks
    // first, then filters, each at half the ratio).
    std::vector<std::pair<StructureId::Kind, double>> passes;
    switch (options.structure) {
      case StructureMode::Filters:
        passes = {{StructureId::Kind::Filter, options.ratio}};
        break;
      case StructureMode::Layers:
        passes = {{StructureId::Kind::Block, options.ratio}};
        break;
      case StructureMode::Both:
        passes = {{StructureId::Kind::Block, options.ratio / 2.0},
                  {StructureId::Kind::Filter, options.ratio / 2.0}};
        break;
    }

    IterationOutcome outcome;
    outcome.iteration = k;
    try {
      for (const auto& [kind, ratio] : passes) {
        ImportanceTable table = compute_criterion(
            current, options.criterion, kind, calibration, options.pls);
        table.produced_at_iteration = k;
        PrunePlan plan = select_removals(current, table, ratio);
        plan.iteration = k;
        current = surgery(current, plan);
        outcome.plans.push_back(std::move(plan));
        outcome.tables.push_back(std::move(table));
      }
    } catch (const Error& e) {
      result.early_stop_reason = e.what();
      break;
    }

    adjust(current, options.scheme, train_data, hyper, snapshots);
    outcome.report = evaluate_report(current, test_data, options.attacks,
                                     options.attack_seed);
    outcome.report.model_tag = current.arch_tag + "#iter" + std::to_string(k);
    outcome.param_count = current.param_count();
    outcome.net = clone_network(current);
    result.iterations.push_back(std::move(outcome));
  }
  return result;
}

double SweepBuckets::percentage(const std::string& tag, int level) const {
  check(level >= 0 && level < kLevels, "bucket level out of range");
  const auto it = buckets.find(tag);
  check(it != buckets.end(), "no sweep buckets for attack '", tag, "'");
  if (elements.empty()) return 0.0;
  return 100.0 * static_cast<double>(it->second[static_cast<size_t>(level)].size()) /
         static_cast<double>(elements.size());
}

SweepBuckets sweep_single_elements(const NetworkGraph& net,
                                   StructureId::Kind kind,
                                   const DatasetSplit& test_data,
                                   const std::vector<AttackSpec>& attacks,
                                   std::uint64_t attack_seed) {
  check(!attacks.empty(), "sweep needs at least one attack");
  check(!test_data.augmented, "augmented data must never reach evaluation");

  SweepBuckets out;
  out.elements = prunable_structures(net, kind);

  NetworkGraph& base = const_cast<NetworkGraph&>(net);
  out.baseline_clean = evaluate(base, test_data);

  // Model-agnostic attack batches do not depend on the victim, so they are
  // crafted once and reused across all element removals.
  std::map<std::string, AdversarialBatch> agnostic;
  for (const AttackSpec& spec : attacks) {
    const std::string tag = spec.tag();
    check(!out.baseline_adv.count(tag), "duplicate attack tag '", tag, "'");
    if (spec.kind == AttackSpec::Kind::Fgsm) {
      out.baseline_adv[tag] =
          evaluate_under_attack(base, test_data, spec, attack_seed);
    } else {
      agnostic.emplace(tag, craft(base, test_data, spec, attack_seed));
      const AdversarialBatch& adv = agnostic.at(tag);
      out.baseline_adv[tag] =
          evaluate_images(base, adv.images, adv.clean_labels);
    }
    out.buckets[tag] = {};
  }

  for (const StructureId& element : out.elements) {
    NetworkGraph pruned = surgery(net, single_removal_plan(net, element));
    const double clean = evaluate(pruned, test_data);
    for (const AttackSpec& spec : attacks) {
      const std::string tag = spec.tag();
      double adv_acc;
      if (spec.kind == AttackSpec::Kind::Fgsm) {
        adv_acc = evaluate_under_attack(pruned, test_data, spec, attack_seed);
      } else {
        const AdversarialBatch& adv = agnostic.at(tag);
        adv_acc = evaluate_images(pruned, adv.images, adv.clean_labels);
      }
      if (adv_acc <= out.baseline_adv.at(tag)) continue;  // strict improvement
      for (int i = 0; i < SweepBuckets::kLevels; ++i) {
        // Clean-accuracy threshold is inclusive: a drop of exactly i points
        // still lands in bucket i.
        const double sigma = out.baseline_clean - static_cast<double>(i) / 100.0;
        if (clean >= sigma - 1e-12) {
          out.buckets.at(tag)[static_cast<size_t>(i)].insert(element);
        }
      }
    }
  }
  return out;
}

}  // namespace prunelab
