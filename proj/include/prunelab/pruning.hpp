#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "prunelab/metrics.hpp"
#include "prunelab/surgery.hpp"
#include "prunelab/training.hpp"

namespace prunelab {

enum class StructureMode { Filters, Layers, Both };

std::string structure_mode_name(StructureMode mode);
StructureMode structure_mode_from_name(const std::string& name);

/// How pruned-network parameters are adjusted after surgery. All schemes use
/// clean images only.
struct AdjustScheme {
  enum class Kind { FineTune, ScratchSame, ScratchDouble, WinningTicket };
  Kind kind = Kind::FineTune;
  int finetune_epochs = 8;
  int rewind_epoch = 0;  // winning ticket snapshot epoch

  std::string name() const;
  static AdjustScheme from_name(const std::string& name, int finetune_epochs,
                                int rewind_epoch);
};

/// Applies one adjustment scheme to a freshly pruned network (in place) and
/// returns its training history. `hyper` is the original training recipe:
/// scratch schemes re-train for 1x/2x its epoch budget, the winning ticket
/// copies surviving parameters from the snapshot at rewind_epoch and
/// re-trains for 1x, fine-tuning continues from the surviving weights at a
/// tenth of the base learning rate.
TrainResult adjust(NetworkGraph& net, const AdjustScheme& scheme,
                   const DatasetSplit& train_data, const TrainHyper& hyper,
                   const std::vector<TrainSnapshot>& snapshots);

struct PruneRunOptions {
  CriterionKind criterion = CriterionKind::Pls;
  StructureMode structure = StructureMode::Filters;
  double ratio = 0.1;
  int iterations = 1;
  AdjustScheme scheme;
  PlsOptions pls;
  int calibration_size = 512;
  std::vector<AttackSpec> attacks;
  std::uint64_t attack_seed = 0;
};

struct IterationOutcome {
  int iteration = 0;  // 1-based
  NetworkGraph net;
  EvalReport report;
  std::vector<PrunePlan> plans;          // one per surgery pass ("both" has two)
  std::vector<ImportanceTable> tables;   // matching score tables, for audit
  std::int64_t param_count = 0;
};

struct PruneRunResult {
  std::vector<IterationOutcome> iterations;
  std::string early_stop_reason;  // empty when all K iterations ran
};

/// Iterative prune-then-adjust: iteration k consumes the network of
/// iteration k-1, scoring with the criterion, removing ceil(p * prunable)
/// structures ("both" removes blocks then filters at p/2 each), adjusting,
/// and evaluating. Structural exhaustion stops early with a reason instead
/// of failing.
PruneRunResult prune_iterative(const NetworkGraph& base,
                               const DatasetSplit& train_data,
                               const DatasetSplit& test_data,
                               const PruneRunOptions& options,
                               const TrainHyper& hyper,
                               const std::vector<TrainSnapshot>& snapshots);

/// Single-element sweep buckets: L[i] collects the elements whose lone
/// removal (no adjustment) strictly improves adversarial accuracy while
/// keeping clean accuracy within i percentage points of the baseline.
/// Nested by construction: L0 <= L1 <= ... <= L5.
struct SweepBuckets {
  static constexpr int kLevels = 6;
  std::vector<StructureId> elements;  // E, the swept population
  double baseline_clean = 0.0;
  std::map<std::string, double> baseline_adv;  // attack tag -> accuracy
  std::map<std::string, std::array<std::set<StructureId>, kLevels>> buckets;

  double percentage(const std::string& tag, int level) const;
};

SweepBuckets sweep_single_elements(const NetworkGraph& net,
                                   StructureId::Kind kind,
                                   const DatasetSplit& test_data,
                                   const std::vector<AttackSpec>& attacks,
                                   std::uint64_t attack_seed);

}  // namespace prunelab
