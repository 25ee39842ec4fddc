#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "prunelab/attacks.hpp"
#include "prunelab/network.hpp"

namespace prunelab {

/// Clean and per-attack accuracies of one model on one test split.
/// Accuracies are fractions in [0,1]; tables report percentage-point deltas.
struct EvalReport {
  double acc_clean = 0.0;
  std::map<std::string, double> acc_adv;  // attack tag -> accuracy
  std::string model_tag;
  std::uint64_t seed = 0;
  std::string timestamp;  // provenance only; never written into CSVs
};

/// Crafts adversarial versions of the (unaugmented) split and evaluates.
/// FGSM without a bound source is white-box: the victim crafts its own
/// attack. Deterministic per seed.
double evaluate_under_attack(NetworkGraph& net, const DatasetSplit& data,
                             const AttackSpec& attack, std::uint64_t seed);

/// Clean accuracy plus one adversarial accuracy per attack.
EvalReport evaluate_report(NetworkGraph& net, const DatasetSplit& data,
                           const std::vector<AttackSpec>& attacks,
                           std::uint64_t seed);

/// Percentage-point differences (pruned - unpruned). When corruption attacks
/// are present their deltas also aggregate into a "semantic_mean" row; the
/// averages run over the headline columns (semantic_mean, then each
/// non-corruption attack), attacks-only and with-clean variants.
struct DeltaReport {
  std::map<std::string, double> deltas_pp;  // per attack tag
  double clean_pp = 0.0;
  double semantic_mean_pp = 0.0;
  bool has_semantic = false;
  std::vector<std::string> headline;  // column order for tables
  double avg_attacks_only = 0.0;
  double avg_with_clean = 0.0;
};

DeltaReport delta_report(const EvalReport& unpruned, const EvalReport& pruned);

/// Sample Pearson correlation coefficient, double-precision accumulation.
/// Needs >= 2 points and nonzero variance on both sides.
double pearson_r(std::span<const double> xs, std::span<const double> ys);

struct TransferMatrix {
  std::vector<std::string> tags;  // source order == target order
  std::vector<double> cells;      // row-major [source][target]
  float alpha = 0.0f;

  double at(size_t source, size_t target) const {
    return cells[source * tags.size() + target];
  }
};

/// FGSM transferability: each source crafts one adversarial batch (reused
/// across targets); every ordered (source, target) pair gets a cell. The
/// diagonal is the white-box setting.
TransferMatrix transfer_matrix(
    const std::vector<std::pair<std::string, NetworkGraph*>>& models,
    const DatasetSplit& data, float alpha);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

/// "(+) 1.58" / "(-) 0.60" with two half-even decimals, the table cell
/// convention.
std::string format_delta_pp(double delta);

/// Half-even rounding to `decimals` places.
double round_half_even(double value, int decimals);

}  // namespace prunelab
