#pragma once

#include <map>
#include <string>
#include <vector>

#include "prunelab/data.hpp"
#include "prunelab/network.hpp"

namespace prunelab {

/// Per-structure importance scores produced by one criterion run. Covers
/// exactly the prunable structures of the network (of the requested kind) at
/// the recorded revision.
struct ImportanceTable {
  std::map<StructureId, double> scores;
  std::string criterion_tag;
  int produced_at_iteration = 0;
  std::uint64_t net_revision = 0;
  std::string arch_tag;
};

enum class CriterionKind { L1Norm, ExpectedAbs, Pls };

std::string criterion_name(CriterionKind kind);
CriterionKind criterion_from_name(const std::string& name);

/// Data-agnostic: filter score = sum |w| over the filter kernel; block score
/// = mean |w| over the block's conv kernels.
ImportanceTable criterion_l1(NetworkGraph& net, StructureId::Kind kind);

/// Data-driven: mean |post-relu activation| of the structure's output map
/// over a calibration sample (eval-mode forward).
ImportanceTable criterion_expected_abs(NetworkGraph& net,
                                       StructureId::Kind kind,
                                       const DatasetSplit& sample);

struct PlsOptions {
  int n_components = 2;
  double tolerance = 1e-6;
  int max_iterations = 500;
};

/// NIPALS partial least squares between per-structure pooled activations and
/// one-hot labels; scores are VIP values (mean-square 1 over structures).
/// Zero-variance feature columns score 0. Non-convergence is an error.
ImportanceTable criterion_pls(NetworkGraph& net, StructureId::Kind kind,
                              const DatasetSplit& sample,
                              const PlsOptions& options = {});

ImportanceTable compute_criterion(NetworkGraph& net, CriterionKind criterion,
                                  StructureId::Kind kind,
                                  const DatasetSplit& sample,
                                  const PlsOptions& pls_options = {});

/// Feature matrix used by the data-driven criteria: one row per sample, one
/// column per prunable structure (global-average-pooled output map). Column
/// order matches `structures`.
struct StructureFeatures {
  std::vector<StructureId> structures;
  std::vector<double> matrix;  // row-major [samples x structures]
  int rows = 0;
  int cols = 0;
};

StructureFeatures pooled_structure_features(NetworkGraph& net,
                                            StructureId::Kind kind,
                                            const DatasetSplit& sample);

/// Plain NIPALS-PLS on already-centered matrices; exposed for direct testing
/// against an independent implementation. X is [n x m], Y is [n x j],
/// row-major. Returns per-column VIP scores.
std::vector<double> pls_vip(const std::vector<double>& x, int n, int m,
                            const std::vector<double>& y, int j,
                            const PlsOptions& options);

/// Serializes a table (criterion tag, ordered scores) for audit.
std::string importance_table_to_json(const ImportanceTable& table);

}  // namespace prunelab
