#pragma once

#include <cstdint>
#include <vector>

#include "prunelab/data.hpp"
#include "prunelab/network.hpp"
#include "prunelab/sgd.hpp"

namespace prunelab {

/// Training hyperparameters. `epochs` is the total planned budget; the run
/// covers (start_epoch, epochs]. The learning rate decays by 10x after 50%
/// and 75% of the budget. Per-epoch shuffle/augmentation streams derive from
/// (seed, epoch) only, so a run resumed from a snapshot reproduces the
/// original run bitwise.
struct TrainHyper {
  int epochs = 20;
  int start_epoch = 0;
  int batch_size = 32;
  float lr = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  bool use_augmentation = true;
  AugmentationPolicy augment;
  std::uint64_t seed = 0;
  std::vector<int> snapshot_epochs;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // on the (augmented) training batches
};

struct TrainSnapshot {
  int epoch = 0;
  NetworkGraph net;
  // One velocity buffer per trainable parameter, in registry order.
  std::vector<std::vector<float>> velocities;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<TrainSnapshot> snapshots;
};

float lr_at_epoch(const TrainHyper& hyper, int epoch);

/// Momentum-SGD training on clean images (plus crop/flip augmentation).
/// Aborts with epoch/batch diagnostics if the loss turns non-finite. Pass an
/// optimizer to carry velocity state across calls (resume); otherwise a
/// fresh one is used.
TrainResult train(NetworkGraph& net, const DatasetSplit& data,
                  const TrainHyper& hyper, SgdOptimizer* optimizer = nullptr);

/// Fraction of samples whose argmax matches the label; eval-mode forward,
/// deterministic. workers > 1 shards the split; the integer count reduction
/// makes the result identical to the single-threaded run.
double evaluate(NetworkGraph& net, const DatasetSplit& data, int workers = 1);

double evaluate_images(NetworkGraph& net, const Tensor& images,
                       const std::vector<int>& labels, int workers = 1);

}  // namespace prunelab
