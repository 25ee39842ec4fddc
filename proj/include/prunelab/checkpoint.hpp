#pragma once

#include <cstdint>
#include <string>

#include "prunelab/network.hpp"
#include "prunelab/sgd.hpp"

namespace prunelab {

/// Checkpoint directory layout:
///   manifest.json  - format_version, arch_tag, graph topology, per-tensor
///                    shapes in blob order, epoch, seed, mean/std
///   params.bin     - little-endian float32, concatenated in registry order
///                    (per conv: weight, bias, gamma, beta, running stats;
///                    then the dense head)
///   optim.bin      - optional momentum velocities (mid-training snapshots)
///
/// A load(save(net)) round trip reproduces forward outputs bitwise.
/// `velocities` (one buffer per trainable parameter, registry order) emits
/// optim.bin for snapshots that must support bitwise training resume.
void save_checkpoint(NetworkGraph& net, const std::string& dir,
                     std::uint64_t seed,
                     const std::vector<std::vector<float>>* velocities = nullptr);

NetworkGraph load_checkpoint(const std::string& dir);

bool checkpoint_has_optimizer_state(const std::string& dir);

/// Restores momentum velocities saved alongside `dir` into `optimizer`
/// (parameters matched by registry order).
void load_optimizer_state(const std::string& dir, NetworkGraph& net,
                          SgdOptimizer& optimizer);

/// Seed recorded in the manifest.
std::uint64_t checkpoint_seed(const std::string& dir);

}  // namespace prunelab
