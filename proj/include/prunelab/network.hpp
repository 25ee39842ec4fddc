#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "prunelab/ops.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class ArchKind { MiniVgg, MiniResNet };

std::string arch_kind_name(ArchKind kind);
ArchKind arch_kind_from_name(const std::string& name);

/// Identifies one prunable (or pinned) structure: a single conv filter or a
/// whole residual block.
struct StructureId {
  enum class Kind { Filter, Block };
  Kind kind = Kind::Filter;
  int layer_index = 0;   // conv id for filters, block id for blocks
  int filter_index = -1;  // -1 for blocks

  auto operator<=>(const StructureId&) const = default;
  std::string str() const;
};

/// Registry row: a structure plus whether surgery may remove it.
struct StructureEntry {
  StructureId id;
  bool prunable = false;
};

/// Conv + batchnorm (+ optional relu) unit; the only place convolution
/// parameters live in a network.
struct ConvUnit {
  int conv_id = 0;
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
  int stride = 1;
  int padding = 1;
  Tensor gamma;
  Tensor beta;
  BatchNormState bn_state;
  float bn_momentum = 0.1f;
  float bn_epsilon = 1e-5f;
  bool relu_after = true;
  bool prunable = false;
  // Filter provenance relative to the originally built network; winning
  // ticket rewinds need it after (possibly repeated) surgery.
  std::vector<int> origin_filters;
  std::vector<int> origin_inputs;

  int out_channels() const { return weight.dim(0); }
  int in_channels() const { return weight.dim(1); }
};

struct MaxPoolStep {
  int kernel = 2;
  int stride = 2;
};

using TrunkStep = std::variant<ConvUnit, MaxPoolStep>;

/// conv-bn-relu -> conv-bn, joined with the identity (or 1x1 projection)
/// skip, then relu.
struct ResidualBlock {
  int block_id = 0;
  int stage = 0;
  ConvUnit conv1;
  ConvUnit conv2;
  std::optional<ConvUnit> projection;
  bool prunable = false;  // block removal allowed (identity joins only)

  int in_channels() const { return conv1.in_channels(); }
  int out_channels() const { return conv2.out_channels(); }
};

struct DenseHead {
  Tensor weight;  // [D, classes]
  Tensor bias;    // [classes]
  std::vector<int> origin_inputs;
};

struct BuildSpec {
  ArchKind arch = ArchKind::MiniVgg;
  double width_multiplier = 1.0;
  int base_width = 8;
  std::vector<int> stage_depths = {2, 2, 2};
  int num_classes = 4;
  int input_channels = 3;
  std::uint64_t seed = 0;
};

/// Ordered differentiable layer graph. `trunk` runs first (all of MiniVGG;
/// the stem for MiniResNet), then the residual blocks (MiniResNet only),
/// then global average pooling and the dense head. Input normalization is
/// folded into the forward pass so attacks operate in raw pixel space.
struct NetworkGraph {
  ArchKind arch = ArchKind::MiniVgg;
  std::string arch_tag;
  BuildSpec build_spec;
  std::vector<TrunkStep> trunk;
  std::vector<ResidualBlock> blocks;
  DenseHead head;
  int num_classes = 0;
  int input_channels = 3;
  std::vector<float> norm_mean;  // per input channel
  std::vector<float> norm_std;
  int epoch_counter = 0;
  std::uint64_t revision = 1;  // bumped by surgery; plans are bound to it

  void set_normalization(std::vector<float> mean, std::vector<float> std);

  /// All parameter tensors updated by the optimizer, in registry order.
  std::vector<Tensor> trainable_params();
  /// Trainable parameters plus batchnorm running statistics; defines the
  /// checkpoint blob layout.
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_conv(const std::function<void(ConvUnit&)>& fn);

  std::int64_t param_count();
};

/// He fan-in initialized network for the requested architecture; bitwise
/// deterministic per seed.
NetworkGraph build_network(const BuildSpec& spec);

/// Process-unique revision ids; every build and every surgery takes a fresh
/// one so importance tables and prune plans cannot cross networks. Clones
/// keep their source's revision (a plan is valid on a bit-identical clone).
std::uint64_t next_revision();

/// Optional taps on intermediate activations; used by the data-driven
/// importance criteria.
struct ForwardHooks {
  // Post-relu output of a conv unit, keyed by conv id. Only fires for units
  // with relu_after.
  std::function<void(int conv_id, const Tensor&)> on_conv_activation;
  // Residual block output (after join and relu), keyed by block id.
  std::function<void(int block_id, const Tensor&)> on_block_output;
};

/// Runs the graph. Train mode updates batchnorm running statistics; pass a
/// tape to record gradients. The input is raw [0,1] pixels; normalization
/// happens inside.
Tensor forward(NetworkGraph& net, const Tensor& batch, Mode mode,
               Tape* tape = nullptr, const ForwardHooks* hooks = nullptr);

/// Deep copy: parameters, statistics and provenance are duplicated.
NetworkGraph clone_network(const NetworkGraph& net);

/// Every structure physically present, with prunable flags. Filters of
/// non-prunable convs are listed as pinned entries.
std::vector<StructureEntry> structure_registry(const NetworkGraph& net);
std::vector<StructureId> prunable_structures(const NetworkGraph& net,
                                             StructureId::Kind kind);

/// Checks producer/consumer channel agreement along every edge, residual
/// join widths, and head input width. Throws on violation.
void validate_channels(const NetworkGraph& net);

}  // namespace prunelab
