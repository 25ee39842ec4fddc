#include "prunelab/network.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace prunelab {

std::uint64_t next_revision() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

std::string arch_kind_name(ArchKind kind) {
  return kind == ArchKind::MiniVgg ? "mini_vgg" : "mini_resnet";
}

ArchKind arch_kind_from_name(const std::string& name) {
  if (name == "mini_vgg") return ArchKind::MiniVgg;
  if (name == "mini_resnet") return ArchKind::MiniResNet;
  fail("unknown architecture '", name, "' (expected mini_vgg or mini_resnet)");
}

std::string StructureId::str() const {
  std::ostringstream os;
  if (kind == Kind::Filter) {
    os << "filter(layer=" << layer_index << ",idx=" << filter_index << ")";
  } else {
    os << "block(" << layer_index << ")";
  }
  return os.str();
}

namespace {

std::vector<int> iota_vec(int n) {
  std::vector<int> v(static_cast<size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

ConvUnit make_conv_unit(int& conv_id, int in_ch, int out_ch, int kernel,
                        int stride, int padding, bool relu_after,
                        bool prunable, Rng& rng, const std::string& name) {
  check(in_ch >= 1 && out_ch >= 1,
        "architecture produced a zero-channel layer at ", name);
  ConvUnit u;
  u.conv_id = conv_id++;
  const double stddev = std::sqrt(2.0 / (in_ch * kernel * kernel));
  u.weight = Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, stddev)
                 .set_name(name + ".weight")
                 .set_requires_grad(true);
  u.bias = Tensor::zeros({out_ch}).set_name(name + ".bias").set_requires_grad(true);
  u.stride = stride;
  u.padding = padding;
  u.gamma = Tensor::full({out_ch}, 1.0f)
                .set_name(name + ".gamma")
                .set_requires_grad(true);
  u.beta = Tensor::zeros({out_ch}).set_name(name + ".beta").set_requires_grad(true);
  // Running statistics start at the identity transform; they are explicitly
  // initialized so an untrained network can run eval-mode forward.
  u.bn_state = BatchNormState::identity(out_ch);
  u.relu_after = relu_after;
  u.prunable = prunable;
  u.origin_filters = iota_vec(out_ch);
  u.origin_inputs = iota_vec(in_ch);
  return u;
}

int stage_width(const BuildSpec& spec, int stage) {
  const double base = static_cast<double>(spec.base_width << stage);
  return static_cast<int>(std::ceil(base * spec.width_multiplier));
}

Tensor run_conv_unit(ConvUnit& u, const Tensor& x, Mode mode, Tape* tape,
                     const ForwardHooks* hooks) {
  Tensor y = conv2d(x, u.weight, u.bias, u.stride, u.padding, tape);
  y = batchnorm2d(y, u.gamma, u.beta, u.bn_state, mode, u.bn_momentum,
                  u.bn_epsilon, tape);
  if (u.relu_after) {
    y = relu(y, tape);
    if (hooks && hooks->on_conv_activation) {
      hooks->on_conv_activation(u.conv_id, y);
    }
  }
  return y;
}

}  // namespace

void NetworkGraph::set_normalization(std::vector<float> mean,
                                     std::vector<float> std) {
  check(static_cast<int>(mean.size()) == input_channels &&
            static_cast<int>(std.size()) == input_channels,
        "normalization constants must have one entry per input channel");
  for (float s : std) check(s > 0.0f, "normalization std must be positive, got ", s);
  norm_mean = std::move(mean);
  norm_std = std::move(std);
}

std::vector<Tensor> NetworkGraph::trainable_params() {
  std::vector<Tensor> out;
  for_each_conv([&](ConvUnit& u) {
    out.push_back(u.weight);
    out.push_back(u.bias);
    out.push_back(u.gamma);
    out.push_back(u.beta);
  });
  out.push_back(head.weight);
  out.push_back(head.bias);
  return out;
}

void NetworkGraph::for_each_param(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  for_each_conv([&](ConvUnit& u) {
    fn(u.weight.name(), u.weight);
    fn(u.bias.name(), u.bias);
    fn(u.gamma.name(), u.gamma);
    fn(u.beta.name(), u.beta);
  });
  fn(head.weight.name(), head.weight);
  fn(head.bias.name(), head.bias);
}

void NetworkGraph::for_each_conv(const std::function<void(ConvUnit&)>& fn) {
  for (TrunkStep& step : trunk) {
    if (auto* u = std::get_if<ConvUnit>(&step)) fn(*u);
  }
  for (ResidualBlock& b : blocks) {
    fn(b.conv1);
    fn(b.conv2);
    if (b.projection) fn(*b.projection);
  }
}

std::int64_t NetworkGraph::param_count() {
  std::int64_t n = 0;
  for (const Tensor& t : trainable_params()) n += t.numel();
  return n;
}

NetworkGraph build_network(const BuildSpec& spec) {
  check(spec.base_width >= 1, "base_width must be positive, got ",
        spec.base_width);
  check(spec.width_multiplier > 0.0, "width_multiplier must be positive, got ",
        spec.width_multiplier);
  check(!spec.stage_depths.empty(), "stage_depths must not be empty");
  for (int d : spec.stage_depths)
    check(d >= 1, "stage depth must be positive, got ", d);
  check(spec.num_classes >= 2, "num_classes must be at least 2, got ",
        spec.num_classes);
  check(spec.input_channels >= 1, "input_channels must be positive");

  NetworkGraph net;
  net.arch = spec.arch;
  net.build_spec = spec;
  net.num_classes = spec.num_classes;
  net.input_channels = spec.input_channels;

  Rng rng(spec.seed);
  int conv_id = 0;
  int cur = spec.input_channels;
  const int stages = static_cast<int>(spec.stage_depths.size());

  if (spec.arch == ArchKind::MiniVgg) {
    for (int s = 0; s < stages; ++s) {
      const int w = stage_width(spec, s);
      for (int d = 0; d < spec.stage_depths[static_cast<size_t>(s)]; ++d) {
        std::ostringstream name;
        name << "conv" << conv_id;
        net.trunk.emplace_back(make_conv_unit(conv_id, cur, w, 3, 1, 1,
                                              /*relu=*/true, /*prunable=*/true,
                                              rng, name.str()));
        cur = w;
      }
      net.trunk.emplace_back(MaxPoolStep{2, 2});
    }
  } else {
    const int w0 = stage_width(spec, 0);
    net.trunk.emplace_back(make_conv_unit(conv_id, cur, w0, 3, 1, 1,
                                          /*relu=*/true, /*prunable=*/false,
                                          rng, "stem"));
    cur = w0;
    int block_id = 0;
    for (int s = 0; s < stages; ++s) {
      const int w = stage_width(spec, s);
      for (int d = 0; d < spec.stage_depths[static_cast<size_t>(s)]; ++d) {
        const int stride = (d == 0 && s > 0) ? 2 : 1;
        const bool transition = stride != 1 || cur != w;
        ResidualBlock b;
        b.block_id = block_id++;
        b.stage = s;
        std::ostringstream base;
        base << "block" << b.block_id;
        b.conv1 = make_conv_unit(conv_id, cur, w, 3, stride, 1, /*relu=*/true,
                                 /*prunable=*/true, rng, base.str() + ".conv1");
        // conv2's output width is pinned by the residual join, so its
        // filters are never pruned; same for projections.
        b.conv2 = make_conv_unit(conv_id, w, w, 3, 1, 1, /*relu=*/false,
                                 /*prunable=*/false, rng, base.str() + ".conv2");
        if (transition) {
          b.projection =
              make_conv_unit(conv_id, cur, w, 1, stride, 0, /*relu=*/false,
                             /*prunable=*/false, rng, base.str() + ".proj");
        }
        b.prunable = !transition;
        net.blocks.push_back(std::move(b));
        cur = w;
      }
    }
  }

  const double head_stddev = std::sqrt(2.0 / cur);
  net.head.weight = Tensor::randn({cur, spec.num_classes}, rng, head_stddev)
                        .set_name("head.weight")
                        .set_requires_grad(true);
  net.head.bias = Tensor::zeros({spec.num_classes})
                      .set_name("head.bias")
                      .set_requires_grad(true);
  net.head.origin_inputs = iota_vec(cur);

  std::ostringstream tag;
  tag << arch_kind_name(spec.arch) << "-w" << spec.base_width << "x"
      << spec.width_multiplier << "-d";
  for (size_t i = 0; i < spec.stage_depths.size(); ++i) {
    if (i) tag << ".";
    tag << spec.stage_depths[i];
  }
  tag << "-c" << spec.num_classes;
  net.arch_tag = tag.str();
  net.revision = next_revision();

  validate_channels(net);
  return net;
}

Tensor forward(NetworkGraph& net, const Tensor& batch, Mode mode, Tape* tape,
               const ForwardHooks* hooks) {
  check(batch.ndim() == 4, "forward expects a 4-d batch, got ",
        shape_str(batch.shape()));
  check(batch.dim(1) == net.input_channels, "batch has ", batch.dim(1),
        " channels but the network expects ", net.input_channels);

  Tensor x = batch;
  if (!net.norm_mean.empty()) {
    std::vector<float> sc(net.norm_mean.size()), sh(net.norm_mean.size());
    for (size_t c = 0; c < sc.size(); ++c) {
      sc[c] = 1.0f / net.norm_std[c];
      sh[c] = -net.norm_mean[c] / net.norm_std[c];
    }
    x = channel_affine(x, sc, sh, tape);
  }

  for (TrunkStep& step : net.trunk) {
    if (auto* u = std::get_if<ConvUnit>(&step)) {
      x = run_conv_unit(*u, x, mode, tape, hooks);
    } else {
      const auto& p = std::get<MaxPoolStep>(step);
      x = max_pool2d(x, p.kernel, p.stride, tape);
    }
  }

  for (ResidualBlock& b : net.blocks) {
    Tensor branch = run_conv_unit(b.conv1, x, mode, tape, hooks);
    branch = run_conv_unit(b.conv2, branch, mode, tape, hooks);
    Tensor skip =
        b.projection ? run_conv_unit(*b.projection, x, mode, tape, hooks) : x;
    Tensor joined = add(branch, skip, tape);
    x = relu(joined, tape);
    if (hooks && hooks->on_block_output) hooks->on_block_output(b.block_id, x);
  }

  x = global_avg_pool(x, tape);
  return dense(x, net.head.weight, net.head.bias, tape);
}

NetworkGraph clone_network(const NetworkGraph& net) {
  NetworkGraph out = net;  // copies shapes, flags, provenance, bn state
  out.for_each_conv([](ConvUnit& u) {
    u.weight = u.weight.clone();
    u.bias = u.bias.clone();
    u.gamma = u.gamma.clone();
    u.beta = u.beta.clone();
  });
  out.head.weight = out.head.weight.clone();
  out.head.bias = out.head.bias.clone();
  return out;
}

std::vector<StructureEntry> structure_registry(const NetworkGraph& net) {
  std::vector<StructureEntry> out;
  auto& mutable_net = const_cast<NetworkGraph&>(net);
  mutable_net.for_each_conv([&](ConvUnit& u) {
    for (int f = 0; f < u.out_channels(); ++f) {
      out.push_back({StructureId{StructureId::Kind::Filter, u.conv_id, f},
                     u.prunable});
    }
  });
  for (const ResidualBlock& b : net.blocks) {
    out.push_back(
        {StructureId{StructureId::Kind::Block, b.block_id, -1}, b.prunable});
  }
  return out;
}

std::vector<StructureId> prunable_structures(const NetworkGraph& net,
                                             StructureId::Kind kind) {
  std::vector<StructureId> out;
  for (const StructureEntry& e : structure_registry(net)) {
    if (e.prunable && e.id.kind == kind) out.push_back(e.id);
  }
  return out;
}

void validate_channels(const NetworkGraph& net) {
  auto check_unit = [](const ConvUnit& u, int expected_in) {
    check(u.in_channels() == expected_in, "channel mismatch entering conv ",
          u.conv_id, ": producer delivers ", expected_in, " channels, conv expects ",
          u.in_channels());
    check(u.out_channels() >= 1, "conv ", u.conv_id, " has no filters left");
    check(u.gamma.dim(0) == u.out_channels() &&
              u.beta.dim(0) == u.out_channels() &&
              static_cast<int>(u.bn_state.running_mean.size()) ==
                  u.out_channels(),
          "batchnorm channels disagree with conv ", u.conv_id, " filters");
    check(static_cast<int>(u.origin_filters.size()) == u.out_channels() &&
              static_cast<int>(u.origin_inputs.size()) == u.in_channels(),
          "provenance maps disagree with conv ", u.conv_id, " shape");
  };

  int cur = net.input_channels;
  for (const TrunkStep& step : net.trunk) {
    if (const auto* u = std::get_if<ConvUnit>(&step)) {
      check_unit(*u, cur);
      cur = u->out_channels();
    }
  }
  for (const ResidualBlock& b : net.blocks) {
    check_unit(b.conv1, cur);
    check_unit(b.conv2, b.conv1.out_channels());
    if (b.projection) {
      check_unit(*b.projection, cur);
      check(b.projection->out_channels() == b.conv2.out_channels(),
            "projection of block ", b.block_id,
            " does not match the residual branch width");
    } else {
      check(b.conv2.out_channels() == cur, "residual join of block ",
            b.block_id, " has branch width ", b.conv2.out_channels(),
            " but skip width ", cur);
    }
    cur = b.out_channels();
  }
  check(net.head.weight.dim(0) == cur, "dense head expects ",
        net.head.weight.dim(0), " inputs but the body delivers ", cur);
  check(net.head.weight.dim(1) == net.num_classes,
        "dense head width disagrees with num_classes");
}

}  // namespace prunelab
