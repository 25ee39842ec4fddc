#include "prunelab/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace prunelab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kFormatVersion = 1;

void write_floats(std::ofstream& os, std::span<const float> v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
  } else {
    for (float f : v) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
      const unsigned char b[4] = {
          static_cast<unsigned char>(u & 0xff),
          static_cast<unsigned char>((u >> 8) & 0xff),
          static_cast<unsigned char>((u >> 16) & 0xff),
          static_cast<unsigned char>((u >> 24) & 0xff)};
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

void read_floats(std::ifstream& is, std::span<float> v, const std::string& path) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  } else {
    for (float& f : v) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                              (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) |
                              (static_cast<std::uint32_t>(b[3]) << 24);
      f = std::bit_cast<float>(u);
    }
  }
  check(is.good(), "truncated parameter blob '", path, "'");
}

std::string unit_prefix(const ConvUnit& u) {
  std::string n = u.weight.name();
  const auto pos = n.rfind(".weight");
  return pos == std::string::npos ? ("conv" + std::to_string(u.conv_id)) : n.substr(0, pos);
}

json conv_to_json(const ConvUnit& u) {
  return json{{"conv_id", u.conv_id},
              {"out", u.out_channels()},
              {"in", u.in_channels()},
              {"kernel", u.weight.dim(2)},
              {"stride", u.stride},
              {"padding", u.padding},
              {"relu", u.relu_after},
              {"prunable", u.prunable},
              {"bn_initialized", u.bn_state.initialized},
              {"name", unit_prefix(u)},
              {"origin_filters", u.origin_filters},
              {"origin_inputs", u.origin_inputs}};
}

ConvUnit conv_from_json(const json& j) {
  ConvUnit u;
  u.conv_id = j.at("conv_id").get<int>();
  const int out = j.at("out").get<int>();
  const int in = j.at("in").get<int>();
  const int k = j.at("kernel").get<int>();
  const std::string name = j.at("name").get<std::string>();
  u.weight = Tensor::zeros({out, in, k, k}).set_name(name + ".weight").set_requires_grad(true);
  u.bias = Tensor::zeros({out}).set_name(name + ".bias").set_requires_grad(true);
  u.gamma = Tensor::zeros({out}).set_name(name + ".gamma").set_requires_grad(true);
  u.beta = Tensor::zeros({out}).set_name(name + ".beta").set_requires_grad(true);
  u.bn_state = BatchNormState::identity(out);
  u.bn_state.initialized = j.at("bn_initialized").get<bool>();
  u.stride = j.at("stride").get<int>();
  u.padding = j.at("padding").get<int>();
  u.relu_after = j.at("relu").get<bool>();
  u.prunable = j.at("prunable").get<bool>();
  u.origin_filters = j.at("origin_filters").get<std::vector<int>>();
  u.origin_inputs = j.at("origin_inputs").get<std::vector<int>>();
  return u;
}

// Blob tensor visitation order; shared by save, load, and the manifest
// shapes list.
template <typename Fn>
void for_each_blob_tensor(NetworkGraph& net, Fn&& fn) {
  net.for_each_conv([&](ConvUnit& u) {
    const std::string prefix = unit_prefix(u);
    fn(prefix + ".weight", u.weight.values_mut(), u.weight.shape());
    fn(prefix + ".bias", u.bias.values_mut(), u.bias.shape());
    fn(prefix + ".gamma", u.gamma.values_mut(), u.gamma.shape());
    fn(prefix + ".beta", u.beta.values_mut(), u.beta.shape());
    fn(prefix + ".running_mean", std::span<float>(u.bn_state.running_mean),
       Shape{u.out_channels()});
    fn(prefix + ".running_var", std::span<float>(u.bn_state.running_var),
       Shape{u.out_channels()});
  });
  fn("head.weight", net.head.weight.values_mut(), net.head.weight.shape());
  fn("head.bias", net.head.bias.values_mut(), net.head.bias.shape());
}

json build_to_json(const BuildSpec& b) {
  return json{{"arch", arch_kind_name(b.arch)},
              {"width_multiplier", b.width_multiplier},
              {"base_width", b.base_width},
              {"stage_depths", b.stage_depths},
              {"num_classes", b.num_classes},
              {"input_channels", b.input_channels},
              {"seed", b.seed}};
}

BuildSpec build_from_json(const json& j) {
  BuildSpec b;
  b.arch = arch_kind_from_name(j.at("arch").get<std::string>());
  b.width_multiplier = j.at("width_multiplier").get<double>();
  b.base_width = j.at("base_width").get<int>();
  b.stage_depths = j.at("stage_depths").get<std::vector<int>>();
  b.num_classes = j.at("num_classes").get<int>();
  b.input_channels = j.at("input_channels").get<int>();
  b.seed = j.at("seed").get<std::uint64_t>();
  return b;
}

}  // namespace

void save_checkpoint(NetworkGraph& net, const std::string& dir,
                     std::uint64_t seed,
                     const std::vector<std::vector<float>>* velocities) {
  fs::create_directories(dir);

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["arch_tag"] = net.arch_tag;
  manifest["arch"] = arch_kind_name(net.arch);
  manifest["build"] = build_to_json(net.build_spec);
  manifest["num_classes"] = net.num_classes;
  manifest["input_channels"] = net.input_channels;
  manifest["epoch"] = net.epoch_counter;
  manifest["seed"] = seed;
  manifest["mean"] = net.norm_mean;
  manifest["std"] = net.norm_std;
  manifest["revision"] = net.revision;

  json trunk = json::array();
  for (TrunkStep& step : net.trunk) {
    if (auto* u = std::get_if<ConvUnit>(&step)) {
      json c = conv_to_json(*u);
      c["type"] = "conv";
      trunk.push_back(std::move(c));
    } else {
      const auto& p = std::get<MaxPoolStep>(step);
      trunk.push_back(json{{"type", "pool"}, {"kernel", p.kernel}, {"stride", p.stride}});
    }
  }
  manifest["trunk"] = std::move(trunk);

  json blocks = json::array();
  for (ResidualBlock& b : net.blocks) {
    json jb{{"block_id", b.block_id},
            {"stage", b.stage},
            {"prunable", b.prunable},
            {"conv1", conv_to_json(b.conv1)},
            {"conv2", conv_to_json(b.conv2)}};
    jb["projection"] = b.projection ? conv_to_json(*b.projection) : json(nullptr);
    blocks.push_back(std::move(jb));
  }
  manifest["blocks"] = std::move(blocks);
  manifest["head"] = json{{"in", net.head.weight.dim(0)},
                          {"out", net.head.weight.dim(1)},
                          {"origin_inputs", net.head.origin_inputs}};

  json shapes = json::array();
  std::int64_t total_floats = 0;
  for_each_blob_tensor(net, [&](const std::string& name, std::span<float> v,
                                const Shape& shape) {
    shapes.push_back(json{{"name", name}, {"dims", shape}});
    total_floats += static_cast<std::int64_t>(v.size());
  });
  manifest["shapes"] = std::move(shapes);
  manifest["param_floats"] = total_floats;
  manifest["has_optimizer_state"] = velocities != nullptr;

  {
    std::ofstream mf(fs::path(dir) / "manifest.json");
    check(mf.good(), "cannot write manifest under '", dir, "'");
    mf << manifest.dump(2) << "\n";
  }
  {
    std::ofstream pf(fs::path(dir) / "params.bin", std::ios::binary);
    check(pf.good(), "cannot write params.bin under '", dir, "'");
    for_each_blob_tensor(net, [&](const std::string&, std::span<float> v,
                                  const Shape&) { write_floats(pf, v); });
  }
  if (velocities) {
    std::ofstream of(fs::path(dir) / "optim.bin", std::ios::binary);
    check(of.good(), "cannot write optim.bin under '", dir, "'");
    const std::vector<Tensor> params = net.trainable_params();
    check(velocities->size() == params.size(),
          "velocity buffer count does not match the trainable parameters");
    for (size_t i = 0; i < params.size(); ++i) {
      const std::vector<float>& v = (*velocities)[i];
      if (v.empty()) {
        const std::vector<float> zeros(static_cast<size_t>(params[i].numel()), 0.0f);
        write_floats(of, zeros);
      } else {
        check(v.size() == static_cast<size_t>(params[i].numel()),
              "velocity buffer ", i, " has the wrong size");
        write_floats(of, v);
      }
    }
  }
}

NetworkGraph load_checkpoint(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream mf(mpath);
  check(mf.good(), "missing checkpoint manifest '", mpath.string(), "'");
  json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    fail("malformed checkpoint manifest '", mpath.string(), "': ", e.what());
  }
  const int version = manifest.at("format_version").get<int>();
  check(version == kFormatVersion, "unsupported checkpoint format_version ",
        version, " (expected ", kFormatVersion, ")");

  NetworkGraph net;
  net.arch = arch_kind_from_name(manifest.at("arch").get<std::string>());
  net.arch_tag = manifest.at("arch_tag").get<std::string>();
  net.build_spec = build_from_json(manifest.at("build"));
  net.num_classes = manifest.at("num_classes").get<int>();
  net.input_channels = manifest.at("input_channels").get<int>();
  net.epoch_counter = manifest.at("epoch").get<int>();
  net.revision = next_revision();
  net.norm_mean = manifest.at("mean").get<std::vector<float>>();
  net.norm_std = manifest.at("std").get<std::vector<float>>();

  for (const json& step : manifest.at("trunk")) {
    if (step.at("type") == "conv") {
      net.trunk.emplace_back(conv_from_json(step));
    } else {
      net.trunk.emplace_back(MaxPoolStep{step.at("kernel").get<int>(),
                                         step.at("stride").get<int>()});
    }
  }
  for (const json& jb : manifest.at("blocks")) {
    ResidualBlock b;
    b.block_id = jb.at("block_id").get<int>();
    b.stage = jb.at("stage").get<int>();
    b.prunable = jb.at("prunable").get<bool>();
    b.conv1 = conv_from_json(jb.at("conv1"));
    b.conv2 = conv_from_json(jb.at("conv2"));
    if (!jb.at("projection").is_null()) {
      b.projection = conv_from_json(jb.at("projection"));
    }
    net.blocks.push_back(std::move(b));
  }
  const json& jh = manifest.at("head");
  net.head.weight = Tensor::zeros({jh.at("in").get<int>(), jh.at("out").get<int>()})
                        .set_name("head.weight")
                        .set_requires_grad(true);
  net.head.bias = Tensor::zeros({jh.at("out").get<int>()})
                      .set_name("head.bias")
                      .set_requires_grad(true);
  net.head.origin_inputs = jh.at("origin_inputs").get<std::vector<int>>();

  // Validate the declared shapes against both the reconstructed graph and
  // the blob size before reading any value.
  const json& shapes = manifest.at("shapes");
  std::int64_t expected_floats = 0;
  size_t shape_idx = 0;
  for_each_blob_tensor(net, [&](const std::string& name, std::span<float> v,
                                const Shape& shape) {
    check(shape_idx < shapes.size(), "manifest shapes list is shorter than the graph");
    const json& s = shapes[shape_idx++];
    check(s.at("name").get<std::string>() == name &&
              s.at("dims").get<Shape>() == shape,
          "manifest shape entry ", shape_idx - 1, " ('",
          s.at("name").get<std::string>(), "') disagrees with the graph tensor '",
          name, "'");
    expected_floats += static_cast<std::int64_t>(v.size());
  });
  check(shape_idx == shapes.size(), "manifest shapes list is longer than the graph");
  check(expected_floats == manifest.at("param_floats").get<std::int64_t>(),
        "manifest param_floats disagrees with the declared shapes");

  const fs::path ppath = fs::path(dir) / "params.bin";
  check(fs::exists(ppath), "missing parameter blob '", ppath.string(), "'");
  const std::int64_t blob_bytes = static_cast<std::int64_t>(fs::file_size(ppath));
  check(blob_bytes == expected_floats * static_cast<std::int64_t>(sizeof(float)),
        "parameter blob '", ppath.string(), "' holds ", blob_bytes,
        " bytes but the manifest shapes require ",
        expected_floats * static_cast<std::int64_t>(sizeof(float)));

  std::ifstream pf(ppath, std::ios::binary);
  check(pf.good(), "cannot read '", ppath.string(), "'");
  for_each_blob_tensor(net, [&](const std::string&, std::span<float> v,
                                const Shape&) {
    read_floats(pf, v, ppath.string());
  });

  validate_channels(net);
  return net;
}

bool checkpoint_has_optimizer_state(const std::string& dir) {
  return fs::exists(fs::path(dir) / "optim.bin");
}

void load_optimizer_state(const std::string& dir, NetworkGraph& net,
                          SgdOptimizer& optimizer) {
  const fs::path opath = fs::path(dir) / "optim.bin";
  check(fs::exists(opath), "checkpoint '", dir, "' has no optimizer state");
  std::ifstream of(opath, std::ios::binary);
  check(of.good(), "cannot read '", opath.string(), "'");
  for (Tensor& p : net.trainable_params()) {
    std::vector<float> v(static_cast<size_t>(p.numel()));
    read_floats(of, v, opath.string());
    optimizer.set_velocity(p, std::move(v));
  }
}

std::uint64_t checkpoint_seed(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  check(mf.good(), "missing checkpoint manifest under '", dir, "'");
  json manifest;
  mf >> manifest;
  return manifest.at("seed").get<std::uint64_t>();
}

}  // namespace prunelab
