#pragma once

#include <cmath>
#include <vector>

#include "prunelab/network.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/tensor.hpp"

namespace testutil {

inline prunelab::Tensor random_tensor(prunelab::Shape shape, std::uint64_t seed,
                                      double scale = 1.0, double offset = 0.0) {
  prunelab::Rng rng(seed);
  prunelab::Tensor t = prunelab::Tensor::zeros(std::move(shape));
  for (float& v : t.values_mut()) {
    v = static_cast<float>(rng.normal() * scale + offset);
  }
  return t;
}

/// Random values in [0,1], shaped like an image batch.
inline prunelab::Tensor random_image_batch(int n, int c, int side,
                                           std::uint64_t seed) {
  prunelab::Rng rng(seed);
  prunelab::Tensor t = prunelab::Tensor::zeros({n, c, side, side});
  for (float& v : t.values_mut()) v = static_cast<float>(rng.uniform());
  return t;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

inline double max_abs_diff(std::span<const float> a,
                           const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

inline std::vector<int> random_labels(int n, int classes, std::uint64_t seed) {
  prunelab::Rng rng(seed);
  std::vector<int> labels(static_cast<size_t>(n));
  for (int& l : labels) {
    l = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(classes)));
  }
  return labels;
}

inline prunelab::BuildSpec tiny_vgg_spec(std::uint64_t seed) {
  prunelab::BuildSpec spec;
  spec.arch = prunelab::ArchKind::MiniVgg;
  spec.base_width = 2;
  spec.stage_depths = {2, 2, 2};
  spec.num_classes = 4;
  spec.input_channels = 3;
  spec.seed = seed;
  return spec;
}

inline prunelab::BuildSpec tiny_resnet_spec(std::uint64_t seed) {
  prunelab::BuildSpec spec;
  spec.arch = prunelab::ArchKind::MiniResNet;
  spec.base_width = 4;
  spec.stage_depths = {2, 2, 2};
  spec.num_classes = 4;
  spec.input_channels = 3;
  spec.seed = seed;
  return spec;
}

}  // namespace testutil
