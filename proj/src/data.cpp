#include "prunelab/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace prunelab {

namespace {

constexpr std::int64_t kCifarRecordBytes = 3073;  // 1 label + 32*32*3 pixels
constexpr int kCifarSide = 32;
constexpr int kCifarChannels = 3;
constexpr int kCifarClasses = 10;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open file '", path, "'");
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  check(f.good(), "failed reading '", path, "'");
  return bytes;
}

std::uint32_t read_u32_be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

DatasetSplit subsample_stratified(const DatasetSplit& split, int per_class_cap,
                                  Rng& rng) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(split.class_count));
  for (int i = 0; i < split.size(); ++i) {
    by_class[static_cast<size_t>(split.labels[static_cast<size_t>(i)])].push_back(i);
  }
  std::vector<int> keep;
  for (auto& group : by_class) {
    // Fisher-Yates prefix shuffle, then restore original order within the
    // selection so the result is stable.
    for (size_t i = 0; i + 1 < group.size(); ++i) {
      const size_t j = i + static_cast<size_t>(rng.uniform_int(group.size() - i));
      std::swap(group[i], group[j]);
    }
    const size_t take = std::min<size_t>(group.size(),
                                         static_cast<size_t>(per_class_cap));
    keep.insert(keep.end(), group.begin(), group.begin() + static_cast<long>(take));
  }
  std::sort(keep.begin(), keep.end());

  const std::int64_t stride = static_cast<std::int64_t>(split.channels()) *
                              split.height() * split.width();
  std::vector<float> values(keep.size() * static_cast<size_t>(stride));
  std::vector<int> labels(keep.size());
  const float* src = split.images.values().data();
  for (size_t i = 0; i < keep.size(); ++i) {
    std::copy(src + keep[i] * stride, src + (keep[i] + 1) * stride,
              values.data() + static_cast<std::int64_t>(i) * stride);
    labels[i] = split.labels[static_cast<size_t>(keep[i])];
  }
  DatasetSplit out;
  out.images = Tensor::from_values({static_cast<int>(keep.size()),
                                    split.channels(), split.height(),
                                    split.width()},
                                   std::move(values));
  out.labels = std::move(labels);
  out.class_count = split.class_count;
  out.name = split.name + "-subset";
  return out;
}

DatasetSplit concat_splits(const std::vector<DatasetSplit>& parts) {
  check(!parts.empty(), "no dataset parts to concatenate");
  std::int64_t total = 0;
  for (const auto& p : parts) total += p.size();
  const auto& first = parts.front();
  const std::int64_t stride = static_cast<std::int64_t>(first.channels()) *
                              first.height() * first.width();
  std::vector<float> values(static_cast<size_t>(total * stride));
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(total));
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto v = p.images.values();
    std::copy(v.begin(), v.end(), values.begin() + off);
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
    off += p.images.numel();
  }
  DatasetSplit out;
  out.images = Tensor::from_values({static_cast<int>(total), first.channels(),
                                    first.height(), first.width()},
                                   std::move(values));
  out.labels = std::move(labels);
  out.class_count = first.class_count;
  out.name = first.name;
  return out;
}

}  // namespace

DatasetSplit DatasetSplit::slice(int begin, int end) const {
  check(begin >= 0 && end <= size() && begin <= end, "slice [", begin, ",", end,
        ") out of range for split of size ", size());
  const std::int64_t stride =
      static_cast<std::int64_t>(channels()) * height() * width();
  const float* src = images.values().data();
  std::vector<float> values(src + begin * stride, src + end * stride);
  DatasetSplit out;
  out.images = Tensor::from_values({end - begin, channels(), height(), width()},
                                   std::move(values));
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.class_count = class_count;
  out.name = name;
  out.augmented = augmented;
  return out;
}

std::int64_t cifar10_record_count(std::int64_t bytes) {
  check(bytes % kCifarRecordBytes == 0,
        "file size ", bytes, " is not a whole number of ", kCifarRecordBytes,
        "-byte records; trailing partial record starts at byte offset ",
        bytes - bytes % kCifarRecordBytes);
  return bytes / kCifarRecordBytes;
}

DatasetSplit load_cifar10_batch_file(const std::string& path) {
  const auto bytes = read_file(path);
  const std::int64_t count = cifar10_record_count(static_cast<std::int64_t>(bytes.size()));
  const std::int64_t pixels = static_cast<std::int64_t>(kCifarChannels) *
                              kCifarSide * kCifarSide;
  std::vector<float> values(static_cast<size_t>(count * pixels));
  std::vector<int> labels(static_cast<size_t>(count));
  for (std::int64_t r = 0; r < count; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    const int label = rec[0];
    check(label < kCifarClasses, "label byte ", label,
          " out of range at byte offset ", r * kCifarRecordBytes, " in '", path,
          "'");
    labels[static_cast<size_t>(r)] = label;
    float* dst = values.data() + r * pixels;
    for (std::int64_t k = 0; k < pixels; ++k) {
      dst[k] = static_cast<float>(rec[1 + k]) / 255.0f;
    }
  }
  DatasetSplit out;
  out.images = Tensor::from_values(
      {static_cast<int>(count), kCifarChannels, kCifarSide, kCifarSide},
      std::move(values));
  out.labels = std::move(labels);
  out.class_count = kCifarClasses;
  out.name = std::filesystem::path(path).filename().string();
  return out;
}

Cifar10 load_cifar10_binary(const std::string& dir, int per_class_cap,
                            std::uint64_t seed) {
  namespace fs = std::filesystem;
  check(fs::is_directory(dir), "'", dir, "' is not a directory");
  std::vector<DatasetSplit> train_parts;
  for (int i = 1; i <= 5; ++i) {
    const fs::path p = fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(p)) train_parts.push_back(load_cifar10_batch_file(p.string()));
  }
  check(!train_parts.empty(), "no data_batch_*.bin files under '", dir, "'");
  const fs::path test_path = fs::path(dir) / "test_batch.bin";
  check(fs::exists(test_path), "missing test_batch.bin under '", dir, "'");

  Cifar10 out;
  out.train = concat_splits(train_parts);
  out.train.name = "cifar10-train";
  out.test = load_cifar10_batch_file(test_path.string());
  out.test.name = "cifar10-test";
  if (per_class_cap > 0) {
    Rng rng(mix_seed(seed, 11));
    out.train = subsample_stratified(out.train, per_class_cap, rng);
    out.test = subsample_stratified(out.test, per_class_cap, rng);
    out.train.name = "cifar10-train";
    out.test.name = "cifar10-test";
  }
  return out;
}

DatasetSplit load_idx(const std::string& images_path,
                      const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lbl = read_file(labels_path);
  check(img.size() >= 16, "IDX image file '", images_path, "' too short");
  check(lbl.size() >= 8, "IDX label file '", labels_path, "' too short");
  const std::uint32_t img_magic = read_u32_be(img.data());
  const std::uint32_t lbl_magic = read_u32_be(lbl.data());
  check(img_magic == 0x00000803u, "bad IDX image magic 0x", std::hex, img_magic,
        " (expected 0x803)");
  check(lbl_magic == 0x00000801u, "bad IDX label magic 0x", std::hex, lbl_magic,
        " (expected 0x801)");
  const std::int64_t n = read_u32_be(img.data() + 4);
  const std::int64_t rows = read_u32_be(img.data() + 8);
  const std::int64_t cols = read_u32_be(img.data() + 12);
  const std::int64_t n_lbl = read_u32_be(lbl.data() + 4);
  check(n == n_lbl, "IDX image count ", n, " does not match label count ", n_lbl);
  check(static_cast<std::int64_t>(img.size()) == 16 + n * rows * cols,
        "IDX image payload size mismatch in '", images_path, "'");
  check(static_cast<std::int64_t>(lbl.size()) == 8 + n,
        "IDX label payload size mismatch in '", labels_path, "'");

  std::vector<float> values(static_cast<size_t>(n * rows * cols));
  for (size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(img[16 + i]) / 255.0f;
  }
  std::vector<int> labels(static_cast<size_t>(n));
  int max_label = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    labels[static_cast<size_t>(i)] = lbl[8 + static_cast<size_t>(i)];
    max_label = std::max(max_label, labels[static_cast<size_t>(i)]);
  }
  DatasetSplit out;
  out.images = Tensor::from_values(
      {static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)},
      std::move(values));
  out.labels = std::move(labels);
  out.class_count = max_label + 1;
  out.name = std::filesystem::path(images_path).filename().string();
  return out;
}

namespace {

void draw_shape(float* img, int side, int cls, Rng& rng, double noise_sigma) {
  float bg[3], fg[3];
  for (int c = 0; c < 3; ++c) bg[c] = static_cast<float>(rng.uniform() * 0.3);
  for (int c = 0; c < 3; ++c)
    fg[c] = static_cast<float>(0.55 + rng.uniform() * 0.45);

  const int min_s = std::max(5, side / 3);
  const int max_s = std::max(min_s + 1, (3 * side) / 4);
  const int s = min_s + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(max_s - min_s + 1)));
  const int r0 = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(side - s + 1)));
  const int c0 = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(side - s + 1)));
  const int t = std::max(1, s / 4);
  const int hw = std::max(0, t / 2);
  const int center = s / 2;

  const std::int64_t plane = static_cast<std::int64_t>(side) * side;
  for (int c = 0; c < 3; ++c) {
    float* p = img + c * plane;
    for (std::int64_t k = 0; k < plane; ++k) p[k] = bg[c];
  }
  for (int dr = 0; dr < s; ++dr) {
    for (int dc = 0; dc < s; ++dc) {
      bool on = false;
      switch (cls) {
        case 0:  // filled square
          on = true;
          break;
        case 1:  // hollow square
          on = dr < t || dr >= s - t || dc < t || dc >= s - t;
          break;
        case 2:  // cross
          on = std::abs(dr - center) <= hw || std::abs(dc - center) <= hw;
          break;
        default:  // diagonal stripe
          on = std::abs(dr - dc) <= t;
          break;
      }
      if (!on) continue;
      const std::int64_t at = static_cast<std::int64_t>(r0 + dr) * side + (c0 + dc);
      for (int c = 0; c < 3; ++c) img[c * plane + at] = fg[c];
    }
  }
  if (noise_sigma > 0.0) {
    for (std::int64_t k = 0; k < 3 * plane; ++k) {
      img[k] = static_cast<float>(img[k] + rng.normal() * noise_sigma);
    }
  }
  for (std::int64_t k = 0; k < 3 * plane; ++k) {
    img[k] = std::clamp(img[k], 0.0f, 1.0f);
  }
}

DatasetSplit generate_shapes(int n_per_class, int side, int classes,
                             double noise_sigma, Rng& rng,
                             const std::string& name) {
  const int total = n_per_class * classes;
  const std::int64_t stride = static_cast<std::int64_t>(3) * side * side;
  std::vector<float> values(static_cast<size_t>(total * stride));
  std::vector<int> labels(static_cast<size_t>(total));
  int idx = 0;
  for (int cls = 0; cls < classes; ++cls) {
    for (int i = 0; i < n_per_class; ++i, ++idx) {
      labels[static_cast<size_t>(idx)] = cls;
      draw_shape(values.data() + idx * stride, side, cls, rng, noise_sigma);
    }
  }
  // Mix the classes so any prefix of the split is class-balanced in
  // expectation (calibration samples take prefixes).
  std::vector<int> order(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform_int(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<float> shuffled(values.size());
  std::vector<int> shuffled_labels(labels.size());
  for (size_t i = 0; i < order.size(); ++i) {
    std::copy(values.begin() + order[i] * stride,
              values.begin() + (order[i] + 1) * stride,
              shuffled.begin() + static_cast<std::int64_t>(i) * stride);
    shuffled_labels[i] = labels[static_cast<size_t>(order[i])];
  }
  DatasetSplit out;
  out.images = Tensor::from_values({total, 3, side, side}, std::move(shuffled));
  out.labels = std::move(shuffled_labels);
  out.class_count = classes;
  out.name = name;
  return out;
}

}  // namespace

SynthShapes synth_shapes(int n_per_class, int image_side, double noise_sigma,
                         std::uint64_t seed, int classes) {
  check(image_side >= 8, "image_side must be at least 8, got ", image_side);
  check(n_per_class >= 1, "n_per_class must be positive");
  check(classes >= 2 && classes <= 4, "synth_shapes supports 2..4 classes, got ",
        classes);
  SynthShapes out;
  Rng train_rng(mix_seed(seed, 1));
  Rng test_rng(mix_seed(seed, 2));
  out.train = generate_shapes(n_per_class, image_side, classes, noise_sigma,
                              train_rng, "synth-train");
  out.test = generate_shapes(std::max(1, n_per_class / 4), image_side, classes,
                             noise_sigma, test_rng, "synth-test");
  return out;
}

DatasetSplit normalize(const DatasetSplit& split, const std::vector<float>& mean,
                       const std::vector<float>& std) {
  check(static_cast<int>(mean.size()) == split.channels() &&
            static_cast<int>(std.size()) == split.channels(),
        "normalization constants must have one entry per channel");
  for (float s : std) check(s > 0.0f, "normalization std must be positive, got ", s);

  DatasetSplit out = split;
  out.images = split.images.clone();
  float* v = out.images.values_mut().data();
  const std::int64_t plane =
      static_cast<std::int64_t>(split.height()) * split.width();
  for (int n = 0; n < split.size(); ++n) {
    for (int c = 0; c < split.channels(); ++c) {
      float* p = v + (static_cast<std::int64_t>(n) * split.channels() + c) * plane;
      const float m = mean[static_cast<size_t>(c)];
      const float s = std[static_cast<size_t>(c)];
      for (std::int64_t k = 0; k < plane; ++k) p[k] = (p[k] - m) / s;
    }
  }
  return out;
}

void channel_statistics(const DatasetSplit& split, std::vector<float>& mean,
                        std::vector<float>& std) {
  const int c = split.channels();
  mean.assign(static_cast<size_t>(c), 0.0f);
  std.assign(static_cast<size_t>(c), 0.0f);
  const std::int64_t plane =
      static_cast<std::int64_t>(split.height()) * split.width();
  const std::int64_t per_ch = static_cast<std::int64_t>(split.size()) * plane;
  check(per_ch > 0, "cannot compute statistics of an empty split");
  const float* v = split.images.values().data();
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int n = 0; n < split.size(); ++n) {
      const float* p = v + (static_cast<std::int64_t>(n) * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
    }
    const double mu = acc / static_cast<double>(per_ch);
    double vacc = 0.0;
    for (int n = 0; n < split.size(); ++n) {
      const float* p = v + (static_cast<std::int64_t>(n) * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) {
        const double d = p[k] - mu;
        vacc += d * d;
      }
    }
    mean[static_cast<size_t>(ch)] = static_cast<float>(mu);
    std[static_cast<size_t>(ch)] =
        static_cast<float>(std::sqrt(vacc / static_cast<double>(per_ch)));
  }
}

DatasetSplit augment(const DatasetSplit& batch, const AugmentationPolicy& policy,
                     std::uint64_t seed) {
  check(policy.pad_crop >= 0, "pad_crop must be non-negative");
  check(policy.hflip_prob >= 0.0f && policy.hflip_prob <= 1.0f,
        "hflip_prob must lie in [0,1]");

  DatasetSplit out = batch;
  out.images = batch.images.clone();
  out.augmented = true;
  Rng rng(seed);
  const int c = batch.channels(), h = batch.height(), w = batch.width();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const int p = policy.pad_crop;
  const float* src = batch.images.values().data();
  float* dst = out.images.values_mut().data();

  for (int n = 0; n < batch.size(); ++n) {
    int dr = 0, dc = 0;
    if (p > 0) {
      dr = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(2 * p + 1)));
      dc = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(2 * p + 1)));
    }
    const bool flip = policy.hflip_prob > 0.0f && rng.bernoulli(policy.hflip_prob);
    for (int ch = 0; ch < c; ++ch) {
      const float* sp = src + (static_cast<std::int64_t>(n) * c + ch) * plane;
      float* dp = dst + (static_cast<std::int64_t>(n) * c + ch) * plane;
      for (int r = 0; r < h; ++r) {
        const int sr = r + dr - p;
        for (int cc = 0; cc < w; ++cc) {
          const int read_col = flip ? w - 1 - cc : cc;
          const int sc = read_col + dc - p;
          dp[static_cast<std::int64_t>(r) * w + cc] =
              (sr >= 0 && sr < h && sc >= 0 && sc < w)
                  ? sp[static_cast<std::int64_t>(sr) * w + sc]
                  : 0.0f;
        }
      }
    }
  }
  return out;
}

}  // namespace prunelab
