#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

/// Images live in [0,1] raw pixel space; normalization is folded into the
/// network forward pass. `augmented` marks data that went through the
/// training-time augmentation and must never reach evaluation or attacks.
struct DatasetSplit {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  int class_count = 0;
  std::string name;
  bool augmented = false;

  int size() const { return images.defined() ? images.dim(0) : 0; }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }

  DatasetSplit slice(int begin, int end) const;
};

struct AugmentationPolicy {
  int pad_crop = 2;      // zero-pad pixels before the random crop
  float hflip_prob = 0.5f;
};

/// CIFAR-10 binary record layout: 1 label byte + 3072 pixel bytes.
/// Returns the number of records in a well-formed file of `bytes` bytes.
std::int64_t cifar10_record_count(std::int64_t bytes);

/// Reads one CIFAR-10 binary batch file.
DatasetSplit load_cifar10_batch_file(const std::string& path);

struct Cifar10 {
  DatasetSplit train;
  DatasetSplit test;
};

/// Loads the standard data_batch_1..5.bin / test_batch.bin layout from a
/// directory. A positive per-class cap stratified-subsamples the train split
/// with the given seed.
Cifar10 load_cifar10_binary(const std::string& dir, int per_class_cap,
                            std::uint64_t seed);

/// Big-endian IDX image/label pair (magics 0x803 / 0x801); grayscale C=1.
DatasetSplit load_idx(const std::string& images_path,
                      const std::string& labels_path);

struct SynthShapes {
  DatasetSplit train;
  DatasetSplit test;
};

/// Self-contained 4-class corpus: filled square, hollow square, cross,
/// diagonal stripe, drawn at random position/scale/color over a dark
/// background plus Gaussian pixel noise. Deterministic per seed; class
/// histogram exactly uniform. The test split draws n_per_class/4 (at least
/// one) fresh samples per class.
SynthShapes synth_shapes(int n_per_class, int image_side, double noise_sigma,
                         std::uint64_t seed, int classes = 4);

/// Per-channel (x - mean) / std over a whole split (std must be positive).
DatasetSplit normalize(const DatasetSplit& split,
                       const std::vector<float>& mean,
                       const std::vector<float>& std);

/// Per-channel mean/std of a split, double-precision accumulation.
void channel_statistics(const DatasetSplit& split, std::vector<float>& mean,
                        std::vector<float>& std);

/// Zero-pads by pad_crop, crops back to the original size at a uniform
/// random offset, and flips horizontally with hflip_prob; all per image.
/// Marks the result as augmented.
DatasetSplit augment(const DatasetSplit& batch, const AugmentationPolicy& policy,
                     std::uint64_t seed);

}  // namespace prunelab
