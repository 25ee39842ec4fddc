#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunelab/attacks.hpp"
#include "prunelab/errors.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

/// Invalid or missing configuration (CLI exit code 2); runtime failures keep
/// the plain Error (exit code 3).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | cifar10 | idx
  // synthetic
  int n_per_class = 256;
  int image_side = 16;
  double noise_sigma = 0.05;
  int classes = 4;
  // cifar10
  std::string path;
  int subset_per_class = 0;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

struct ModelConfig {
  std::string arch = "mini_resnet";
  int base_width = 8;
  double width_multiplier = 1.0;
  std::vector<int> stage_depths = {2, 2, 2};
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int pad_crop = -1;  // -1: 2 below 32px, 4 at or above
  double hflip_prob = 0.5;
  std::vector<int> snapshot_epochs;  // empty: 25% of the budget
};

struct PruneConfig {
  std::vector<std::string> criteria = {"pls"};
  std::vector<std::string> structures = {"filters"};
  std::vector<std::string> schemes = {"finetune"};
  double ratio = 0.1;
  int iterations = 1;
  int finetune_epochs = 8;
  int pls_components = 2;
  int calibration_size = 512;
  int rewind_epoch = 0;  // 0: default snapshot epoch
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  PruneConfig prune;
  std::vector<AttackSpec> attacks;  // empty: defaults for the image size
  std::uint64_t attack_seed = 0;
  std::string normalize = "auto";  // auto | none
  int eval_workers = 1;

  /// Validates and fails with the offending field path.
  void validate() const;

  int snapshot_epoch_default() const;
  int pad_crop_effective() const;
  std::vector<AttackSpec> attacks_effective() const;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json_text(const ExperimentConfig& config);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// FNV-1a 64 over the canonical serialized form.
std::string config_hash(const ExperimentConfig& config);

/// "fgsm:0.0314,occlusion:8,gaussian_noise:4" -> attack specs. A bare name
/// takes the image-size default parameter.
std::vector<AttackSpec> parse_attack_list(const std::string& text,
                                          int image_side);

AttackSpec default_attack(const std::string& name, int image_side);

}  // namespace prunelab
