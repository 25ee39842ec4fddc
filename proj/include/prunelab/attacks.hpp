#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunelab/data.hpp"
#include "prunelab/network.hpp"

namespace prunelab {

enum class CorruptionName { GaussianNoise, BoxBlur, Contrast, Brightness };

std::string corruption_name_str(CorruptionName name);
CorruptionName corruption_name_from_str(const std::string& s);

/// Attack description. FGSM carries the perturbation bound alpha in raw
/// [0,1] pixel units; without an explicit source model it binds to the
/// victim at evaluation time (white-box).
struct AttackSpec {
  enum class Kind { Fgsm, Occlusion, Corruption };
  Kind kind = Kind::Fgsm;
  float alpha = 8.0f / 255.0f;                        // FGSM
  int side_px = 0;                                     // Occlusion
  CorruptionName corruption = CorruptionName::GaussianNoise;
  int severity = 4;                                    // 1..5
  std::string source_model_tag;                        // informational

  static AttackSpec fgsm(float alpha);
  static AttackSpec occlusion(int side_px);
  static AttackSpec corrupt(CorruptionName name, int severity);

  /// Canonical short tag used as the report key ("fgsm", "occlusion",
  /// corruption name).
  std::string tag() const;
  /// Tag plus parameters, for provenance records.
  std::string describe() const;

  void validate() const;
};

/// Crafted adversarial images plus provenance; values stay in [0,1] and the
/// shape matches the clean batch.
struct AdversarialBatch {
  Tensor images;
  std::vector<int> clean_labels;
  AttackSpec provenance;
  std::string source_tag;
};

/// Severity tables for the four corruptions (index severity-1).
extern const float kGaussianNoiseSigma[5];
extern const int kBoxBlurKernel[5];
extern const float kContrastFactor[5];
extern const float kBrightnessDelta[5];

/// x' = clip_[0,1](x + alpha * sign(d loss / d x)) with the gradient taken
/// through the source network in eval mode (composed normalization, fixed
/// batchnorm statistics). sign(0) = 0; source parameters are untouched.
AdversarialBatch fgsm(NetworkGraph& source, const Tensor& images,
                      const std::vector<int>& labels, float alpha);

/// Zeroes the centered side_px x side_px square across all channels.
AdversarialBatch occlude_center(const Tensor& images,
                                const std::vector<int>& labels, int side_px);

/// Severity-parameterized semantic-preserving corruption; deterministic per
/// seed (gaussian_noise is the only stochastic one).
AdversarialBatch corrupt(const Tensor& images, const std::vector<int>& labels,
                         CorruptionName name, int severity, std::uint64_t seed);

/// Dispatch on spec.kind. `victim` supplies the FGSM source when the spec
/// has none bound.
AdversarialBatch craft(NetworkGraph& victim, const DatasetSplit& data,
                       const AttackSpec& spec, std::uint64_t seed);

/// Adversarial batch export (manifest.json + images.bin + labels.bin);
/// readable back for cross-run transfer studies.
void save_adversarial_batch(const AdversarialBatch& batch,
                            const std::string& dir);
AdversarialBatch load_adversarial_batch(const std::string& dir);

}  // namespace prunelab
