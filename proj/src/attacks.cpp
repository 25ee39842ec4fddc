#include "prunelab/attacks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace prunelab {

const float kGaussianNoiseSigma[5] = {0.04f, 0.08f, 0.12f, 0.18f, 0.26f};
const int kBoxBlurKernel[5] = {3, 3, 5, 7, 9};
const float kContrastFactor[5] = {0.75f, 0.6f, 0.45f, 0.3f, 0.2f};
const float kBrightnessDelta[5] = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f};

std::string corruption_name_str(CorruptionName name) {
  switch (name) {
    case CorruptionName::GaussianNoise: return "gaussian_noise";
    case CorruptionName::BoxBlur: return "box_blur";
    case CorruptionName::Contrast: return "contrast";
    case CorruptionName::Brightness: return "brightness";
  }
  fail("unreachable corruption name");
}

CorruptionName corruption_name_from_str(const std::string& s) {
  if (s == "gaussian_noise") return CorruptionName::GaussianNoise;
  if (s == "box_blur") return CorruptionName::BoxBlur;
  if (s == "contrast") return CorruptionName::Contrast;
  if (s == "brightness") return CorruptionName::Brightness;
  fail("unknown corruption '", s,
       "' (expected gaussian_noise, box_blur, contrast or brightness)");
}

AttackSpec AttackSpec::fgsm(float alpha) {
  AttackSpec s;
  s.kind = Kind::Fgsm;
  s.alpha = alpha;
  s.validate();
  return s;
}

AttackSpec AttackSpec::occlusion(int side_px) {
  AttackSpec s;
  s.kind = Kind::Occlusion;
  s.side_px = side_px;
  s.validate();
  return s;
}

AttackSpec AttackSpec::corrupt(CorruptionName name, int severity) {
  AttackSpec s;
  s.kind = Kind::Corruption;
  s.corruption = name;
  s.severity = severity;
  s.validate();
  return s;
}

void AttackSpec::validate() const {
  switch (kind) {
    case Kind::Fgsm:
      check(alpha >= 0.0f, "fgsm alpha must be non-negative, got ", alpha);
      break;
    case Kind::Occlusion:
      check(side_px >= 0, "occlusion side_px must be non-negative, got ", side_px);
      break;
    case Kind::Corruption:
      check(severity >= 1 && severity <= 5, "corruption severity must be 1..5, got ",
            severity);
      break;
  }
}

std::string AttackSpec::tag() const {
  switch (kind) {
    case Kind::Fgsm: return "fgsm";
    case Kind::Occlusion: return "occlusion";
    case Kind::Corruption: return corruption_name_str(corruption);
  }
  fail("unreachable attack kind");
}

std::string AttackSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Fgsm:
      os << "fgsm(alpha=" << alpha << ")";
      break;
    case Kind::Occlusion:
      os << "occlusion(side_px=" << side_px << ")";
      break;
    case Kind::Corruption:
      os << corruption_name_str(corruption) << "(severity=" << severity << ")";
      break;
  }
  if (!source_model_tag.empty()) os << "@" << source_model_tag;
  return os.str();
}

namespace {

void clip01(Tensor& t) {
  for (float& v : t.values_mut()) v = std::clamp(v, 0.0f, 1.0f);
}

// Reflect-101 fold of index i into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 ...
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

}  // namespace

AdversarialBatch fgsm(NetworkGraph& source, const Tensor& images,
                      const std::vector<int>& labels, float alpha) {
  check(alpha >= 0.0f, "fgsm alpha must be non-negative, got ", alpha);
  check(!labels.empty() &&
            static_cast<int>(labels.size()) == images.dim(0),
        "fgsm requires one label per image");

  AdversarialBatch out;
  out.provenance = AttackSpec::fgsm(alpha);
  out.provenance.source_model_tag = source.arch_tag;
  out.source_tag = source.arch_tag;
  out.clean_labels = labels;

  Tensor x = images.clone();
  x.set_requires_grad(true);
  Tape tape;
  Tensor logits = forward(source, x, Mode::Eval, &tape);
  Tensor loss = softmax_cross_entropy(logits, labels, &tape);
  backward(loss, tape);

  Tensor adv = images.clone();
  adv.set_requires_grad(false);
  const auto g = x.grad();
  auto v = adv.values_mut();
  for (size_t i = 0; i < v.size(); ++i) {
    const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
    v[i] = std::clamp(v[i] + alpha * s, 0.0f, 1.0f);
  }
  // Parameter gradients were populated as a side effect; drop them so the
  // source model leaves the attack exactly as it entered.
  for (Tensor& p : source.trainable_params()) p.zero_grad();

  out.images = adv;
  return out;
}

AdversarialBatch occlude_center(const Tensor& images,
                                const std::vector<int>& labels, int side_px) {
  check(images.ndim() == 4, "occlude_center expects a 4-d batch");
  const int h = images.dim(2), w = images.dim(3);
  check(side_px >= 0 && side_px <= h && side_px <= w,
        "occlusion side_px ", side_px, " out of range for ", h, "x", w,
        " images");

  AdversarialBatch out;
  out.provenance = AttackSpec::occlusion(side_px);
  out.clean_labels = labels;
  out.images = images.clone();
  out.images.set_requires_grad(false);

  const int r0 = (h - side_px) / 2;
  const int c0 = (w - side_px) / 2;
  const int n = images.dim(0), c = images.dim(1);
  float* v = out.images.values_mut().data();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      float* p = v + (static_cast<std::int64_t>(b) * c + ch) * plane;
      for (int r = r0; r < r0 + side_px; ++r) {
        for (int cc = c0; cc < c0 + side_px; ++cc) {
          p[static_cast<std::int64_t>(r) * w + cc] = 0.0f;
        }
      }
    }
  }
  return out;
}

AdversarialBatch corrupt(const Tensor& images, const std::vector<int>& labels,
                         CorruptionName name, int severity, std::uint64_t seed) {
  check(images.ndim() == 4, "corrupt expects a 4-d batch");
  check(severity >= 1 && severity <= 5, "corruption severity must be 1..5, got ",
        severity);

  AdversarialBatch out;
  out.provenance = AttackSpec::corrupt(name, severity);
  out.clean_labels = labels;
  out.images = images.clone();
  out.images.set_requires_grad(false);

  const int n = images.dim(0), c = images.dim(1), h = images.dim(2),
            w = images.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t per_img = static_cast<std::int64_t>(c) * plane;
  float* v = out.images.values_mut().data();

  switch (name) {
    case CorruptionName::GaussianNoise: {
      Rng rng(mix_seed(seed, 0xC0441));
      const float sigma = kGaussianNoiseSigma[severity - 1];
      for (std::int64_t i = 0; i < images.numel(); ++i) {
        v[i] = static_cast<float>(v[i] + rng.normal() * sigma);
      }
      break;
    }
    case CorruptionName::BoxBlur: {
      const int k = kBoxBlurKernel[severity - 1];
      const int half = k / 2;
      const float inv = 1.0f / static_cast<float>(k * k);
      std::vector<float> tmp(static_cast<size_t>(plane));
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          float* p = v + static_cast<std::int64_t>(b) * per_img + ch * plane;
          for (int r = 0; r < h; ++r) {
            for (int cc = 0; cc < w; ++cc) {
              float acc = 0.0f;
              for (int i = -half; i <= half; ++i) {
                const int rr = reflect_index(r + i, h);
                for (int j = -half; j <= half; ++j) {
                  const int cj = reflect_index(cc + j, w);
                  acc += p[static_cast<std::int64_t>(rr) * w + cj];
                }
              }
              tmp[static_cast<size_t>(r * w + cc)] = acc * inv;
            }
          }
          std::copy(tmp.begin(), tmp.end(), p);
        }
      }
      break;
    }
    case CorruptionName::Contrast: {
      const float factor = kContrastFactor[severity - 1];
      for (int b = 0; b < n; ++b) {
        float* p = v + static_cast<std::int64_t>(b) * per_img;
        double acc = 0.0;
        for (std::int64_t i = 0; i < per_img; ++i) acc += p[i];
        const float mean = static_cast<float>(acc / static_cast<double>(per_img));
        for (std::int64_t i = 0; i < per_img; ++i) {
          p[i] = (p[i] - mean) * factor + mean;
        }
      }
      break;
    }
    case CorruptionName::Brightness: {
      const float delta = kBrightnessDelta[severity - 1];
      for (std::int64_t i = 0; i < images.numel(); ++i) v[i] += delta;
      break;
    }
  }
  clip01(out.images);
  return out;
}

AdversarialBatch craft(NetworkGraph& victim, const DatasetSplit& data,
                       const AttackSpec& spec, std::uint64_t seed) {
  check(!data.augmented, "augmented data must never reach an attack");
  spec.validate();
  switch (spec.kind) {
    case AttackSpec::Kind::Fgsm:
      return fgsm(victim, data.images, data.labels, spec.alpha);
    case AttackSpec::Kind::Occlusion:
      return occlude_center(data.images, data.labels, spec.side_px);
    case AttackSpec::Kind::Corruption:
      return corrupt(data.images, data.labels, spec.corruption, spec.severity,
                     seed);
  }
  fail("unreachable attack kind");
}

void save_adversarial_batch(const AdversarialBatch& batch,
                            const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest{{"format_version", 1},
                          {"attack", batch.provenance.describe()},
                          {"tag", batch.provenance.tag()},
                          {"source_tag", batch.source_tag},
                          {"shape", batch.images.shape()},
                          {"labels", batch.clean_labels}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  check(mf.good(), "cannot write adversarial batch manifest under '", dir, "'");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(fs::path(dir) / "images.bin", std::ios::binary);
  check(bf.good(), "cannot write images.bin under '", dir, "'");
  static_assert(sizeof(float) == 4);
  const auto v = batch.images.values();
  if constexpr (std::endian::native == std::endian::little) {
    bf.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
  } else {
    for (float f : v) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) bf.put(static_cast<char>((u >> (8 * i)) & 0xff));
    }
  }
}

AdversarialBatch load_adversarial_batch(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  check(mf.good(), "missing adversarial batch manifest under '", dir, "'");
  nlohmann::json manifest;
  mf >> manifest;

  AdversarialBatch out;
  out.source_tag = manifest.at("source_tag").get<std::string>();
  out.clean_labels = manifest.at("labels").get<std::vector<int>>();
  const Shape shape = manifest.at("shape").get<Shape>();

  const fs::path bpath = fs::path(dir) / "images.bin";
  const std::int64_t numel = shape_numel(shape);
  check(fs::exists(bpath) &&
            static_cast<std::int64_t>(fs::file_size(bpath)) ==
                numel * static_cast<std::int64_t>(sizeof(float)),
        "images.bin under '", dir, "' does not match the manifest shape");
  std::ifstream bf(bpath, std::ios::binary);
  std::vector<float> values(static_cast<size_t>(numel));
  bf.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  check(bf.good(), "truncated images.bin under '", dir, "'");
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) {
      std::uint32_t u = std::bit_cast<std::uint32_t>(f);
      u = ((u & 0xff) << 24) | ((u & 0xff00) << 8) | ((u >> 8) & 0xff00) |
          (u >> 24);
      f = std::bit_cast<float>(u);
    }
  }
  out.images = Tensor::from_values(shape, std::move(values));
  return out;
}

}  // namespace prunelab
