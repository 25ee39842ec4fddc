#include "prunelab/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace prunelab {

namespace {

using nlohmann::json;

template <typename... Args>
[[noreturn]] void config_fail(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw ConfigError(os.str());
}

json attack_to_json(const AttackSpec& a) {
  switch (a.kind) {
    case AttackSpec::Kind::Fgsm:
      return json{{"kind", "fgsm"}, {"alpha", a.alpha}};
    case AttackSpec::Kind::Occlusion:
      return json{{"kind", "occlusion"}, {"side_px", a.side_px}};
    case AttackSpec::Kind::Corruption:
      return json{{"kind", "corruption"},
                  {"name", corruption_name_str(a.corruption)},
                  {"severity", a.severity}};
  }
  config_fail("unreachable attack kind");
}

AttackSpec attack_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fgsm") return AttackSpec::fgsm(j.at("alpha").get<float>());
  if (kind == "occlusion") return AttackSpec::occlusion(j.at("side_px").get<int>());
  if (kind == "corruption") {
    return AttackSpec::corrupt(
        corruption_name_from_str(j.at("name").get<std::string>()),
        j.at("severity").get<int>());
  }
  config_fail("attacks[]: unknown kind '", kind, "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!seed_set) config_fail("seed: required (no wall-clock seeding)");
  if (out_dir.empty()) config_fail("out_dir: required");

  if (dataset.kind == "synthetic") {
    if (dataset.image_side < 8) config_fail("dataset.image_side: must be >= 8");
    if (dataset.n_per_class < 1) config_fail("dataset.n_per_class: must be >= 1");
    if (dataset.classes < 2 || dataset.classes > 4)
      config_fail("dataset.classes: must be 2..4");
    if (dataset.noise_sigma < 0) config_fail("dataset.noise_sigma: must be >= 0");
  } else if (dataset.kind == "cifar10") {
    if (dataset.path.empty()) config_fail("dataset.path: required for kind=cifar10");
  } else if (dataset.kind == "idx") {
    if (dataset.train_images.empty() || dataset.train_labels.empty())
      config_fail("dataset.train_images/train_labels: required for kind=idx");
    if (dataset.test_images.empty() || dataset.test_labels.empty())
      config_fail("dataset.test_images/test_labels: required for kind=idx");
  } else {
    config_fail("dataset.kind: unknown '", dataset.kind,
                "' (expected synthetic, cifar10 or idx)");
  }

  if (model.arch != "mini_vgg" && model.arch != "mini_resnet")
    config_fail("model.arch: unknown '", model.arch, "'");
  if (model.base_width < 1) config_fail("model.base_width: must be >= 1");
  if (model.width_multiplier <= 0) config_fail("model.width_multiplier: must be > 0");
  if (model.stage_depths.empty()) config_fail("model.stage_depths: must not be empty");
  for (int d : model.stage_depths) {
    if (d < 1) config_fail("model.stage_depths: entries must be >= 1");
  }

  if (train.epochs < 0) config_fail("train.epochs: must be >= 0");
  if (train.batch_size < 1) config_fail("train.batch_size: must be >= 1");
  if (train.lr <= 0) config_fail("train.lr: must be > 0");
  if (train.hflip_prob < 0 || train.hflip_prob > 1)
    config_fail("train.hflip_prob: must lie in [0,1]");

  if (prune.ratio <= 0 || prune.ratio >= 1) config_fail("prune.ratio: must lie in (0,1)");
  if (prune.iterations < 1) config_fail("prune.iterations: must be >= 1");
  if (prune.finetune_epochs < 0) config_fail("prune.finetune_epochs: must be >= 0");
  if (prune.pls_components < 1) config_fail("prune.pls_components: must be >= 1");
  if (prune.calibration_size < 2) config_fail("prune.calibration_size: must be >= 2");
  for (const std::string& c : prune.criteria) {
    try {
      criterion_from_name(c);
    } catch (const Error& e) {
      config_fail("prune.criteria: ", e.what());
    }
  }
  for (const std::string& s : prune.structures) {
    try {
      structure_mode_from_name(s);
    } catch (const Error& e) {
      config_fail("prune.structures: ", e.what());
    }
  }
  for (const std::string& s : prune.schemes) {
    try {
      AdjustScheme::from_name(s, 0, 0);
    } catch (const Error& e) {
      config_fail("prune.schemes: ", e.what());
    }
  }

  if (normalize != "auto" && normalize != "none")
    config_fail("normalize: must be auto or none");
  if (eval_workers < 1) config_fail("eval_workers: must be >= 1");

  for (const AttackSpec& a : attacks) {
    try {
      a.validate();
    } catch (const Error& e) {
      config_fail("attacks[]: ", e.what());
    }
  }
}

int ExperimentConfig::snapshot_epoch_default() const {
  return std::max(1, train.epochs / 4);
}

int ExperimentConfig::pad_crop_effective() const {
  if (train.pad_crop >= 0) return train.pad_crop;
  const int side = dataset.kind == "synthetic" ? dataset.image_side : 32;
  return side >= 32 ? 4 : 2;
}

std::vector<AttackSpec> ExperimentConfig::attacks_effective() const {
  if (!attacks.empty()) return attacks;
  const int side = dataset.kind == "synthetic" ? dataset.image_side : 32;
  return {default_attack("fgsm", side), default_attack("occlusion", side),
          default_attack("gaussian_noise", side), default_attack("box_blur", side),
          default_attack("contrast", side), default_attack("brightness", side)};
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    config_fail("config is not valid JSON: ", e.what());
  }

  ExperimentConfig c;
  try {
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.seed_set = true;
    }
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      c.dataset.kind = d.value("kind", c.dataset.kind);
      c.dataset.n_per_class = d.value("n_per_class", c.dataset.n_per_class);
      c.dataset.image_side = d.value("image_side", c.dataset.image_side);
      c.dataset.noise_sigma = d.value("noise_sigma", c.dataset.noise_sigma);
      c.dataset.classes = d.value("classes", c.dataset.classes);
      c.dataset.path = d.value("path", c.dataset.path);
      c.dataset.subset_per_class = d.value("subset_per_class", c.dataset.subset_per_class);
      c.dataset.train_images = d.value("train_images", c.dataset.train_images);
      c.dataset.train_labels = d.value("train_labels", c.dataset.train_labels);
      c.dataset.test_images = d.value("test_images", c.dataset.test_images);
      c.dataset.test_labels = d.value("test_labels", c.dataset.test_labels);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      c.model.arch = m.value("arch", c.model.arch);
      c.model.base_width = m.value("base_width", c.model.base_width);
      c.model.width_multiplier = m.value("width_multiplier", c.model.width_multiplier);
      c.model.stage_depths = m.value("stage_depths", c.model.stage_depths);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.momentum = t.value("momentum", c.train.momentum);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.pad_crop = t.value("pad_crop", c.train.pad_crop);
      c.train.hflip_prob = t.value("hflip_prob", c.train.hflip_prob);
      c.train.snapshot_epochs = t.value("snapshot_epochs", c.train.snapshot_epochs);
    }
    if (j.contains("prune")) {
      const json& p = j.at("prune");
      c.prune.criteria = p.value("criteria", c.prune.criteria);
      c.prune.structures = p.value("structures", c.prune.structures);
      c.prune.schemes = p.value("schemes", c.prune.schemes);
      c.prune.ratio = p.value("ratio", c.prune.ratio);
      c.prune.iterations = p.value("iterations", c.prune.iterations);
      c.prune.finetune_epochs = p.value("finetune_epochs", c.prune.finetune_epochs);
      c.prune.pls_components = p.value("pls_components", c.prune.pls_components);
      c.prune.calibration_size = p.value("calibration_size", c.prune.calibration_size);
      c.prune.rewind_epoch = p.value("rewind_epoch", c.prune.rewind_epoch);
    }
    if (j.contains("attacks")) {
      for (const json& a : j.at("attacks")) {
        c.attacks.push_back(attack_from_json(a));
      }
    }
    c.attack_seed = j.value("attack_seed", c.attack_seed);
    c.normalize = j.value("normalize", c.normalize);
    c.eval_workers = j.value("eval_workers", c.eval_workers);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    config_fail("malformed config: ", e.what());
  }
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) config_fail("cannot open config file '", path, "'");
  std::ostringstream text;
  text << f.rdbuf();
  return config_from_json_text(text.str());
}

std::string config_to_json_text(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["dataset"] = json{{"kind", c.dataset.kind},
                      {"n_per_class", c.dataset.n_per_class},
                      {"image_side", c.dataset.image_side},
                      {"noise_sigma", c.dataset.noise_sigma},
                      {"classes", c.dataset.classes},
                      {"path", c.dataset.path},
                      {"subset_per_class", c.dataset.subset_per_class},
                      {"train_images", c.dataset.train_images},
                      {"train_labels", c.dataset.train_labels},
                      {"test_images", c.dataset.test_images},
                      {"test_labels", c.dataset.test_labels}};
  j["model"] = json{{"arch", c.model.arch},
                    {"base_width", c.model.base_width},
                    {"width_multiplier", c.model.width_multiplier},
                    {"stage_depths", c.model.stage_depths}};
  j["train"] = json{{"epochs", c.train.epochs},
                    {"batch_size", c.train.batch_size},
                    {"lr", c.train.lr},
                    {"momentum", c.train.momentum},
                    {"weight_decay", c.train.weight_decay},
                    {"pad_crop", c.train.pad_crop},
                    {"hflip_prob", c.train.hflip_prob},
                    {"snapshot_epochs", c.train.snapshot_epochs}};
  j["prune"] = json{{"criteria", c.prune.criteria},
                    {"structures", c.prune.structures},
                    {"schemes", c.prune.schemes},
                    {"ratio", c.prune.ratio},
                    {"iterations", c.prune.iterations},
                    {"finetune_epochs", c.prune.finetune_epochs},
                    {"pls_components", c.prune.pls_components},
                    {"calibration_size", c.prune.calibration_size},
                    {"rewind_epoch", c.prune.rewind_epoch}};
  json attacks = json::array();
  for (const AttackSpec& a : c.attacks) attacks.push_back(attack_to_json(a));
  j["attacks"] = std::move(attacks);
  j["attack_seed"] = c.attack_seed;
  j["normalize"] = c.normalize;
  j["eval_workers"] = c.eval_workers;
  return j.dump(2);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.seed_set == b.seed_set &&
         config_to_json_text(a) == config_to_json_text(b);
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = config_to_json_text(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << "fnv1a64-" << std::hex << h;
  return os.str();
}

AttackSpec default_attack(const std::string& name, int image_side) {
  if (name == "fgsm") return AttackSpec::fgsm(8.0f / 255.0f);
  if (name == "occlusion") {
    return AttackSpec::occlusion(
        static_cast<int>(std::lround(image_side / 2.0)));
  }
  return AttackSpec::corrupt(corruption_name_from_str(name), 4);
}

std::vector<AttackSpec> parse_attack_list(const std::string& text,
                                          int image_side) {
  std::vector<AttackSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const std::string name = item.substr(0, colon);
    std::string param =
        colon == std::string::npos ? "" : item.substr(colon + 1);
    try {
      if (param.empty()) {
        out.push_back(default_attack(name, image_side));
      } else if (name == "fgsm") {
        out.push_back(AttackSpec::fgsm(std::stof(param)));
      } else if (name == "occlusion") {
        out.push_back(AttackSpec::occlusion(std::stoi(param)));
      } else {
        out.push_back(AttackSpec::corrupt(corruption_name_from_str(name),
                                          std::stoi(param)));
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      config_fail("attacks: cannot parse '", item, "': ", e.what());
    }
  }
  if (out.empty()) config_fail("attacks: empty attack list");
  return out;
}

}  // namespace prunelab
