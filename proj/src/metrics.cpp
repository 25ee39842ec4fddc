#include "prunelab/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>

#include <json.hpp>

#include "prunelab/training.hpp"

namespace prunelab {

namespace {

const std::set<std::string> kCorruptionTags = {"gaussian_noise", "box_blur",
                                               "contrast", "brightness"};

std::string utc_now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

double evaluate_under_attack(NetworkGraph& net, const DatasetSplit& data,
                             const AttackSpec& attack, std::uint64_t seed) {
  AdversarialBatch adv = craft(net, data, attack, seed);
  return evaluate_images(net, adv.images, adv.clean_labels);
}

EvalReport evaluate_report(NetworkGraph& net, const DatasetSplit& data,
                           const std::vector<AttackSpec>& attacks,
                           std::uint64_t seed) {
  EvalReport report;
  report.model_tag = net.arch_tag;
  report.seed = seed;
  report.timestamp = utc_now_iso8601();
  report.acc_clean = evaluate(net, data);
  for (const AttackSpec& spec : attacks) {
    const std::string tag = spec.tag();
    check(!report.acc_adv.count(tag), "duplicate attack tag '", tag,
          "' in one evaluation");
    report.acc_adv[tag] = evaluate_under_attack(net, data, spec, seed);
  }
  return report;
}

DeltaReport delta_report(const EvalReport& unpruned, const EvalReport& pruned) {
  {
    std::set<std::string> a, b;
    for (const auto& [tag, _] : unpruned.acc_adv) a.insert(tag);
    for (const auto& [tag, _] : pruned.acc_adv) b.insert(tag);
    check(a == b, "delta_report: the two reports cover different attack sets");
  }

  DeltaReport out;
  out.clean_pp = (pruned.acc_clean - unpruned.acc_clean) * 100.0;
  std::vector<double> semantic;
  for (const auto& [tag, acc] : pruned.acc_adv) {
    const double delta = (acc - unpruned.acc_adv.at(tag)) * 100.0;
    out.deltas_pp[tag] = delta;
    if (kCorruptionTags.count(tag)) semantic.push_back(delta);
  }

  if (!semantic.empty()) {
    out.has_semantic = true;
    double acc = 0.0;
    for (double v : semantic) acc += v;
    out.semantic_mean_pp = acc / static_cast<double>(semantic.size());
    out.headline.push_back("semantic_mean");
  }
  // Fixed table order after the semantic aggregate: occlusion, fgsm, then
  // anything else alphabetically.
  for (const std::string& tag : {std::string("occlusion"), std::string("fgsm")}) {
    if (out.deltas_pp.count(tag)) out.headline.push_back(tag);
  }
  for (const auto& [tag, _] : out.deltas_pp) {
    if (kCorruptionTags.count(tag) || tag == "occlusion" || tag == "fgsm") continue;
    out.headline.push_back(tag);
  }

  double acc = 0.0;
  for (const std::string& tag : out.headline) {
    acc += tag == "semantic_mean" ? out.semantic_mean_pp : out.deltas_pp.at(tag);
  }
  const double n_attacks = static_cast<double>(out.headline.size());
  out.avg_attacks_only = out.headline.empty() ? 0.0 : acc / n_attacks;
  out.avg_with_clean = (acc + out.clean_pp) / (n_attacks + 1.0);
  return out;
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  check(xs.size() == ys.size(), "pearson_r needs equally many xs and ys");
  const size_t n = xs.size();
  check(n >= 2, "pearson_r needs at least 2 points, got ", n);

  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  check(vx > 0.0 && vy > 0.0,
        "pearson_r is undefined: zero variance in one of the inputs");
  return cov / std::sqrt(vx * vy);
}

TransferMatrix transfer_matrix(
    const std::vector<std::pair<std::string, NetworkGraph*>>& models,
    const DatasetSplit& data, float alpha) {
  check(models.size() >= 2, "transfer matrix needs at least two models");
  check(!data.augmented, "augmented data must never reach an attack");
  const int classes = models.front().second->num_classes;
  for (const auto& [tag, net] : models) {
    check(net->num_classes == classes && net->num_classes == data.class_count,
          "transfer matrix model '", tag, "' disagrees on the class count");
    check(net->input_channels == data.channels(),
          "transfer matrix model '", tag, "' disagrees on input channels");
  }

  TransferMatrix out;
  out.alpha = alpha;
  for (const auto& [tag, _] : models) out.tags.push_back(tag);
  out.cells.assign(models.size() * models.size(), 0.0);

  for (size_t s = 0; s < models.size(); ++s) {
    AdversarialBatch adv =
        fgsm(*models[s].second, data.images, data.labels, alpha);
    for (size_t t = 0; t < models.size(); ++t) {
      out.cells[s * models.size() + t] =
          evaluate_images(*models[t].second, adv.images, adv.clean_labels);
    }
  }
  return out;
}

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["model_tag"] = report.model_tag;
  j["seed"] = report.seed;
  j["timestamp"] = report.timestamp;
  j["acc_clean"] = report.acc_clean;
  j["acc_adv"] = report.acc_adv;
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail("malformed evaluation report: ", e.what());
  }
  EvalReport report;
  report.model_tag = j.at("model_tag").get<std::string>();
  report.seed = j.at("seed").get<std::uint64_t>();
  report.timestamp = j.value("timestamp", "");
  report.acc_clean = j.at("acc_clean").get<double>();
  report.acc_adv = j.at("acc_adv").get<std::map<std::string, double>>();
  return report;
}

double round_half_even(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::nearbyint(value * scale) / scale;
}

std::string format_delta_pp(double delta) {
  const double r = round_half_even(delta, 2);
  const bool negative = r < 0.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "(%c) %.2f", negative ? '-' : '+',
                std::fabs(r));
  return buf;
}

}  // namespace prunelab
