#include "prunelab/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "prunelab/checkpoint.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/pruning.hpp"
#include "prunelab/training.hpp"

namespace prunelab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_pct2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

/// Collects everything one command run emits and writes the manifest last.
class RunContext {
 public:
  RunContext(const ExperimentConfig& config, std::string command)
      : config_(config),
        command_(std::move(command)),
        start_(std::chrono::steady_clock::now()),
        stage_start_(start_) {
    fs::create_directories(config.out_dir);
    write_text("config.json", config_to_json_text(config));
  }

  fs::path path(const std::string& rel) const { return fs::path(config_.out_dir) / rel; }

  void write_text(const std::string& rel, const std::string& content) {
    const fs::path p = path(rel);
    fs::create_directories(p.parent_path());
    std::ofstream f(p);
    check(f.good(), "cannot write '", p.string(), "'");
    f << content;
    register_file(rel);
  }

  /// Registers every file under an emitted directory (checkpoints).
  void register_tree(const std::string& rel) {
    const fs::path root = path(rel);
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file()) {
        files_.push_back(fs::relative(entry.path(), config_.out_dir).string());
      }
    }
  }

  void register_file(const std::string& rel) { files_.push_back(rel); }

  void note(const std::string& text) { notes_.push_back(text); }

  void stage_done(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now - stage_start_);
    stages_.push_back({name, ms.count()});
    stage_start_ = now;
  }

  void finish() {
    json manifest;
    manifest["command"] = command_;
    manifest["config_hash"] = config_hash(config_);
    manifest["seed"] = config_.seed;
    json stages = json::array();
    for (const auto& [name, ms] : stages_) {
      stages.push_back({{"name", name}, {"wall_ms", ms}});
    }
    manifest["stages"] = std::move(stages);
    std::sort(files_.begin(), files_.end());
    manifest["files"] = files_;
    manifest["notes"] = notes_;
    std::ofstream f(path("manifest.json"));
    check(f.good(), "cannot write run manifest under '", config_.out_dir, "'");
    f << manifest.dump(2) << "\n";
  }

 private:
  const ExperimentConfig& config_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point stage_start_;
  std::vector<std::pair<std::string, long long>> stages_;
  std::vector<std::string> files_;
  std::vector<std::string> notes_;
};

BuildSpec build_spec_from(const ExperimentConfig& config, int num_classes,
                          int input_channels) {
  BuildSpec spec;
  spec.arch = arch_kind_from_name(config.model.arch);
  spec.base_width = config.model.base_width;
  spec.width_multiplier = config.model.width_multiplier;
  spec.stage_depths = config.model.stage_depths;
  spec.num_classes = num_classes;
  spec.input_channels = input_channels;
  spec.seed = config.seed;
  return spec;
}

TrainHyper hyper_from(const ExperimentConfig& config) {
  TrainHyper hyper;
  hyper.epochs = config.train.epochs;
  hyper.batch_size = config.train.batch_size;
  hyper.lr = static_cast<float>(config.train.lr);
  hyper.momentum = static_cast<float>(config.train.momentum);
  hyper.weight_decay = static_cast<float>(config.train.weight_decay);
  hyper.augment.pad_crop = config.pad_crop_effective();
  hyper.augment.hflip_prob = static_cast<float>(config.train.hflip_prob);
  hyper.seed = config.seed;
  hyper.snapshot_epochs = config.train.snapshot_epochs;
  if (hyper.snapshot_epochs.empty() && config.train.epochs > 0) {
    hyper.snapshot_epochs = {config.snapshot_epoch_default()};
  }
  return hyper;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "metric,accuracy\n";
  os << "clean," << fmt6(report.acc_clean) << "\n";
  for (const auto& [tag, acc] : report.acc_adv) {
    os << tag << "," << fmt6(acc) << "\n";
  }
  return os.str();
}

/// One row of the paper-style delta table.
void delta_row(std::ostringstream& os, const DeltaReport& d) {
  for (const std::string& tag : d.headline) {
    os << ","
       << format_delta_pp(tag == "semantic_mean" ? d.semantic_mean_pp
                                                 : d.deltas_pp.at(tag));
  }
  os << "," << format_delta_pp(d.clean_pp);
  os << "," << format_delta_pp(d.avg_with_clean);
  os << "," << format_delta_pp(d.avg_attacks_only);
  os << "\n";
}

std::string delta_header(const DeltaReport& d) {
  std::ostringstream os;
  for (const std::string& tag : d.headline) os << "," << tag;
  os << ",clean,avg_with_clean,avg_attacks_only";
  return os.str();
}

std::vector<TrainSnapshot> load_sibling_snapshots(const std::string& base_checkpoint) {
  std::vector<TrainSnapshot> snapshots;
  const fs::path parent = fs::path(base_checkpoint).parent_path();
  if (parent.empty() || !fs::is_directory(parent)) return snapshots;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(parent)) {
    if (entry.is_directory() &&
        entry.path().filename().string().rfind("ckpt_epoch_", 0) == 0) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    TrainSnapshot snap;
    snap.net = load_checkpoint(dir.string());
    snap.epoch = snap.net.epoch_counter;
    snapshots.push_back(std::move(snap));
  }
  return snapshots;
}

}  // namespace

LoadedData load_dataset(const ExperimentConfig& config) {
  LoadedData data;
  if (config.dataset.kind == "synthetic") {
    SynthShapes synth =
        synth_shapes(config.dataset.n_per_class, config.dataset.image_side,
                     config.dataset.noise_sigma, config.seed,
                     config.dataset.classes);
    data.train = std::move(synth.train);
    data.test = std::move(synth.test);
  } else if (config.dataset.kind == "cifar10") {
    Cifar10 cifar = load_cifar10_binary(config.dataset.path,
                                        config.dataset.subset_per_class,
                                        config.seed);
    data.train = std::move(cifar.train);
    data.test = std::move(cifar.test);
  } else {
    data.train = load_idx(config.dataset.train_images, config.dataset.train_labels);
    data.train.name = "idx-train";
    data.test = load_idx(config.dataset.test_images, config.dataset.test_labels);
    data.test.name = "idx-test";
    check(data.train.class_count == data.test.class_count ||
              data.train.class_count >= data.test.class_count,
          "IDX train/test class counts disagree");
    data.test.class_count = data.train.class_count;
  }
  return data;
}

void cmd_train(const ExperimentConfig& config) {
  config.validate();
  RunContext ctx(config, "train");

  LoadedData data = load_dataset(config);
  ctx.stage_done("load_data");

  NetworkGraph net = build_network(
      build_spec_from(config, data.train.class_count, data.train.channels()));
  if (config.normalize == "auto") {
    std::vector<float> mean, std;
    channel_statistics(data.train, mean, std);
    net.set_normalization(mean, std);
  }

  TrainHyper hyper = hyper_from(config);
  TrainResult result = train(net, data.train, hyper);
  ctx.stage_done("train");

  save_checkpoint(net, ctx.path("ckpt_base").string(), config.seed);
  ctx.register_tree("ckpt_base");
  for (const TrainSnapshot& snap : result.snapshots) {
    NetworkGraph copy = clone_network(snap.net);
    const std::string rel = "ckpt_epoch_" + std::to_string(snap.epoch);
    save_checkpoint(copy, ctx.path(rel).string(), config.seed, &snap.velocities);
    ctx.register_tree(rel);
  }

  std::ostringstream history;
  history << "epoch,loss,train_accuracy\n";
  for (const EpochStats& e : result.history) {
    history << e.epoch << "," << fmt6(e.loss) << "," << fmt6(e.accuracy) << "\n";
  }
  ctx.write_text("history.csv", history.str());

  EvalReport report = evaluate_report(net, data.test, {}, config.attack_seed);
  report.seed = config.seed;
  ctx.write_text("eval_clean.json", eval_report_to_json(report) + "\n");
  ctx.write_text("eval_clean.csv", report_csv(report));
  ctx.stage_done("evaluate");
  ctx.finish();

  std::cout << "trained " << net.arch_tag << " for " << hyper.epochs
            << " epochs; clean accuracy " << fmt6(report.acc_clean) << "\n"
            << "checkpoint: " << ctx.path("ckpt_base").string() << "\n";
}

void cmd_prune(const ExperimentConfig& config, const std::string& base_checkpoint) {
  config.validate();
  if (config.model.arch == "mini_vgg") {
    for (const std::string& s : config.prune.structures) {
      if (s != "filters") {
        throw ConfigError(
            "prune.structures: layer pruning requires residual architecture");
      }
    }
  }
  RunContext ctx(config, "prune");

  LoadedData data = load_dataset(config);
  NetworkGraph base = load_checkpoint(base_checkpoint);
  check(base.num_classes == data.train.class_count,
        "checkpoint expects ", base.num_classes, " classes but the dataset has ",
        data.train.class_count);
  ctx.stage_done("load");

  const std::vector<AttackSpec> attacks = config.attacks_effective();
  EvalReport base_report =
      evaluate_report(base, data.test, attacks, config.attack_seed);
  base_report.seed = config.seed;
  ctx.write_text("reports/base.json", eval_report_to_json(base_report) + "\n");
  ctx.stage_done("evaluate_base");

  std::vector<TrainSnapshot> snapshots;
  const bool wants_wticket =
      std::find(config.prune.schemes.begin(), config.prune.schemes.end(),
                "wticket") != config.prune.schemes.end();
  if (wants_wticket) {
    snapshots = load_sibling_snapshots(base_checkpoint);
    check(!snapshots.empty(),
          "winning ticket requires ckpt_epoch_* snapshots beside the base "
          "checkpoint '", base_checkpoint, "'");
  }
  const int rewind = config.prune.rewind_epoch > 0
                         ? config.prune.rewind_epoch
                         : config.snapshot_epoch_default();

  TrainHyper hyper = hyper_from(config);
  hyper.snapshot_epochs.clear();

  std::ostringstream deltas;
  bool wrote_header = false;
  for (const std::string& criterion : config.prune.criteria) {
    for (const std::string& structure : config.prune.structures) {
      for (const std::string& scheme : config.prune.schemes) {
        PruneRunOptions options;
        options.criterion = criterion_from_name(criterion);
        options.structure = structure_mode_from_name(structure);
        options.ratio = config.prune.ratio;
        options.iterations = config.prune.iterations;
        options.scheme = AdjustScheme::from_name(
            scheme, config.prune.finetune_epochs, rewind);
        options.pls.n_components = config.prune.pls_components;
        options.calibration_size = config.prune.calibration_size;
        options.attacks = attacks;
        options.attack_seed = config.attack_seed;

        const std::string cell = criterion + "_" + structure + "_" + scheme;
        PruneRunResult run = prune_iterative(base, data.train, data.test,
                                             options, hyper, snapshots);
        if (!run.early_stop_reason.empty()) {
          ctx.note("early stop in " + cell + ": " + run.early_stop_reason);
        }
        for (IterationOutcome& outcome : run.iterations) {
          const std::string iter_tag = cell + "_iter" + std::to_string(outcome.iteration);
          json wrapped;
          wrapped["iteration"] = outcome.iteration;
          wrapped["cell"] = cell;
          wrapped["param_count"] = outcome.param_count;
          wrapped["report"] = json::parse(eval_report_to_json(outcome.report));
          ctx.write_text("reports/" + iter_tag + ".json", wrapped.dump(2) + "\n");
          for (size_t p = 0; p < outcome.plans.size(); ++p) {
            ctx.write_text("plans/" + iter_tag + "_pass" + std::to_string(p) + ".json",
                           prune_plan_to_json(outcome.plans[p]) + "\n");
          }
          for (size_t t = 0; t < outcome.tables.size(); ++t) {
            ctx.write_text("tables/" + iter_tag + "_pass" + std::to_string(t) + ".json",
                           importance_table_to_json(outcome.tables[t]) + "\n");
          }
          const std::string ckpt_rel = "ckpt_" + iter_tag;
          save_checkpoint(outcome.net, ctx.path(ckpt_rel).string(), config.seed);
          ctx.register_tree(ckpt_rel);

          const DeltaReport delta = delta_report(base_report, outcome.report);
          if (!wrote_header) {
            deltas << "criterion,structure,scheme,iteration" << delta_header(delta)
                   << "\n";
            wrote_header = true;
          }
          deltas << criterion << "," << structure << "," << scheme << ","
                 << outcome.iteration;
          delta_row(deltas, delta);
        }
        ctx.stage_done("prune_" + cell);
      }
    }
  }
  ctx.write_text("deltas.csv", deltas.str());
  ctx.finish();
  std::cout << "pruning done; delta table: " << ctx.path("deltas.csv").string()
            << "\n";
}

void cmd_sweep(const ExperimentConfig& config, const std::string& checkpoint) {
  config.validate();
  RunContext ctx(config, "sweep");

  LoadedData data = load_dataset(config);
  NetworkGraph net = load_checkpoint(checkpoint);
  check(net.num_classes == data.test.class_count,
        "checkpoint expects ", net.num_classes, " classes but the dataset has ",
        data.test.class_count);
  ctx.stage_done("load");

  const std::vector<AttackSpec> attacks = config.attacks_effective();

  std::vector<StructureId::Kind> kinds;
  for (const std::string& s : config.prune.structures) {
    const StructureMode mode = structure_mode_from_name(s);
    if (mode == StructureMode::Filters || mode == StructureMode::Both) {
      kinds.push_back(StructureId::Kind::Filter);
    }
    if (mode == StructureMode::Layers || mode == StructureMode::Both) {
      check(net.arch == ArchKind::MiniResNet,
            "layer pruning requires residual architecture");
      kinds.push_back(StructureId::Kind::Block);
    }
  }
  check(!kinds.empty(), "no structure kinds to sweep");

  std::ostringstream csv;
  csv << "element_kind,attack,loss_pp,count,total,percent\n";
  for (StructureId::Kind kind : kinds) {
    const std::string kind_name =
        kind == StructureId::Kind::Filter ? "filters" : "blocks";
    SweepBuckets buckets =
        sweep_single_elements(net, kind, data.test, attacks, config.attack_seed);

    json baseline{{"kind", kind_name},
                  {"baseline_clean", buckets.baseline_clean},
                  {"baseline_adv", buckets.baseline_adv},
                  {"elements", buckets.elements.size()}};
    ctx.write_text("sweep_baseline_" + kind_name + ".json", baseline.dump(2) + "\n");

    for (const AttackSpec& spec : attacks) {
      const std::string tag = spec.tag();
      for (int i = 0; i < SweepBuckets::kLevels; ++i) {
        csv << kind_name << "," << tag << "," << i << ","
            << buckets.buckets.at(tag)[static_cast<size_t>(i)].size() << ","
            << buckets.elements.size() << ","
            << fmt_pct2(buckets.percentage(tag, i)) << "\n";
      }
    }
    ctx.stage_done("sweep_" + kind_name);
  }
  ctx.write_text("sweep.csv", csv.str());
  ctx.finish();
  std::cout << "sweep done: " << ctx.path("sweep.csv").string() << "\n";
}

void cmd_transfer(const ExperimentConfig& config,
                  const std::vector<std::string>& checkpoints) {
  config.validate();
  if (checkpoints.size() < 2) {
    throw ConfigError("transfer requires at least two checkpoints");
  }
  RunContext ctx(config, "transfer");

  LoadedData data = load_dataset(config);
  std::vector<NetworkGraph> nets;
  nets.reserve(checkpoints.size());
  std::vector<std::pair<std::string, NetworkGraph*>> models;
  std::set<std::string> used_tags;
  for (const std::string& path : checkpoints) {
    nets.push_back(load_checkpoint(path));
    std::string tag = fs::path(path).filename().string();
    if (tag.empty()) tag = path;
    while (used_tags.count(tag)) tag += "'";
    used_tags.insert(tag);
    models.emplace_back(tag, &nets.back());
  }
  ctx.stage_done("load");

  float alpha = 8.0f / 255.0f;
  for (const AttackSpec& spec : config.attacks_effective()) {
    if (spec.kind == AttackSpec::Kind::Fgsm) {
      alpha = spec.alpha;
      break;
    }
  }

  const TransferMatrix matrix = transfer_matrix(models, data.test, alpha);
  ctx.note("each source crafted one adversarial batch, reused across " +
           std::to_string(matrix.tags.size()) + " targets");

  std::ostringstream csv;
  csv << "source\\target";
  for (const std::string& tag : matrix.tags) csv << "," << tag;
  csv << "\n";
  for (size_t s = 0; s < matrix.tags.size(); ++s) {
    csv << matrix.tags[s];
    for (size_t t = 0; t < matrix.tags.size(); ++t) {
      csv << "," << fmt_pct2(matrix.at(s, t) * 100.0);
    }
    csv << "\n";
  }
  ctx.write_text("transfer.csv", csv.str());
  ctx.stage_done("transfer");
  ctx.finish();
  std::cout << "transfer matrix: " << ctx.path("transfer.csv").string() << "\n";
}

void cmd_correlate(const ExperimentConfig& config,
                   const std::vector<std::string>& report_paths) {
  config.validate();
  if (report_paths.size() < 2) {
    throw Error("correlation requires at least 2 iteration reports, got " +
                std::to_string(report_paths.size()));
  }
  RunContext ctx(config, "correlate");

  struct Point {
    int iteration;
    EvalReport report;
  };
  std::vector<Point> points;
  for (const std::string& path : report_paths) {
    std::ifstream f(path);
    check(f.good(), "cannot open report '", path, "'");
    std::ostringstream text;
    text << f.rdbuf();
    json j;
    try {
      j = json::parse(text.str());
    } catch (const std::exception& e) {
      fail("malformed report '", path, "': ", e.what());
    }
    Point p;
    if (j.contains("report")) {
      p.iteration = j.at("iteration").get<int>();
      p.report = eval_report_from_json(j.at("report").dump());
    } else {
      p.iteration = static_cast<int>(points.size()) + 1;
      p.report = eval_report_from_json(text.str());
    }
    points.push_back(std::move(p));
  }
  std::sort(points.begin(), points.end(),
            [](const Point& a, const Point& b) { return a.iteration < b.iteration; });

  std::vector<std::string> tags;
  for (const auto& [tag, _] : points.front().report.acc_adv) tags.push_back(tag);
  for (const Point& p : points) {
    check(p.report.acc_adv.size() == tags.size(),
          "iteration reports cover different attack sets");
  }

  std::vector<double> xs;
  for (const Point& p : points) xs.push_back(p.report.acc_clean);

  std::ostringstream csv;
  csv << "iteration,acc_clean";
  for (const std::string& tag : tags) csv << "," << tag;
  csv << "\n";
  for (const Point& p : points) {
    csv << p.iteration << "," << fmt6(p.report.acc_clean);
    for (const std::string& tag : tags) {
      csv << "," << fmt6(p.report.acc_adv.at(tag));
    }
    csv << "\n";
  }
  for (const std::string& tag : tags) {
    std::vector<double> ys;
    for (const Point& p : points) ys.push_back(p.report.acc_adv.at(tag));
    std::string r_text;
    try {
      r_text = fmt6(pearson_r(xs, ys));
    } catch (const Error&) {
      r_text = "undefined";
    }
    csv << "r," << tag << "," << r_text << "\n";
  }
  ctx.write_text("correlate.csv", csv.str());
  ctx.stage_done("correlate");
  ctx.finish();
  std::cout << "correlation data: " << ctx.path("correlate.csv").string() << "\n";
}

void cmd_report(const ExperimentConfig& config, const std::string& unpruned_json,
                const std::string& pruned_json) {
  config.validate();
  RunContext ctx(config, "report");

  auto load = [](const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "cannot open report '", path, "'");
    std::ostringstream text;
    text << f.rdbuf();
    return eval_report_from_json(text.str());
  };
  const EvalReport unpruned = load(unpruned_json);
  const EvalReport pruned = load(pruned_json);
  const DeltaReport delta = delta_report(unpruned, pruned);

  std::ostringstream csv;
  csv << "unpruned,pruned" << delta_header(delta) << "\n";
  csv << unpruned.model_tag << "," << pruned.model_tag;
  delta_row(csv, delta);
  ctx.write_text("delta.csv", csv.str());
  ctx.stage_done("report");
  ctx.finish();
  std::cout << csv.str();
}

namespace {

void apply_overrides(ExperimentConfig& config, const std::string& out,
                     bool seed_given, std::uint64_t seed, int subset,
                     const std::string& attacks, const std::string& criterion,
                     const std::string& structure, const std::string& scheme,
                     double ratio, int iterations) {
  if (!out.empty()) config.out_dir = out;
  if (seed_given) {
    config.seed = seed;
    config.seed_set = true;
  }
  if (subset > 0) {
    if (config.dataset.kind == "synthetic") {
      config.dataset.n_per_class = subset;
    } else {
      config.dataset.subset_per_class = subset;
    }
  }
  if (!attacks.empty()) {
    const int side =
        config.dataset.kind == "synthetic" ? config.dataset.image_side : 32;
    config.attacks = parse_attack_list(attacks, side);
  }
  if (!criterion.empty()) config.prune.criteria = {criterion};
  if (!structure.empty()) config.prune.structures = {structure};
  if (!scheme.empty()) config.prune.schemes = {scheme};
  if (ratio > 0) config.prune.ratio = ratio;
  if (iterations > 0) config.prune.iterations = iterations;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"desk-scale lab for structured pruning vs adversarial robustness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, attacks, criterion, structure, scheme;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int subset = 0, iterations = 0;
  double ratio = 0.0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON experiment config");
    cmd->add_option("--seed", seed, "master seed (required here or in the config)")
        ->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--subset", subset, "per-class sample cap");
    cmd->add_option("--attacks", attacks,
                    "comma list, e.g. fgsm:0.0314,occlusion:8,gaussian_noise:4");
    cmd->add_option("--criterion", criterion, "l1 | expected_abs | pls");
    cmd->add_option("--structure", structure, "filters | layers | both");
    cmd->add_option("--scheme", scheme,
                    "finetune | scratch-same | scratch-double | wticket");
    cmd->add_option("--ratio", ratio, "pruning ratio in (0,1)");
    cmd->add_option("--iterations", iterations, "pruning iterations K");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a base network");
  add_common(train_cmd);

  std::string checkpoint;
  CLI::App* prune_cmd = app.add_subcommand("prune", "prune + adjust + delta tables");
  add_common(prune_cmd);
  prune_cmd->add_option("checkpoint", checkpoint, "base checkpoint directory")
      ->required();

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "single-element removal sweep");
  add_common(sweep_cmd);
  sweep_cmd->add_option("checkpoint", checkpoint, "trained checkpoint directory")
      ->required();

  std::vector<std::string> transfer_ckpts;
  CLI::App* transfer_cmd =
      app.add_subcommand("transfer", "FGSM transferability matrix");
  add_common(transfer_cmd);
  transfer_cmd->add_option("checkpoints", transfer_ckpts, "two or more checkpoints")
      ->expected(-2);

  std::vector<std::string> report_paths;
  CLI::App* correlate_cmd =
      app.add_subcommand("correlate", "generalization/robustness correlation");
  add_common(correlate_cmd);
  correlate_cmd->add_option("reports", report_paths, "iteration report JSONs")
      ->expected(-1);

  std::string unpruned_path, pruned_path;
  CLI::App* report_cmd = app.add_subcommand("report", "delta table from two reports");
  add_common(report_cmd);
  report_cmd->add_option("--unpruned", unpruned_path, "unpruned eval report JSON")
      ->required();
  report_cmd->add_option("--pruned", pruned_path, "pruned eval report JSON")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    ExperimentConfig config;
    if (!config_path.empty()) config = load_config_file(config_path);
    apply_overrides(config, out_dir, seed_given, seed, subset, attacks, criterion,
                    structure, scheme, ratio, iterations);

    if (train_cmd->parsed()) {
      cmd_train(config);
    } else if (prune_cmd->parsed()) {
      cmd_prune(config, checkpoint);
    } else if (sweep_cmd->parsed()) {
      cmd_sweep(config, checkpoint);
    } else if (transfer_cmd->parsed()) {
      cmd_transfer(config, transfer_ckpts);
    } else if (correlate_cmd->parsed()) {
      cmd_correlate(config, report_paths);
    } else if (report_cmd->parsed()) {
      cmd_report(config, unpruned_path, pruned_path);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace prunelab
