#pragma once

#include <string>
#include <vector>

#include "prunelab/config.hpp"
#include "prunelab/data.hpp"

namespace prunelab {

struct LoadedData {
  DatasetSplit train;
  DatasetSplit test;
};

LoadedData load_dataset(const ExperimentConfig& config);

/// Experiment drivers behind the CLI subcommands. Every file they emit lands
/// under config.out_dir and is listed in the run manifest; all CSV output is
/// byte-reproducible for a fixed (config, seed).
void cmd_train(const ExperimentConfig& config);
void cmd_prune(const ExperimentConfig& config, const std::string& base_checkpoint);
void cmd_sweep(const ExperimentConfig& config, const std::string& checkpoint);
void cmd_transfer(const ExperimentConfig& config,
                  const std::vector<std::string>& checkpoints);
void cmd_correlate(const ExperimentConfig& config,
                   const std::vector<std::string>& report_paths);
void cmd_report(const ExperimentConfig& config, const std::string& unpruned_json,
                const std::string& pruned_json);

/// Argument parsing + dispatch. Exit codes: 0 success, 2 configuration or
/// usage error, 3 runtime error.
int run_cli(int argc, const char* const* argv);

}  // namespace prunelab
