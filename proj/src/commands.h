#pragma once

#include <cstdint>
#include <string>

#include "estimators.h"
#include "runconfig.h"

namespace mbf::commands {

// Each command writes its outputs under the config's out_dir and returns the
// primary artifact path. All commands are pure functions of (config, seed,
// input files); reruns produce byte-identical files.

struct TrainPaths {
  std::string model;
  std::string history;
  std::string report;
};
TrainPaths cmd_train(const cfg::RunConfig& config);

struct SweepPaths {
  std::string detail;
  std::string aggregate;
};
SweepPaths cmd_sweep(const cfg::RunConfig& config);

std::string cmd_audit(const cfg::RunConfig& config, const std::string& model_path);

std::string cmd_chi2(const cfg::RunConfig& config);

struct TestOptions {
  std::string csv_a;
  std::string csv_b;
  std::string kernel = "gaussian";  // gaussian | linear
  double sigma = 0.0;               // <= 0: median heuristic on the pooled sample
  double alpha = 0.05;
  int n_permutations = 200;
  std::uint64_t seed = 0;
};
estimators::TestResult cmd_test(const TestOptions& options);

std::string cmd_export_embeddings(const cfg::RunConfig& config, const std::string& model_path,
                                  const std::string& split, const std::string& out_path);

}  // namespace mbf::commands
