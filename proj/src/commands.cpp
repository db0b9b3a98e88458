#include "commands.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "evaluation.h"
#include "fairlearn.h"
#include "io.h"

namespace mbf::commands {

namespace fs = std::filesystem;
using diff::Mat;
using io::csv_line;
using io::format_double;

namespace {

void write_history_csv(const std::string& path,
                       const std::vector<fairlearn::EpochStats>& history) {
  std::string out = csv_line({"epoch", "cls_loss", "rho_s", "rho_t", "val_objective"});
  for (const fairlearn::EpochStats& e : history)
    out += csv_line({std::to_string(e.epoch), format_double(e.cls_loss), format_double(e.rho_s),
                     format_double(e.rho_t), format_double(e.val_objective)});
  io::write_file(path, out);
}

std::string eo_cell(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : "absent";
}

void write_report_csv(const std::string& path,
                      const std::vector<std::pair<std::string, eval::FairnessReport>>& reports) {
  std::string out = csv_line({"split", "accuracy", "dp", "eo", "eo_t0", "eo_t1"});
  for (const auto& [split, r] : reports)
    out += csv_line({split, format_double(r.accuracy), format_double(r.dp), format_double(r.eo),
                     eo_cell(r.eo_components[0]), eo_cell(r.eo_components[1])});
  io::write_file(path, out);
}

data::Dataset load_dataset(const cfg::RunConfig& config) {
  data::Dataset ds = data::load_tabular(config.schema());
  if (ds.report.dropped_rows > 0)
    std::fprintf(stderr, "note: dropped %d rows with missing feature values\n",
                 ds.report.dropped_rows);
  if (ds.report.unknown_categories > 0)
    std::fprintf(stderr, "note: %d category values unseen in train encoded as zeros\n",
                 ds.report.unknown_categories);
  if (config.write_cache()) data::write_split_cache(ds, config.out_dir() + "/cache");
  return ds;
}

}  // namespace

TrainPaths cmd_train(const cfg::RunConfig& config) {
  const std::string out_dir = config.out_dir();
  const data::Dataset ds = load_dataset(config);
  fs::create_directories(out_dir);
  const fairlearn::TrainConfig tc = config.train_config(ds.schema);
  fairlearn::TrainResult tr = fairlearn::train(ds.train, ds.val, tc, config.seed());

  TrainPaths paths{out_dir + "/model.mbfm", out_dir + "/history.csv", out_dir + "/report.csv"};
  fairlearn::save_model(tr.model, paths.model);
  write_history_csv(paths.history, tr.history);
  write_report_csv(paths.report, {{"val", eval::evaluate_model(tr.model, ds.val)},
                                  {"test", eval::evaluate_model(tr.model, ds.test)}});
  return paths;
}

SweepPaths cmd_sweep(const cfg::RunConfig& config) {
  const std::string out_dir = config.out_dir();
  const data::Dataset ds = load_dataset(config);
  fs::create_directories(out_dir);
  const fairlearn::TrainConfig tc = config.train_config(ds.schema);
  const std::vector<double> lambdas = config.lambda_sweep();
  const std::vector<std::uint64_t> run_seeds = config.seeds();

  // Each run writes its model and history into its own subdirectory.
  auto on_run = [&](std::size_t index, const fairlearn::SweepRow& row,
                    const fairlearn::TrainResult& tr) {
    std::ostringstream dir;
    dir << out_dir << "/run_" << index << "_lambda" << format_double(row.lambda_s) << "_seed"
        << row.seed;
    fs::create_directories(dir.str());
    fairlearn::save_model(tr.model, dir.str() + "/model.mbfm");
    write_history_csv(dir.str() + "/history.csv", tr.history);
  };

  const fairlearn::SweepResult result = fairlearn::sweep(
      ds, lambdas, run_seeds, tc, config.audit_config(), config.workers(), on_run);

  SweepPaths paths{out_dir + "/sweep_detail.csv", out_dir + "/sweep_aggregate.csv"};
  std::string detail = csv_line(
      {"lambda_s", "seed", "accuracy", "dp", "eo", "sensitive_audit_acc", "mmd_audit_power"});
  for (const fairlearn::SweepRow& r : result.rows)
    detail += csv_line({format_double(r.lambda_s), std::to_string(r.seed),
                        format_double(r.accuracy), format_double(r.dp), format_double(r.eo),
                        format_double(r.sensitive_audit_acc), format_double(r.mmd_audit_power)});
  io::write_file(paths.detail, detail);

  std::string agg = csv_line({"lambda_s", "runs", "accuracy_mean", "accuracy_std", "dp_mean",
                              "dp_std", "eo_mean", "eo_std", "sensitive_audit_acc_mean",
                              "sensitive_audit_acc_std", "mmd_audit_power_mean",
                              "mmd_audit_power_std"});
  for (const fairlearn::SweepAggregate& a : result.aggregates)
    agg += csv_line({format_double(a.lambda_s), std::to_string(a.runs),
                     format_double(a.accuracy_mean), format_double(a.accuracy_std),
                     format_double(a.dp_mean), format_double(a.dp_std), format_double(a.eo_mean),
                     format_double(a.eo_std), format_double(a.sensitive_audit_acc_mean),
                     format_double(a.sensitive_audit_acc_std),
                     format_double(a.mmd_audit_power_mean),
                     format_double(a.mmd_audit_power_std)});
  io::write_file(paths.aggregate, agg);
  return paths;
}

std::string cmd_audit(const cfg::RunConfig& config, const std::string& model_path) {
  const std::string out_dir = config.out_dir();
  const fairlearn::FairModel model = fairlearn::load_model(model_path);
  const data::Dataset ds = load_dataset(config);
  fs::create_directories(out_dir);
  if (model.phi.input_dim() != ds.feature_dim())
    throw std::runtime_error("cmd_audit: model expects " + std::to_string(model.phi.input_dim()) +
                             " features but dataset has " + std::to_string(ds.feature_dim()));
  const Mat reps = model.representations(ds.test.features);
  const eval::AuditConfig acfg = config.audit_config();
  Rng seeds(config.seed());
  const eval::ClassifierAudit cls =
      eval::sensitive_classifier_audit(reps, ds.test.s, acfg, seeds.stream(17).seed());
  const double power = eval::mmd_power_audit(reps, ds.test.s, acfg, seeds.stream(18).seed());

  const std::string path = out_dir + "/audit.csv";
  std::string out = csv_line({"model", "sensitive_audit_acc", "majority_baseline",
                              "mmd_audit_power", "trials"});
  out += csv_line({model_path, format_double(cls.accuracy), format_double(cls.majority_baseline),
                   format_double(power), std::to_string(acfg.trials)});
  io::write_file(path, out);
  return path;
}

std::string cmd_chi2(const cfg::RunConfig& config) {
  const std::string out_dir = config.out_dir();
  const data::Dataset ds = load_dataset(config);
  fs::create_directories(out_dir);
  const std::string path = out_dir + "/chi2.csv";
  std::string out = csv_line({"split", "chi2", "p_value"});
  for (const data::DatasetSplit* split : {&ds.train, &ds.val, &ds.test}) {
    const data::Chi2Result r = data::chi2_independence(split->t, split->s);
    out += csv_line({split->tag, format_double(r.statistic), format_double(r.p_value)});
  }
  io::write_file(path, out);
  return path;
}

namespace {

// Numeric CSV: optional header line, comma-separated doubles.
Mat read_numeric_csv(const std::string& path) {
  const std::string text = io::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  std::size_t width = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (io::trim(line).empty()) continue;
    std::vector<double> row;
    bool numeric = true;
    for (const std::string& cell : io::split_list(line)) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(cell, &pos));
        if (pos != cell.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      if (first) {  // header line
        first = false;
        continue;
      }
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    if (width == 0) width = row.size();
    if (row.size() != width)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(width) + " columns, got " +
                               std::to_string(row.size()));
    rows.push_back(std::move(row));
    first = false;
  }
  if (rows.empty()) throw std::runtime_error(path + ": no numeric rows");
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

}  // namespace

estimators::TestResult cmd_test(const TestOptions& options) {
  Mat a = read_numeric_csv(options.csv_a);
  Mat b = read_numeric_csv(options.csv_b);
  if (a.cols() != b.cols())
    throw std::runtime_error("cmd_test: feature dimensions differ (" + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.cols()) + ")");
  // the U-statistic needs equal group sizes; subsample the larger head
  const Eigen::Index n = std::min(a.rows(), b.rows());
  if (n < 4) throw std::runtime_error("cmd_test: need at least 4 samples per file");
  a.conservativeResize(n, Eigen::NoChange);
  b.conservativeResize(n, Eigen::NoChange);

  kernels::KernelSpec kernel;
  if (options.kernel == "linear") {
    kernel = kernels::LinearKernel{};
  } else if (options.kernel == "gaussian") {
    double sigma = options.sigma;
    if (!(sigma > 0.0)) {
      Mat pooled(2 * n, a.cols());
      pooled << a, b;
      sigma = kernels::median_heuristic(pooled);
    }
    kernel = kernels::GaussianKernel{sigma};
  } else {
    throw std::runtime_error("cmd_test: kernel must be 'gaussian' or 'linear'");
  }

  estimators::PowerConfig cfg =
      estimators::PowerConfig::defaults(static_cast<int>(n), static_cast<int>(n), options.alpha);
  cfg.n_permutations = options.n_permutations;
  return estimators::two_sample_test(a, b, kernel, cfg, options.seed);
}

std::string cmd_export_embeddings(const cfg::RunConfig& config, const std::string& model_path,
                                  const std::string& split, const std::string& out_path) {
  const fairlearn::FairModel model = fairlearn::load_model(model_path);
  const data::Dataset ds = load_dataset(config);
  const data::DatasetSplit* chosen = nullptr;
  if (split == "train")
    chosen = &ds.train;
  else if (split == "val")
    chosen = &ds.val;
  else if (split == "test")
    chosen = &ds.test;
  else
    throw std::runtime_error("cmd_export_embeddings: split must be train, val or test");
  if (model.phi.input_dim() != ds.feature_dim())
    throw std::runtime_error("cmd_export_embeddings: model/dataset dimension mismatch");
  eval::export_embeddings(model, *chosen, out_path);
  return out_path;
}

}  // namespace mbf::commands
