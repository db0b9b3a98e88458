// Command-line front end; all functionality goes through the C API in
// mmdbfair.h. Exit codes: 0 success (or fail-to-reject for `test`),
// 1 reject (`test` only), 2 usage or runtime error.

#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmdbfair.h"

namespace {

struct ConfigArgs {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key-value configuration file");
    for (size_t i = 0; mbf_config_key_name(i) != nullptr; ++i) {
      const std::string key = mbf_config_key_name(i);
      std::string help = mbf_config_key_help(i);
      const std::string fallback = mbf_config_key_default(i);
      if (!fallback.empty()) help += " [" + fallback + "]";
      const std::string flag = key == "out_dir" ? "--out_dir,--out-dir" : "--" + key;
      CLI::Option* opt = cmd->add_option(flag, values[key], help);
      options.emplace_back(key, opt);
    }
  }

  // nullptr on success, else prints the failure and returns non-OK status
  mbf_status fill(mbf_config* config) const {
    if (!config_path.empty()) {
      const mbf_status s = mbf_config_load(config, config_path.c_str());
      if (s != MBF_OK) return s;
    }
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      const mbf_status s = mbf_config_set(config, key.c_str(), values.at(key).c_str());
      if (s != MBF_OK) return s;
    }
    return MBF_OK;
  }
};

int report_error(mbf_status status) {
  std::fprintf(stderr, "error (%s): %s\n", mbf_status_name(status), mbf_last_error());
  return 2;
}

using ConfigCommand = mbf_status (*)(const mbf_config*);

int run_config_command(const ConfigArgs& args, ConfigCommand command) {
  mbf_config* config = nullptr;
  mbf_status s = mbf_config_create(&config);
  if (s != MBF_OK) return report_error(s);
  std::unique_ptr<mbf_config, void (*)(mbf_config*)> guard(config, mbf_config_destroy);
  s = args.fill(config);
  if (s != MBF_OK) return report_error(s);
  s = command(config);
  if (s != MBF_OK) return report_error(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MMD-based fair representation learning and two-sample testing"};
  app.require_subcommand(1);

  ConfigArgs train_args, sweep_args, audit_args, chi2_args, export_args;
  std::string audit_model, export_model, export_split = "test", export_out;

  CLI::App* train = app.add_subcommand("train", "train one fair model");
  train_args.attach(train);

  CLI::App* sweep = app.add_subcommand("sweep", "lambda_s x seed tradeoff sweep");
  sweep_args.attach(sweep);

  CLI::App* audit = app.add_subcommand("audit", "sensitive-attribute audits of a trained model");
  audit->add_option("model", audit_model, "model file (.mbfm)")->required();
  audit_args.attach(audit);

  CLI::App* chi2 = app.add_subcommand("chi2", "target/sensitive chi-square diagnostics per split");
  chi2_args.attach(chi2);

  CLI::App* exp = app.add_subcommand("export-embeddings", "write representations as CSV");
  exp->add_option("model", export_model, "model file (.mbfm)")->required();
  exp->add_option("--split", export_split, "train, val or test [test]");
  exp->add_option("--out", export_out, "output CSV path")->required();
  export_args.attach(exp);

  std::string test_a, test_b, test_kernel = "gaussian";
  double test_sigma = 0.0, test_alpha = 0.05;
  int test_permutations = 200;
  std::uint64_t test_seed = 0;
  CLI::App* test = app.add_subcommand("test", "two-sample test between two numeric CSVs");
  test->add_option("csv_a", test_a, "first sample file")->required();
  test->add_option("csv_b", test_b, "second sample file")->required();
  test->add_option("--kernel", test_kernel, "gaussian or linear [gaussian]");
  test->add_option("--sigma", test_sigma, "Gaussian length-scale (<=0: median heuristic)");
  test->add_option("--alpha", test_alpha, "significance level [0.05]");
  test->add_option("--permutations", test_permutations, "permutation count [200]");
  test->add_option("--seed", test_seed, "permutation seed [0]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train->parsed()) return run_config_command(train_args, mbf_run_train);
  if (sweep->parsed()) return run_config_command(sweep_args, mbf_run_sweep);
  if (chi2->parsed()) return run_config_command(chi2_args, mbf_run_chi2);

  if (audit->parsed()) {
    mbf_config* config = nullptr;
    mbf_status s = mbf_config_create(&config);
    if (s != MBF_OK) return report_error(s);
    std::unique_ptr<mbf_config, void (*)(mbf_config*)> guard(config, mbf_config_destroy);
    s = audit_args.fill(config);
    if (s != MBF_OK) return report_error(s);
    s = mbf_run_audit(config, audit_model.c_str());
    if (s != MBF_OK) return report_error(s);
    return 0;
  }

  if (exp->parsed()) {
    mbf_config* config = nullptr;
    mbf_status s = mbf_config_create(&config);
    if (s != MBF_OK) return report_error(s);
    std::unique_ptr<mbf_config, void (*)(mbf_config*)> guard(config, mbf_config_destroy);
    s = export_args.fill(config);
    if (s != MBF_OK) return report_error(s);
    s = mbf_run_export_embeddings(config, export_model.c_str(), export_split.c_str(),
                                  export_out.c_str());
    if (s != MBF_OK) return report_error(s);
    return 0;
  }

  if (test->parsed()) {
    mbf_test_result result;
    const mbf_status s = mbf_two_sample_test(test_a.c_str(), test_b.c_str(), test_kernel.c_str(),
                                             test_sigma, test_alpha, test_permutations, test_seed,
                                             &result);
    if (s != MBF_OK) return report_error(s);
    std::printf("statistic: %.17g\n", result.statistic);
    std::printf("threshold: %.17g\n", result.threshold);
    std::printf("reject: %s\n", result.reject ? "true" : "false");
    std::printf("estimated_power: %.17g\n", result.estimated_power);
    return result.reject ? 1 : 0;
  }

  return 2;
}
