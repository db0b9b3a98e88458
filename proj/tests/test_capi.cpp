// Exercises the shared-library surface the way an external consumer would:
// through mmdbfair.h only (plus test scaffolding for data generation).

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "mmdbfair.h"
#include "test_support.h"

namespace fs = std::filesystem;

namespace {

struct ConfigHandle {
  mbf_config* ptr = nullptr;
  ConfigHandle() { REQUIRE(mbf_config_create(&ptr) == MBF_OK); }
  ~ConfigHandle() { mbf_config_destroy(ptr); }
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

// Numeric CSV of 1-D Gaussian samples.
void write_samples(const std::string& path, mbf::Rng& rng, int n, double mean) {
  std::string text = "x\n";
  char buf[64];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.10f\n", mean + rng.normal());
    text += buf;
  }
  write_text(path, text);
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::string(mbf_version()) == "1.0.0");
  CHECK(std::string(mbf_status_name(MBF_OK)) == "ok");
  CHECK(std::string(mbf_status_name(MBF_ERR_PARSE)) == "parse_error");
  CHECK(std::string(mbf_status_name(MBF_ERR_NUMERIC)) == "numeric_error");
}

TEST_CASE("config lifecycle") {
  ConfigHandle config;
  SUBCASE("defaults are resolved") {
    char buf[64];
    REQUIRE(mbf_config_get(config.ptr, "mode", buf, sizeof buf) == MBF_OK);
    CHECK(std::string(buf) == "dp");
    REQUIRE(mbf_config_get(config.ptr, "batch_size", buf, sizeof buf) == MBF_OK);
    CHECK(std::string(buf) == "64");
  }
  SUBCASE("set and get round trip") {
    REQUIRE(mbf_config_set(config.ptr, "lambda_s", "12.5") == MBF_OK);
    char buf[64];
    REQUIRE(mbf_config_get(config.ptr, "lambda_s", buf, sizeof buf) == MBF_OK);
    CHECK(std::string(buf) == "12.5");
  }
  SUBCASE("unknown keys are rejected with a message") {
    CHECK(mbf_config_set(config.ptr, "lambda_sss", "1") != MBF_OK);
    CHECK(std::string(mbf_last_error()).find("lambda_sss") != std::string::npos);
  }
  SUBCASE("small buffers fail cleanly") {
    char tiny[2];
    CHECK(mbf_config_get(config.ptr, "lambda_s_sweep", tiny, sizeof tiny) ==
          MBF_ERR_INVALID_ARGUMENT);
  }
  SUBCASE("null arguments are invalid") {
    CHECK(mbf_config_set(nullptr, "mode", "dp") == MBF_ERR_INVALID_ARGUMENT);
    CHECK(mbf_config_load(config.ptr, nullptr) == MBF_ERR_INVALID_ARGUMENT);
  }
  SUBCASE("key enumeration terminates") {
    std::size_t count = 0;
    while (mbf_config_key_name(count) != nullptr) {
      CHECK(mbf_config_key_help(count) != nullptr);
      ++count;
    }
    CHECK(count > 20);
    CHECK(mbf_config_key_default(count) == nullptr);
  }
}

TEST_CASE("config file loading") {
  TempDir dir("mbf_capi_config");
  ConfigHandle config;
  SUBCASE("missing file is an io error") {
    CHECK(mbf_config_load(config.ptr, dir.file("nope.cfg").c_str()) == MBF_ERR_IO);
  }
  SUBCASE("syntax errors carry the line number") {
    write_text(dir.file("bad.cfg"), "mode = dp\nthis line has no equals\n");
    CHECK(mbf_config_load(config.ptr, dir.file("bad.cfg").c_str()) == MBF_ERR_PARSE);
    CHECK(std::string(mbf_last_error()).find(":2") != std::string::npos);
  }
  SUBCASE("valid file applies values") {
    write_text(dir.file("ok.cfg"), "# comment\nmode = eo\nlambda_s = 100\n");
    REQUIRE(mbf_config_load(config.ptr, dir.file("ok.cfg").c_str()) == MBF_OK);
    char buf[32];
    REQUIRE(mbf_config_get(config.ptr, "mode", buf, sizeof buf) == MBF_OK);
    CHECK(std::string(buf) == "eo");
  }
}

TEST_CASE("two-sample test through the C API") {
  TempDir dir("mbf_capi_test");
  mbf::Rng rng(7);
  write_samples(dir.file("a.csv"), rng, 80, 0.0);
  write_samples(dir.file("b.csv"), rng, 80, 0.0);
  write_samples(dir.file("far.csv"), rng, 80, 5.0);

  mbf_test_result result;
  SUBCASE("a file against itself fails to reject") {
    REQUIRE(mbf_two_sample_test(dir.file("a.csv").c_str(), dir.file("a.csv").c_str(), "gaussian",
                                0.0, 0.05, 100, 1, &result) == MBF_OK);
    CHECK(result.reject == 0);
    CHECK(result.statistic == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("matched distributions usually fail to reject") {
    REQUIRE(mbf_two_sample_test(dir.file("a.csv").c_str(), dir.file("b.csv").c_str(), "gaussian",
                                1.0, 0.05, 200, 1, &result) == MBF_OK);
    CHECK(result.estimated_power > 0.0);
    CHECK(result.estimated_power < 1.0);
  }
  SUBCASE("separated distributions reject") {
    REQUIRE(mbf_two_sample_test(dir.file("a.csv").c_str(), dir.file("far.csv").c_str(),
                                "gaussian", 1.0, 0.05, 200, 1, &result) == MBF_OK);
    CHECK(result.reject == 1);
    CHECK(result.statistic > result.threshold);
  }
  SUBCASE("malformed input is a parse error") {
    write_text(dir.file("junk.csv"), "x\n1.0\nnot-a-number\n");
    CHECK(mbf_two_sample_test(dir.file("junk.csv").c_str(), dir.file("a.csv").c_str(), "gaussian",
                              1.0, 0.05, 100, 1, &result) == MBF_ERR_PARSE);
    CHECK(std::strlen(mbf_last_error()) > 0);
  }
  SUBCASE("unknown kernel is rejected") {
    CHECK(mbf_two_sample_test(dir.file("a.csv").c_str(), dir.file("a.csv").c_str(), "cubic", 1.0,
                              0.05, 100, 1, &result) != MBF_OK);
  }
}

TEST_CASE("full pipeline through the C API") {
  TempDir dir("mbf_capi_pipeline");
  mbf::Rng rng(11);
  testsup::write_synth_csv(dir.file("synth.csv"), rng, 1200, 2.5, 2.0);
  testsup::write_synth_schema(dir.file("synth.schema"), dir.file("synth.csv"));

  ConfigHandle config;
  REQUIRE(mbf_config_set(config.ptr, "schema", dir.file("synth.schema").c_str()) == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "out_dir", dir.file("out").c_str()) == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "max_epochs", "2") == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "mode", "eo") == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "seed", "3") == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "audit_trials", "10") == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "audit_epochs", "3") == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "audit_per_group", "16") == MBF_OK);
  REQUIRE(mbf_config_set(config.ptr, "audit_permutations", "50") == MBF_OK);

  REQUIRE_MESSAGE(mbf_run_train(config.ptr) == MBF_OK, mbf_last_error());
  CHECK(fs::exists(dir.file("out/model.mbfm")));
  CHECK(fs::exists(dir.file("out/history.csv")));
  CHECK(fs::exists(dir.file("out/report.csv")));
  CHECK(fs::exists(dir.file("out/cache/train.mbfd")));

  // byte-identical rerun
  const std::string history1 = slurp(dir.file("out/history.csv"));
  REQUIRE(mbf_run_train(config.ptr) == MBF_OK);
  CHECK(slurp(dir.file("out/history.csv")) == history1);

  REQUIRE_MESSAGE(mbf_run_chi2(config.ptr) == MBF_OK, mbf_last_error());
  const std::string chi2 = slurp(dir.file("out/chi2.csv"));
  CHECK(chi2.rfind("split,chi2,p_value\n", 0) == 0);

  REQUIRE_MESSAGE(mbf_run_audit(config.ptr, dir.file("out/model.mbfm").c_str()) == MBF_OK,
                  mbf_last_error());
  CHECK(fs::exists(dir.file("out/audit.csv")));

  REQUIRE_MESSAGE(mbf_run_export_embeddings(config.ptr, dir.file("out/model.mbfm").c_str(),
                                            "test", dir.file("out/embeddings.csv").c_str()) ==
                      MBF_OK,
                  mbf_last_error());
  const std::string embeddings = slurp(dir.file("out/embeddings.csv"));
  CHECK(embeddings.rfind("row,t,s,", 0) == 0);

  SUBCASE("audit with a missing model is an error") {
    CHECK(mbf_run_audit(config.ptr, dir.file("missing.mbfm").c_str()) != MBF_OK);
  }
  SUBCASE("export with a bad split name is an error") {
    CHECK(mbf_run_export_embeddings(config.ptr, dir.file("out/model.mbfm").c_str(), "holdout",
                                    dir.file("x.csv").c_str()) != MBF_OK);
  }
  SUBCASE("sweep outputs are deterministic and complete") {
    REQUIRE(mbf_config_set(config.ptr, "lambda_s_sweep", "0,1") == MBF_OK);
    REQUIRE(mbf_config_set(config.ptr, "seeds", "1") == MBF_OK);
    REQUIRE_MESSAGE(mbf_run_sweep(config.ptr) == MBF_OK, mbf_last_error());
    const std::string detail = slurp(dir.file("out/sweep_detail.csv"));
    const std::string aggregate = slurp(dir.file("out/sweep_aggregate.csv"));
    CHECK(detail.rfind("lambda_s,seed,accuracy,dp,eo,sensitive_audit_acc,mmd_audit_power\n", 0) ==
          0);
    CHECK(std::count(detail.begin(), detail.end(), '\n') == 3);     // header + 2 rows
    CHECK(std::count(aggregate.begin(), aggregate.end(), '\n') == 3);
    CHECK(fs::exists(dir.file("out/run_0_lambda0_seed1/model.mbfm")));
    REQUIRE(mbf_run_sweep(config.ptr) == MBF_OK);
    CHECK(slurp(dir.file("out/sweep_detail.csv")) == detail);
    CHECK(slurp(dir.file("out/sweep_aggregate.csv")) == aggregate);
  }
}
