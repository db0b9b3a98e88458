#include "mmdbfair.h"

#include <cstring>
#include <stdexcept>
#include <string>

#include "commands.h"
#include "runconfig.h"
#include "tensor.h"

namespace {

thread_local std::string g_last_error;

void clear_error() { g_last_error.clear(); }

mbf_status fail(mbf_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs `fn`, translating exceptions into status codes + thread-local message.
template <typename Fn>
mbf_status guarded(Fn&& fn) {
  clear_error();
  try {
    fn();
    return MBF_OK;
  } catch (const mbf::diff::numeric_error& e) {
    return fail(MBF_ERR_NUMERIC, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(MBF_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::runtime_error& e) {
    // parse/config/data problems surface as runtime_error with context
    const std::string what = e.what();
    if (what.find("cannot open") != std::string::npos ||
        what.find("write failed") != std::string::npos)
      return fail(MBF_ERR_IO, what);
    return fail(MBF_ERR_PARSE, what);
  } catch (const std::exception& e) {
    return fail(MBF_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MBF_ERR_INTERNAL, "unknown error");
  }
}

mbf_status require(bool ok, const char* message) {
  if (ok) return MBF_OK;
  return fail(MBF_ERR_INVALID_ARGUMENT, message);
}

}  // namespace

struct mbf_config {
  mbf::cfg::RunConfig impl;
};

extern "C" {

const char* mbf_version(void) { return "1.0.0"; }

const char* mbf_status_name(mbf_status status) {
  switch (status) {
    case MBF_OK:
      return "ok";
    case MBF_ERR_INVALID_ARGUMENT:
      return "invalid_argument";
    case MBF_ERR_PARSE:
      return "parse_error";
    case MBF_ERR_IO:
      return "io_error";
    case MBF_ERR_NUMERIC:
      return "numeric_error";
    case MBF_ERR_INTERNAL:
      return "internal_error";
  }
  return "unknown";
}

const char* mbf_last_error(void) { return g_last_error.c_str(); }

mbf_status mbf_config_create(mbf_config** out) {
  if (require(out != nullptr, "mbf_config_create: out is null") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { *out = new mbf_config(); });
}

void mbf_config_destroy(mbf_config* config) { delete config; }

mbf_status mbf_config_load(mbf_config* config, const char* path) {
  if (require(config && path, "mbf_config_load: null argument") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { config->impl.load_file(path); });
}

mbf_status mbf_config_set(mbf_config* config, const char* key, const char* value) {
  if (require(config && key && value, "mbf_config_set: null argument") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { config->impl.set(key, value); });
}

mbf_status mbf_config_get(const mbf_config* config, const char* key, char* buffer,
                          size_t buffer_size) {
  if (require(config && key && buffer && buffer_size > 0, "mbf_config_get: null argument") !=
      MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    const std::string value = config->impl.get(key);
    if (value.size() + 1 > buffer_size)
      throw std::invalid_argument("mbf_config_get: buffer too small (need " +
                                  std::to_string(value.size() + 1) + " bytes)");
    std::memcpy(buffer, value.c_str(), value.size() + 1);
  });
}

const char* mbf_config_key_name(size_t index) {
  const auto& keys = mbf::cfg::known_keys();
  return index < keys.size() ? keys[index].name : nullptr;
}

const char* mbf_config_key_default(size_t index) {
  const auto& keys = mbf::cfg::known_keys();
  return index < keys.size() ? keys[index].fallback : nullptr;
}

const char* mbf_config_key_help(size_t index) {
  const auto& keys = mbf::cfg::known_keys();
  return index < keys.size() ? keys[index].help : nullptr;
}

mbf_status mbf_run_train(const mbf_config* config) {
  if (require(config != nullptr, "mbf_run_train: config is null") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { mbf::commands::cmd_train(config->impl); });
}

mbf_status mbf_run_sweep(const mbf_config* config) {
  if (require(config != nullptr, "mbf_run_sweep: config is null") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { mbf::commands::cmd_sweep(config->impl); });
}

mbf_status mbf_run_audit(const mbf_config* config, const char* model_path) {
  if (require(config && model_path, "mbf_run_audit: null argument") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { mbf::commands::cmd_audit(config->impl, model_path); });
}

mbf_status mbf_run_chi2(const mbf_config* config) {
  if (require(config != nullptr, "mbf_run_chi2: config is null") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] { mbf::commands::cmd_chi2(config->impl); });
}

mbf_status mbf_run_export_embeddings(const mbf_config* config, const char* model_path,
                                     const char* split, const char* out_path) {
  if (require(config && model_path && split && out_path,
              "mbf_run_export_embeddings: null argument") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded(
      [&] { mbf::commands::cmd_export_embeddings(config->impl, model_path, split, out_path); });
}

mbf_status mbf_two_sample_test(const char* csv_a, const char* csv_b, const char* kernel,
                               double sigma, double alpha, int n_permutations, uint64_t seed,
                               mbf_test_result* out) {
  if (require(csv_a && csv_b && kernel && out, "mbf_two_sample_test: null argument") != MBF_OK)
    return MBF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    mbf::commands::TestOptions options;
    options.csv_a = csv_a;
    options.csv_b = csv_b;
    options.kernel = kernel;
    options.sigma = sigma;
    options.alpha = alpha;
    options.n_permutations = n_permutations;
    options.seed = seed;
    const mbf::estimators::TestResult r = mbf::commands::cmd_test(options);
    out->statistic = r.statistic;
    out->threshold = r.threshold;
    out->reject = r.reject ? 1 : 0;
    out->estimated_power = r.estimated_power;
  });
}

}  // extern "C"
