/* mmdbfair: fair representation learning and kernel two-sample testing.
 *
 * C interface to the shared library. All functions return an mbf_status;
 * on any non-OK status, mbf_last_error() carries a human-readable message
 * for the calling thread. Handles are opaque and must be released with
 * their destroy function.
 */
#ifndef MMDBFAIR_H
#define MMDBFAIR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MBF_API __declspec(dllexport)
#else
#define MBF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mbf_status {
  MBF_OK = 0,
  MBF_ERR_INVALID_ARGUMENT = 1,
  MBF_ERR_PARSE = 2,
  MBF_ERR_IO = 3,
  MBF_ERR_NUMERIC = 4,
  MBF_ERR_INTERNAL = 5
} mbf_status;

MBF_API const char* mbf_version(void);
MBF_API const char* mbf_status_name(mbf_status status);

/* Message for the most recent failure on this thread ("" if none). */
MBF_API const char* mbf_last_error(void);

/* ---- run configuration ---------------------------------------------- */

typedef struct mbf_config mbf_config;

MBF_API mbf_status mbf_config_create(mbf_config** out);
MBF_API void mbf_config_destroy(mbf_config* config);

/* Merges a key-value config file ('key = value' lines, '#' comments). */
MBF_API mbf_status mbf_config_load(mbf_config* config, const char* path);

/* Sets one key; unknown keys are rejected. */
MBF_API mbf_status mbf_config_set(mbf_config* config, const char* key, const char* value);

/* Resolved value (set value or built-in default). */
MBF_API mbf_status mbf_config_get(const mbf_config* config, const char* key, char* buffer,
                                  size_t buffer_size);

/* Enumerate known keys: returns NULL once index is past the end. */
MBF_API const char* mbf_config_key_name(size_t index);
MBF_API const char* mbf_config_key_default(size_t index);
MBF_API const char* mbf_config_key_help(size_t index);

/* ---- commands --------------------------------------------------------
 * Outputs are written under the config's out_dir. Reruns with identical
 * configuration and seed produce byte-identical files.
 */

MBF_API mbf_status mbf_run_train(const mbf_config* config);
MBF_API mbf_status mbf_run_sweep(const mbf_config* config);
MBF_API mbf_status mbf_run_audit(const mbf_config* config, const char* model_path);
MBF_API mbf_status mbf_run_chi2(const mbf_config* config);
MBF_API mbf_status mbf_run_export_embeddings(const mbf_config* config, const char* model_path,
                                             const char* split, const char* out_path);

/* ---- two-sample test ------------------------------------------------- */

typedef struct mbf_test_result {
  double statistic;       /* n * squared-MMD U-statistic */
  double threshold;       /* permutation threshold at alpha */
  int reject;             /* 1 if statistic > threshold */
  double estimated_power; /* block-test power estimate, in (0,1) */
} mbf_test_result;

/* kernel: "gaussian" or "linear"; sigma <= 0 selects the median heuristic. */
MBF_API mbf_status mbf_two_sample_test(const char* csv_a, const char* csv_b, const char* kernel,
                                       double sigma, double alpha, int n_permutations,
                                       uint64_t seed, mbf_test_result* out);

#ifdef __cplusplus
}
#endif

#endif /* MMDBFAIR_H */
