#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.h"
#include "evaluation.h"
#include "fairlearn.h"
#include "io.h"

namespace mbf::cfg {

// A run option: name, default value ("" means resolved elsewhere, e.g. from
// the dataset schema), and a one-line description.
struct KeyInfo {
  const char* name;
  const char* fallback;
  const char* help;
};

const std::vector<KeyInfo>& known_keys();

// Declarative run configuration: a key-value file where every key can also
// be overridden individually (CLI flags, C API). Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() = default;

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;  // value or registered default
  bool is_set(const std::string& key) const { return kv_.has(key); }

  data::Schema schema() const;
  fairlearn::TrainConfig train_config(const data::Schema& schema) const;
  eval::AuditConfig audit_config() const;
  std::vector<double> lambda_sweep() const;
  std::vector<std::uint64_t> seeds() const;
  std::uint64_t seed() const;
  std::string out_dir() const;
  int workers() const;
  bool write_cache() const;

 private:
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  io::KeyValues kv_;
};

}  // namespace mbf::cfg
