#include "runconfig.h"

#include <algorithm>
#include <stdexcept>

namespace mbf::cfg {

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"schema", "", "dataset schema file (required by most commands)"},
      {"mode", "dp", "fairness mode: dp or eo"},
      {"lambda_s", "1", "sensitive-power weight"},
      {"lambda_t", "1", "target-power weight"},
      {"lambda_cls", "1", "classification weight"},
      {"lambda_s_sweep", "0,0.1,1,10,100,1000,10000", "lambda_s values for sweep"},
      {"alpha", "0.05", "test significance level"},
      {"test_m", "0", "hypothetical test size (0: smallest conditional group)"},
      {"power_lambda", "-1", "variance regularizer (<0: (batch/2)^(2/3))"},
      {"loss", "block", "power term: block or perm"},
      {"perm_split", "0", "perm loss: estimate threshold and ratio on separate halves"},
      {"n_permutations", "100", "permutations for the perm loss"},
      {"optimizer", "", "adam or adadelta (default: schema)"},
      {"learning_rate", "", "optimizer step size (default: schema)"},
      {"max_epochs", "100", "training epoch cap"},
      {"patience", "20", "early-stopping patience, epochs"},
      {"batch_size", "64", "samples per group pair per step"},
      {"grid_size", "6", "Gaussian length-scales in the kernel grid"},
      {"widths", "", "featurizer layer widths (default: schema)"},
      {"head_hidden", "", "classifier hidden width (default: schema)"},
      {"seed", "0", "seed for train/audit/chi2/export"},
      {"seeds", "0,1,2,3,4,5,6,7,8,9", "seeds for sweep"},
      {"out_dir", "out", "output directory"},
      {"workers", "1", "parallel sweep workers"},
      {"write_cache", "1", "cache encoded split matrices under out_dir"},
      {"audit_trials", "100", "test repetitions per audit"},
      {"audit_permutations", "200", "permutations per audit test"},
      {"audit_epochs", "50", "audit model training epochs"},
      {"audit_learning_rate", "0.001", "audit kernel learning rate"},
      {"audit_cls_learning_rate", "0.003", "audit/transfer classifier learning rate"},
      {"audit_hidden", "16", "audit kernel MLP width"},
      {"audit_per_group", "32", "samples per group per audit test"},
  };
  return keys;
}

namespace {

const KeyInfo& find_key(const std::string& name) {
  for (const KeyInfo& k : known_keys())
    if (name == k.name) return k;
  throw std::runtime_error("unknown configuration key '" + name + "'");
}

}  // namespace

void RunConfig::load_file(const std::string& path) {
  const io::KeyValues file = io::load_key_values(path);
  for (const std::string& key : file.order) {
    find_key(key);  // reject typos with the file's key name
    kv_.set(key, file.values.at(key));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  find_key(key);
  kv_.set(key, value);
}

std::string RunConfig::get(const std::string& key) const {
  const KeyInfo& info = find_key(key);
  return kv_.get_or(key, info.fallback);
}

double RunConfig::get_double(const std::string& key) const {
  const std::string v = get(key);
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": not a number: '" + v + "'");
  }
  if (pos != v.size())
    throw std::runtime_error("config key " + key + ": not a number: '" + v + "'");
  return out;
}

long RunConfig::get_long(const std::string& key) const {
  const std::string v = get(key);
  std::size_t pos = 0;
  long out;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": not an integer: '" + v + "'");
  }
  if (pos != v.size())
    throw std::runtime_error("config key " + key + ": not an integer: '" + v + "'");
  return out;
}

data::Schema RunConfig::schema() const {
  const std::string path = get("schema");
  if (path.empty()) throw std::runtime_error("config: 'schema' is required for this command");
  return data::Schema::load(path);
}

fairlearn::TrainConfig RunConfig::train_config(const data::Schema& schema) const {
  fairlearn::TrainConfig t;
  t.weights.mode = fairlearn::parse_mode(get("mode"));
  t.weights.lambda_s = get_double("lambda_s");
  t.weights.lambda_t = get_double("lambda_t");
  t.weights.lambda_cls = get_double("lambda_cls");
  if (t.weights.lambda_s < 0 || t.weights.lambda_t < 0 || t.weights.lambda_cls < 0)
    throw std::runtime_error("config: loss weights must be nonnegative");
  t.alpha = get_double("alpha");
  t.test_m = static_cast<int>(get_long("test_m"));
  t.power_lambda = get_double("power_lambda");
  const std::string loss = get("loss");
  if (loss == "block")
    t.loss = fairlearn::TrainLoss::BlockPower;
  else if (loss == "perm")
    t.loss = fairlearn::TrainLoss::PermPower;
  else
    throw std::runtime_error("config: loss must be 'block' or 'perm'");
  t.perm_split = get_long("perm_split") != 0;
  t.n_permutations = static_cast<int>(get_long("n_permutations"));
  const std::string opt = is_set("optimizer") ? get("optimizer") : schema.optimizer;
  if (opt == "adam")
    t.optimizer = diff::OptKind::Adam;
  else if (opt == "adadelta")
    t.optimizer = diff::OptKind::Adadelta;
  else
    throw std::runtime_error("config: optimizer must be 'adam' or 'adadelta'");
  t.learning_rate = is_set("learning_rate") ? get_double("learning_rate") : schema.learning_rate;
  t.max_epochs = static_cast<int>(get_long("max_epochs"));
  t.patience = static_cast<int>(get_long("patience"));
  t.batch_size = static_cast<int>(get_long("batch_size"));
  t.grid_size = static_cast<int>(get_long("grid_size"));
  if (is_set("widths")) {
    t.widths.clear();
    for (double w : io::parse_double_list(get("widths"))) t.widths.push_back(static_cast<int>(w));
    if (t.widths.empty()) throw std::runtime_error("config: widths must be non-empty");
  } else {
    t.widths = schema.widths;
  }
  t.head_hidden = is_set("head_hidden") ? static_cast<int>(get_long("head_hidden"))
                                        : schema.head_hidden;
  return t;
}

eval::AuditConfig RunConfig::audit_config() const {
  eval::AuditConfig a;
  a.alpha = get_double("alpha");
  a.trials = static_cast<int>(get_long("audit_trials"));
  a.per_group = static_cast<int>(get_long("audit_per_group"));
  a.n_permutations = static_cast<int>(get_long("audit_permutations"));
  a.epochs = static_cast<int>(get_long("audit_epochs"));
  a.learning_rate = get_double("audit_learning_rate");
  a.cls_learning_rate = get_double("audit_cls_learning_rate");
  a.hidden = static_cast<int>(get_long("audit_hidden"));
  return a;
}

std::vector<double> RunConfig::lambda_sweep() const {
  const std::vector<double> v = io::parse_double_list(get("lambda_s_sweep"));
  if (v.empty()) throw std::runtime_error("config: lambda_s_sweep must be non-empty");
  return v;
}

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (double v : io::parse_double_list(get("seeds")))
    out.push_back(static_cast<std::uint64_t>(v));
  if (out.empty()) throw std::runtime_error("config: seeds must be non-empty");
  return out;
}

std::uint64_t RunConfig::seed() const { return static_cast<std::uint64_t>(get_long("seed")); }

std::string RunConfig::out_dir() const { return get("out_dir"); }

int RunConfig::workers() const {
  const int w = static_cast<int>(get_long("workers"));
  if (w < 1) throw std::runtime_error("config: workers must be >= 1");
  return w;
}

bool RunConfig::write_cache() const { return get_long("write_cache") != 0; }

}  // namespace mbf::cfg
