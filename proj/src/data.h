#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "io.h"
#include "tensor.h"

namespace mbf::data {

using diff::Mat;

// How a raw label column maps to {0,1}. "auto" requires exactly two distinct
// raw values in the training split (sorted lexicographically -> 0, 1).
struct LabelRule {
  enum class Kind { Auto, Equals, GreaterThan } kind = Kind::Auto;
  std::string equals_value;
  double threshold = 0.0;

  static LabelRule parse(const std::string& text);
};

// Declarative dataset description, loaded from a key-value file. See
// data/schemas/*.schema for examples.
struct Schema {
  std::string name;
  std::string csv_path;  // single-file mode
  std::vector<std::string> continuous;
  std::vector<std::string> categorical;
  std::string target_column;
  std::string sensitive_column;
  LabelRule target_rule;
  LabelRule sensitive_rule;

  enum class SplitMode { Fractions, Files } split_mode = SplitMode::Fractions;
  double train_frac = 0.7, val_frac = 0.1, test_frac = 0.2;
  std::uint64_t split_seed = 0;
  std::string train_file, val_file, test_file;  // Files mode

  // per-dataset training defaults
  std::vector<int> widths = {8, 8, 8};
  int head_hidden = 0;  // 0 -> last width
  std::string optimizer = "adam";
  double learning_rate = 1e-4;

  static Schema load(const std::string& path);
  static Schema from_key_values(const io::KeyValues& kv, const std::string& origin);
};

// Labels are -1 when absent for a row.
struct DatasetSplit {
  Mat features;
  std::vector<std::int8_t> t;
  std::vector<std::int8_t> s;
  std::string tag;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

struct EncodingReport {
  int dropped_rows = 0;       // missing feature values
  int unknown_categories = 0; // val/test categories unseen in train
};

struct Dataset {
  Schema schema;
  DatasetSplit train, val, test;
  EncodingReport report;
  int feature_dim() const { return train.dim(); }
};

// Parses, splits, and encodes (one-hot categoricals; z-scored continuous
// with train statistics; feature-incomplete rows dropped).
Dataset load_tabular(const Schema& schema);

// Index sets by a single binary attribute ('t' or 's'): rows with value 0,
// then rows with value 1. Throws if either set is empty.
std::array<std::vector<int>, 2> group_indices(const DatasetSplit& split, char attribute);

// Conditional cells for the equalized-odds objective: cell[t][s]. Throws if
// any cell is empty.
std::array<std::array<std::vector<int>, 2>, 2> conditional_group_indices(
    const DatasetSplit& split);

struct Chi2Result {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Pearson chi-square of independence on the 2x2 contingency table of rows
// carrying both labels (df = 1, no continuity correction).
Chi2Result chi2_independence(const std::vector<std::int8_t>& t,
                             const std::vector<std::int8_t>& s);

// Rows of `m` selected by `idx`.
Mat take_rows(const Mat& m, const std::vector<int>& idx);

// Writes train/val/test feature matrices in the flat binary cache format.
void write_split_cache(const Dataset& ds, const std::string& dir);

}  // namespace mbf::data
