#include "data.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rng.h"
#include "special.h"

namespace mbf::data {

LabelRule LabelRule::parse(const std::string& text) {
  LabelRule r;
  if (text.empty() || text == "auto") {
    r.kind = Kind::Auto;
    return r;
  }
  if (text.rfind("equals:", 0) == 0) {
    r.kind = Kind::Equals;
    r.equals_value = io::trim(text.substr(7));
    if (r.equals_value.empty()) throw std::runtime_error("label rule 'equals:' needs a value");
    return r;
  }
  if (text.rfind("gt:", 0) == 0) {
    r.kind = Kind::GreaterThan;
    const std::string num = io::trim(text.substr(3));
    std::size_t pos = 0;
    r.threshold = std::stod(num, &pos);
    if (pos != num.size()) throw std::runtime_error("label rule 'gt:' needs a number");
    return r;
  }
  throw std::runtime_error("unknown label rule '" + text + "' (want auto, equals:V or gt:X)");
}

Schema Schema::load(const std::string& path) {
  return from_key_values(io::load_key_values(path), path);
}

Schema Schema::from_key_values(const io::KeyValues& kv, const std::string& origin) {
  Schema s;
  s.name = kv.get_or("name", "dataset");
  s.csv_path = kv.get_or("csv", "");
  s.continuous = io::split_list(kv.get_or("continuous", ""));
  s.categorical = io::split_list(kv.get_or("categorical", ""));
  s.target_column = kv.get("target");
  s.sensitive_column = kv.get("sensitive");
  s.target_rule = LabelRule::parse(kv.get_or("target_rule", "auto"));
  s.sensitive_rule = LabelRule::parse(kv.get_or("sensitive_rule", "auto"));

  const std::string mode = kv.get_or("split_mode", "fractions");
  if (mode == "fractions") {
    s.split_mode = SplitMode::Fractions;
    s.train_frac = kv.has("split_train") ? kv.get_double("split_train") : 0.7;
    s.val_frac = kv.has("split_val") ? kv.get_double("split_val") : 0.1;
    s.test_frac = kv.has("split_test") ? kv.get_double("split_test") : 0.2;
    const double total = s.train_frac + s.val_frac + s.test_frac;
    if (!(s.train_frac > 0 && s.val_frac > 0 && s.test_frac > 0) ||
        std::fabs(total - 1.0) > 1e-9)
      throw std::runtime_error(origin + ": split fractions must be positive and sum to 1");
    s.split_seed = static_cast<std::uint64_t>(kv.has("split_seed") ? kv.get_long("split_seed") : 0);
    if (s.csv_path.empty()) throw std::runtime_error(origin + ": fractions split needs 'csv'");
  } else if (mode == "files") {
    s.split_mode = SplitMode::Files;
    s.train_file = kv.get("train_file");
    s.val_file = kv.get("val_file");
    s.test_file = kv.get("test_file");
  } else {
    throw std::runtime_error(origin + ": split_mode must be 'fractions' or 'files'");
  }

  if (kv.has("widths")) {
    s.widths.clear();
    for (double w : io::parse_double_list(kv.get("widths")))
      s.widths.push_back(static_cast<int>(w));
    if (s.widths.empty()) throw std::runtime_error(origin + ": widths must be non-empty");
  }
  s.head_hidden = kv.has("head_hidden") ? static_cast<int>(kv.get_long("head_hidden")) : 0;
  s.optimizer = kv.get_or("optimizer", "adam");
  if (s.optimizer != "adam" && s.optimizer != "adadelta")
    throw std::runtime_error(origin + ": optimizer must be 'adam' or 'adadelta'");
  s.learning_rate = kv.has("learning_rate") ? kv.get_double("learning_rate") : 1e-4;

  if (s.continuous.empty() && s.categorical.empty())
    throw std::runtime_error(origin + ": no feature columns configured");
  std::set<std::string> seen;
  for (const auto& lists : {s.continuous, s.categorical})
    for (const std::string& c : lists)
      if (!seen.insert(c).second)
        throw std::runtime_error(origin + ": duplicate feature column '" + c + "'");
  if (seen.count(s.target_column) || seen.count(s.sensitive_column))
    throw std::runtime_error(origin + ": target/sensitive columns must not be features");
  return s;
}

namespace {

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

RawTable parse_csv(const std::string& path) {
  const std::string text = io::read_file(path);
  RawTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.eof()) break;
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(io::trim(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    cells.push_back(io::trim(cur));
    if (first) {
      t.header = cells;
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw std::runtime_error(path + ": row " + std::to_string(t.rows.size() + 2) + " has " +
                                 std::to_string(cells.size()) + " cells, expected " +
                                 std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw std::runtime_error(path + ": empty file");
  return t;
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "?" || cell == "NA"; }

int column_index(const RawTable& t, const std::string& name, const std::string& path) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  throw std::runtime_error(path + ": column '" + name + "' not found");
}

struct RawSplit {
  // feature cells only, aligned with schema.continuous then schema.categorical
  std::vector<std::vector<std::string>> cont_cells;
  std::vector<std::vector<std::string>> cat_cells;
  std::vector<std::string> t_raw, s_raw;
};

// Label encoder resolved on the train split.
struct LabelEncoder {
  LabelRule rule;
  std::string name;
  std::string v0, v1;  // Auto mode

  void resolve(const std::vector<std::string>& train_raw) {
    if (rule.kind != LabelRule::Kind::Auto) return;
    std::set<std::string> distinct;
    for (const std::string& v : train_raw)
      if (!is_missing(v)) distinct.insert(v);
    if (distinct.size() != 2)
      throw std::runtime_error("label column '" + name + "': auto rule needs exactly 2 distinct "
                               "values in train, found " + std::to_string(distinct.size()));
    auto it = distinct.begin();
    v0 = *it++;
    v1 = *it;
  }

  std::int8_t encode(const std::string& raw) const {
    if (is_missing(raw)) return -1;
    switch (rule.kind) {
      case LabelRule::Kind::Auto:
        if (raw == v0) return 0;
        if (raw == v1) return 1;
        return -1;  // unseen label value: treat as unlabeled
      case LabelRule::Kind::Equals:
        return raw == rule.equals_value ? 1 : 0;
      case LabelRule::Kind::GreaterThan: {
        try {
          std::size_t pos = 0;
          const double v = std::stod(raw, &pos);
          if (pos != raw.size()) return -1;
          return v > rule.threshold ? 1 : 0;
        } catch (const std::exception&) {
          return -1;
        }
      }
    }
    return -1;
  }
};

RawSplit extract(const RawTable& table, const Schema& schema, const std::string& path,
                 const std::vector<int>& row_idx, EncodingReport& report) {
  std::vector<int> cont_ix, cat_ix;
  for (const std::string& c : schema.continuous) cont_ix.push_back(column_index(table, c, path));
  for (const std::string& c : schema.categorical) cat_ix.push_back(column_index(table, c, path));
  const int t_ix = column_index(table, schema.target_column, path);
  const int s_ix = column_index(table, schema.sensitive_column, path);

  RawSplit out;
  for (int r : row_idx) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    bool complete = true;
    for (int ix : cont_ix) complete = complete && !is_missing(row[static_cast<std::size_t>(ix)]);
    for (int ix : cat_ix) complete = complete && !is_missing(row[static_cast<std::size_t>(ix)]);
    if (!complete) {
      ++report.dropped_rows;
      continue;
    }
    std::vector<std::string> cont, cat;
    for (int ix : cont_ix) cont.push_back(row[static_cast<std::size_t>(ix)]);
    for (int ix : cat_ix) cat.push_back(row[static_cast<std::size_t>(ix)]);
    out.cont_cells.push_back(std::move(cont));
    out.cat_cells.push_back(std::move(cat));
    out.t_raw.push_back(row[static_cast<std::size_t>(t_ix)]);
    out.s_raw.push_back(row[static_cast<std::size_t>(s_ix)]);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& context) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(context + ": expected a number, got '" + s + "'");
  }
  if (pos != s.size()) throw std::runtime_error(context + ": expected a number, got '" + s + "'");
  return v;
}

// One-hot layouts and z-score statistics determined by the training split.
struct Encoder {
  std::vector<double> mean, stdev;                       // per continuous column
  std::vector<std::vector<std::string>> categories;      // per categorical column, sorted
  int dim = 0;

  void fit(const RawSplit& train, const Schema& schema) {
    const std::size_t nc = schema.continuous.size();
    mean.assign(nc, 0.0);
    stdev.assign(nc, 0.0);
    const std::size_t n = train.cont_cells.size();
    if (n == 0) throw std::runtime_error("empty training split after dropping incomplete rows");
    for (std::size_t j = 0; j < nc; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += parse_number(train.cont_cells[i][j], "column " + schema.continuous[j]);
      mean[j] = acc / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = parse_number(train.cont_cells[i][j], "column " + schema.continuous[j]) -
                         mean[j];
        sq += d * d;
      }
      stdev[j] = std::sqrt(sq / static_cast<double>(n));
    }
    categories.clear();
    for (std::size_t j = 0; j < schema.categorical.size(); ++j) {
      std::set<std::string> distinct;
      for (std::size_t i = 0; i < train.cat_cells.size(); ++i)
        distinct.insert(train.cat_cells[i][j]);
      categories.emplace_back(distinct.begin(), distinct.end());
    }
    dim = static_cast<int>(nc);
    for (const auto& cats : categories) dim += static_cast<int>(cats.size());
  }

  Mat encode(const RawSplit& split, const Schema& schema, EncodingReport& report) const {
    const std::size_t n = split.cont_cells.size();
    Mat out = Mat::Zero(static_cast<Eigen::Index>(n), dim);
    for (std::size_t i = 0; i < n; ++i) {
      int col = 0;
      for (std::size_t j = 0; j < schema.continuous.size(); ++j) {
        const double v = parse_number(split.cont_cells[i][j], "column " + schema.continuous[j]);
        // constant train column -> zeros
        out(static_cast<Eigen::Index>(i), col++) =
            stdev[j] > 0.0 ? (v - mean[j]) / stdev[j] : 0.0;
      }
      for (std::size_t j = 0; j < schema.categorical.size(); ++j) {
        const auto& cats = categories[j];
        const auto it = std::lower_bound(cats.begin(), cats.end(), split.cat_cells[i][j]);
        if (it != cats.end() && *it == split.cat_cells[i][j]) {
          out(static_cast<Eigen::Index>(i), col + static_cast<int>(it - cats.begin())) = 1.0;
        } else {
          ++report.unknown_categories;  // unseen category: all-zero block
        }
        col += static_cast<int>(cats.size());
      }
    }
    return out;
  }
};

DatasetSplit assemble(const RawSplit& raw, const Encoder& enc, const Schema& schema,
                      const LabelEncoder& t_enc, const LabelEncoder& s_enc,
                      const std::string& tag, EncodingReport& report) {
  DatasetSplit out;
  out.tag = tag;
  out.features = enc.encode(raw, schema, report);
  out.t.reserve(raw.t_raw.size());
  out.s.reserve(raw.s_raw.size());
  for (const std::string& v : raw.t_raw) out.t.push_back(t_enc.encode(v));
  for (const std::string& v : raw.s_raw) out.s.push_back(s_enc.encode(v));
  return out;
}

std::vector<int> all_rows(const RawTable& t) {
  std::vector<int> idx(t.rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

Dataset load_tabular(const Schema& schema) {
  Dataset ds;
  ds.schema = schema;

  RawSplit raw_train, raw_val, raw_test;
  if (schema.split_mode == Schema::SplitMode::Files) {
    const RawTable tr = parse_csv(schema.train_file);
    const RawTable va = parse_csv(schema.val_file);
    const RawTable te = parse_csv(schema.test_file);
    raw_train = extract(tr, schema, schema.train_file, all_rows(tr), ds.report);
    raw_val = extract(va, schema, schema.val_file, all_rows(va), ds.report);
    raw_test = extract(te, schema, schema.test_file, all_rows(te), ds.report);
  } else {
    const RawTable table = parse_csv(schema.csv_path);
    const int t_ix = column_index(table, schema.target_column, schema.csv_path);
    const int s_ix = column_index(table, schema.sensitive_column, schema.csv_path);
    // Stratify on the raw (t,s) cell pair so every split sees every stratum.
    std::map<std::pair<std::string, std::string>, std::vector<int>> strata;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& row = table.rows[r];
      strata[{row[static_cast<std::size_t>(t_ix)], row[static_cast<std::size_t>(s_ix)]}]
          .push_back(static_cast<int>(r));
    }
    Rng rng(schema.split_seed);
    std::vector<int> train_ix, val_ix, test_ix;
    for (auto& [key, rows] : strata) {
      rng.shuffle(rows);
      const std::size_t n = rows.size();
      // largest-remainder allocation so small strata still reach train first
      const double fracs[3] = {schema.train_frac, schema.val_frac, schema.test_frac};
      std::size_t counts[3];
      double remainders[3];
      std::size_t assigned = 0;
      for (int k = 0; k < 3; ++k) {
        const double exact = fracs[k] * static_cast<double>(n);
        counts[k] = static_cast<std::size_t>(exact);
        remainders[k] = exact - static_cast<double>(counts[k]);
        assigned += counts[k];
      }
      while (assigned < n) {
        int best = 0;
        for (int k = 1; k < 3; ++k)
          if (remainders[k] > remainders[best]) best = k;
        ++counts[best];
        remainders[best] = -1.0;
        ++assigned;
      }
      std::size_t i = 0;
      for (; i < counts[0]; ++i) train_ix.push_back(rows[i]);
      for (; i < counts[0] + counts[1]; ++i) val_ix.push_back(rows[i]);
      for (; i < n; ++i) test_ix.push_back(rows[i]);
    }
    std::sort(train_ix.begin(), train_ix.end());
    std::sort(val_ix.begin(), val_ix.end());
    std::sort(test_ix.begin(), test_ix.end());
    raw_train = extract(table, schema, schema.csv_path, train_ix, ds.report);
    raw_val = extract(table, schema, schema.csv_path, val_ix, ds.report);
    raw_test = extract(table, schema, schema.csv_path, test_ix, ds.report);
  }

  LabelEncoder t_enc{schema.target_rule, schema.target_column, "", ""};
  LabelEncoder s_enc{schema.sensitive_rule, schema.sensitive_column, "", ""};
  t_enc.resolve(raw_train.t_raw);
  s_enc.resolve(raw_train.s_raw);

  Encoder enc;
  enc.fit(raw_train, schema);
  ds.train = assemble(raw_train, enc, schema, t_enc, s_enc, "train", ds.report);
  ds.val = assemble(raw_val, enc, schema, t_enc, s_enc, "val", ds.report);
  ds.test = assemble(raw_test, enc, schema, t_enc, s_enc, "test", ds.report);
  return ds;
}

std::array<std::vector<int>, 2> group_indices(const DatasetSplit& split, char attribute) {
  if (attribute != 't' && attribute != 's')
    throw std::invalid_argument("group_indices: attribute must be 't' or 's'");
  const std::vector<std::int8_t>& labels = attribute == 't' ? split.t : split.s;
  std::array<std::vector<int>, 2> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) out[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  if (out[0].empty() || out[1].empty())
    throw std::runtime_error(std::string("group_indices: split '") + split.tag +
                             "' has an empty group for attribute '" + attribute + "'");
  return out;
}

std::array<std::array<std::vector<int>, 2>, 2> conditional_group_indices(
    const DatasetSplit& split) {
  std::array<std::array<std::vector<int>, 2>, 2> cells;
  for (std::size_t i = 0; i < split.t.size(); ++i) {
    if (split.t[i] < 0 || split.s[i] < 0) continue;
    cells[static_cast<std::size_t>(split.t[i])][static_cast<std::size_t>(split.s[i])].push_back(
        static_cast<int>(i));
  }
  for (int t = 0; t < 2; ++t)
    for (int s = 0; s < 2; ++s)
      if (cells[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)].empty())
        throw std::runtime_error("conditional_group_indices: split '" + split.tag + "' cell (t=" +
                                 std::to_string(t) + ", s=" + std::to_string(s) + ") is empty");
  return cells;
}

Chi2Result chi2_independence(const std::vector<std::int8_t>& t,
                             const std::vector<std::int8_t>& s) {
  if (t.size() != s.size())
    throw std::invalid_argument("chi2_independence: label vectors differ in length");
  double counts[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 0 || s[i] < 0) continue;
    counts[t[i]][s[i]] += 1.0;
  }
  const double row0 = counts[0][0] + counts[0][1];
  const double row1 = counts[1][0] + counts[1][1];
  const double col0 = counts[0][0] + counts[1][0];
  const double col1 = counts[0][1] + counts[1][1];
  const double total = row0 + row1;
  if (row0 == 0.0 || row1 == 0.0 || col0 == 0.0 || col1 == 0.0)
    throw std::runtime_error("chi2_independence: a marginal is zero; statistic undefined");
  Chi2Result r;
  const double rows[2] = {row0, row1};
  const double cols[2] = {col0, col1};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double expected = rows[i] * cols[j] / total;
      const double d = counts[i][j] - expected;
      r.statistic += d * d / expected;
    }
  }
  r.p_value = special::chi_square_sf(r.statistic, 1.0);
  return r;
}

Mat take_rows(const Mat& m, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

void write_split_cache(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  io::write_matrix(dir + "/train.mbfd", ds.train.features);
  io::write_matrix(dir + "/val.mbfd", ds.val.features);
  io::write_matrix(dir + "/test.mbfd", ds.test.features);
}

}  // namespace mbf::data
