#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tensor.h"

namespace mbf::io {

using diff::Mat;

// Flat binary matrix: 16-byte header (magic "MBFD", version u32, rows u32,
// cols u32, all little-endian) followed by row-major little-endian f64.
void write_matrix(const std::string& path, const Mat& m);
Mat read_matrix(const std::string& path);

// Low-level little-endian helpers shared with the model format.
void append_u32(std::string& buf, std::uint32_t v);
void append_f64(std::string& buf, double v);
std::uint32_t take_u32(const std::string& buf, std::size_t& off);
double take_f64(const std::string& buf, std::size_t& off);

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

// Shortest-exact float formatting for CSV output (17 significant digits).
std::string format_double(double v);

// One CSV line from cells; no quoting (cells must not contain commas).
std::string csv_line(const std::vector<std::string>& cells);

// Key-value config text: one `key = value` per line, '#' comments, blank
// lines ignored. Keys are unique; later duplicates override earlier ones.
struct KeyValues {
  std::map<std::string, std::string> values;
  std::vector<std::string> order;  // first-seen key order

  bool has(const std::string& key) const { return values.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
};

KeyValues parse_key_values(const std::string& text, const std::string& origin);
KeyValues load_key_values(const std::string& path);

// Comma/whitespace separated doubles, e.g. "0, 0.1, 1".
std::vector<double> parse_double_list(const std::string& text);
std::vector<std::string> split_list(const std::string& text);
std::string trim(const std::string& s);

}  // namespace mbf::io
