#include "io.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mbf::io {

namespace {
constexpr char kMatrixMagic[4] = {'M', 'B', 'F', 'D'};
constexpr std::uint32_t kMatrixVersion = 1;
}  // namespace

void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t take_u32(const std::string& buf, std::size_t& off) {
  if (off + 4 > buf.size()) throw std::runtime_error("binary read: truncated u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  off += 4;
  return v;
}

double take_f64(const std::string& buf, std::size_t& off) {
  if (off + 8 > buf.size()) throw std::runtime_error("binary read: truncated f64");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  off += 8;
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_matrix(const std::string& path, const Mat& m) {
  std::string buf;
  buf.reserve(16 + static_cast<std::size_t>(m.size()) * 8);
  buf.append(kMatrixMagic, 4);
  append_u32(buf, kMatrixVersion);
  append_u32(buf, static_cast<std::uint32_t>(m.rows()));
  append_u32(buf, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) append_f64(buf, m(i, j));
  write_file(path, buf);
}

Mat read_matrix(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 16 || std::memcmp(buf.data(), kMatrixMagic, 4) != 0)
    throw std::runtime_error("not a matrix cache file: " + path);
  std::size_t off = 4;
  const std::uint32_t version = take_u32(buf, off);
  if (version != kMatrixVersion)
    throw std::runtime_error("unsupported matrix cache version " + std::to_string(version));
  const std::uint32_t rows = take_u32(buf, off);
  const std::uint32_t cols = take_u32(buf, off);
  Mat m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = take_f64(buf, off);
  if (off != buf.size()) throw std::runtime_error("trailing bytes in matrix cache: " + path);
  return m;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line.push_back(',');
    line += cells[i];
  }
  line.push_back('\n');
  return line;
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw std::runtime_error("missing required key: " + key);
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("key " + key + ": not a number: '" + s + "'");
  }
  if (pos != s.size()) throw std::runtime_error("key " + key + ": not a number: '" + s + "'");
  return v;
}

long KeyValues::get_long(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t pos = 0;
  long v;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("key " + key + ": not an integer: '" + s + "'");
  }
  if (pos != s.size()) throw std::runtime_error("key " + key + ": not an integer: '" + s + "'");
  return v;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (!values.count(key)) order.push_back(key);
  values[key] = value;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.set(key, value);
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  return parse_key_values(read_file(path), path);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  const std::string t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const std::string& s : split_list(text)) {
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("not a number in list: '" + s + "'");
    }
    if (pos != s.size()) throw std::runtime_error("not a number in list: '" + s + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace mbf::io
