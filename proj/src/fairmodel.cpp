#include "fairmodel.h"

#include <cstring>
#include <stdexcept>

#include "io.h"

namespace mbf::fairlearn {

FairMode parse_mode(const std::string& text) {
  if (text == "dp" || text == "DP") return FairMode::DP;
  if (text == "eo" || text == "EO") return FairMode::EO;
  throw std::runtime_error("mode must be 'dp' or 'eo', got '" + text + "'");
}

std::string mode_name(FairMode mode) { return mode == FairMode::DP ? "dp" : "eo"; }

std::vector<int> FairModel::predict(const Mat& x) const {
  const Mat z = logits(x);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best;
    z.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

constexpr char kModelMagic[4] = {'M', 'B', 'F', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void append_featurizer(std::string& buf, const kernels::Featurizer& f) {
  io::append_u32(buf, static_cast<std::uint32_t>(f.weights().size()));
  for (const Mat& w : f.weights()) io::append_u32(buf, static_cast<std::uint32_t>(w.cols()));
}

void append_featurizer_params(std::string& buf, const kernels::Featurizer& f) {
  for (std::size_t l = 0; l < f.weights().size(); ++l) {
    const Mat& w = f.weights()[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) io::append_f64(buf, w(i, j));
    const Mat& b = f.biases()[l];
    for (Eigen::Index j = 0; j < b.cols(); ++j) io::append_f64(buf, b(0, j));
  }
}

std::vector<int> take_widths(const std::string& buf, std::size_t& off) {
  const std::uint32_t n = io::take_u32(buf, off);
  if (n == 0 || n > 64) throw std::runtime_error("model file: implausible layer count");
  std::vector<int> widths;
  widths.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i)
    widths.push_back(static_cast<int>(io::take_u32(buf, off)));
  return widths;
}

void take_featurizer_params(const std::string& buf, std::size_t& off, kernels::Featurizer& f) {
  for (std::size_t l = 0; l < f.weights().size(); ++l) {
    Mat& w = f.weights()[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = io::take_f64(buf, off);
    Mat& b = f.biases()[l];
    for (Eigen::Index j = 0; j < b.cols(); ++j) b(0, j) = io::take_f64(buf, off);
  }
}

}  // namespace

void save_model(const FairModel& model, const std::string& path) {
  std::string buf;
  buf.append(kModelMagic, 4);
  io::append_u32(buf, kModelVersion);
  io::append_u32(buf, model.mode == FairMode::DP ? 0u : 1u);
  io::append_u32(buf, static_cast<std::uint32_t>(model.phi.input_dim()));
  append_featurizer(buf, model.phi);
  append_featurizer(buf, model.head);
  io::append_u32(buf, static_cast<std::uint32_t>(model.target_grid.size()));
  io::append_u32(buf, static_cast<std::uint32_t>(model.sensitive_grid.size()));
  io::append_f64(buf, model.log_sigma);
  io::append_f64(buf, model.phi.leaky_slope());
  append_featurizer_params(buf, model.phi);
  append_featurizer_params(buf, model.head);
  for (double s : model.target_grid) io::append_f64(buf, s);
  for (double s : model.sensitive_grid) io::append_f64(buf, s);
  io::write_file(path, buf);
}

FairModel load_model(const std::string& path) {
  const std::string buf = io::read_file(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), kModelMagic, 4) != 0)
    throw std::runtime_error("not a model file: " + path);
  std::size_t off = 4;
  const std::uint32_t version = io::take_u32(buf, off);
  if (version != kModelVersion)
    throw std::runtime_error("unsupported model version " + std::to_string(version));
  FairModel m;
  m.mode = io::take_u32(buf, off) == 0 ? FairMode::DP : FairMode::EO;
  const int input_dim = static_cast<int>(io::take_u32(buf, off));
  const std::vector<int> phi_widths = take_widths(buf, off);
  const std::vector<int> head_widths = take_widths(buf, off);
  const std::uint32_t gt = io::take_u32(buf, off);
  const std::uint32_t gs = io::take_u32(buf, off);
  m.log_sigma = io::take_f64(buf, off);
  const double slope = io::take_f64(buf, off);
  Rng scratch(0);  // shapes only; parameters are overwritten below
  m.phi = kernels::Featurizer::init(input_dim, phi_widths, scratch, slope);
  m.head = kernels::Featurizer::init(m.phi.output_dim(), head_widths, scratch, slope);
  take_featurizer_params(buf, off, m.phi);
  take_featurizer_params(buf, off, m.head);
  m.target_grid.resize(gt);
  for (std::uint32_t i = 0; i < gt; ++i) m.target_grid[i] = io::take_f64(buf, off);
  m.sensitive_grid.resize(gs);
  for (std::uint32_t i = 0; i < gs; ++i) m.sensitive_grid[i] = io::take_f64(buf, off);
  if (off != buf.size()) throw std::runtime_error("trailing bytes in model file: " + path);
  return m;
}

}  // namespace mbf::fairlearn
