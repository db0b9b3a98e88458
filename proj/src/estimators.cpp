#include "estimators.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "special.h"

namespace mbf::estimators {

PowerConfig PowerConfig::defaults(int m, int batch_n, double alpha) {
  PowerConfig cfg;
  cfg.alpha = alpha;
  cfg.m = m;
  cfg.b = cfg.B = static_cast<int>(std::floor(std::sqrt(static_cast<double>(m))));
  cfg.lambda = std::pow(static_cast<double>(batch_n), 2.0 / 3.0);
  cfg.validate();
  return cfg;
}

double PowerConfig::t_alpha() const { return special::normal_quantile(1.0 - alpha); }

void PowerConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("PowerConfig: alpha must lie in (0,1)");
  if (m < 1 || b < 1 || B < 2)
    throw std::invalid_argument("PowerConfig: m, b must be >= 1 and B >= 2");
  if (static_cast<long>(b) * B > m)
    throw std::invalid_argument("PowerConfig: b*B exceeds m");
  if (lambda < 0.0) throw std::invalid_argument("PowerConfig: lambda must be >= 0");
}

double clamp_open_unit(double p) {
  const double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::min(std::max(p, lo), hi);
}

double mmd_u_sq(const Mat& h) {
  const Eigen::Index n = h.rows();
  if (n != h.cols()) throw std::invalid_argument("mmd_u_sq: H must be square");
  if (n < 2) throw std::invalid_argument("mmd_u_sq: need n >= 2");
  return (h.sum() - h.trace()) / (static_cast<double>(n) * (n - 1));
}

Tensor mmd_u_sq(const Tensor& h) {
  const Eigen::Index n = h.rows();
  if (n != h.cols()) throw std::invalid_argument("mmd_u_sq: H must be square");
  if (n < 2) throw std::invalid_argument("mmd_u_sq: need n >= 2");
  const double c = 1.0 / (static_cast<double>(n) * (n - 1));
  return diff::affine(diff::sub(diff::sum(h), diff::trace(h)), c);
}

double variance_hat(const Mat& h, double m, double lambda) {
  const Eigen::Index n = h.rows();
  if (n != h.cols()) throw std::invalid_argument("variance_hat: H must be square");
  if (n < 2) throw std::invalid_argument("variance_hat: need n >= 2");
  if (m < 1.0) throw std::invalid_argument("variance_hat: m must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("variance_hat: lambda must be >= 0");
  const double dn = static_cast<double>(n);
  const double row_sq = h.rowwise().sum().squaredNorm();
  const double total = h.sum();
  return 4.0 / (m * dn * dn * dn) * row_sq - 4.0 / (m * dn * dn * dn * dn) * total * total +
         lambda / m;
}

Tensor variance_hat(const Tensor& h, double m, double lambda) {
  const Eigen::Index n = h.rows();
  if (n != h.cols()) throw std::invalid_argument("variance_hat: H must be square");
  if (n < 2) throw std::invalid_argument("variance_hat: need n >= 2");
  if (m < 1.0) throw std::invalid_argument("variance_hat: m must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("variance_hat: lambda must be >= 0");
  Tape& tape = *h.tape();
  const double dn = static_cast<double>(n);
  Tensor ones = tape.constant(Mat::Ones(n, 1));
  Tensor row_sums = diff::matmul(h, ones);
  Tensor row_sq = diff::sum(diff::mul(row_sums, row_sums));
  Tensor total = diff::sum(h);
  Tensor total_sq = diff::mul(total, total);
  Tensor v = diff::sub(diff::affine(row_sq, 4.0 / (m * dn * dn * dn)),
                       diff::affine(total_sq, 4.0 / (m * dn * dn * dn * dn)));
  return diff::affine(v, 1.0, lambda / m);
}

double block_power_hat(const Mat& h, const PowerConfig& cfg) {
  cfg.validate();
  const double j = mmd_u_sq(h);
  const double v = variance_hat(h, static_cast<double>(cfg.B), cfg.lambda);
  if (!(v > 0.0)) throw diff::numeric_error("block_power_hat: variance estimate not positive");
  const double arg = std::sqrt(static_cast<double>(cfg.b)) * j / std::sqrt(v) - cfg.t_alpha();
  return clamp_open_unit(special::normal_cdf(arg));
}

Tensor block_power_hat(const Tensor& h, const PowerConfig& cfg) {
  cfg.validate();
  Tensor j = mmd_u_sq(h);
  Tensor v = variance_hat(h, static_cast<double>(cfg.B), cfg.lambda);
  if (!(v.scalar() > 0.0))
    throw diff::numeric_error("block_power_hat: variance estimate not positive");
  Tensor ratio = diff::div_scalar(diff::affine(j, std::sqrt(static_cast<double>(cfg.b))),
                                  diff::sqrt(v));
  return diff::normal_cdf(diff::affine(ratio, 1.0, -cfg.t_alpha()));
}

double block_mmd(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k, int b, int B,
                 std::uint64_t seed) {
  if (sp.rows() != sq.rows()) throw std::invalid_argument("block_mmd: group sizes differ");
  const Eigen::Index n = sp.rows();
  if (b < 1 || B < 2) throw std::invalid_argument("block_mmd: need b >= 1 and B >= 2");
  if (static_cast<long>(b) * B > n)
    throw std::invalid_argument("block_mmd: insufficient samples (" + std::to_string(n) +
                                " per group for " + std::to_string(b) + " blocks of " +
                                std::to_string(B) + ")");
  Rng rng(seed);
  // One shared shuffle keeps the X/Y pairing, so b=1 reproduces the plain
  // U-statistic and identical groups give exactly zero.
  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  double acc = 0.0;
  Mat bp(B, sp.cols()), bq(B, sq.cols());
  for (int blk = 0; blk < b; ++blk) {
    for (int i = 0; i < B; ++i) {
      const auto r = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(blk * B + i)]);
      bp.row(i) = sp.row(r);
      bq.row(i) = sq.row(r);
    }
    acc += mmd_u_sq(kernels::h_matrix(bp, bq, k));
  }
  return acc / b;
}

bool block_test_reject(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k, int b, int B,
                       double alpha, std::uint64_t seed) {
  if (b < 2) throw std::invalid_argument("block_test_reject: need b >= 2 for the variance");
  if (sp.rows() != sq.rows()) throw std::invalid_argument("block_test_reject: group sizes differ");
  const Eigen::Index n = sp.rows();
  if (static_cast<long>(b) * B > n)
    throw std::invalid_argument("block_test_reject: insufficient samples");
  Rng rng(seed);
  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(b));
  Mat bp(B, sp.cols()), bq(B, sq.cols());
  for (int blk = 0; blk < b; ++blk) {
    for (int i = 0; i < B; ++i) {
      const auto r = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(blk * B + i)]);
      bp.row(i) = sp.row(r);
      bq.row(i) = sq.row(r);
    }
    stats.push_back(mmd_u_sq(kernels::h_matrix(bp, bq, k)));
  }
  const double mean = std::accumulate(stats.begin(), stats.end(), 0.0) / b;
  double var = 0.0;
  for (double s : stats) var += (s - mean) * (s - mean);
  var /= (b - 1);
  const double sd = std::sqrt(std::max(var, 1e-300));
  // sqrt(b) * mean > t_alpha * sd  <=>  mean > t_alpha * sd / sqrt(b)
  return std::sqrt(static_cast<double>(b)) * mean > special::normal_quantile(1.0 - alpha) * sd;
}

namespace {

// U-statistic MMD^2 of a pooled-kernel relabeling: rows `a` form group one,
// rows `bidx` group two, pairing a[i] <-> bidx[i].
double mmd_u_from_pooled(const Mat& pooled_k, const std::vector<std::size_t>& a,
                         const std::vector<std::size_t>& bidx) {
  const std::size_t n = a.size();
  double sxx = 0.0, syy = 0.0, sxy = 0.0, paired = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row_a = pooled_k.data() + static_cast<Eigen::Index>(a[i]) * pooled_k.rows();
    const double* row_b = pooled_k.data() + static_cast<Eigen::Index>(bidx[i]) * pooled_k.rows();
    // column-major: pooled_k(r, c) = data[c*rows + r]; we index columns a[i]
    // and read entries for rows a[j]/b[j]. The matrix is symmetric.
    for (std::size_t j = 0; j < n; ++j) {
      sxx += row_a[a[j]];
      syy += row_b[bidx[j]];
      sxy += row_a[bidx[j]];
    }
    sxx -= row_a[a[i]];
    syy -= row_b[bidx[i]];
    paired += row_a[bidx[i]];
  }
  const double dn = static_cast<double>(n);
  return (sxx + syy - 2.0 * (sxy - paired)) / (dn * (dn - 1.0));
}

}  // namespace

double permutation_threshold(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k,
                             double alpha, int n_permutations, std::uint64_t seed) {
  if (n_permutations < 20)
    throw std::invalid_argument("permutation_threshold: need at least 20 permutations");
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw std::invalid_argument("permutation_threshold: alpha must lie in [0,1)");
  if (sp.rows() != sq.rows())
    throw std::invalid_argument("permutation_threshold: group sizes differ");
  const std::size_t n = static_cast<std::size_t>(sp.rows());
  Mat pooled(sp.rows() + sq.rows(), sp.cols());
  pooled << sp, sq;
  const Mat pooled_k = kernels::gram(pooled, pooled, k);
  Rng rng(seed);
  std::vector<std::size_t> idx(2 * n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(n_permutations));
  std::vector<std::size_t> a(n), bidx(n);
  for (int p = 0; p < n_permutations; ++p) {
    rng.shuffle(idx);
    std::copy(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), a.begin());
    std::copy(idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), bidx.begin());
    stats.push_back(static_cast<double>(n) * mmd_u_from_pooled(pooled_k, a, bidx));
  }
  std::sort(stats.begin(), stats.end());
  // (1-alpha) empirical quantile as an order statistic; alpha = 0 -> max.
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(n_permutations)));
  const std::size_t pos = std::min(stats.size() - 1, std::max<std::size_t>(rank, 1) - 1);
  return stats[pos];
}

double asymptotic_u_power(double mmd_sq, double c_alpha, double m, double v_m) {
  if (!(v_m > 0.0)) throw std::invalid_argument("asymptotic_u_power: V_m must be positive");
  if (m < 1.0) throw std::invalid_argument("asymptotic_u_power: m must be >= 1");
  return special::normal_cdf((mmd_sq - c_alpha / m) / std::sqrt(v_m));
}

TestResult two_sample_test(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k,
                           const PowerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (sp.rows() != sq.rows()) throw std::invalid_argument("two_sample_test: group sizes differ");
  const double n = static_cast<double>(sp.rows());
  const Mat h = kernels::h_matrix(sp, sq, k);
  TestResult r;
  r.statistic = n * mmd_u_sq(h);
  r.threshold = permutation_threshold(sp, sq, k, cfg.alpha, cfg.n_permutations, seed);
  r.reject = r.statistic > r.threshold;
  r.estimated_power = block_power_hat(h, cfg);
  return r;
}

}  // namespace mbf::estimators
