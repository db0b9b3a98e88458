#pragma once

#include <cstdint>

#include "kernels.h"
#include "rng.h"
#include "tensor.h"

namespace mbf::estimators {

using diff::Mat;
using diff::Tape;
using diff::Tensor;

// Parameters of the hypothetical block test whose power is estimated:
// significance alpha, test sample size m split into b blocks of size B,
// variance regularizer lambda, and the permutation budget for thresholds.
struct PowerConfig {
  double alpha = 0.05;
  int m = 1024;
  int b = 32;
  int B = 32;
  double lambda = 0.0;
  int n_permutations = 200;

  // b = B = floor(sqrt(m)); lambda = batch_n^(2/3).
  static PowerConfig defaults(int m, int batch_n, double alpha = 0.05);

  double t_alpha() const;  // Phi^{-1}(1 - alpha)
  void validate() const;
};

struct TestResult {
  double statistic = 0.0;  // n * MMD^2_U
  double threshold = 0.0;  // permutation quantile c_alpha
  bool reject = false;
  double estimated_power = 0.0;  // block-power estimate, in (0,1)
};

// Unbiased U-statistic estimate of MMD^2: off-diagonal mean of H.
// May be negative.
double mmd_u_sq(const Mat& h);
Tensor mmd_u_sq(const Tensor& h);

// Regularized variance estimate of the m-sample U-statistic from an
// n-sample H: 4/(m n^3) sum_i (sum_j H_ij)^2 - 4/(m n^4) (sum H)^2 + lambda/m.
// Row sums include the diagonal. Satisfies V(l, lambda) = (m/l) V(m, lambda)
// exactly for every l, m.
double variance_hat(const Mat& h, double m, double lambda);
Tensor variance_hat(const Tensor& h, double m, double lambda);

// Power estimate of a b x B block test:
// Phi( sqrt(b) * mmd_u_sq(H) / sqrt(variance_hat(H, B, lambda)) - t_alpha ).
// Result clamped to the open interval (0,1).
double block_power_hat(const Mat& h, const PowerConfig& cfg);
Tensor block_power_hat(const Tensor& h, const PowerConfig& cfg);

// Average of mmd_u_sq over b random disjoint blocks of size B (seeded
// partition; leftover samples dropped).
double block_mmd(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k, int b, int B,
                 std::uint64_t seed);

// The b-block test itself: statistic sqrt(b)*mean vs threshold
// t_alpha * (sample std of block estimates)/sqrt(b). Used for calibration.
bool block_test_reject(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k, int b, int B,
                       double alpha, std::uint64_t seed);

// (1-alpha) empirical quantile of n * MMD^2_U over random relabelings of the
// pooled sample. alpha = 0 degenerates to the max.
double permutation_threshold(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k,
                             double alpha, int n_permutations, std::uint64_t seed);

// Asymptotic U-statistic test power Phi((mmd_sq - c_alpha/m)/sqrt(v_m)).
double asymptotic_u_power(double mmd_sq, double c_alpha, double m, double v_m);

// Permutation two-sample test plus the block-power estimate.
TestResult two_sample_test(const Mat& sp, const Mat& sq, const kernels::KernelSpec& k,
                           const PowerConfig& cfg, std::uint64_t seed);

// Clamp to the open unit interval (reported powers are never exactly 0 or 1).
double clamp_open_unit(double p);

}  // namespace mbf::estimators
