#pragma once

#include <variant>
#include <vector>

#include "rng.h"
#include "tensor.h"

namespace mbf::kernels {

using diff::Mat;
using diff::Tape;
using diff::Tensor;

// Fully-connected network with leaky-ReLU between layers and a linear final
// layer; serves as encoder, classifier head, and audit-kernel MLP. Parameters
// live here as plain matrices; bind() places them on a tape as trainable
// leaves for a differentiable forward pass.
class Featurizer {
 public:
  Featurizer() = default;

  // He-style uniform fan-in initialization, biases zero.
  static Featurizer init(int input_dim, const std::vector<int>& widths, Rng& rng,
                         double leaky_slope = 0.01);

  int input_dim() const { return input_dim_; }
  int output_dim() const;
  double leaky_slope() const { return leaky_slope_; }
  const std::vector<Mat>& weights() const { return weights_; }
  const std::vector<Mat>& biases() const { return biases_; }
  std::vector<Mat>& weights() { return weights_; }
  std::vector<Mat>& biases() { return biases_; }
  std::vector<int> widths() const;

  // Plain forward pass (no tape), rows are samples.
  Mat forward(const Mat& x) const;

  // Parameters bound to a tape for one optimization step.
  struct Bound {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    double leaky_slope = 0.01;
    Tensor forward(Tape& tape, const Mat& x) const;
    Tensor forward(const Tensor& x) const;
  };
  Bound bind(Tape& tape) const;

  // Parameter access for optimizers: weights then biases, layer by layer.
  std::vector<Mat*> parameters();
  // Gradients in the same order, read back from a Bound after backward().
  static std::vector<const Mat*> gradients(const Bound& bound, std::vector<Mat>& storage);

 private:
  int input_dim_ = 0;
  double leaky_slope_ = 0.01;
  std::vector<Mat> weights_;  // per layer, (in x out)
  std::vector<Mat> biases_;   // per layer, (1 x out)
};

struct LinearKernel {};
struct GaussianKernel {
  double sigma = 1.0;
};
struct DeepKernel {
  Featurizer phi;
  double log_sigma = 0.0;  // Gaussian length-scale on features, exp-parameterized
};
// Gaussian grid on shared features; used by the minimax objectives.
struct GridKernel {
  std::vector<double> sigmas;
};

using KernelSpec = std::variant<LinearKernel, GaussianKernel, DeepKernel, GridKernel>;

// K_ij = k(x_i, y_j). GridKernel is rejected here (it denotes a family).
Mat gram(const Mat& x, const Mat& y, const KernelSpec& k);

// H_ij = k(X_i,X_j) + k(Y_i,Y_j) - k(X_i,Y_j) - k(Y_i,X_j), including the
// diagonal (H_ii uses the same formula); the U-statistic skips it, the
// variance estimator keeps it.
Mat h_matrix(const Mat& sp, const Mat& sq, const KernelSpec& k);

// One H matrix per length-scale over shared featurizer outputs.
std::vector<Mat> grid_h_matrices(const Mat& sp, const Mat& sq, const Featurizer& phi,
                                 const std::vector<double>& sigmas);

// sqrt(median pairwise squared distance / 2); 1.0 when degenerate.
double median_heuristic(const Mat& x);

// G log2-spaced length-scales on [sigma_med/4, sigma_med*8].
std::vector<double> default_grid(double sigma_med, int size = 6);

// ---- differentiable path --------------------------------------------------

// Gaussian gram from feature tensors with fixed length-scale.
Tensor gaussian_gram(Tape& tape, const Tensor& fx, const Tensor& fy, double sigma);
// Same with a trainable log length-scale (1x1 leaf).
Tensor gaussian_gram(Tape& tape, const Tensor& fx, const Tensor& fy, const Tensor& log_sigma);

// H from the three gram blocks of a symmetric kernel.
Tensor h_from_features(Tape& tape, const Tensor& fp, const Tensor& fq, double sigma);
Tensor h_from_features(Tape& tape, const Tensor& fp, const Tensor& fq, const Tensor& log_sigma);

// Grid of H tensors sharing fp/fq (one featurizer pass).
std::vector<Tensor> grid_h(Tape& tape, const Tensor& fp, const Tensor& fq,
                           const std::vector<double>& sigmas);

}  // namespace mbf::kernels
