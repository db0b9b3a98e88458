#include "kernels.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mbf::kernels {

Featurizer Featurizer::init(int input_dim, const std::vector<int>& widths, Rng& rng,
                            double leaky_slope) {
  if (input_dim <= 0) throw std::invalid_argument("Featurizer: input_dim must be positive");
  if (widths.empty()) throw std::invalid_argument("Featurizer: at least one layer required");
  Featurizer f;
  f.input_dim_ = input_dim;
  f.leaky_slope_ = leaky_slope;
  int fan_in = input_dim;
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("Featurizer: layer widths must be positive");
    const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
    const double limit = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    Mat weight(fan_in, w);
    for (Eigen::Index i = 0; i < weight.rows(); ++i)
      for (Eigen::Index j = 0; j < weight.cols(); ++j) weight(i, j) = rng.uniform(-limit, limit);
    f.weights_.push_back(std::move(weight));
    f.biases_.push_back(Mat::Zero(1, w));
    fan_in = w;
  }
  return f;
}

int Featurizer::output_dim() const {
  if (weights_.empty()) return 0;
  return static_cast<int>(weights_.back().cols());
}

std::vector<int> Featurizer::widths() const {
  std::vector<int> w;
  w.reserve(weights_.size());
  for (const Mat& m : weights_) w.push_back(static_cast<int>(m.cols()));
  return w;
}

Mat Featurizer::forward(const Mat& x) const {
  if (x.cols() != input_dim_)
    throw std::invalid_argument("Featurizer::forward: input has " + std::to_string(x.cols()) +
                                " features, expected " + std::to_string(input_dim_));
  Mat h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ((h * weights_[l]).rowwise() + biases_[l].row(0)).eval();
    if (l + 1 < weights_.size()) h = h.cwiseMax(leaky_slope_ * h);  // activations between layers
  }
  return h;
}

Featurizer::Bound Featurizer::bind(Tape& tape) const {
  Bound b;
  b.leaky_slope = leaky_slope_;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    b.weights.push_back(tape.leaf(weights_[l]));
    b.biases.push_back(tape.leaf(biases_[l]));
  }
  return b;
}

Tensor Featurizer::Bound::forward(Tape& tape, const Mat& x) const {
  return forward(tape.constant(x));
}

Tensor Featurizer::Bound::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = diff::add_rowvec(diff::matmul(h, weights[l]), biases[l]);
    if (l + 1 < weights.size()) h = diff::leaky_relu(h, leaky_slope);
  }
  return h;
}

std::vector<Mat*> Featurizer::parameters() {
  std::vector<Mat*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Mat*> Featurizer::gradients(const Bound& bound, std::vector<Mat>& storage) {
  storage.clear();
  for (std::size_t l = 0; l < bound.weights.size(); ++l) {
    storage.push_back(bound.weights[l].grad());
    storage.push_back(bound.biases[l].grad());
  }
  std::vector<const Mat*> out;
  out.reserve(storage.size());
  for (const Mat& m : storage) out.push_back(&m);
  return out;
}

namespace {

Mat sqdist(const Mat& x, const Mat& y) {
  Mat d = -2.0 * x * y.transpose();
  d.colwise() += x.rowwise().squaredNorm();
  d.rowwise() += y.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

Mat gaussian_from_sqdist(const Mat& d, double sigma) {
  return (-d.array() / (2.0 * sigma * sigma)).exp().matrix();
}

}  // namespace

Mat gram(const Mat& x, const Mat& y, const KernelSpec& k) {
  if (x.cols() != y.cols())
    throw std::invalid_argument("gram: feature dimensions differ (" + std::to_string(x.cols()) +
                                " vs " + std::to_string(y.cols()) + ")");
  if (std::holds_alternative<LinearKernel>(k)) return x * y.transpose();
  if (const auto* g = std::get_if<GaussianKernel>(&k)) {
    if (!(g->sigma > 0.0)) throw std::invalid_argument("gram: Gaussian length-scale must be positive");
    return gaussian_from_sqdist(sqdist(x, y), g->sigma);
  }
  if (const auto* d = std::get_if<DeepKernel>(&k)) {
    const double sigma = std::exp(d->log_sigma);
    return gaussian_from_sqdist(sqdist(d->phi.forward(x), d->phi.forward(y)), sigma);
  }
  throw std::invalid_argument("gram: a kernel grid denotes a family, not a single kernel");
}

Mat h_matrix(const Mat& sp, const Mat& sq, const KernelSpec& k) {
  if (sp.rows() != sq.rows())
    throw std::invalid_argument("h_matrix: group sizes differ (" + std::to_string(sp.rows()) +
                                " vs " + std::to_string(sq.rows()) + "); subsample to equal size");
  if (sp.rows() < 2) throw std::invalid_argument("h_matrix: need at least 2 samples per group");
  Mat kxx = gram(sp, sp, k);
  Mat kyy = gram(sq, sq, k);
  Mat kxy = gram(sp, sq, k);
  return kxx + kyy - kxy - kxy.transpose();
}

std::vector<Mat> grid_h_matrices(const Mat& sp, const Mat& sq, const Featurizer& phi,
                                 const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw std::invalid_argument("grid_h_matrices: empty grid");
  if (sp.rows() != sq.rows())
    throw std::invalid_argument("grid_h_matrices: group sizes differ");
  if (sp.rows() < 2) throw std::invalid_argument("grid_h_matrices: need at least 2 samples");
  const Mat fp = phi.forward(sp);
  const Mat fq = phi.forward(sq);
  const Mat dxx = sqdist(fp, fp);
  const Mat dyy = sqdist(fq, fq);
  const Mat dxy = sqdist(fp, fq);
  std::vector<Mat> out;
  out.reserve(sigmas.size());
  for (double s : sigmas) {
    if (!(s > 0.0)) throw std::invalid_argument("grid_h_matrices: length-scales must be positive");
    Mat kxy = gaussian_from_sqdist(dxy, s);
    out.push_back(gaussian_from_sqdist(dxx, s) + gaussian_from_sqdist(dyy, s) - kxy -
                  kxy.transpose());
  }
  return out;
}

double median_heuristic(const Mat& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("median_heuristic: need at least 2 samples");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((x.row(i) - x.row(j)).squaredNorm());
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size();
  const double med = (m % 2 == 1) ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
  const double sigma = std::sqrt(med / 2.0);
  return sigma > 0.0 ? sigma : 1.0;
}

std::vector<double> default_grid(double sigma_med, int size) {
  if (size < 1) throw std::invalid_argument("default_grid: size must be positive");
  if (!(sigma_med > 0.0)) sigma_med = 1.0;
  // log2-spaced on [sigma/4, sigma*8]
  const double lo = std::log2(sigma_med) - 2.0;
  const double hi = std::log2(sigma_med) + 3.0;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(size));
  if (size == 1) {
    out.push_back(sigma_med);
    return out;
  }
  for (int i = 0; i < size; ++i)
    out.push_back(std::exp2(lo + (hi - lo) * static_cast<double>(i) / (size - 1)));
  return out;
}

Tensor gaussian_gram(Tape&, const Tensor& fx, const Tensor& fy, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_gram: length-scale must be positive");
  Tensor d = diff::pairwise_sqdist(fx, fy);
  return diff::exp(diff::affine(d, -1.0 / (2.0 * sigma * sigma)));
}

Tensor gaussian_gram(Tape&, const Tensor& fx, const Tensor& fy, const Tensor& log_sigma) {
  Tensor d = diff::pairwise_sqdist(fx, fy);
  // -1/(2 sigma^2) = -0.5 * exp(-2 log sigma)
  Tensor coef = diff::affine(diff::exp(diff::affine(log_sigma, -2.0)), -0.5);
  return diff::exp(diff::mul_scalar(d, coef));
}

namespace {

template <typename SigmaT>
Tensor h_impl(Tape& tape, const Tensor& fp, const Tensor& fq, const SigmaT& sigma) {
  if (fp.rows() != fq.rows())
    throw std::invalid_argument("h_from_features: group sizes differ");
  if (fp.rows() < 2) throw std::invalid_argument("h_from_features: need at least 2 samples");
  Tensor kxx = gaussian_gram(tape, fp, fp, sigma);
  Tensor kyy = gaussian_gram(tape, fq, fq, sigma);
  Tensor kxy = gaussian_gram(tape, fp, fq, sigma);
  return diff::sub(diff::sub(diff::add(kxx, kyy), kxy), diff::transpose(kxy));
}

}  // namespace

Tensor h_from_features(Tape& tape, const Tensor& fp, const Tensor& fq, double sigma) {
  return h_impl(tape, fp, fq, sigma);
}

Tensor h_from_features(Tape& tape, const Tensor& fp, const Tensor& fq, const Tensor& log_sigma) {
  return h_impl(tape, fp, fq, log_sigma);
}

std::vector<Tensor> grid_h(Tape&, const Tensor& fp, const Tensor& fq,
                           const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw std::invalid_argument("grid_h: empty grid");
  if (fp.rows() != fq.rows()) throw std::invalid_argument("grid_h: group sizes differ");
  // One shared distance computation per block pair.
  Tensor dxx = diff::pairwise_sqdist(fp, fp);
  Tensor dyy = diff::pairwise_sqdist(fq, fq);
  Tensor dxy = diff::pairwise_sqdist(fp, fq);
  std::vector<Tensor> out;
  out.reserve(sigmas.size());
  for (double s : sigmas) {
    if (!(s > 0.0)) throw std::invalid_argument("grid_h: length-scales must be positive");
    const double c = -1.0 / (2.0 * s * s);
    Tensor kxx = diff::exp(diff::affine(dxx, c));
    Tensor kyy = diff::exp(diff::affine(dyy, c));
    Tensor kxy = diff::exp(diff::affine(dxy, c));
    out.push_back(diff::sub(diff::sub(diff::add(kxx, kyy), kxy), diff::transpose(kxy)));
  }
  return out;
}

}  // namespace mbf::kernels
