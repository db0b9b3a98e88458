#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbf::diff {

using Mat = Eigen::MatrixXd;

class Tape;

// Raised when an operation would produce or consume a NaN/Inf.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Handle to a node on a Tape. Cheap to copy; the Tape owns all storage.
// A default-constructed Tensor is a null handle and unusable.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Mat& value() const;
  const Mat& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  // Value of a 1x1 tensor.
  double scalar() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records operations in execution order (which is a topological order) and
// replays their backward rules in reverse. One tape per thread of work;
// rebuild per optimization step, binding parameters as fresh leaves.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf with gradient tracking.
  Tensor leaf(Mat value);
  // Leaf without gradient tracking (data, precomputed constants).
  Tensor constant(Mat value);
  Tensor constant_scalar(double value);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Accumulates gradients of every requires_grad node reachable from `loss`
  // (a 1x1 tensor). Existing gradients are reset first.
  void backward(const Tensor& loss);

  // --- internal access for operations ---
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;  // null for leaves/constants
  };
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Tensor emplace(Mat value, bool requires_grad, std::function<void(Tape&)> backprop);

 private:
  std::vector<Node> nodes_;
};

// ---- Operations ----------------------------------------------------------
// Each returns a new node on the operands' tape. Shapes are validated and
// results checked finite; violations throw std::invalid_argument or
// numeric_error.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Rows of a stacked over rows of b (column counts must match).
Tensor vstack(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Adds a 1xk row vector to every row of an n x k tensor.
Tensor add_rowvec(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
// Elementwise affine map c*a + d with compile-time constants.
Tensor affine(const Tensor& a, double c, double d = 0.0);
// Broadcast multiply / divide by a 1x1 tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor div_scalar(const Tensor& a, const Tensor& s);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);  // requires strictly positive entries
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
// D_ij = |x_i - y_j|^2 for row-sample matrices x (n x d), y (m x d).
Tensor pairwise_sqdist(const Tensor& x, const Tensor& y);
Tensor sum(const Tensor& a);    // 1x1
Tensor trace(const Tensor& a);  // 1x1, square input
// Mean negative log-softmax of the true class; logits n x c.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor normal_cdf(const Tensor& a);  // elementwise Phi

// Largest of a set of 1x1 tensors. Ties resolve to the lowest index and the
// gradient flows only through the selected element.
Tensor max_of(const std::vector<Tensor>& xs);
int argmax_of(const std::vector<Tensor>& xs);

// ---- Gradient checking ----------------------------------------------------

// Rebuilds the loss with the given parameter values; used by grad_check.
using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Compares tape gradients of `f` against central finite differences at
// `params`. Returns the max relative error over all parameter entries,
// with relative error |a-f| / max(|a|,|f|,1e-6).
double grad_check(const LossFn& f, const std::vector<Mat>& params, double eps = 1e-5);

}  // namespace mbf::diff
