#include "tensor.h"

#include <cmath>

#include "special.h"

namespace mbf::diff {

namespace {

void ensure_finite(const Mat& m, const char* op) {
  if (!m.allFinite())
    throw numeric_error(std::string(op) + ": non-finite value encountered");
}

Tape* common_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid())
    throw std::invalid_argument(std::string(op) + ": null tensor");
  if (a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

void require_scalar(const Tensor& s, const char* op) {
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument(std::string(op) + ": expected 1x1 tensor");
}

}  // namespace

const Mat& Tensor::value() const {
  if (!valid()) throw std::invalid_argument("Tensor: null handle");
  return tape_->node(id_).value;
}

const Mat& Tensor::grad() const {
  if (!valid()) throw std::invalid_argument("Tensor: null handle");
  const Tape::Node& n = tape_->node(id_);
  if (!n.requires_grad)
    throw std::invalid_argument("Tensor::grad: node does not track gradients");
  return n.grad;
}

bool Tensor::requires_grad() const {
  if (!valid()) throw std::invalid_argument("Tensor: null handle");
  return tape_->node(id_).requires_grad;
}

double Tensor::scalar() const {
  const Mat& v = value();
  if (v.rows() != 1 || v.cols() != 1)
    throw std::invalid_argument("Tensor::scalar: tensor is not 1x1");
  return v(0, 0);
}

Tensor Tape::leaf(Mat value) {
  ensure_finite(value, "leaf");
  return emplace(std::move(value), true, nullptr);
}

Tensor Tape::constant(Mat value) {
  ensure_finite(value, "constant");
  return emplace(std::move(value), false, nullptr);
}

Tensor Tape::constant_scalar(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Tensor Tape::emplace(Mat value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.tape() != this)
    throw std::invalid_argument("backward: loss not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  Node& top = node(loss.id());
  if (!top.requires_grad)
    throw std::invalid_argument("backward: loss does not depend on any parameter");
  top.grad(0, 0) = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.requires_grad && n.backprop) n.backprop(*this);
  }
}

// ---- op helpers -----------------------------------------------------------

namespace {

// Emits a node computing `value` from inputs; `pull` receives the output
// gradient and must accumulate into the inputs' grads.
Tensor make_op(Tape* tape, Mat value, std::vector<int> inputs,
               std::function<void(Tape&, const Mat&)> pull, const char* op) {
  ensure_finite(value, op);
  bool rg = false;
  for (int id : inputs) rg = rg || tape->node(id).requires_grad;
  if (!rg) return tape->emplace(std::move(value), false, nullptr);
  // The closure looks its own node up by id so vector reallocation is safe.
  const int out_id = static_cast<int>(tape->size());
  auto backprop = [out_id, pull = std::move(pull)](Tape& t) {
    pull(t, t.node(out_id).grad);
  };
  return tape->emplace(std::move(value), true, std::move(backprop));
}

void accumulate(Tape& t, int id, const Mat& g) {
  Tape::Node& n = t.node(id);
  if (n.requires_grad) n.grad += g;
}

}  // namespace

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  const int ia = a.id(), ib = b.id();
  Mat v = a.value() * b.value();
  return make_op(
      t, std::move(v), {ia, ib},
      [ia, ib](Tape& t, const Mat& g) {
        accumulate(t, ia, g * t.node(ib).value.transpose());
        accumulate(t, ib, t.node(ia).value.transpose() * g);
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("transpose: null tensor");
  const int ia = a.id();
  return make_op(
      t, a.value().transpose(), {ia},
      [ia](Tape& t, const Mat& g) { accumulate(t, ia, g.transpose()); }, "transpose");
}

Tensor vstack(const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b, "vstack");
  if (a.cols() != b.cols()) throw std::invalid_argument("vstack: column counts differ");
  const int ia = a.id(), ib = b.id();
  Mat v(a.rows() + b.rows(), a.cols());
  v << a.value(), b.value();
  const Eigen::Index na = a.rows();
  return make_op(
      t, std::move(v), {ia, ib},
      [ia, ib, na](Tape& t, const Mat& g) {
        accumulate(t, ia, g.topRows(na));
        accumulate(t, ib, g.bottomRows(g.rows() - na));
      },
      "vstack");
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b, "add");
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return make_op(
      t, a.value() + b.value(), {ia, ib},
      [ia, ib](Tape& t, const Mat& g) {
        accumulate(t, ia, g);
        accumulate(t, ib, g);
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return make_op(
      t, a.value() - b.value(), {ia, ib},
      [ia, ib](Tape& t, const Mat& g) {
        accumulate(t, ia, g);
        accumulate(t, ib, -g);
      },
      "sub");
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  Tape* t = common_tape(a, row, "add_rowvec");
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: row must be 1x" + std::to_string(a.cols()));
  const int ia = a.id(), ir = row.id();
  Mat v = a.value().rowwise() + row.value().row(0);
  return make_op(
      t, std::move(v), {ia, ir},
      [ia, ir](Tape& t, const Mat& g) {
        accumulate(t, ia, g);
        accumulate(t, ir, g.colwise().sum());
      },
      "add_rowvec");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return make_op(
      t, a.value().cwiseProduct(b.value()), {ia, ib},
      [ia, ib](Tape& t, const Mat& g) {
        accumulate(t, ia, g.cwiseProduct(t.node(ib).value));
        accumulate(t, ib, g.cwiseProduct(t.node(ia).value));
      },
      "mul");
}

Tensor affine(const Tensor& a, double c, double d) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("affine: null tensor");
  const int ia = a.id();
  Mat v = ((c * a.value()).array() + d).matrix();
  return make_op(
      t, std::move(v), {ia},
      [ia, c](Tape& t, const Mat& g) { accumulate(t, ia, c * g); }, "affine");
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  Tape* t = common_tape(a, s, "mul_scalar");
  require_scalar(s, "mul_scalar");
  const int ia = a.id(), is = s.id();
  return make_op(
      t, a.value() * s.value()(0, 0), {ia, is},
      [ia, is](Tape& t, const Mat& g) {
        accumulate(t, ia, g * t.node(is).value(0, 0));
        Mat gs(1, 1);
        gs(0, 0) = (g.cwiseProduct(t.node(ia).value)).sum();
        accumulate(t, is, gs);
      },
      "mul_scalar");
}

Tensor div_scalar(const Tensor& a, const Tensor& s) {
  Tape* t = common_tape(a, s, "div_scalar");
  require_scalar(s, "div_scalar");
  const double sv = s.value()(0, 0);
  if (sv == 0.0) throw numeric_error("div_scalar: division by zero");
  const int ia = a.id(), is = s.id();
  return make_op(
      t, a.value() / sv, {ia, is},
      [ia, is](Tape& t, const Mat& g) {
        const double sv = t.node(is).value(0, 0);
        accumulate(t, ia, g / sv);
        Mat gs(1, 1);
        gs(0, 0) = -(g.cwiseProduct(t.node(ia).value)).sum() / (sv * sv);
        accumulate(t, is, gs);
      },
      "div_scalar");
}

Tensor exp(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("exp: null tensor");
  const int ia = a.id();
  Mat v = a.value().array().exp().matrix();
  const int out_pre = static_cast<int>(t->size());  // id the new node will get
  return make_op(
      t, std::move(v), {ia},
      [ia, out_pre](Tape& t, const Mat& g) {
        accumulate(t, ia, g.cwiseProduct(t.node(out_pre).value));
      },
      "exp");
}

Tensor sqrt(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("sqrt: null tensor");
  if ((a.value().array() <= 0.0).any())
    throw numeric_error("sqrt: input must be strictly positive");
  const int ia = a.id();
  Mat v = a.value().array().sqrt().matrix();
  const int out_pre = static_cast<int>(t->size());
  return make_op(
      t, std::move(v), {ia},
      [ia, out_pre](Tape& t, const Mat& g) {
        accumulate(t, ia, (0.5 * g.array() / t.node(out_pre).value.array()).matrix());
      },
      "sqrt");
}

Tensor leaky_relu(const Tensor& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("leaky_relu: null tensor");
  const int ia = a.id();
  Mat v = a.value().cwiseMax(slope * a.value());
  return make_op(
      t, std::move(v), {ia},
      [ia, slope](Tape& t, const Mat& g) {
        // slope on the negative side and at exactly zero
        const Mat& x = t.node(ia).value;
        Mat factor = (x.array() > 0.0)
                         .select(Mat::Ones(x.rows(), x.cols()),
                                 Mat::Constant(x.rows(), x.cols(), slope));
        accumulate(t, ia, g.cwiseProduct(factor));
      },
      "leaky_relu");
}

Tensor pairwise_sqdist(const Tensor& x, const Tensor& y) {
  Tape* t = common_tape(x, y, "pairwise_sqdist");
  if (x.cols() != y.cols())
    throw std::invalid_argument("pairwise_sqdist: feature dimensions differ (" +
                                std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) + ")");
  const int ix = x.id(), iy = y.id();
  const Mat& xv = x.value();
  const Mat& yv = y.value();
  Mat d = (-2.0 * xv * yv.transpose());
  d.colwise() += xv.rowwise().squaredNorm();
  d.rowwise() += yv.rowwise().squaredNorm().transpose();
  // Clamp roundoff negatives; true gradient at zero distance is zero anyway.
  d = d.cwiseMax(0.0);
  return make_op(
      t, std::move(d), {ix, iy},
      [ix, iy](Tape& t, const Mat& g) {
        const Mat& xv = t.node(ix).value;
        const Mat& yv = t.node(iy).value;
        Eigen::VectorXd row_sums = g.rowwise().sum();
        Eigen::VectorXd col_sums = g.colwise().sum().transpose();
        Mat gx = 2.0 * ((xv.array().colwise() * row_sums.array()).matrix() - g * yv);
        Mat gy = 2.0 * ((yv.array().colwise() * col_sums.array()).matrix() - g.transpose() * xv);
        accumulate(t, ix, gx);
        accumulate(t, iy, gy);
      },
      "pairwise_sqdist");
}

Tensor sum(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("sum: null tensor");
  const int ia = a.id();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return make_op(
      t, std::move(v), {ia},
      [ia](Tape& t, const Mat& g) {
        const Tape::Node& n = t.node(ia);
        accumulate(t, ia, Mat::Constant(n.value.rows(), n.value.cols(), g(0, 0)));
      },
      "sum");
}

Tensor trace(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("trace: null tensor");
  if (a.rows() != a.cols()) throw std::invalid_argument("trace: tensor must be square");
  const int ia = a.id();
  Mat v(1, 1);
  v(0, 0) = a.value().trace();
  return make_op(
      t, std::move(v), {ia},
      [ia](Tape& t, const Mat& g) {
        const Tape::Node& n = t.node(ia);
        Mat d = Mat::Zero(n.value.rows(), n.value.cols());
        d.diagonal().setConstant(g(0, 0));
        accumulate(t, ia, d);
      },
      "trace");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  Tape* t = logits.tape();
  if (!t) throw std::invalid_argument("cross_entropy: null tensor");
  const Eigen::Index n = logits.rows(), c = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: label count differs from row count");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(c) + ")");
  const int il = logits.id();
  const Mat& z = logits.value();
  // log-softmax with max subtraction
  Eigen::VectorXd zmax = z.rowwise().maxCoeff();
  Mat shifted = z.colwise() - zmax;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    loss -= shifted(i, labels[static_cast<std::size_t>(i)]) - lse(i);
  loss /= static_cast<double>(n);
  Mat v(1, 1);
  v(0, 0) = loss;
  // cache softmax for the backward rule
  Mat softmax = ((shifted.colwise() - lse).array().exp()).matrix();
  return make_op(
      t, std::move(v), {il},
      [il, labels, softmax = std::move(softmax), n](Tape& t, const Mat& g) {
        Mat d = softmax;
        for (Eigen::Index i = 0; i < n; ++i) d(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        accumulate(t, il, (g(0, 0) / static_cast<double>(n)) * d);
      },
      "cross_entropy");
}

Tensor normal_cdf(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw std::invalid_argument("normal_cdf: null tensor");
  const int ia = a.id();
  Mat v = a.value().unaryExpr([](double x) { return special::normal_cdf(x); });
  return make_op(
      t, std::move(v), {ia},
      [ia](Tape& t, const Mat& g) {
        const Mat& x = t.node(ia).value;
        Mat pdf = x.unaryExpr([](double u) { return special::normal_pdf(u); });
        accumulate(t, ia, g.cwiseProduct(pdf));
      },
      "normal_cdf");
}

int argmax_of(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("max_of: empty set");
  int best = 0;
  double best_v = xs[0].scalar();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double v = xs[i].scalar();
    if (v > best_v) {  // strict: ties keep the lowest index
      best_v = v;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Tensor max_of(const std::vector<Tensor>& xs) {
  // Selection happens eagerly; returning the chosen handle routes the
  // gradient through the argmax element only (subgradient choice).
  return xs[static_cast<std::size_t>(argmax_of(xs))];
}

double grad_check(const LossFn& f, const std::vector<Mat>& params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  // analytic gradients
  std::vector<Mat> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(params.size());
    for (const Mat& p : params) leaves.push_back(tape.leaf(p));
    Tensor loss = f(tape, leaves);
    if (!loss.value().allFinite()) throw numeric_error("grad_check: non-finite loss");
    if (loss.requires_grad()) {
      tape.backward(loss);
      for (const Tensor& l : leaves) analytic.push_back(l.grad());
    } else {
      // loss ignores every parameter: gradient is identically zero
      for (const Mat& p : params) analytic.push_back(Mat::Zero(p.rows(), p.cols()));
    }
  }
  auto eval = [&](const std::vector<Mat>& p) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(p.size());
    for (const Mat& m : p) leaves.push_back(tape.leaf(m));
    const double v = f(tape, leaves).scalar();
    if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite loss");
    return v;
  };
  double max_rel = 0.0;
  std::vector<Mat> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < params[k].cols(); ++j) {
        const double orig = work[k](i, j);
        work[k](i, j) = orig + eps;
        const double up = eval(work);
        work[k](i, j) = orig - eps;
        const double down = eval(work);
        work[k](i, j) = orig;
        const double fd = (up - down) / (2.0 * eps);
        const double an = analytic[k](i, j);
        const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  return max_rel;
}

}  // namespace mbf::diff
