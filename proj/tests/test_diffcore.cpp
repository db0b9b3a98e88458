#include <cmath>

#include "doctest.h"
#include "optim.h"
#include "rng.h"
#include "special.h"
#include "tensor.h"
#include "test_support.h"

using namespace mbf;
using diff::Mat;
using diff::Tape;
using diff::Tensor;

TEST_CASE("matmul forward values") {
  Tape tape;
  SUBCASE("identity times X is X") {
    Rng rng(7);
    Mat m = testsup::random_matrix(rng, 2, 3);
    Tensor a = tape.constant(Mat::Identity(2, 2));
    Tensor b = tape.constant(m);
    CHECK(diff::matmul(a, b).value().isApprox(m, 1e-15));
  }
  SUBCASE("hand arithmetic") {
    Mat a(2, 2), b(2, 1);
    a << 1, 2, 3, 4;
    b << 1, 1;
    Tensor r = diff::matmul(tape.constant(a), tape.constant(b));
    CHECK(r.value()(0, 0) == doctest::Approx(3.0));
    CHECK(r.value()(1, 0) == doctest::Approx(7.0));
  }
  SUBCASE("shape mismatch throws") {
    Tensor a = tape.constant(Mat::Zero(2, 3));
    Tensor b = tape.constant(Mat::Zero(2, 2));
    CHECK_THROWS_AS(diff::matmul(a, b), std::invalid_argument);
  }
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(11);
  const Mat a0 = testsup::random_matrix(rng, 3, 4);
  const Mat b0 = testsup::random_matrix(rng, 4, 2);
  const double err = diff::grad_check(
      [](Tape& t, const std::vector<Tensor>& p) {
        return diff::sum(diff::mul(diff::matmul(p[0], p[1]), diff::matmul(p[0], p[1])));
      },
      {a0, b0});
  CHECK(err < 1e-5);
}

TEST_CASE("pairwise_sqdist values") {
  Tape tape;
  SUBCASE("two points on a line") {
    Mat x(2, 1);
    x << 0, 1;
    Tensor d = diff::pairwise_sqdist(tape.constant(x), tape.constant(x));
    CHECK(d.value()(0, 0) == doctest::Approx(0.0));
    CHECK(d.value()(0, 1) == doctest::Approx(1.0));
    CHECK(d.value()(1, 0) == doctest::Approx(1.0));
    CHECK(d.value()(1, 1) == doctest::Approx(0.0));
  }
  SUBCASE("3-4-5 triangle") {
    Mat x(1, 2), y(1, 2);
    x << 0, 0;
    y << 3, 4;
    CHECK(diff::pairwise_sqdist(tape.constant(x), tape.constant(y)).value()(0, 0) ==
          doctest::Approx(25.0));
  }
  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS_AS(
        diff::pairwise_sqdist(tape.constant(Mat::Zero(2, 3)), tape.constant(Mat::Zero(2, 2))),
        std::invalid_argument);
  }
}

TEST_CASE("pairwise_sqdist gradient matches finite differences") {
  Rng rng(13);
  const Mat x0 = testsup::random_matrix(rng, 4, 3);
  const Mat y0 = testsup::random_matrix(rng, 5, 3);
  const double err = diff::grad_check(
      [](Tape& t, const std::vector<Tensor>& p) {
        Tensor d = diff::pairwise_sqdist(p[0], p[1]);
        return diff::sum(diff::mul(d, d));
      },
      {x0, y0});
  CHECK(err < 1e-5);
}

TEST_CASE("leaky_relu piecewise definition") {
  Tape tape;
  Mat x(1, 3);
  x << 5.0, -2.0, 0.0;
  Tensor r = diff::leaky_relu(tape.constant(x), 0.01);
  CHECK(r.value()(0, 0) == doctest::Approx(5.0));
  CHECK(r.value()(0, 1) == doctest::Approx(-0.02));
  CHECK(r.value()(0, 2) == doctest::Approx(0.0));

  // gradient at -1 is the slope
  Tape t2;
  Mat xm(1, 1);
  xm << -1.0;
  Tensor leaf = t2.leaf(xm);
  t2.backward(diff::sum(diff::leaky_relu(leaf, 0.01)));
  CHECK(leaf.grad()(0, 0) == doctest::Approx(0.01));

  CHECK_THROWS_AS(diff::leaky_relu(tape.constant(x), 1.5), std::invalid_argument);
}

TEST_CASE("cross_entropy values and gradient") {
  SUBCASE("uniform logits give ln 2") {
    Tape tape;
    Mat z = Mat::Zero(3, 2);
    Tensor ce = diff::cross_entropy(tape.constant(z), {0, 1, 0});
    CHECK(ce.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("confident correct logit") {
    Tape tape;
    Mat z(1, 2);
    z << 10.0, -10.0;
    // -log softmax = log(1 + exp(-20))
    const double expected = std::log1p(std::exp(-20.0));
    CHECK(diff::cross_entropy(tape.constant(z), {0}).scalar() ==
          doctest::Approx(expected).epsilon(1e-9));
    CHECK(expected == doctest::Approx(2.061e-9).epsilon(1e-3));
  }
  SUBCASE("label out of range throws") {
    Tape tape;
    CHECK_THROWS_AS(diff::cross_entropy(tape.constant(Mat::Zero(1, 2)), {2}),
                    std::invalid_argument);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(17);
    const Mat z0 = testsup::random_matrix(rng, 6, 3);
    const double err = diff::grad_check(
        [](Tape& t, const std::vector<Tensor>& p) {
          return diff::cross_entropy(p[0], {0, 1, 2, 1, 0, 2});
        },
        {z0});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("normal_cdf and normal_quantile") {
  SUBCASE("Phi(0) is one half") {
    CHECK(special::normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("symmetry") {
    Rng rng(19);
    for (int i = 0; i < 50; ++i) {
      const double x = rng.uniform(-6.0, 6.0);
      CHECK(special::normal_cdf(x) + special::normal_cdf(-x) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("matches the long-double reference") {
    Rng rng(23);
    for (int i = 0; i < 200; ++i) {
      const double x = rng.uniform(-6.0, 6.0);
      const double ref = static_cast<double>(testsup::ref_normal_cdf(x));
      CHECK(std::fabs(special::normal_cdf(x) - ref) < 1e-7);
    }
  }
  SUBCASE("quantile round trip") {
    CHECK(std::fabs(special::normal_cdf(special::normal_quantile(0.95)) - 0.95) < 1e-6);
    Rng rng(29);
    for (int i = 0; i < 100; ++i) {
      const double p = rng.uniform(1e-6, 1.0 - 1e-6);
      CHECK(std::fabs(special::normal_cdf(special::normal_quantile(p)) - p) < 1e-6);
    }
  }
  SUBCASE("quantile domain") {
    CHECK_THROWS_AS(special::normal_quantile(0.0), std::invalid_argument);
    CHECK_THROWS_AS(special::normal_quantile(1.0), std::invalid_argument);
    CHECK_THROWS_AS(special::normal_quantile(-0.3), std::invalid_argument);
  }
  SUBCASE("tensor op derivative is the density") {
    Rng rng(31);
    const Mat x0 = testsup::random_matrix(rng, 2, 2);
    const double err = diff::grad_check(
        [](Tape& t, const std::vector<Tensor>& p) { return diff::sum(diff::normal_cdf(p[0])); },
        {x0});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("adam and adadelta updates") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    diff::Optimizer opt = diff::Optimizer::adam(1e-3);
    Mat p = Mat::Constant(2, 2, 1.5);
    const Mat before = p;
    Mat g = Mat::Zero(2, 2);
    std::vector<Mat*> params = {&p};
    std::vector<const Mat*> grads = {&g};
    opt.step(params, grads);
    CHECK(p.isApprox(before, 1e-15));
  }
  SUBCASE("first adam step moves by about the learning rate") {
    diff::Optimizer opt = diff::Optimizer::adam(1e-4);
    Mat p = Mat::Zero(1, 1);
    Mat g = Mat::Constant(1, 1, 1.0);
    std::vector<Mat*> params = {&p};
    std::vector<const Mat*> grads = {&g};
    opt.step(params, grads);
    // m_hat = 1, v_hat = 1 after bias correction: step = lr / (1 + eps)
    CHECK(p(0, 0) == doctest::Approx(-1e-4).epsilon(1e-6));
  }
  SUBCASE("updates are deterministic") {
    auto run = [] {
      diff::Optimizer opt = diff::Optimizer::adadelta(2.0);
      Mat p = Mat::Constant(2, 3, 0.25);
      Rng rng(37);
      for (int i = 0; i < 10; ++i) {
        Mat g = testsup::random_matrix(rng, 2, 3);
        std::vector<Mat*> params = {&p};
        std::vector<const Mat*> grads = {&g};
        opt.step(params, grads);
      }
      return p;
    };
    const Mat a = run(), b = run();
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);  // bit-identical
  }
  SUBCASE("shape mismatch throws") {
    diff::Optimizer opt = diff::Optimizer::adam(1e-3);
    Mat p = Mat::Zero(2, 2), g = Mat::Zero(2, 3);
    std::vector<Mat*> params = {&p};
    std::vector<const Mat*> grads = {&g};
    CHECK_THROWS_AS(opt.step(params, grads), std::invalid_argument);
  }
}

TEST_CASE("grad_check on simple functions") {
  SUBCASE("x squared at 3") {
    Mat x(1, 1);
    x << 3.0;
    Tape tape;
    Tensor leaf = tape.leaf(x);
    Tensor loss = diff::mul(leaf, leaf);
    tape.backward(loss);
    CHECK(leaf.grad()(0, 0) == doctest::Approx(6.0).epsilon(1e-12));
    const double err = diff::grad_check(
        [](Tape& t, const std::vector<Tensor>& p) { return diff::mul(p[0], p[0]); }, {x});
    CHECK(err < 1e-6);
  }
  SUBCASE("constant function has zero gradients") {
    Mat x(1, 1);
    x << 2.0;
    const double err = diff::grad_check(
        [](Tape& t, const std::vector<Tensor>& p) { return t.constant_scalar(4.0); }, {x});
    CHECK(err == 0.0);
  }
}

TEST_CASE("composed graphs match finite differences (property)") {
  // random small networks through the full op set
  for (std::uint64_t trial = 0; trial < 8; ++trial) {
    Rng rng(100 + trial);
    const Mat w1 = testsup::random_matrix(rng, 3, 4, 0.7);
    const Mat b1 = testsup::random_matrix(rng, 1, 4, 0.1);
    const Mat w2 = testsup::random_matrix(rng, 4, 2, 0.7);
    const Mat ls = testsup::random_matrix(rng, 1, 1, 0.2);
    const Mat x = testsup::random_matrix(rng, 5, 3);
    const Mat y = testsup::random_matrix(rng, 5, 3);
    const double err = diff::grad_check(
        [&x, &y](Tape& t, const std::vector<Tensor>& p) {
          Tensor hx = diff::leaky_relu(
              diff::add_rowvec(diff::matmul(t.constant(x), p[0]), p[1]), 0.01);
          Tensor hy = diff::leaky_relu(
              diff::add_rowvec(diff::matmul(t.constant(y), p[0]), p[1]), 0.01);
          Tensor fx = diff::matmul(hx, p[2]);
          Tensor fy = diff::matmul(hy, p[2]);
          Tensor d = diff::pairwise_sqdist(fx, fy);
          Tensor coef = diff::affine(diff::exp(diff::affine(p[3], -2.0)), -0.5);
          Tensor k = diff::exp(diff::mul_scalar(d, coef));
          Tensor v = diff::affine(diff::sum(diff::mul(k, k)), 1.0, 0.3);
          Tensor z = diff::div_scalar(diff::sub(diff::sum(k), diff::trace(k)), diff::sqrt(v));
          return diff::normal_cdf(diff::affine(z, 0.37, -0.2));
        },
        {w1, b1, w2, ls}, 1e-5);
    CAPTURE(trial);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("non-finite values are errors, not silent propagation") {
  Tape tape;
  SUBCASE("leaf rejects NaN") {
    Mat bad(1, 1);
    bad << std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(tape.leaf(bad), diff::numeric_error);
  }
  SUBCASE("exp overflow is caught") {
    Mat big(1, 1);
    big << 1e4;
    CHECK_THROWS_AS(diff::exp(tape.constant(big)), diff::numeric_error);
  }
  SUBCASE("sqrt of nonpositive is caught") {
    Mat z(1, 1);
    z << 0.0;
    CHECK_THROWS_AS(diff::sqrt(tape.constant(z)), diff::numeric_error);
  }
  SUBCASE("division by zero scalar is caught") {
    Mat a(1, 1), z(1, 1);
    a << 1.0;
    z << 0.0;
    CHECK_THROWS_AS(diff::div_scalar(tape.constant(a), tape.constant(z)), diff::numeric_error);
  }
}

TEST_CASE("vstack splits gradients by rows") {
  Rng rng(41);
  const Mat a0 = testsup::random_matrix(rng, 2, 3);
  const Mat b0 = testsup::random_matrix(rng, 4, 3);
  const double err = diff::grad_check(
      [](Tape& t, const std::vector<Tensor>& p) {
        Tensor s = diff::vstack(p[0], p[1]);
        return diff::sum(diff::mul(s, s));
      },
      {a0, b0});
  CHECK(err < 1e-5);
}

TEST_CASE("max_of routes gradient through the argmax only") {
  Mat a(1, 1), b(1, 1);
  a << 1.0;
  b << 2.0;
  Tape tape;
  Tensor ta = tape.leaf(a);
  Tensor tb = tape.leaf(b);
  std::vector<Tensor> xs = {diff::mul(ta, ta), diff::mul(tb, tb)};
  CHECK(diff::argmax_of(xs) == 1);
  tape.backward(diff::max_of(xs));
  CHECK(ta.grad()(0, 0) == doctest::Approx(0.0));
  CHECK(tb.grad()(0, 0) == doctest::Approx(4.0));

  // ties resolve to the lowest index
  Tape t2;
  Tensor u = t2.leaf(a);
  Tensor v = t2.leaf(a);
  std::vector<Tensor> ys = {u, v};
  CHECK(diff::argmax_of(ys) == 0);
}
