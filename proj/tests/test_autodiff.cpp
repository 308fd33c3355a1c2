#include "drape/autodiff.hpp"

#include <doctest.h>

#include <cmath>

using namespace drape;

namespace {

Mat grid(Eigen::Index r, Eigen::Index c, double start = 0.1, double step = 0.17) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = start + step * static_cast<double>(i) * (i % 2 ? -1 : 1);
  return m;
}

}  // namespace

TEST_CASE("matmul gradients are G Bᵀ and Aᵀ G") {
  ad::Tape t;
  const Mat A = grid(2, 3), B = grid(3, 4, -0.3, 0.05);
  ad::Var a = t.variable(A), b = t.variable(B);
  t.backward(ad::sum(ad::matmul(a, b)));
  const Mat ones = Mat::Ones(2, 4);
  CHECK((t.grad(a) - ones * B.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((t.grad(b) - A.transpose() * ones).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("a variable used twice accumulates both paths") {
  ad::Tape t;
  const Mat X = grid(3, 2);
  ad::Var x = t.variable(X);
  t.backward(ad::sum(ad::mul(x, x)));
  CHECK((t.grad(x) - 2.0 * X).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("chain rule through tanh and square") {
  ad::Tape t;
  const Mat X = grid(2, 2);
  ad::Var x = t.variable(X);
  t.backward(ad::sum(ad::square(ad::tanh(x))));
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double th = std::tanh(X.data()[i]);
    CHECK(t.grad(x).data()[i] == doctest::Approx(2.0 * th * (1.0 - th * th)).epsilon(1e-12));
  }
}

TEST_CASE("constants receive no gradient and do not require it") {
  ad::Tape t;
  ad::Var c = t.constant(grid(2, 2));
  ad::Var x = t.variable(grid(2, 2));
  t.backward(ad::sum(ad::mul(c, x)));
  CHECK_FALSE(c.requires_grad());
  CHECK(t.grad(c).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t.grad(x) - c.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gather and scatter are adjoint") {
  ad::Tape t;
  const Mat X = grid(5, 2);
  ad::Var x = t.variable(X);
  const std::vector<int> rows{4, 0, 4};
  ad::Var g = ad::gather_rows(x, rows);
  CHECK(g.value().row(0) == X.row(4));
  t.backward(ad::sum(g));
  Mat expect = Mat::Zero(5, 2);
  expect.row(4).setConstant(2.0);
  expect.row(0).setConstant(1.0);
  CHECK(t.grad(x) == expect);

  ad::Tape t2;
  ad::Var y = t2.variable(grid(2, 3));
  ad::Var s = ad::scatter_rows(y, {3, 1}, 4);
  CHECK(s.value().row(3) == y.value().row(0));
  CHECK(s.value().row(0).isZero());
  t2.backward(ad::sum(ad::mul(s, t2.constant(grid(4, 3)))));
  CHECK(t2.grad(y).row(0) == grid(4, 3).row(3));
}

TEST_CASE("linear layer matches x W + b") {
  ad::Tape t;
  const Mat X = grid(3, 2), W = grid(2, 4, 0.2, 0.03), b = grid(1, 4, -0.1, 0.2);
  ad::Var y = ad::linear(t.variable(X), t.variable(W), t.variable(b));
  const Mat expect = (X * W).rowwise() + b.row(0);
  CHECK((y.value() - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("weighted_sum combines scalars with fixed weights") {
  ad::Tape t;
  ad::Var a = t.variable(Mat::Constant(1, 1, 2.0)), b = t.variable(Mat::Constant(1, 1, 3.0));
  const ad::Var terms[] = {a, b};
  const double w[] = {5.0, 0.5};
  ad::Var s = ad::weighted_sum(terms, w);
  CHECK(s.scalar() == 11.5);
  t.backward(s);
  CHECK(t.grad(a)(0, 0) == 5.0);
  CHECK(t.grad(b)(0, 0) == 0.5);
}

TEST_CASE("clamp and max_scalar pass gradient only inside the active range") {
  ad::Tape t;
  Mat X(1, 3);
  X << -1.0, 0.5, 2.0;
  ad::Var x = t.variable(X);
  t.backward(ad::add(ad::sum(ad::clamp(x, 0.0, 1.0)), ad::sum(ad::max_scalar(x, 1.0))));
  CHECK(t.grad(x)(0, 0) == 0.0);
  CHECK(t.grad(x)(0, 1) == 1.0);
  CHECK(t.grad(x)(0, 2) == 1.0);
}

TEST_CASE("backward requires a scalar root") {
  ad::Tape t;
  ad::Var x = t.variable(grid(2, 2));
  CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("shape mismatches are contract errors") {
  ad::Tape t;
  CHECK_THROWS_AS(ad::matmul(t.variable(grid(2, 3)), t.variable(grid(2, 3))), ContractError);
  CHECK_THROWS_AS(ad::add(t.variable(grid(2, 3)), t.variable(grid(3, 2))), ContractError);
}
