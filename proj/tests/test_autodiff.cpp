#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "ebmpose/autodiff.hpp"

using namespace ebmpose::ad;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Central differences of a scalar function of one matrix input.
Mat numeric_grad(const std::function<double(const Mat&)>& f, Mat x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1e-12, a.norm() + b.norm()); }

// Small two-input network touching every op.
Var network(const Var& x, const Var& w) {
  const Var h = silu(add_row(matmul(x, w), slice_cols(sum_rows(w), 0, w.cols())));
  const Var pooled = max_rows(concat_cols({h, scale(h, 0.5)}));
  const Var wide = pad_cols(pooled, 1, pooled.cols() + 2);
  const Var col = sum_cols(mul_col(gather_rows(h, {0, 2, 2}), constant(Mat::Constant(3, 1, 0.7))));
  const Var back = scatter_add_rows(col, {1, 0, 1}, 2);
  return add(sum_all(mul(wide, wide)),
             add(sum_all(matmul_nt(back, back)),
                 sum_all(affine(sigmoid(matmul_tn(x, sub(broadcast_rows(sum_rows(x), x.rows()), x))), 2.0, 1.0))));
}

}  // namespace

TEST(Autodiff, FirstOrderMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const Mat x0 = random_mat(4, 3, rng), w0 = random_mat(3, 5, rng);
  const Var x = variable(x0), w = variable(w0);
  const auto g = grad(network(x, w), {x, w});
  const Mat nx = numeric_grad([&](const Mat& m) { return network(constant(m), constant(w0)).scalar(); }, x0);
  const Mat nw = numeric_grad([&](const Mat& m) { return network(constant(x0), constant(m)).scalar(); }, w0);
  EXPECT_LT(rel_err(g[0].value(), nx), 1e-7);
  EXPECT_LT(rel_err(g[1].value(), nw), 1e-7);
}

TEST(Autodiff, SecondOrderMatchesFiniteDifferences) {
  // L(w) = || d net / d x ||^2 differentiated with respect to w.
  std::mt19937_64 rng(2);
  const Mat x0 = random_mat(4, 3, rng), w0 = random_mat(3, 5, rng);
  auto loss = [&](const Var& x, const Var& w) {
    const Var gx = grad(network(x, w), {x}, true)[0];
    return sum_all(mul(gx, gx));
  };
  const Var x = variable(x0), w = variable(w0);
  const Var l = loss(x, w);
  const Mat gw = grad(l, {w})[0].value();
  const Mat nw = numeric_grad([&](const Mat& m) { return loss(variable(x0), constant(m)).scalar(); }, w0);
  EXPECT_LT(rel_err(gw, nw), 1e-6);
}

TEST(Autodiff, QuadraticHasExactGradients) {
  // f = sum (x A) .* x ; grad = x (A + A^T) ; second derivative of sum grad = 2 * rowsum(A + A^T)
  std::mt19937_64 rng(3);
  const Mat a0 = random_mat(3, 3, rng), x0 = random_mat(2, 3, rng);
  const Var x = variable(x0);
  const Var f = sum_all(mul(matmul(x, constant(a0)), x));
  const Var gx = grad(f, {x}, true)[0];
  EXPECT_LT((gx.value() - x0 * (a0 + a0.transpose())).norm(), 1e-12);
  const Var ggx = grad(sum_all(gx), {x})[0];
  const Mat expect = Mat::Ones(2, 3) * (a0 + a0.transpose()).transpose();
  EXPECT_LT((ggx.value() - expect).norm(), 1e-12);
}

TEST(Autodiff, UnreachableInputGetsZeros) {
  const Var x = variable(Mat::Ones(2, 2)), y = variable(Mat::Ones(3, 1));
  const auto g = grad(sum_all(mul(x, x)), {x, y});
  EXPECT_EQ(g[1].value(), Mat::Zero(3, 1));
  EXPECT_EQ(g[0].value(), Mat::Constant(2, 2, 2.0));
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  const Var x = variable(Mat::Ones(2, 2));
  {
    NoGradGuard guard;
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Autodiff, ShapeErrors) {
  const Var a = variable(Mat::Ones(2, 3)), b = variable(Mat::Ones(2, 3));
  EXPECT_THROW(matmul(a, b), ebmpose::ShapeMismatch);
  EXPECT_THROW(add(a, constant(Mat::Ones(3, 2))), ebmpose::ShapeMismatch);
  EXPECT_THROW(grad(a, {a}), ebmpose::ShapeMismatch);
}
