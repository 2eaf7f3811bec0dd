#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <numeric>

#include "ebmpose/diffusion.hpp"

using namespace ebmpose;

TEST(Schedule, EndpointsAndDomain) {
  const NoiseSchedule s;
  EXPECT_EQ(s.sigma(1.0), s.sigma_max);
  EXPECT_NEAR(s.sigma(s.eps), s.sigma_min, 1e-6);
  EXPECT_THROW(s.sigma(0.0), DomainError);
  EXPECT_THROW(s.sigma(1.0 + 1e-9), DomainError);
  EXPECT_THROW((NoiseSchedule{1.0, 0.5}.validate()), ConfigError);
  for (int i = 1; i < 100; ++i) EXPECT_LT(s.sigma(i / 100.0), s.sigma((i + 1) / 100.0));
  EXPECT_EQ(s.lambda(0.5), s.sigma(0.5) * s.sigma(0.5));
}

TEST(Schedule, DriftIsDerivativeOfHalfVariance) {
  const NoiseSchedule s;
  const double h = 1e-5;
  for (double t : {0.3, 0.6, 0.9}) {
    const double fd = (0.5 * std::pow(s.sigma(t + h), 2) - 0.5 * std::pow(s.sigma(t - h), 2)) / (2 * h);
    EXPECT_LT(std::abs(fd - s.drift_coeff(t)) / s.drift_coeff(t), 1e-6) << t;
  }
}

TEST(Perturb, WorkedExamples) {
  const Vec9 p0 = Pose9{}.vec();
  const Perturbed zero = perturb_with(p0, 0.3, Vec9::Zero());
  EXPECT_EQ(zero.pt, p0);
  EXPECT_EQ(zero.target, Vec9::Zero());

  Vec9 e0 = Vec9::Zero();
  e0[0] = 1.0;
  const Perturbed half = perturb_with(p0, 0.5, e0);
  EXPECT_EQ(half.pt - p0, 0.5 * e0);
  EXPECT_EQ(half.target, -2.0 * e0);
}

TEST(Perturb, TargetConsistentAndVarianceMatches) {
  const NoiseSchedule s;
  Rng rng(11);
  const Vec9 p0 = Pose9{}.vec();
  const double t = 0.7, sigma = s.sigma(t);
  double acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Perturbed d = perturb(p0, t, s, rng);
    const Vec9 resid = sigma * sigma * d.target + (d.pt - p0);
    EXPECT_LE(resid.cwiseAbs().maxCoeff(), 1e-15 * (1.0 + d.pt.cwiseAbs().maxCoeff()));
    acc += (d.pt - p0).squaredNorm();
  }
  const double var = acc / (9.0 * n);
  EXPECT_NEAR(var / (sigma * sigma), 1.0, 0.03);
}

TEST(Ode, ZeroRhsKeepsState) {
  Vec9 p;
  p << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const auto rep = integrate_pf_ode([](const Vec9&, double) { return Vec9::Zero().eval(); }, NoiseSchedule{}, p,
                                    0.6, 1e-5);
  EXPECT_EQ(rep.final_state, p);
  EXPECT_GE(rep.n_accepted_steps, 1);
  EXPECT_GE(rep.n_rhs_evals, 6 * rep.n_accepted_steps);
}

namespace {
OdeReport<Vec9> gaussian_run(const Vec9& mu, const Vec9& start, const OdeTolerance& tol) {
  const NoiseSchedule s;
  return integrate_pf_ode([&](const Vec9& p, double t) -> Vec9 { return (mu - p) / std::pow(s.sigma(t), 2); }, s,
                          start, 1.0, s.eps, tol);
}
}  // namespace

TEST(Ode, GaussianScoreContractsByClosedFormRatio) {
  const NoiseSchedule s;
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Vec9 mu, start;
    for (int i = 0; i < 9; ++i) {
      mu[i] = normal(rng, 0, 1);
      start[i] = normal(rng, 0, 1);
    }
    const auto rep = gaussian_run(mu, start, {1e-6, 1e-8});
    // Linear ODE: p - mu scales by sigma(eps) / sigma(1).
    const double expected = s.sigma(s.eps) / s.sigma(1.0);
    const double ratio = (rep.final_state - mu).norm() / (start - mu).norm();
    EXPECT_LE(ratio, (s.sigma_min / s.sigma_max) * (1 + 1e-3));
    EXPECT_NEAR(ratio / expected, 1.0, 1e-3);
    EXPECT_GE(rep.n_rhs_evals, 6 * rep.n_accepted_steps);
  }
}

TEST(Ode, TighterToleranceConverges) {
  // Pose-like states: unit rotation columns, small normalized translation.
  // Default tolerances land near 1e-4 per component (SciPy's RK45 behaves the same),
  // so the bound is checked on the median with a 2x cap on the worst case.
  Rng rng(8);
  std::vector<double> diffs;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec9 mu = to_pose9(RigidPose{random_rotation(rng), Vec3(3, -2, 1)}).vec();
    const Vec9 start = to_pose9(RigidPose{random_rotation(rng), Vec3(-6, 4, 2)}).vec();
    const auto loose = gaussian_run(mu, start, {1e-3, 1e-4});
    const auto tight = gaussian_run(mu, start, {1e-6, 1e-8});
    diffs.push_back((loose.final_state - tight.final_state).cwiseAbs().maxCoeff());
    EXPECT_GT(tight.n_accepted_steps, loose.n_accepted_steps);
    const auto again = gaussian_run(mu, start, {1e-3, 1e-4});
    EXPECT_EQ(again.final_state, loose.final_state);
    EXPECT_EQ(again.n_rhs_evals, loose.n_rhs_evals);
  }
  std::sort(diffs.begin(), diffs.end());
  EXPECT_LT(diffs[diffs.size() / 2], 1e-4);
  EXPECT_LT(diffs.back(), 2e-4);
}

TEST(Ode, FixedStepOrderIsFive) {
  using V1 = Eigen::Matrix<double, 1, 1>;
  auto f = [](const V1& y, double) -> V1 { return -y; };
  std::vector<double> lh, le;
  for (int n : {8, 12, 16, 24, 32}) {
    const V1 y = integrate_ode_fixed<V1>(f, V1::Constant(1.0), 0.0, 1.0, n);
    lh.push_back(std::log(1.0 / n));
    le.push_back(std::log(std::abs(y[0] - std::exp(-1.0))));
  }
  const double mh = std::accumulate(lh.begin(), lh.end(), 0.0) / lh.size();
  const double me = std::accumulate(le.begin(), le.end(), 0.0) / le.size();
  double num = 0, den = 0;
  for (std::size_t i = 0; i < lh.size(); ++i) {
    num += (lh[i] - mh) * (le[i] - me);
    den += (lh[i] - mh) * (lh[i] - mh);
  }
  EXPECT_NEAR(num / den, 5.0, 0.3);
}

TEST(Ode, NonFiniteRhsUnderflows) {
  using V1 = Eigen::Matrix<double, 1, 1>;
  auto bad = [](const V1& y, double t) -> V1 { return t < 0.5 ? V1(-y) : V1::Constant(NAN); };
  EXPECT_THROW(integrate_ode<V1>(bad, V1::Constant(1.0), 0.0, 1.0), StepSizeUnderflow);
  EXPECT_THROW(integrate_pf_ode([](const Vec9& p, double) { return p; }, NoiseSchedule{}, Vec9::Zero(), 0.1, 0.2),
               DomainError);
}
