#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ebmpose/pipeline.hpp"

using namespace ebmpose;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.enc_hidden = 32;
  a.enc_out = 16;
  a.pn_points = 64;
  a.pn_hidden = 16;
  a.pn_out = 32;
  a.time_out = 16;
  a.fusion_hidden = 32;
  return a;
}

struct Fixture {
  ObjectModel box = make_box(20, 10, 6, "box");
  SensorConfig sensor;
  EnergyModel model{small_arch(), sensor, NoiseSchedule{}, 11};
  std::vector<Sample> data = generate_dataset(box, 4, sensor, 21);
};

void zero_head(EnergyModel& m) {
  m.fus3.w.node()->value.setZero();
  m.fus3.b.node()->value.setZero();
}

PipelineConfig small_config(int M, int K) {
  PipelineConfig c;
  c.prior.num_candidates = M;
  c.K = K;
  return c;
}

double rotation_gap(const RigidPose& a, const RigidPose& b) { return (a.rotation - b.rotation).norm(); }

}  // namespace

TEST(Prefilter, ForcedEnergiesAndTies) {
  Eigen::VectorXd e(3);
  e << 3, 1, 2;
  EXPECT_EQ(top_k_by_energy(e, 2), (std::vector<int>{0, 2}));
  EXPECT_EQ(top_k_by_energy(e, 3), (std::vector<int>{0, 2, 1}));
  Eigen::VectorXd t(4);
  t << 1, 2, 2, 1;
  EXPECT_EQ(top_k_by_energy(t, 4), (std::vector<int>{1, 2, 0, 3}));
}

TEST(Prefilter, MatchesFullSortThenTruncate) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int M = 1 + static_cast<int>(rng() % 40);
    const int K = 1 + static_cast<int>(rng() % static_cast<unsigned>(M));
    Eigen::VectorXd e(M);
    for (int i = 0; i < M; ++i) e[i] = std::round(normal(rng, 0, 3));  // coarse values force ties
    // Oracle: selection sort on (energy desc, index asc).
    std::vector<bool> used(static_cast<std::size_t>(M), false);
    std::vector<int> expect;
    for (int k = 0; k < K; ++k) {
      int best = -1;
      for (int i = 0; i < M; ++i)
        if (!used[static_cast<std::size_t>(i)] && (best < 0 || e[i] > e[best])) best = i;
      used[static_cast<std::size_t>(best)] = true;
      expect.push_back(best);
    }
    EXPECT_EQ(top_k_by_energy(e, K), expect);
  }
}

TEST(Prefilter, UsesModelEnergiesAtEps) {
  Fixture f;
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  Rng rng(2);
  const auto prior = icosphere_prior_poses(small_config(30, 5).prior, f.box, rng);
  std::vector<Vec9> cands;
  for (const auto& p : prior) cands.push_back(p.vec());
  const auto idx = prefilter(ctx, cands, 5, f.model.schedule.eps);
  ASSERT_EQ(idx.size(), 5u);
  std::vector<double> e;
  for (const auto& c : cands) e.push_back(ctx.energy(c, f.model.schedule.eps));
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) EXPECT_GE(e[static_cast<std::size_t>(idx[i])], e[static_cast<std::size_t>(idx[i + 1])]);
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (std::find(idx.begin(), idx.end(), static_cast<int>(j)) == idx.end()) {
      EXPECT_LE(e[j], e[static_cast<std::size_t>(idx.back())]);
    }
  }
  EXPECT_THROW(prefilter(ctx, cands, 31, 1e-5), ConfigError);
}

TEST(Refine, ZeroScoreLeavesCandidates) {
  Fixture f;
  zero_head(f.model);
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  const Vec9 p = to_pose9(f.data[0].pose).vec();
  const auto out = refine_candidates(ctx, {p}, 0.6, {});
  ASSERT_FALSE(out[0].failed);
  EXPECT_EQ(out[0].state, p);
}

TEST(Refine, QuadraticEnergyContractsInClosedForm) {
  // E = -|p - p*|^2 / (2 sigma^2): dp/dt = ln(100) (p - p*), so from t0 to eps the
  // offset shrinks by 100^-(t0 - eps).
  const NoiseSchedule sch;
  Vec9 star;
  star << 0.2, -0.1, 0.9, 0.4, 0.8, 0.1, 0.05, -0.3, 0.2;
  const ScoreFn score = [&](const Vec9& p, double t) -> Vec9 { return -(p - star) / sch.lambda(t); };
  Rng rng(3);
  for (double t0 : {0.1, 0.6, 1.0}) {
    const double expect = std::pow(100.0, -(t0 - sch.eps));
    for (int i = 0; i < 5; ++i) {
      Vec9 p;
      for (int k = 0; k < 9; ++k) p[k] = normal(rng, 0, 1);
      const auto out = refine_with_score(score, sch, p, t0, {});
      ASSERT_FALSE(out.failed);
      const double ratio = (out.state - star).norm() / (p - star).norm();
      EXPECT_NEAR(ratio, expect, 1e-3) << "t0 " << t0;
    }
  }
}

TEST(Refine, ConcurrentEqualsSequential) {
  Fixture f;
  const EnergyContext ctx(f.model, f.box, f.data[1].imprint);
  Rng rng(4);
  std::vector<Vec9> cands;
  for (const auto& p : icosphere_prior_poses(small_config(6, 6).prior, f.box, rng)) cands.push_back(p.vec());
  const auto seq = refine_candidates(ctx, cands, 0.3, {}, 1, 1);
  const auto par = refine_candidates(ctx, cands, 0.3, {}, 1, 3);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    EXPECT_EQ(seq[i].state, par[i].state);
    EXPECT_EQ(seq[i].report.n_rhs_evals, par[i].report.n_rhs_evals);
  }
  EXPECT_THROW(refine_candidates(ctx, cands, 1e-5, {}), DomainError);
}

TEST(Refine, AllFailedCandidatesRaise) {
  Fixture f;
  f.model.fus3.b.node()->value.setConstant(std::numeric_limits<double>::quiet_NaN());
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  const auto out = refine_candidates(ctx, {to_pose9(f.data[0].pose).vec()}, 0.5, {});
  EXPECT_TRUE(out[0].failed);
  Rng rng(5);
  EXPECT_THROW(estimate(ctx, small_config(4, 2), rng), RefinementFailed);
}

TEST(Postrank, ArgmaxExamples) {
  Eigen::VectorXd e(3);
  e << 0.1, 5.0, 2.0;
  EXPECT_EQ(top_k_by_energy(e, 1)[0], 1);
  EXPECT_EQ(top_k_by_energy(e * 7.5, 1)[0], 1);
  Fixture f;
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  EXPECT_EQ(postrank(ctx, {to_pose9(f.data[0].pose).vec()}, 1e-5), 0);
  EXPECT_THROW(postrank(ctx, {}, 1e-5), NoCandidates);
}

TEST(Estimate, AllStagesOffIsMeanOfPrior) {
  Fixture f;
  PipelineConfig cfg = small_config(6, 6);
  cfg.stages = {false, false, false};
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  Rng a(6), b(6);
  const auto res = estimate(ctx, cfg, a);
  std::vector<RigidPose> prior;
  for (const auto& p : icosphere_prior_poses(cfg.prior, f.box, b)) prior.push_back(to_rigid(p));
  // The box is half-turn symmetric, so the mean is taken after symmetry alignment.
  const RigidPose ref = res.candidates[static_cast<std::size_t>(top_k_by_energy(
      Eigen::Map<const Eigen::VectorXd>(res.energies.data(), static_cast<Eigen::Index>(res.energies.size())), 1)[0])];
  const RigidPose expect = mean_pose(align_to_reference(prior, ref, f.box.symmetry));
  EXPECT_LT(rotation_gap(res.pose, expect), 1e-9);
  EXPECT_LT((res.pose.translation - expect.translation).norm(), 1e-9);
  EXPECT_EQ(res.candidates.size(), 6u);
  EXPECT_EQ(res.selected, -1);
}

TEST(Estimate, EqualsManualChainAndIsDeterministic) {
  Fixture f;
  const PipelineConfig cfg = small_config(12, 3);
  const EnergyContext ctx(f.model, f.box, f.data[2].imprint);
  Rng a(7), b(7), c(7);
  const auto res = estimate(ctx, cfg, a);

  std::vector<Vec9> all;
  for (const auto& p : icosphere_prior_poses(cfg.prior, f.box, b)) all.push_back(p.vec());
  std::vector<Vec9> top;
  for (int i : prefilter(ctx, all, cfg.K, f.model.schedule.eps)) top.push_back(all[static_cast<std::size_t>(i)]);
  std::vector<Vec9> refined;
  for (const auto& o : refine_candidates(ctx, top, cfg.t0_est, cfg.ode_tol)) refined.push_back(o.state);
  const RigidPose manual = to_rigid(Pose9::from_vec(refined[static_cast<std::size_t>(postrank(ctx, refined, 1e-5))]));
  EXPECT_EQ(res.pose.rotation, manual.rotation);
  EXPECT_EQ(res.pose.translation, manual.translation);

  for (double e : res.energies) EXPECT_LE(e, res.energies[static_cast<std::size_t>(res.selected)]);
  EXPECT_GE(res.uncertainty, 0.0);
  EXPECT_EQ(res.reports.size(), 3u);

  const auto again = estimate(ctx, cfg, c);
  EXPECT_EQ(again.pose.rotation, res.pose.rotation);
  EXPECT_EQ(again.pose.translation, res.pose.translation);
}

TEST(Estimate, StaleRenderReusesRenders) {
  Fixture f;
  PipelineConfig cfg = small_config(8, 2);
  cfg.stale_render = 3;
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  Rng rng(8);
  const auto res = estimate(ctx, cfg, rng);
  EXPECT_GE(res.uncertainty, 0.0);
  EXPECT_EQ(res.candidates.size(), 2u);
}

TEST(Config, Invariants) {
  const NoiseSchedule sch;
  EXPECT_NO_THROW(small_config(252, 16).validate(sch));
  EXPECT_THROW(small_config(10, 11).validate(sch), ConfigError);
  EXPECT_THROW(small_config(10, 0).validate(sch), ConfigError);
  PipelineConfig c = small_config(20, 4);
  c.t0_track = 0.7;
  EXPECT_THROW(c.validate(sch), ConfigError);
  c.t0_track = 1e-5;
  EXPECT_THROW(c.validate(sch), ConfigError);
  c.t0_track = 0.1;
  c.t0_est = 1.2;
  EXPECT_THROW(c.validate(sch), ConfigError);
}

TEST(Track, ZeroSpreadZeroScoreHoldsPose) {
  Fixture f;
  zero_head(f.model);
  PipelineConfig cfg = small_config(4, 4);
  cfg.sigma_track = 0.0;
  const EnergyContext ctx(f.model, f.box, f.data[0].imprint);
  const TrackerState st{f.data[0].pose, 3};
  Rng rng(9);
  const auto out = track_step(ctx, st, cfg, rng);
  EXPECT_LT(rotation_gap(out.pose, st.last_pose), 1e-12);
  EXPECT_LT((out.pose.translation - st.last_pose.translation).norm(), 1e-12);
  EXPECT_EQ(out.state.step_index, 4);
}

TEST(Track, DeterministicWithSeed) {
  Fixture f;
  const PipelineConfig cfg = small_config(4, 3);
  const EnergyContext ctx(f.model, f.box, f.data[1].imprint);
  const TrackerState st{f.data[1].pose, 0};
  Rng a(10), b(10);
  const auto x = track_step(ctx, st, cfg, a);
  const auto y = track_step(ctx, st, cfg, b);
  EXPECT_EQ(x.pose.rotation, y.pose.rotation);
  EXPECT_EQ(x.pose.translation, y.pose.translation);
  EXPECT_LT(x.detail.rhs_evals(), 3 * 400);
}

TEST(Uncertainty, Examples) {
  const ObjectModel bracket = make_shape(ShapeSpec{ShapeKind::l_bracket, {30, 20, 4, 10}, "lb", 4096});
  ASSERT_EQ(bracket.symmetry.kind, SymmetryKind::none);
  const RigidPose id{Mat3::Identity(), Vec3::Zero()};
  EXPECT_NEAR(estimate_uncertainty({id, id, id}, bracket), 0.0, 1e-12);
  const RigidPose shifted{Mat3::Identity(), Vec3(2, 0, 0)};
  EXPECT_NEAR(estimate_uncertainty({id, shifted}, bracket), 1.0, 1e-9);
  EXPECT_THROW(estimate_uncertainty({}, bracket), NoCandidates);
}

TEST(Uncertainty, MatchesDirectResummation) {
  const ObjectModel bracket = make_shape(ShapeSpec{ShapeKind::l_bracket, {30, 20, 4, 10}, "lb", 4096});
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<RigidPose> cands;
    for (int k = 0; k < 6; ++k) {
      Vec3 axis(normal(rng), normal(rng), normal(rng));
      cands.push_back({Eigen::AngleAxisd(normal(rng, 0, 0.2), axis.normalized()).toRotationMatrix(),
                       Vec3(normal(rng, 0, 2), normal(rng, 0, 2), normal(rng, 0, 2))});
    }
    // Oracle: chordal mean by explicit sums and an SVD, then ADD by a double loop.
    Mat3 rs = Mat3::Zero();
    Vec3 ts = Vec3::Zero();
    for (const auto& c : cands) {
      rs += c.rotation;
      ts += c.translation;
    }
    Eigen::JacobiSVD<Mat3> svd(rs, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() > 0 ? 1 : -1;
    const Mat3 rm = svd.matrixU() * d * svd.matrixV().transpose();
    const Vec3 tm = ts / static_cast<double>(cands.size());
    double total = 0;
    for (const auto& c : cands) {
      double s = 0;
      for (Eigen::Index j = 0; j < bracket.points.cols(); ++j)
        s += ((c.rotation * bracket.points.col(j) + c.translation) - (rm * bracket.points.col(j) + tm)).norm();
      total += s / static_cast<double>(bracket.points.cols());
    }
    EXPECT_NEAR(estimate_uncertainty(cands, bracket), total / static_cast<double>(cands.size()), 1e-9);
  }
}

TEST(Uncertainty, SymmetricCandidatesAreAligned) {
  // Two half-turn twins of the same pose are the same pose for a symmetric box.
  const ObjectModel box = make_box(20, 10, 6, "box");
  const RigidPose a{Mat3::Identity(), Vec3(1, 2, 3)};
  const RigidPose b{box.symmetry.generator(), Vec3(1, 2, 3)};
  EXPECT_LT(estimate_uncertainty({a, b}, box), 0.05);
}

TEST(SelectGrasp, Examples) {
  EXPECT_EQ(select_grasp({3.1, 0.5, 2.2}), 1);
  EXPECT_EQ(select_grasp({4.0}), 0);
  EXPECT_EQ(select_grasp({1.0, 0.5, 0.5}), 1);
  EXPECT_THROW(select_grasp({}), NoCandidates);
}
