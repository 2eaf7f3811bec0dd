#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "ebmpose/geom.hpp"

using namespace ebmpose;

namespace {

// Four corners of a 2 mm square in the xy plane.
Points unit_square() {
  Points pts(3, 4);
  pts << 1, -1, -1, 1,
         1, 1, -1, -1,
         0, 0, 0, 0;
  return pts;
}

double brute_force_adds(const RigidPose& est, const RigidPose& gt, const Points& pts) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    double best = 1e300;
    for (Eigen::Index j = 0; j < pts.cols(); ++j)
      best = std::min(best, (est.apply(Vec3(pts.col(i))) - gt.apply(Vec3(pts.col(j)))).norm());
    sum += best;
  }
  return sum / pts.cols();
}

Points random_cloud(Rng& rng, int n) {
  Points pts(3, n);
  for (int i = 0; i < n; ++i)
    pts.col(i) = Vec3(uniform(rng, -10, 10), uniform(rng, -4, 4), uniform(rng, -2, 2));
  return pts;
}

RigidPose random_pose(Rng& rng, double spread) {
  return {random_rotation(rng),
          Vec3(normal(rng, 0, spread), normal(rng, 0, spread), normal(rng, 0, spread))};
}

}  // namespace

TEST(Rot6d, IdentityAndScaling) {
  EXPECT_TRUE(rot6d_to_matrix(Vec3(1, 0, 0), Vec3(0, 1, 0)).isApprox(Mat3::Identity(), 1e-15));
  EXPECT_TRUE(rot6d_to_matrix(Vec3(2, 0, 0), Vec3(0, 3, 0)).isApprox(Mat3::Identity(), 1e-15));
}

TEST(Rot6d, GramSchmidtByHand) {
  const double s = 1.0 / std::sqrt(2.0);
  const Mat3 r = rot6d_to_matrix(Vec3(s, s, 0), Vec3(0, 1, 0));
  Mat3 expected;
  expected.col(0) = Vec3(s, s, 0);
  expected.col(1) = Vec3(-s, s, 0);
  expected.col(2) = Vec3(0, 0, 1);
  EXPECT_LT((r - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rot6d, DegenerateInputsThrow) {
  EXPECT_THROW(rot6d_to_matrix(Vec3::Zero(), Vec3::UnitY()), DegenerateRotation);
  EXPECT_THROW(rot6d_to_matrix(Vec3::UnitX(), Vec3(2, 0, 0)), DegenerateRotation);
  EXPECT_THROW(rot6d_to_matrix(Vec3::UnitX(), Vec3(1, 1e-9, 0)), DegenerateRotation);
}

TEST(Rot6d, MatrixReadOff) {
  auto [rx, ry] = matrix_to_rot6d(Mat3::Identity());
  EXPECT_EQ(rx, Vec3::UnitX());
  EXPECT_EQ(ry, Vec3::UnitY());
  const Mat3 rz = axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  std::tie(rx, ry) = matrix_to_rot6d(rz);
  EXPECT_LT((rx - Vec3(0, 1, 0)).norm(), 1e-15);
  EXPECT_LT((ry - Vec3(-1, 0, 0)).norm(), 1e-15);
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = 1.1;
  EXPECT_THROW(matrix_to_rot6d(bad), NotARotation);
}

TEST(Rot6d, RoundTripOverRandomRotations) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = random_rotation(rng);
    const auto [rx, ry] = matrix_to_rot6d(r);
    EXPECT_LT((rot6d_to_matrix(rx, ry) - r).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Pose9, OrthonormalizeIsIdempotent) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Vec9 v;
    for (int k = 0; k < 9; ++k) v[k] = normal(rng);
    const Pose9 once = orthonormalize(Pose9::from_vec(v));
    const Pose9 twice = orthonormalize(once);
    EXPECT_LT((once.vec() - twice.vec()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(is_rotation(to_rigid(once).rotation, 1e-9));
  }
}

TEST(PoseDistance, IdentityAndTranslation) {
  Rng rng(5);
  const Points pts = random_cloud(rng, 200);
  const SymmetryClass none;
  const RigidPose gt = random_pose(rng, 5);
  EXPECT_EQ(pose_distance(gt, gt, pts, none), 0.0);
  RigidPose shifted = gt;
  shifted.translation += Vec3(1, 0, 0);
  EXPECT_NEAR(pose_distance(shifted, gt, pts, none), 1.0, 1e-12);
}

TEST(PoseDistance, SquareQuarterTurn) {
  const Points sq = unit_square();
  const SymmetryClass quarter{SymmetryKind::quarter_turn, Vec3::UnitZ()};
  const RigidPose gt;
  const RigidPose turned{axis_angle(Vec3::UnitZ(), std::numbers::pi / 2), Vec3::Zero()};
  EXPECT_NEAR(pose_distance(turned, gt, sq, quarter), 0.0, 1e-9);

  // 45°: corner (1,1) lands on (0,√2); nearest gt corner is at distance
  // ‖(0,√2) − (1,1)‖ = sqrt(1 + (√2 − 1)²), identical for every corner.
  const RigidPose diag{axis_angle(Vec3::UnitZ(), std::numbers::pi / 4), Vec3::Zero()};
  const double expected = std::sqrt(1.0 + std::pow(std::sqrt(2.0) - 1.0, 2));
  EXPECT_NEAR(brute_force_adds(diag, gt, sq), expected, 1e-12);
  EXPECT_NEAR(pose_distance(diag, gt, sq, quarter), expected, 1e-12);
}

TEST(PoseDistance, GridIndexMatchesBruteForce) {
  Rng rng(8);
  const Points pts = random_cloud(rng, 300);
  const SymmetryClass half{SymmetryKind::half_turn, Vec3::UnitZ()};
  for (int i = 0; i < 30; ++i) {
    const RigidPose gt = random_pose(rng, 3);
    const RigidPose est = random_pose(rng, 3);
    EXPECT_NEAR(pose_distance(est, gt, pts, half), brute_force_adds(est, gt, pts), 1e-10);
  }
}

TEST(PoseDistance, Properties) {
  Rng rng(21);
  const Points pts = random_cloud(rng, 150);
  const SymmetryClass none;
  const SymmetryClass half{SymmetryKind::half_turn, Vec3::UnitZ()};
  for (int i = 0; i < 100; ++i) {
    const RigidPose a = random_pose(rng, 4), b = random_pose(rng, 4);
    const RigidPose g = random_pose(rng, 20);
    const double add = pose_distance(a, b, pts, none);
    const double adds = pose_distance(a, b, pts, half);
    EXPECT_GE(adds, 0.0);
    EXPECT_LE(adds, add + 1e-12);
    EXPECT_NEAR(pose_distance(g * a, g * b, pts, none), add, 1e-9);
    EXPECT_NEAR(pose_distance(g * a, g * b, pts, half), adds, 1e-9);
    EXPECT_EQ(pose_distance(a, a, pts, half), 0.0);
  }
}

TEST(PoseDistance, RevoluteUsesDiscretizedAxis) {
  // Ring of points around z; every 5° step maps the set to itself.
  Points ring(3, 72 * 3);
  for (int i = 0; i < 72; ++i)
    for (int k = 0; k < 3; ++k) {
      const double a = 2 * std::numbers::pi * i / 72;
      ring.col(i * 3 + k) = Vec3(4 * std::cos(a), 4 * std::sin(a), k - 1.0);
    }
  const SymmetryClass rev{SymmetryKind::revolute, Vec3::UnitZ()};
  const RigidPose gt;
  const RigidPose spun{axis_angle(Vec3::UnitZ(), 30.0 * std::numbers::pi / 180), Vec3::Zero()};
  EXPECT_NEAR(pose_distance(spun, gt, ring, rev), 0.0, 1e-9);
  EXPECT_GT(pose_distance(spun, gt, ring, SymmetryClass{}), 1.0);
}

TEST(Icosphere, VertexCounts) {
  EXPECT_EQ(make_icosphere(0).vertices.size(), 12u);
  // V' = V + E; level 0 has 30 edges.
  EXPECT_EQ(make_icosphere(1).vertices.size(), 42u);
  EXPECT_EQ(make_icosphere(2).vertices.size(), 162u);
  EXPECT_EQ(make_icosphere(1).faces.size(), 80u);
}

TEST(Icosphere, LevelZeroPriorPosesLookAlongVertices) {
  ObjectModel model;
  PriorConfig cfg;
  cfg.level = 0;
  cfg.n_inplane = 1;
  cfg.sigma_prior = 0.0;
  cfg.num_candidates = 12;
  Rng rng(1);
  const auto poses = icosphere_prior_poses(cfg, model, rng);
  ASSERT_EQ(poses.size(), 12u);
  const auto ico = make_icosphere(0);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RigidPose r = to_rigid(poses[i]);
    EXPECT_LT((r.rotation.col(2) - ico.vertices[i]).norm(), 1e-12);
    EXPECT_EQ(r.translation, Vec3::Zero());
  }
}

TEST(Icosphere, PriorPosesAreValidAndConfigChecked) {
  ObjectModel model;
  PriorConfig cfg;  // defaults: level 1 x 6 in-plane = 252
  Rng rng(2);
  const auto poses = icosphere_prior_poses(cfg, model, rng);
  ASSERT_EQ(poses.size(), 252u);
  for (const auto& p : poses) {
    EXPECT_TRUE(is_rotation(to_rigid(p).rotation, 1e-9));
    EXPECT_LE(p.trans.cwiseAbs().maxCoeff(), 1.0);
  }
  cfg.num_candidates = 300;
  cfg.replicate = false;
  EXPECT_THROW(icosphere_prior_poses(cfg, model, rng), ConfigError);
  cfg.replicate = true;
  EXPECT_EQ(icosphere_prior_poses(cfg, model, rng).size(), 300u);
}

TEST(MeanPose, Examples) {
  RigidPose a;
  EXPECT_TRUE(mean_pose({a}).rotation.isApprox(a.rotation));
  RigidPose b;
  b.translation = Vec3(2, 0, 0);
  const RigidPose m = mean_pose({a, b});
  EXPECT_LT((m.rotation - Mat3::Identity()).norm(), 1e-15);
  EXPECT_LT((m.translation - Vec3(1, 0, 0)).norm(), 1e-15);

  const double ten = 10.0 * std::numbers::pi / 180;
  const RigidPose p{axis_angle(Vec3::UnitZ(), ten), Vec3(1, 2, 3)};
  const RigidPose q{axis_angle(Vec3::UnitZ(), -ten), Vec3(1, 2, 3)};
  EXPECT_LT((mean_pose({p, q}).rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);

  const RigidPose flipped{axis_angle(Vec3::UnitZ(), std::numbers::pi), Vec3::Zero()};
  EXPECT_THROW(mean_pose({a, flipped}), DegenerateMean);
  EXPECT_THROW(mean_pose({}), DegenerateMean);
}

TEST(MeanPose, DuplicateIsExact) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const RigidPose p = random_pose(rng, 10);
    const RigidPose m = mean_pose({p, p});
    EXPECT_EQ(m.translation, p.translation);
    EXPECT_LT((m.rotation - p.rotation).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ObjectFile, RoundTripAndErrors) {
  Rng rng(6);
  ObjectModel m;
  m.id = "thing";
  m.points = random_cloud(rng, 80);
  canonicalize(m);
  m.symmetry = {SymmetryKind::half_turn, Vec3::UnitZ()};
  m.grasp_axes = {Vec3::UnitX(), -Vec3::UnitX()};
  std::stringstream ss;
  write_object(ss, m);
  const ObjectModel back = read_object(ss, "thing");
  EXPECT_EQ(back.points, m.points);
  EXPECT_EQ(back.diameter, m.diameter);
  EXPECT_EQ(back.symmetry.kind, m.symmetry.kind);
  EXPECT_EQ(back.grasp_axes.size(), 2u);

  std::stringstream v0("ebmpose-object v0\n");
  EXPECT_THROW(read_object(v0), VersionMismatch);
  std::stringstream text;
  write_object(text, m);
  std::string s = text.str();
  s.resize(s.size() / 2);
  std::stringstream truncated(s);
  try {
    read_object(truncated);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.line, 5u);
  }
}
