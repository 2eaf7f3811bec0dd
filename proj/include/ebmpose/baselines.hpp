#pragma once

// Comparison methods: direct pose regression with the energy model's
// encoders, point-to-point ICP on back-projected contacts, and exhaustive
// imprint matching over a pose grid on the grasp manifold.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "autodiff.hpp"
#include "energynet.hpp"
#include "errors.hpp"
#include "geom.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace ebmpose {

// ---------------------------------------------------------------------------
// Regression

class RegressorModel {
 public:
  ArchConfig arch;  // time and render widths unused
  SensorConfig sensor;

  nn::Encoder obs_enc;
  nn::PointNet obj_enc;
  nn::Linear fus1, fus2, fus3;

  RegressorModel() = default;
  RegressorModel(const ArchConfig& a, const SensorConfig& s, std::uint64_t seed) : arch(a), sensor(s) {
    arch.validate();
    sensor.validate();
    Rng rng = make_rng(seed, "regressor-init");
    obs_enc = nn::Encoder::init(sensor.pixels(), arch.enc_hidden, arch.enc_out, rng);
    obj_enc = nn::PointNet::init(arch.pn_hidden, arch.pn_out, rng);
    fus1 = nn::Linear::init(input_width(), arch.fusion_hidden, rng);
    fus2 = nn::Linear::init(arch.fusion_hidden, arch.fusion_hidden, rng);
    fus3 = nn::Linear::init(arch.fusion_hidden, 9, rng, 0.1);
  }
  RegressorModel(const RegressorModel& o) { *this = o; }
  RegressorModel& operator=(const RegressorModel& o) {
    if (this == &o) return *this;
    arch = o.arch;
    sensor = o.sensor;
    obs_enc = o.obs_enc;
    obj_enc = o.obj_enc;
    fus1 = o.fus1;
    fus2 = o.fus2;
    fus3 = o.fus3;
    for (Var* p : parameter_refs()) *p = ad::variable(p->value());
    return *this;
  }
  RegressorModel(RegressorModel&&) = default;
  RegressorModel& operator=(RegressorModel&&) = default;

  int input_width() const { return arch.obs_width() + arch.pn_out; }

  std::vector<Var*> parameter_refs() {
    return {&obs_enc.l1.w, &obs_enc.l1.b, &obs_enc.l2.w, &obs_enc.l2.b, &obj_enc.l1.w, &obj_enc.l1.b,
            &obj_enc.l2.w, &obj_enc.l2.b, &fus1.w,       &fus1.b,       &fus2.w,       &fus2.b,
            &fus3.w,       &fus3.b};
  }
  std::vector<Var> parameters() const {
    std::vector<Var> out;
    for (Var* p : const_cast<RegressorModel*>(this)->parameter_refs()) out.push_back(*p);
    return out;
  }

  Mat object_cloud(const ObjectModel& obj) const { return nn::object_input(obj, arch.pn_points, arch.workspace); }

  /// B x 9 normalized pose vectors on the tape.
  Var forward(const std::vector<const TactileImprint*>& obs, const std::vector<Mat>& clouds,
              const std::vector<Eigen::Index>& object) const {
    const Var obs_f = imprint_features(obs_enc, obs, sensor.pixels());
    std::vector<Var> rows;
    for (std::size_t i = 0; i < clouds.size(); ++i)
      rows.push_back(ad::scatter_add_rows(obj_enc(ad::constant(clouds[i])), {static_cast<Eigen::Index>(i)},
                                          static_cast<Eigen::Index>(clouds.size())));
    Var stacked = rows.at(0);
    for (std::size_t i = 1; i < rows.size(); ++i) stacked = ad::add(stacked, rows[i]);
    const Var x = ad::concat_cols({obs_f, ad::gather_rows(stacked, object)});
    return fus3(ad::silu(fus2(ad::silu(fus1(x)))));
  }

  Vec9 predict(const ObjectModel& obj, const TactileImprint& obs) const {
    ad::NoGradGuard no_grad;
    const Var out = forward({&obs}, {object_cloud(obj)}, {0});
    return out.value().row(0).transpose();
  }
};

/// Mean over rows of (translation MSE + 6D rotation MSE).
inline Var regression_loss(const Var& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != 9 || target.cols() != 9)
    throw ShapeMismatch("regression: prediction and target must be B x 9");
  Mat w(pred.rows(), 9);
  w.leftCols(6).setConstant(1.0 / 6.0);
  w.rightCols(3).setConstant(1.0 / 3.0);
  const Var d = ad::sub(pred, ad::constant(target));
  const Var loss = ad::scale(ad::sum_all(ad::mul(ad::mul(d, d), ad::constant(w))), 1.0 / static_cast<double>(pred.rows()));
  if (!std::isfinite(loss.scalar())) throw NonFiniteLoss("regression loss is not finite");
  return loss;
}

struct RegressionBatch {
  std::vector<TactileImprint> obs_store;
  std::vector<const TactileImprint*> obs;
  std::vector<Eigen::Index> object;
  Mat target;
};

/// Same row sampling, augmentation and masking as the energy model's batches.
inline RegressionBatch make_regression_batch(const RegressorModel& m, const std::vector<Sample>& data,
                                             const ObjectTable& objects, const TrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw ConfigError("training set is empty");
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  RegressionBatch b;
  b.target.resize(static_cast<Eigen::Index>(B), 9);
  b.obs_store.reserve(B);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = data[pick(rng)];
    TactileImprint obs = s.imprint;
    if (cfg.aug) augment_imprint(obs, m.sensor, rng);
    mask_sensors(obs, cfg.mask_prob, rng);
    b.target.row(static_cast<Eigen::Index>(i)) = to_pose9(s.pose, m.arch.workspace).vec().transpose();
    b.object.push_back(objects.index(s.object_id));
    b.obs_store.push_back(std::move(obs));
  }
  for (const auto& o : b.obs_store) b.obs.push_back(&o);
  return b;
}

inline std::vector<double> train_regressor(RegressorModel& m, const std::vector<Sample>& data,
                                           const std::vector<ObjectModel>& objects, const TrainConfig& cfg,
                                           const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  const ObjectTable table(objects, m.arch.pn_points, m.arch.workspace);
  nn::Adam opt;
  Rng rng = make_rng(cfg.seed, "train-regressor");
  std::vector<double> curve;
  for (int step = 0; step < cfg.n_steps; ++step) {
    const RegressionBatch b = make_regression_batch(m, data, table, cfg, rng);
    const Var loss = regression_loss(m.forward(b.obs, table.clouds(), b.object), b.target);
    const std::vector<Var> params = m.parameters();
    std::vector<Var> grads = ad::grad(loss, params);
    const double norm = nn::global_norm(grads);
    if (!std::isfinite(norm)) throw NonFiniteLoss("parameter gradient is not finite");
    if (cfg.grad_clip > 0 && norm > cfg.grad_clip)
      for (auto& g : grads) g = ad::constant(g.value() * (cfg.grad_clip / norm));
    opt.step(params, grads, cfg.lr_at(step));
    curve.push_back(loss.scalar());
    if (on_step) on_step(step, loss.scalar());
  }
  return curve;
}

/// Orthonormalized pose; a degenerate rotation output falls back to identity rotation.
inline RigidPose regress(const RegressorModel& m, const ObjectModel& obj, const TactileImprint& obs) {
  const Vec9 v = m.predict(obj, obs);
  try {
    return to_rigid(Pose9::from_vec(v), m.arch.workspace);
  } catch (const DegenerateRotation&) {
    return {Mat3::Identity(), v.tail<3>() * m.arch.workspace};
  }
}

inline void save_regressor(std::ostream& os, const RegressorModel& m) {
  nn::write_checkpoint(os, "regressor", config_header(m.arch, m.sensor, NoiseSchedule{}), m.parameters());
}

inline RegressorModel load_regressor(std::istream& is) {
  const nn::CheckpointFile f = nn::read_checkpoint(is);
  if (f.kind != "regressor") throw CorruptCheckpoint("checkpoint holds a '" + f.kind + "' model");
  ArchConfig a;
  SensorConfig s;
  NoiseSchedule n;
  parse_config_header(f.header, a, s, n);
  RegressorModel m(a, s, 0);
  nn::unpack_parameters(f.payload, m.parameters());
  return m;
}

inline void save_regressor(const std::string& path, const RegressorModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  save_regressor(os, m);
}

inline RegressorModel load_regressor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  return load_regressor(is);
}

// ---------------------------------------------------------------------------
// ICP

enum class IcpMode { global, partial };

struct IcpConfig {
  int max_iter = 50;
  double tol_mm = 1e-4;
  double tol_rad = 1e-4;
};

struct IcpResult {
  RigidPose pose;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // mean squared NN distance before each update, then final
};

/// Least-squares rigid transform with R * src + t ~ dst (Kabsch).
inline RigidPose rigid_align(const Points& src, const Points& dst) {
  if (src.cols() != dst.cols()) throw ShapeMismatch("alignment needs paired point sets");
  if (src.cols() < 3) throw DegenerateAlignment("alignment needs at least 3 correspondences");
  const Vec3 cs = src.rowwise().mean(), cd = dst.rowwise().mean();
  const Mat3 H = (src.colwise() - cs) * (dst.colwise() - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Rank 2 (planar) still fixes the rotation; rank 1 (collinear) does not.
  if (!(sv[1] > 1e-9 * std::max(1.0, sv[0]))) throw DegenerateAlignment("correspondences are rank deficient");
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 R = svd.matrixV() * d * svd.matrixU().transpose();
  return {R, cd - R * cs};
}

/// Point-to-point ICP. `observed` is in the TCP frame, `target` in the object
/// frame; the returned pose maps object to TCP.
inline IcpResult icp_refine(const Points& observed, const Points& target, const RigidPose& init,
                            const IcpConfig& cfg = {}) {
  if (observed.cols() < 3) throw DegenerateAlignment("ICP needs at least 3 contact points");
  if (target.cols() < 3) throw DegenerateAlignment("ICP target cloud is too small");
  const PointGrid index(target);
  IcpResult res;
  res.pose = init;
  Points matched(3, observed.cols());
  auto correspond = [&](const RigidPose& pose) {
    const RigidPose inv = pose.inverse();
    double obj = 0.0;
    for (Eigen::Index i = 0; i < observed.cols(); ++i) {
      const auto [k, d2] = index.nearest(inv.apply(Vec3(observed.col(i))));
      matched.col(i) = target.col(k);
      obj += d2;
    }
    return obj / static_cast<double>(observed.cols());
  };
  double obj = correspond(res.pose);
  for (int it = 0; it < cfg.max_iter; ++it) {
    res.objective.push_back(obj);
    const RigidPose next = rigid_align(matched, observed);
    const RigidPose delta = next * res.pose.inverse();
    const double dt = delta.translation.norm();
    const double dr = std::acos(std::clamp((delta.rotation.trace() - 1.0) / 2.0, -1.0, 1.0));
    res.pose = next;
    res.iterations = it + 1;
    obj = correspond(res.pose);
    if (dt < cfg.tol_mm && dr < cfg.tol_rad) {
      res.converged = true;
      break;
    }
  }
  res.objective.push_back(obj);
  return res;
}

/// Model points a present plate could touch at the given pose: inside that
/// plate's footprint and within the sensing depth of the extreme point.
inline Points visible_subset(const ObjectModel& model, const RigidPose& pose, const TactileImprint& imp,
                             const SensorConfig& sensor) {
  const Points moved = pose.apply(model.points);
  std::vector<Eigen::Index> keep;
  for (int s = 0; s < kNumSensors; ++s) {
    if (!imp.present[s]) continue;
    double extreme = -std::numeric_limits<double>::infinity();
    std::vector<Eigen::Index> inside;
    for (Eigen::Index i = 0; i < moved.cols(); ++i) {
      int row, col;
      if (!pixel_of(sensor, moved(0, i), moved(2, i), row, col)) continue;
      inside.push_back(i);
      extreme = std::max(extreme, plate_sign(s) * moved(1, i));
    }
    for (Eigen::Index i : inside)
      if (plate_sign(s) * moved(1, i) >= extreme - sensor.max_depth) keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  Points out(3, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = model.points.col(keep[j]);
  return out;
}

struct IcpNoise {
  double mm = 2.0;   // per-axis translation sd
  double deg = 5.0;  // rotation angle sd about a uniform axis
};

inline RigidPose perturb_pose(const RigidPose& pose, const IcpNoise& noise, Rng& rng) {
  Vec3 axis(normal(rng), normal(rng), normal(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
  const double angle = normal(rng, 0.0, noise.deg * std::numbers::pi / 180.0);
  const Vec3 dt(normal(rng, 0.0, noise.mm), normal(rng, 0.0, noise.mm), normal(rng, 0.0, noise.mm));
  return {axis_angle(axis.normalized(), angle) * pose.rotation, pose.translation + dt};
}

/// ICP baseline from a noisy ground-truth initialization.
inline IcpResult icp_baseline(const ObjectModel& model, const TactileImprint& obs, const RigidPose& gt,
                              const SensorConfig& sensor, IcpMode mode, Rng& rng, const IcpNoise& noise = {},
                              const IcpConfig& cfg = {}) {
  const Points observed = contact_points(obs, sensor);
  const Points target = mode == IcpMode::global ? model.points : visible_subset(model, gt, obs, sensor);
  return icp_refine(observed, target, perturb_pose(gt, noise, rng), cfg);
}

// ---------------------------------------------------------------------------
// Grid matching

struct PoseGrid {
  std::vector<RigidPose> poses;
  std::vector<TactileImprint> imprints;  // rendered at `indentation`
  double mm = 2.5;
  double deg = 6.0;
  double indentation = 0.6;

  std::size_t size() const { return poses.size(); }
};

/// Centred samples of [-half, half] at the given spacing (always includes 0 offset pattern).
inline std::vector<double> centred_steps(double half, double spacing) {
  const int n = static_cast<int>(std::floor(2.0 * half / spacing + 1e-9)) + 1;
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back((i - 0.5 * (n - 1)) * spacing);
  return out;
}

/// Grid over the grasp manifold the simulator samples from: every grasp axis,
/// in-plane rotation in steps of `deg`, in-plane offsets in steps of `mm`.
inline PoseGrid make_pose_grid(const ObjectModel& model, const SensorConfig& sensor, double mm = 2.5,
                               double deg = 6.0, double indentation = 0.6, unsigned threads = worker_count()) {
  if (!(mm > 0) || !(deg > 0)) throw ConfigError("grid spacing must be positive");
  if (model.grasp_axes.empty()) throw BadSpec("object has no grasp axes");
  PoseGrid g;
  g.mm = mm;
  g.deg = deg;
  g.indentation = indentation;
  const int n_theta = std::max(1, static_cast<int>(std::lround(360.0 / deg)));
  for (const Vec3& axis : model.grasp_axes) {
    const GraspSpec spec = default_grasp(model, axis);
    for (int k = 0; k < n_theta; ++k) {
      const double theta = -std::numbers::pi + k * deg * std::numbers::pi / 180.0;
      for (double x : centred_steps(spec.xy_range.x(), mm))
        for (double z : centred_steps(spec.xy_range.y(), mm)) g.poses.push_back(grasp_pose(model, axis, theta, x, z));
    }
  }
  g.imprints.resize(g.poses.size());
  parallel_for(g.poses.size(), [&](std::size_t i) { g.imprints[i] = render_imprint(model, g.poses[i], sensor, indentation); },
               threads);
  return g;
}

/// Index of the grid imprint closest to the observation (L2 over the
/// observation's present sensors); ties to the lowest index.
inline std::size_t grid_match_index(const PoseGrid& grid, const TactileImprint& obs) {
  if (grid.size() == 0) throw NoCandidates("pose grid is empty");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double d = imprint_distance_sq(obs, grid.imprints[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline RigidPose grid_match(const PoseGrid& grid, const TactileImprint& obs) {
  return grid.poses[grid_match_index(grid, obs)];
}

}  // namespace ebmpose
