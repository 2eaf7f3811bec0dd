#pragma once

// Rigid-plate contact imprints. Two parallel plates sit on either side of the
// TCP along its y axis (sensor 0 on +y, sensor 1 on −y) and image the x/z
// plane on a grid_h × grid_w pixel raster. Each plate closes until it touches
// the object inside its footprint, then presses in by the indentation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ebmpose/errors.hpp"
#include "ebmpose/geom.hpp"
#include "ebmpose/random.hpp"

namespace ebmpose {

inline constexpr int kNumSensors = 2;
inline constexpr double kContactThreshold = 0.05;
inline constexpr int kRejectionBudget = 1000;

struct SensorConfig {
  int grid_h = 16;
  int grid_w = 16;
  double plate_half_gap = 0.5;  // mm, finger stop: plates never close past ±gap
  double pixel_pitch = 1.5;     // mm / pixel
  double max_depth = 2.0;       // mm

  int pixels() const { return grid_h * grid_w; }
  void validate() const {
    if (grid_h < 4 || grid_w < 4) throw ConfigError("sensor grid must be at least 4x4");
    if (!(pixel_pitch > 0) || !(max_depth > 0) || !(plate_half_gap >= 0))
      throw ConfigError("sensor pitch and max depth must be positive");
  }
};

struct TactileImprint {
  int k = kNumSensors;
  int h = 0;
  int w = 0;
  std::vector<double> depth;            // k*h*w, sensor-major then row-major
  std::vector<char> present;            // k
  std::vector<double> contact_fraction; // k
  std::vector<double> plate_surface;    // k, signed y of the pressed plate surface (mm)

  TactileImprint() = default;
  TactileImprint(int h, int w)
      : h(h), w(w), depth(static_cast<std::size_t>(kNumSensors * h * w), 0.0),
        present(kNumSensors, 1), contact_fraction(kNumSensors, 0.0),
        plate_surface(kNumSensors, 0.0) {}

  int pixels() const { return h * w; }
  double& at(int s, int row, int col) { return depth[static_cast<std::size_t>((s * h + row) * w + col)]; }
  double at(int s, int row, int col) const { return depth[static_cast<std::size_t>((s * h + row) * w + col)]; }
  const double* sensor(int s) const { return depth.data() + static_cast<std::size_t>(s) * pixels(); }

  void recompute_contact() {
    for (int s = 0; s < k; ++s) {
      int n = 0;
      for (int i = 0; i < pixels(); ++i) n += sensor(s)[i] > 0.0;
      contact_fraction[s] = static_cast<double>(n) / pixels();
    }
  }
  /// The contact filter: some present sensor sees at least 5% of its area.
  bool passes_contact_filter() const {
    for (int s = 0; s < k; ++s)
      if (present[s] && contact_fraction[s] >= kContactThreshold) return true;
    return false;
  }
};

/// Sum of squared depth differences over sensors present in both imprints.
inline double imprint_distance_sq(const TactileImprint& a, const TactileImprint& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeMismatch("imprint grids differ");
  double sum = 0.0;
  for (int s = 0; s < a.k; ++s) {
    if (!a.present[s] || !b.present[s]) continue;
    const double* da = a.sensor(s);
    const double* db = b.sensor(s);
    for (int i = 0; i < a.pixels(); ++i) sum += (da[i] - db[i]) * (da[i] - db[i]);
  }
  return sum;
}

struct Sample {
  RigidPose pose;  // object-to-TCP ground truth
  TactileImprint imprint;
  std::string object_id;
};

// ---------------------------------------------------------------------------
// Rendering

inline double plate_sign(int sensor) { return sensor == 0 ? 1.0 : -1.0; }

/// Pixel (row, col) of the x/z location, or false if outside the footprint.
inline bool pixel_of(const SensorConfig& sensor, double x, double z, int& row, int& col) {
  const double fx = (x + 0.5 * sensor.grid_w * sensor.pixel_pitch) / sensor.pixel_pitch;
  const double fz = (z + 0.5 * sensor.grid_h * sensor.pixel_pitch) / sensor.pixel_pitch;
  if (!(fx >= 0.0) || !(fz >= 0.0)) return false;
  col = static_cast<int>(fx);
  row = static_cast<int>(fz);
  return col < sensor.grid_w && row < sensor.grid_h;
}

/// Pixel-centre x/z in the TCP frame.
inline std::pair<double, double> pixel_center(const SensorConfig& sensor, int row, int col) {
  return {(col + 0.5 - 0.5 * sensor.grid_w) * sensor.pixel_pitch,
          (row + 0.5 - 0.5 * sensor.grid_h) * sensor.pixel_pitch};
}

/// Deterministic imprint of `model` at `pose` pressed by `indentation` mm.
/// Points are binned into pixel columns in one pass; the per-pixel maximum
/// height toward each plate defines the surface that plate sees.
inline TactileImprint render_imprint(const ObjectModel& model, const RigidPose& pose,
                                     const SensorConfig& sensor, double indentation) {
  TactileImprint imp(sensor.grid_h, sensor.grid_w);
  const int npx = sensor.pixels();
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<double> height(static_cast<std::size_t>(kNumSensors * npx), kNone);
  const Points moved = pose.apply(model.points);
  for (Eigen::Index i = 0; i < moved.cols(); ++i) {
    int row, col;
    if (!pixel_of(sensor, moved(0, i), moved(2, i), row, col)) continue;
    const int px = row * sensor.grid_w + col;
    height[px] = std::max(height[px], moved(1, i));
    height[npx + px] = std::max(height[npx + px], -moved(1, i));
  }
  for (int s = 0; s < kNumSensors; ++s) {
    const auto first = height.begin() + s * npx;
    const double extreme = *std::max_element(first, first + npx);
    if (extreme == kNone) {
      imp.plate_surface[s] = plate_sign(s) * sensor.plate_half_gap;
      continue;
    }
    const double surface = std::max(extreme - indentation, sensor.plate_half_gap);
    imp.plate_surface[s] = plate_sign(s) * surface;
    for (int px = 0; px < npx; ++px) {
      const double hgt = first[px];
      if (hgt == kNone) continue;
      imp.depth[static_cast<std::size_t>(s * npx + px)] =
          std::clamp(hgt - surface, 0.0, sensor.max_depth);
    }
  }
  imp.recompute_contact();
  return imp;
}

/// Contact points (TCP frame, mm) back-projected from pixels with depth > 0.
inline Points contact_points(const TactileImprint& imp, const SensorConfig& sensor) {
  std::vector<Vec3> pts;
  for (int s = 0; s < imp.k; ++s) {
    if (!imp.present[s]) continue;
    for (int r = 0; r < imp.h; ++r)
      for (int c = 0; c < imp.w; ++c) {
        const double d = imp.at(s, r, c);
        if (d <= 0.0) continue;
        const auto [x, z] = pixel_center(sensor, r, c);
        pts.emplace_back(x, imp.plate_surface[s] + plate_sign(s) * d, z);
      }
  }
  Points out(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

/// Training-time observation noise: per-imprint gain jitter plus additive
/// Gaussian depth noise, clamped to the sensor range.
inline void augment_imprint(TactileImprint& imp, const SensorConfig& sensor, Rng& rng,
                            double noise_mm = 0.05, double gain_jitter = 0.1) {
  const double gain = uniform(rng, 1.0 - gain_jitter, 1.0 + gain_jitter);
  for (double& d : imp.depth) d = std::clamp(gain * d + normal(rng, 0.0, noise_mm), 0.0, sensor.max_depth);
  imp.recompute_contact();
}

/// Independently masks each sensor with probability p, always keeping one.
inline void mask_sensors(TactileImprint& imp, double p, Rng& rng) {
  if (p <= 0.0) return;
  std::vector<char> keep(imp.k);
  for (int s = 0; s < imp.k; ++s) keep[s] = uniform(rng, 0.0, 1.0) >= p;
  if (std::none_of(keep.begin(), keep.end(), [](char c) { return c; }))
    keep[std::uniform_int_distribution<int>(0, imp.k - 1)(rng)] = 1;
  for (int s = 0; s < imp.k; ++s) imp.present[s] = imp.present[s] && keep[s];
}

// ---------------------------------------------------------------------------
// Grasp synthesis

struct GraspSpec {
  Vec3 approach_axis = Vec3::UnitX();  // canonical frame; faces sensor 0
  double indent_lo = 0.2;              // mm
  double indent_hi = 1.0;              // mm
  Eigen::Vector2d xy_range = Eigen::Vector2d::Zero();  // ±mm along TCP x and z
  double inplane_rot_range = std::numbers::pi;          // ±rad about the grasp axis
};

/// Rotation taking the canonical approach axis onto TCP +y.
inline Mat3 grasp_frame(const Vec3& approach) {
  const Vec3 a = approach.normalized();
  const Vec3 ref = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitZ();
  const Vec3 u = (ref - ref.dot(a) * a).normalized();
  Mat3 r;
  r.row(0) = u.transpose();
  r.row(1) = a.transpose();
  r.row(2) = u.cross(a).transpose();
  return r;
}

/// Default grasp: xy randomized over the object's in-plane half extents.
inline GraspSpec default_grasp(const ObjectModel& model, const Vec3& approach) {
  GraspSpec g;
  g.approach_axis = approach.normalized();
  const Points in_tcp = grasp_frame(approach) * model.points;
  const Vec3 lo = in_tcp.rowwise().minCoeff();
  const Vec3 hi = in_tcp.rowwise().maxCoeff();
  g.xy_range = Eigen::Vector2d((hi.x() - lo.x()) / 2.0, (hi.z() - lo.z()) / 2.0);
  return g;
}

inline void validate(const GraspSpec& g, const ObjectModel& model, const SensorConfig& sensor) {
  if (!(g.indent_lo > 0) || g.indent_hi < g.indent_lo || g.indent_hi > sensor.max_depth)
    throw ConfigError("indentation range must lie in (0, max_depth]");
  const GraspSpec bound = default_grasp(model, g.approach_axis);
  if ((g.xy_range.array() > bound.xy_range.array() + 1e-9).any() || (g.xy_range.array() < 0).any())
    throw ConfigError("xy range exceeds the object's in-plane half extents");
  if (g.inplane_rot_range < 0) throw ConfigError("negative rotation range");
}

/// Object pose for a grasp with in-plane offset (x, z) and rotation theta,
/// centred between the plates along the grasp axis.
inline RigidPose grasp_pose(const ObjectModel& model, const Vec3& approach, double theta, double x,
                            double z) {
  const Mat3 rot = axis_angle(Vec3::UnitY(), theta) * grasp_frame(approach);
  const Eigen::RowVectorXd ys = (rot * model.points).row(1);
  const double y = -(ys.maxCoeff() + ys.minCoeff()) / 2.0;
  return {rot, Vec3(x, y, z)};
}

inline double uniform_or_fixed(Rng& rng, double lo, double hi) {
  return hi > lo ? uniform(rng, lo, hi) : lo;
}

/// One grasp attempt; nullopt when no present sensor reaches 5% contact.
inline std::optional<Sample> synthesize_grasp(const ObjectModel& model, const GraspSpec& grasp,
                                              const SensorConfig& sensor, Rng& rng) {
  const double x = uniform_or_fixed(rng, -grasp.xy_range.x(), grasp.xy_range.x());
  const double z = uniform_or_fixed(rng, -grasp.xy_range.y(), grasp.xy_range.y());
  const double theta = uniform_or_fixed(rng, -grasp.inplane_rot_range, grasp.inplane_rot_range);
  const double indent = uniform_or_fixed(rng, grasp.indent_lo, grasp.indent_hi);
  Sample s;
  s.pose = grasp_pose(model, grasp.approach_axis, theta, x, z);
  s.imprint = render_imprint(model, s.pose, sensor, indent);
  s.object_id = model.id;
  if (!s.imprint.passes_contact_filter()) return std::nullopt;
  return s;
}

/// Samples approach axes uniformly and retries until the contact filter passes.
inline Sample draw_grasp(const ObjectModel& model, const SensorConfig& sensor, Rng& rng) {
  if (model.grasp_axes.empty()) throw BadSpec("object has no grasp axes");
  std::uniform_int_distribution<std::size_t> pick(0, model.grasp_axes.size() - 1);
  for (int attempt = 0; attempt < kRejectionBudget; ++attempt) {
    const GraspSpec g = default_grasp(model, model.grasp_axes[pick(rng)]);
    if (auto s = synthesize_grasp(model, g, sensor, rng)) return *std::move(s);
  }
  throw RejectionBudgetExceeded("no grasp passed the contact filter in " +
                                std::to_string(kRejectionBudget) + " attempts");
}

inline Sample draw_grasp(const ObjectModel& model, const GraspSpec& grasp,
                         const SensorConfig& sensor, Rng& rng) {
  for (int attempt = 0; attempt < kRejectionBudget; ++attempt)
    if (auto s = synthesize_grasp(model, grasp, sensor, rng)) return *std::move(s);
  throw RejectionBudgetExceeded("no grasp passed the contact filter in " +
                                std::to_string(kRejectionBudget) + " attempts");
}

struct DatasetOptions {
  bool aug = false;
  double mask_prob = 0.0;
};

/// n accepted samples; sample i depends only on (seed, object id, i).
inline std::vector<Sample> generate_dataset(const ObjectModel& model, std::size_t n,
                                            const SensorConfig& sensor, std::uint64_t seed,
                                            const DatasetOptions& opts = {}) {
  sensor.validate();
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "sample:" + model.id, i);
    out[i] = draw_grasp(model, sensor, rng);
    if (opts.aug) augment_imprint(out[i].imprint, sensor, rng);
    mask_sensors(out[i].imprint, opts.mask_prob, rng);
  }
  return out;
}

struct TrajectoryStep {
  double mm = 0.5;
  double rad = 0.02;
};

/// In-hand random walk: smoothed in-plane slip and rotation about the grasp
/// axis, each step bounded by `step`, with an imprint rendered per frame.
inline std::vector<Sample> generate_trajectory(const ObjectModel& model, int n_steps,
                                               const TrajectoryStep& step,
                                               const SensorConfig& sensor, Rng& rng) {
  if (n_steps < 2) throw ConfigError("trajectory needs at least 2 steps");
  std::uniform_int_distribution<std::size_t> pick(0, model.grasp_axes.size() - 1);
  const Vec3 axis = model.grasp_axes.at(pick(rng));
  const GraspSpec spec = default_grasp(model, axis);
  double x = 0, z = 0, theta = 0, indent = 0;
  Sample first;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kRejectionBudget) throw RejectionBudgetExceeded("no initial trajectory grasp");
    // Start away from the extremes so the walk has room to move.
    x = uniform_or_fixed(rng, -0.5 * spec.xy_range.x(), 0.5 * spec.xy_range.x());
    z = uniform_or_fixed(rng, -0.5 * spec.xy_range.y(), 0.5 * spec.xy_range.y());
    theta = uniform_or_fixed(rng, -spec.inplane_rot_range, spec.inplane_rot_range);
    indent = uniform_or_fixed(rng, spec.indent_lo, spec.indent_hi);
    first.pose = grasp_pose(model, axis, theta, x, z);
    first.imprint = render_imprint(model, first.pose, sensor, indent);
    first.object_id = model.id;
    if (first.imprint.passes_contact_filter()) break;
  }
  std::vector<Sample> out{first};
  Eigen::Vector2d vel = Eigen::Vector2d::Zero();
  double omega = 0.0;
  while (static_cast<int>(out.size()) < n_steps) {
    bool accepted = false;
    for (int attempt = 0; attempt < kRejectionBudget && !accepted; ++attempt) {
      Eigen::Vector2d v = 0.7 * vel + 0.3 * step.mm * Eigen::Vector2d(uniform(rng, -1, 1), uniform(rng, -1, 1));
      if (v.norm() > step.mm) v *= step.mm / v.norm();
      const double w = std::clamp(0.7 * omega + 0.3 * step.rad * uniform(rng, -1, 1), -step.rad, step.rad);
      Sample s;
      s.pose = grasp_pose(model, axis, theta + w, x + v.x(), z + v.y());
      s.imprint = render_imprint(model, s.pose, sensor, indent);
      s.object_id = model.id;
      if (!s.imprint.passes_contact_filter()) {
        vel = -vel;  // bounce off the footprint edge
        omega = -omega;
        continue;
      }
      vel = v;
      omega = w;
      x += v.x();
      z += v.y();
      theta += w;
      out.push_back(std::move(s));
      accepted = true;
    }
    if (!accepted) throw RejectionBudgetExceeded("trajectory left the contact region");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parametric shapes

enum class ShapeKind { box, cylinder, l_bracket, notched_plate, tube };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::box;
  std::vector<double> dims;  // box(l,w,h) cylinder(r,h) l_bracket(a,b,t,w)
                             // notched_plate(l,w,h,notch_w,notch_d) tube(r_out,r_in,h)
  std::string id;
  int target_points = 4096;
};

namespace detail {

struct AaBox {
  Vec3 lo, hi;
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

/// Surface of a union of axis-aligned boxes on a regular vertex grid (edges
/// and corners included);
/// face samples whose outward neighbourhood lies inside another box are dropped.
inline std::vector<Vec3> sample_box_union(const std::vector<AaBox>& boxes, int target) {
  double area = 0.0;
  for (const auto& b : boxes) {
    const Vec3 e = b.hi - b.lo;
    area += 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
  }
  const double spacing = std::sqrt(area / target);
  std::vector<Vec3> pts;
  for (const auto& b : boxes) {
    for (int axis = 0; axis < 3; ++axis) {
      const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
      const double lu = b.hi[ua] - b.lo[ua], lv = b.hi[va] - b.lo[va];
      const int nu = std::max(1, static_cast<int>(std::lround(lu / spacing)));
      const int nv = std::max(1, static_cast<int>(std::lround(lv / spacing)));
      for (int side = 0; side < 2; ++side) {
        Vec3 normal = Vec3::Zero();
        normal[axis] = side ? 1.0 : -1.0;
        for (int i = 0; i <= nu; ++i)
          for (int j = 0; j <= nv; ++j) {
            Vec3 p;
            p[axis] = side ? b.hi[axis] : b.lo[axis];
            p[ua] = b.lo[ua] + i * lu / nu;
            p[va] = b.lo[va] + j * lv / nv;
            const Vec3 probe = p + 1e-7 * normal;
            const bool internal = std::any_of(boxes.begin(), boxes.end(),
                                              [&](const AaBox& o) { return o.contains(probe); });
            if (!internal) pts.push_back(p);
          }
      }
    }
  }
  return pts;
}

/// Lateral surfaces of coaxial cylinders (z axis) plus annular caps.
inline std::vector<Vec3> sample_tube(double r_out, double r_in, double h, int target) {
  const double area = 2 * std::numbers::pi * (r_out + r_in) * h +
                      2 * std::numbers::pi * (r_out * r_out - r_in * r_in);
  const double spacing = std::sqrt(area / target);
  std::vector<Vec3> pts;
  const int nz = std::max(1, static_cast<int>(std::lround(h / spacing)));
  for (double r : {r_out, r_in}) {
    if (r <= 0) continue;
    const int nt = std::max(8, static_cast<int>(std::lround(2 * std::numbers::pi * r / spacing)));
    for (int i = 0; i < nt; ++i)
      for (int j = 0; j <= nz; ++j) {
        const double a = 2 * std::numbers::pi * i / nt;
        pts.emplace_back(r * std::cos(a), r * std::sin(a), j * h / nz - h / 2);
      }
  }
  const int nr = std::max(1, static_cast<int>(std::lround((r_out - r_in) / spacing)));
  for (int k = 0; k < nr; ++k) {
    const double rho = r_in + (k + 0.5) * (r_out - r_in) / nr;
    const int nt = std::max(3, static_cast<int>(std::lround(2 * std::numbers::pi * rho / spacing)));
    for (int i = 0; i < nt; ++i) {
      const double a = 2 * std::numbers::pi * (i + 0.5) / nt;
      pts.emplace_back(rho * std::cos(a), rho * std::sin(a), h / 2);
      pts.emplace_back(rho * std::cos(a), rho * std::sin(a), -h / 2);
    }
  }
  return pts;
}

}  // namespace detail

inline ObjectModel make_shape(const ShapeSpec& spec) {
  const auto& d = spec.dims;
  auto need = [&](std::size_t n, const char* name) {
    if (d.size() != n) throw BadSpec(std::string(name) + " needs " + std::to_string(n) + " dimensions");
    for (double v : d)
      if (!(v > 0)) throw BadSpec(std::string(name) + " dimensions must be positive");
  };
  const std::vector<Vec3> six_axes = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(),
                                      -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
  ObjectModel m;
  m.id = spec.id;
  std::vector<Vec3> pts;
  const int target = std::max(spec.target_points, 1024);
  switch (spec.kind) {
    case ShapeKind::box: {
      need(3, "box");
      if (m.id.empty()) m.id = "box";
      pts = detail::sample_box_union({{Vec3::Zero(), Vec3(d[0], d[1], d[2])}}, target);
      const bool lw = d[0] == d[1], wh = d[1] == d[2], lh = d[0] == d[2];
      if (lw) m.symmetry = {SymmetryKind::quarter_turn, Vec3::UnitZ()};
      else if (wh) m.symmetry = {SymmetryKind::quarter_turn, Vec3::UnitX()};
      else if (lh) m.symmetry = {SymmetryKind::quarter_turn, Vec3::UnitY()};
      else m.symmetry = {SymmetryKind::half_turn, Vec3::UnitZ()};
      m.grasp_axes = six_axes;
      break;
    }
    case ShapeKind::cylinder: {
      need(2, "cylinder");
      if (m.id.empty()) m.id = "cylinder";
      pts = detail::sample_tube(d[0], 0.0, d[1], target);
      m.symmetry = {SymmetryKind::revolute, Vec3::UnitZ()};
      m.grasp_axes = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitZ(), -Vec3::UnitZ()};
      break;
    }
    case ShapeKind::tube: {
      need(3, "tube");
      if (d[1] >= d[0]) throw BadSpec("tube inner radius must be below the outer radius");
      if (m.id.empty()) m.id = "tube";
      pts = detail::sample_tube(d[0], d[1], d[2], target);
      m.symmetry = {SymmetryKind::revolute, Vec3::UnitZ()};
      m.grasp_axes = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitZ(), -Vec3::UnitZ()};
      break;
    }
    case ShapeKind::l_bracket: {
      need(4, "l_bracket");  // legs a (x) and b (y), thickness t, width w (z)
      const double a = d[0], b = d[1], t = d[2], w = d[3];
      if (t >= a || t >= b) throw BadSpec("l_bracket thickness must be below both leg lengths");
      if (m.id.empty()) m.id = "l_bracket";
      pts = detail::sample_box_union({{Vec3::Zero(), Vec3(a, t, w)}, {Vec3(0, t, 0), Vec3(t, b, w)}},
                                     target);
      if (a == b) m.symmetry = {SymmetryKind::half_turn, Vec3(1, 1, 0).normalized()};
      m.grasp_axes = six_axes;
      break;
    }
    case ShapeKind::notched_plate: {
      need(5, "notched_plate");  // plate l×w×h, notch of width nw and depth nd cut into +y edge
      const double l = d[0], w = d[1], h = d[2], nw = d[3], nd = d[4];
      if (nd >= w || nw >= l / 2) throw BadSpec("notch must fit inside the plate");
      if (m.id.empty()) m.id = "notched_plate";
      // Notch centred at x = l/4 so the outline has no rotational symmetry.
      const double x0 = l / 4 - nw / 2, x1 = l / 4 + nw / 2;
      pts = detail::sample_box_union({{Vec3::Zero(), Vec3(l, w - nd, h)},
                                      {Vec3(0, w - nd, 0), Vec3(x0, w, h)},
                                      {Vec3(x1, w - nd, 0), Vec3(l, w, h)}},
                                     target);
      m.grasp_axes = six_axes;
      break;
    }
  }
  m.points.resize(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.points.col(static_cast<Eigen::Index>(i)) = pts[i];
  if (m.points.cols() < 1024) throw BadSpec("shape produced fewer than 1024 points");
  canonicalize(m);
  return m;
}

inline ObjectModel make_box(double l, double w, double h, std::string id = "") {
  return make_shape({ShapeKind::box, {l, w, h}, std::move(id)});
}

}  // namespace ebmpose
