#pragma once

// Rigid poses, the 6-D rotation representation, object point models and the
// ADD / ADD-S distances used for evaluation.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ebmpose/errors.hpp"
#include "ebmpose/random.hpp"

namespace ebmpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Points = Eigen::Matrix3Xd;

/// Default translation normalizer (mm): the diffusion state stores t / W.
inline constexpr double kDefaultWorkspace = 30.0;

struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();  // mm, TCP frame

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Points apply(const Points& pts) const {
    return (rotation * pts).colwise() + translation;
  }
  RigidPose inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
  /// this ∘ other
  RigidPose operator*(const RigidPose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
};

/// The 9-D diffusion state: first two rotation columns and normalized translation.
struct Pose9 {
  Vec3 rx = Vec3::UnitX();
  Vec3 ry = Vec3::UnitY();
  Vec3 trans = Vec3::Zero();

  Vec9 vec() const {
    Vec9 v;
    v << rx, ry, trans;
    return v;
  }
  static Pose9 from_vec(const Vec9& v) {
    return {v.segment<3>(0), v.segment<3>(3), v.segment<3>(6)};
  }
  bool finite() const { return vec().allFinite(); }
};

inline Mat3 rot6d_to_matrix(const Vec3& rx, const Vec3& ry) {
  const double nx = rx.norm();
  if (!(nx > 1e-8) || !ry.allFinite() || !rx.allFinite())
    throw DegenerateRotation("rot6d: first column has near-zero norm");
  const Vec3 c1 = rx / nx;
  const Vec3 perp = ry - ry.dot(c1) * c1;
  const double ny = ry.norm();
  // sin of the angle between rx and ry
  if (!(ny > 1e-8) || perp.norm() / ny < 1e-6)
    throw DegenerateRotation("rot6d: columns are parallel");
  const Vec3 c2 = perp.normalized();
  Mat3 r;
  r.col(0) = c1;
  r.col(1) = c2;
  r.col(2) = c1.cross(c2);
  return r;
}

inline bool is_rotation(const Mat3& r, double tol) {
  return r.allFinite() && (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

inline std::pair<Vec3, Vec3> matrix_to_rot6d(const Mat3& r) {
  if (!is_rotation(r, 1e-6)) throw NotARotation("matrix is not in SO(3)");
  return {r.col(0), r.col(1)};
}

inline RigidPose to_rigid(const Pose9& p, double workspace = kDefaultWorkspace) {
  return {rot6d_to_matrix(p.rx, p.ry), p.trans * workspace};
}

inline Pose9 to_pose9(const RigidPose& pose, double workspace = kDefaultWorkspace) {
  return {pose.rotation.col(0), pose.rotation.col(1), pose.translation / workspace};
}

/// pack(unpack(p)): projects the rotation part onto SO(3).
inline Pose9 orthonormalize(const Pose9& p) {
  const Mat3 r = rot6d_to_matrix(p.rx, p.ry);
  return {r.col(0), r.col(1), p.trans};
}

inline Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline double rotation_angle(const Mat3& r) {
  return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// ---------------------------------------------------------------------------
// Object models

enum class SymmetryKind { none, half_turn, quarter_turn, revolute };

/// Number of discrete rotations used to stand in for a continuous symmetry.
inline constexpr int kRevoluteSteps = 72;

struct SymmetryClass {
  SymmetryKind kind = SymmetryKind::none;
  Vec3 axis = Vec3::UnitZ();

  int order() const {
    switch (kind) {
      case SymmetryKind::none: return 1;
      case SymmetryKind::half_turn: return 2;
      case SymmetryKind::quarter_turn: return 4;
      case SymmetryKind::revolute: return kRevoluteSteps;
    }
    return 1;
  }
  /// The smallest nontrivial rotation of the group (identity for none).
  Mat3 generator() const {
    return axis_angle(axis, 2.0 * std::numbers::pi / order());
  }
  /// All group elements, identity first.
  std::vector<Mat3> elements() const {
    std::vector<Mat3> out;
    for (int k = 0; k < order(); ++k)
      out.push_back(axis_angle(axis, 2.0 * std::numbers::pi * k / order()));
    return out;
  }
};

inline std::string to_string(SymmetryKind k) {
  switch (k) {
    case SymmetryKind::none: return "none";
    case SymmetryKind::half_turn: return "half_turn";
    case SymmetryKind::quarter_turn: return "quarter_turn";
    case SymmetryKind::revolute: return "revolute";
  }
  return "none";
}

inline SymmetryKind symmetry_from_string(const std::string& s) {
  if (s == "none") return SymmetryKind::none;
  if (s == "half_turn") return SymmetryKind::half_turn;
  if (s == "quarter_turn") return SymmetryKind::quarter_turn;
  if (s == "revolute") return SymmetryKind::revolute;
  throw BadSpec("unknown symmetry kind '" + s + "'");
}

struct ObjectModel {
  std::string id;
  Points points;  // mm, canonical frame, centroid at origin
  double diameter = 0.0;
  SymmetryClass symmetry;
  std::vector<Vec3> grasp_axes;
  Vec3 bbox_half_extents = Vec3::Zero();

  std::size_t size() const { return static_cast<std::size_t>(points.cols()); }
};

inline double max_pairwise_distance(const Points& pts) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i)
    for (Eigen::Index j = i + 1; j < pts.cols(); ++j)
      best = std::max(best, (pts.col(i) - pts.col(j)).squaredNorm());
  return std::sqrt(best);
}

/// Recenters the cloud at its centroid and fills diameter and bbox.
inline void canonicalize(ObjectModel& model) {
  const Vec3 centroid = model.points.rowwise().mean();
  model.points.colwise() -= centroid;
  model.diameter = max_pairwise_distance(model.points);
  const Vec3 lo = model.points.rowwise().minCoeff();
  const Vec3 hi = model.points.rowwise().maxCoeff();
  model.bbox_half_extents = (hi - lo) / 2.0;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour queries on a uniform grid

/// Exact nearest-neighbour index over a fixed point set.
class PointGrid {
 public:
  explicit PointGrid(const Points& pts) : pts_(pts) {
    if (pts.cols() == 0) return;
    lo_ = pts.rowwise().minCoeff();
    const Vec3 extent = pts.rowwise().maxCoeff() - lo_;
    const double cells = std::max(1.0, std::cbrt(static_cast<double>(pts.cols()) / 2.0));
    cell_ = std::max(extent.maxCoeff() / cells, 1e-9);
    for (int a = 0; a < 3; ++a)
      dims_[a] = std::clamp(static_cast<int>(extent[a] / cell_) + 1, 1, 256);
    std::vector<int> count(total_cells() + 1, 0);
    std::vector<int> cell_of(pts.cols());
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      cell_of[i] = flat(cell_coords(pts.col(i)));
      ++count[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < count.size(); ++c) count[c] += count[c - 1];
    start_ = count;
    order_.resize(pts.cols());
    for (Eigen::Index i = 0; i < pts.cols(); ++i) order_[count[cell_of[i]]++] = static_cast<int>(i);
  }

  /// Squared distance to the nearest stored point.
  double nearest_sq(const Vec3& q) const { return nearest(q).second; }

  /// Index of the nearest stored point (-1 when empty) and its squared distance.
  std::pair<int, double> nearest(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    if (pts_.cols() == 0) return {arg, best};
    const std::array<int, 3> c = cell_coords(q);
    for (int r = 0;; ++r) {
      scan_shell(c, r, q, best, arg);
      // Lower bound on the distance to any cell outside the (2r+1)^3 cube.
      double bound = std::numeric_limits<double>::infinity();
      bool more = false;
      for (int a = 0; a < 3; ++a) {
        if (c[a] - r > 0) {
          more = true;
          bound = std::min(bound, std::max(0.0, q[a] - (lo_[a] + (c[a] - r) * cell_)));
        }
        if (c[a] + r < dims_[a] - 1) {
          more = true;
          bound = std::min(bound, std::max(0.0, (lo_[a] + (c[a] + r + 1) * cell_) - q[a]));
        }
      }
      if (!more || bound * bound >= best) return {arg, best};
    }
  }

 private:
  std::size_t total_cells() const {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }
  std::array<int, 3> cell_coords(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
    return c;
  }
  int flat(const std::array<int, 3>& c) const { return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0]; }

  void scan_cell(const std::array<int, 3>& c, const Vec3& q, double& best, int& arg) const {
    const int f = flat(c);
    for (int k = start_[f]; k < start_[f + 1]; ++k) {
      const double d = (pts_.col(order_[k]) - q).squaredNorm();
      if (d < best || (d == best && order_[k] < arg)) {
        best = d;
        arg = order_[k];
      }
    }
  }
  void scan_shell(const std::array<int, 3>& c, int r, const Vec3& q, double& best, int& arg) const {
    const int x0 = std::max(c[0] - r, 0), x1 = std::min(c[0] + r, dims_[0] - 1);
    const int y0 = std::max(c[1] - r, 0), y1 = std::min(c[1] + r, dims_[1] - 1);
    const int z0 = std::max(c[2] - r, 0), z1 = std::min(c[2] + r, dims_[2] - 1);
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const int d = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
          if (d == r) scan_cell({x, y, z}, q, best, arg);
        }
  }

  Points pts_;
  Vec3 lo_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<int> start_;
  std::vector<int> order_;
};

/// Symmetric Chamfer distance (mean of both directed nearest-point means).
inline double chamfer_distance(const Points& a, const Points& b) {
  const PointGrid ga(a), gb(b);
  double sa = 0.0, sb = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) sa += std::sqrt(gb.nearest_sq(a.col(i)));
  for (Eigen::Index i = 0; i < b.cols(); ++i) sb += std::sqrt(ga.nearest_sq(b.col(i)));
  return 0.5 * (sa / a.cols() + sb / b.cols());
}

// ---------------------------------------------------------------------------
// ADD / ADD-S

inline double add_metric(const RigidPose& est, const RigidPose& gt, const Points& pts) {
  if (pts.cols() == 0) throw BadSpec("empty model");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i)
    sum += (est.apply(Vec3(pts.col(i))) - gt.apply(Vec3(pts.col(i)))).norm();
  return sum / static_cast<double>(pts.cols());
}

/// Mean over model points of the distance to the closest transformed gt point.
inline double adds_metric(const RigidPose& est, const RigidPose& gt, const Points& pts) {
  if (pts.cols() == 0) throw BadSpec("empty model");
  const Points moved_est = est.apply(pts);
  const PointGrid index(gt.apply(pts));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) sum += std::sqrt(index.nearest_sq(moved_est.col(i)));
  return sum / static_cast<double>(pts.cols());
}

/// ADD for asymmetric objects, ADD-S otherwise. Revolute symmetry additionally
/// takes the minimum ADD over the discretized rotations about the axis.
inline double pose_distance(const RigidPose& est, const RigidPose& gt, const Points& pts,
                            const SymmetryClass& sym) {
  if (sym.kind == SymmetryKind::none) return add_metric(est, gt, pts);
  double best = adds_metric(est, gt, pts);
  if (sym.kind == SymmetryKind::revolute) {
    for (const Mat3& s : sym.elements()) {
      const RigidPose twin{est.rotation * s, est.translation};
      best = std::min(best, add_metric(twin, gt, pts));
    }
  }
  return best;
}

inline double pose_distance(const RigidPose& est, const RigidPose& gt, const ObjectModel& model) {
  return pose_distance(est, gt, model.points, model.symmetry);
}

inline const char* metric_kind(const ObjectModel& model) {
  return model.symmetry.kind == SymmetryKind::none ? "ADD" : "ADD-S";
}

// ---------------------------------------------------------------------------
// Prior poses from an icosphere

struct Icosphere {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
};

inline Icosphere make_icosphere(int level) {
  if (level < 0) throw ConfigError("icosphere level must be >= 0");
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  Icosphere ico;
  for (const Vec3& v : {Vec3(-1, phi, 0), Vec3(1, phi, 0), Vec3(-1, -phi, 0), Vec3(1, -phi, 0),
                        Vec3(0, -1, phi), Vec3(0, 1, phi), Vec3(0, -1, -phi), Vec3(0, 1, -phi),
                        Vec3(phi, 0, -1), Vec3(phi, 0, 1), Vec3(-phi, 0, -1), Vec3(-phi, 0, 1)})
    ico.vertices.push_back(v.normalized());
  ico.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      ico.vertices.push_back((ico.vertices[a] + ico.vertices[b]).normalized());
      const int idx = static_cast<int>(ico.vertices.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : ico.faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    ico.faces = std::move(next);
  }
  return ico;
}

/// Rotation whose third column is `view` (camera looking along the view ray).
inline Mat3 look_rotation(const Vec3& view) {
  const Vec3 z = view.normalized();
  const Vec3 up = std::abs(z.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 x = up.cross(z).normalized();
  Mat3 r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return r;
}

struct PriorConfig {
  int level = 1;
  int n_inplane = 6;
  double sigma_prior = 0.2;  // normalized translation units (0.2 W)
  int num_candidates = 252;  // M
  bool replicate = true;     // cycle the view grid when M exceeds it
};

/// M rotation-grid candidates with Gaussian translations clipped to the workspace.
inline std::vector<Pose9> icosphere_prior_poses(const PriorConfig& cfg, const ObjectModel& /*model*/,
                                                Rng& rng) {
  if (cfg.num_candidates < 1) throw ConfigError("prior needs M >= 1");
  if (cfg.n_inplane < 1) throw ConfigError("prior needs n_inplane >= 1");
  const Icosphere ico = make_icosphere(cfg.level);
  std::vector<Mat3> grid;
  for (const Vec3& v : ico.vertices) {
    const Mat3 base = look_rotation(v);
    for (int j = 0; j < cfg.n_inplane; ++j)
      grid.push_back(base * axis_angle(Vec3::UnitZ(), 2.0 * std::numbers::pi * j / cfg.n_inplane));
  }
  const auto g = grid.size();
  const auto m = static_cast<std::size_t>(cfg.num_candidates);
  if (m > g && !cfg.replicate)
    throw ConfigError("M = " + std::to_string(m) + " exceeds the " + std::to_string(g) +
                      "-pose rotation grid and replication is disabled");
  std::vector<Pose9> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    // M < grid: evenly strided subset; M > grid: cycle.
    const std::size_t k = m <= g ? (i * g) / m : i % g;
    Pose9 p;
    p.rx = grid[k].col(0);
    p.ry = grid[k].col(1);
    for (int a = 0; a < 3; ++a) p.trans[a] = std::clamp(normal(rng, 0.0, cfg.sigma_prior), -1.0, 1.0);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pose averaging

/// Arithmetic mean translation; chordal L2 mean rotation (polar factor, det +1).
inline RigidPose mean_pose(const std::vector<RigidPose>& candidates) {
  if (candidates.empty()) throw DegenerateMean("mean of zero poses");
  if (candidates.size() == 1) return candidates.front();
  Mat3 m = Mat3::Zero();
  Vec3 t = Vec3::Zero();
  for (const auto& c : candidates) {
    m += c.rotation;
    t += c.translation;
  }
  const double n = static_cast<double>(candidates.size());
  m /= n;
  t /= n;
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues().minCoeff() < 1e-9)
    throw DegenerateMean("averaged rotation is rank-deficient");
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return {svd.matrixU() * d * svd.matrixV().transpose(), t};
}

// ---------------------------------------------------------------------------
// Object file format

inline void write_object(std::ostream& os, const ObjectModel& m) {
  os.precision(17);
  os << "ebmpose-object v1\n";
  os << "symmetry " << to_string(m.symmetry.kind) << ' ' << m.symmetry.axis.x() << ' '
     << m.symmetry.axis.y() << ' ' << m.symmetry.axis.z() << '\n';
  os << "diameter " << m.diameter << '\n';
  os << "grasp_axes " << m.grasp_axes.size() << '\n';
  for (const auto& a : m.grasp_axes) os << a.x() << ' ' << a.y() << ' ' << a.z() << '\n';
  os << "points " << m.points.cols() << '\n';
  for (Eigen::Index i = 0; i < m.points.cols(); ++i)
    os << m.points(0, i) << ' ' << m.points(1, i) << ' ' << m.points(2, i) << '\n';
}

inline ObjectModel read_object(std::istream& is, std::string id = "object") {
  std::size_t line_no = 0;
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(is, line)) throw ParseError(line_no + 1, std::string("missing ") + what);
    ++line_no;
    return std::istringstream(line);
  };
  auto keyword = [&](std::istringstream& ss, const char* key) {
    std::string k;
    ss >> k;
    if (k != key) throw ParseError(line_no, std::string("expected '") + key + "'");
  };
  auto vec = [&](std::istringstream& ss) {
    Vec3 v;
    if (!(ss >> v.x() >> v.y() >> v.z())) throw ParseError(line_no, "expected three numbers");
    return v;
  };
  {
    next("header");
    if (line.rfind("ebmpose-object", 0) != 0) throw ParseError(line_no, "not an object file");
    if (line != "ebmpose-object v1") throw VersionMismatch("unsupported object version: " + line);
  }
  ObjectModel m;
  m.id = std::move(id);
  {
    auto ss = next("symmetry");
    keyword(ss, "symmetry");
    std::string kind;
    ss >> kind;
    try {
      m.symmetry.kind = symmetry_from_string(kind);
    } catch (const BadSpec& e) {
      throw ParseError(line_no, e.what());
    }
    m.symmetry.axis = vec(ss).normalized();
  }
  {
    auto ss = next("diameter");
    keyword(ss, "diameter");
    if (!(ss >> m.diameter)) throw ParseError(line_no, "bad diameter");
  }
  std::size_t n = 0;
  {
    auto ss = next("grasp_axes");
    keyword(ss, "grasp_axes");
    if (!(ss >> n)) throw ParseError(line_no, "bad grasp axis count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto ss = next("grasp axis");
    m.grasp_axes.push_back(vec(ss).normalized());
  }
  {
    auto ss = next("points");
    keyword(ss, "points");
    if (!(ss >> n)) throw ParseError(line_no, "bad point count");
  }
  m.points.resize(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto ss = next("point");
    m.points.col(static_cast<Eigen::Index>(i)) = vec(ss);
  }
  const Vec3 lo = m.points.rowwise().minCoeff();
  const Vec3 hi = m.points.rowwise().maxCoeff();
  m.bbox_half_extents = (hi - lo) / 2.0;
  return m;
}

inline void save_object(const std::string& path, const ObjectModel& m) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_object(os, m);
}

inline ObjectModel load_object(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  std::string id = path;
  if (auto slash = id.find_last_of('/'); slash != std::string::npos) id = id.substr(slash + 1);
  if (auto dot = id.find_last_of('.'); dot != std::string::npos && dot > 0) id = id.substr(0, dot);
  return read_object(is, id);
}

}  // namespace ebmpose
