#pragma once

// Building blocks shared by the energy network and the regression baseline:
// dense layers (tape and plain-Eigen paths), PointNet input preparation,
// imprint batching, Adam, and raw parameter IO with a CRC.

#include <zlib.h>

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "geom.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace ebmpose::nn {

using ad::Mat;
using ad::Var;

struct Linear {
  Var w;  // in x out
  Var b;  // 1 x out

  static Linear init(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 1.0) {
    Mat w(in, out);
    const double sd = gain / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng, 0.0, sd);
    return {ad::variable(std::move(w)), ad::variable(Mat::Zero(1, out))};
  }
  Eigen::Index in() const { return w.rows(); }
  Eigen::Index out() const { return w.cols(); }
  Var operator()(const Var& x) const { return ad::add_row(ad::matmul(x, w), b); }
  Mat plain(const Mat& x) const { return (x * w.value()).rowwise() + b.value().row(0); }
};

inline Mat silu_plain(const Mat& z) {
  return z.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); });
}
/// d silu / dz
inline Mat silu_grad_plain(const Mat& z) {
  return z.unaryExpr([](double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
  });
}

/// Two-layer SiLU MLP used for imprint featurizers.
struct Encoder {
  Linear l1, l2;

  static Encoder init(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, Rng& rng) {
    return {Linear::init(in, hidden, rng), Linear::init(hidden, out, rng)};
  }
  Var operator()(const Var& x) const { return ad::silu(l2(ad::silu(l1(x)))); }
  Mat plain(const Mat& x) const { return silu_plain(l2.plain(silu_plain(l1.plain(x)))); }
};

/// Per-point MLP followed by a max-pool over points.
struct PointNet {
  Linear l1, l2;

  static PointNet init(Eigen::Index hidden, Eigen::Index out, Rng& rng) {
    return {Linear::init(3, hidden, rng), Linear::init(hidden, out, rng)};
  }
  Var operator()(const Var& cloud) const { return ad::max_rows(ad::silu(l2(ad::silu(l1(cloud))))); }
  Mat plain(const Mat& cloud) const { return silu_plain(l2.plain(silu_plain(l1.plain(cloud)))).colwise().maxCoeff(); }
};

/// Deterministic farthest-point subsample, seeded at the point farthest from the centroid.
inline Points farthest_point_sample(const Points& pts, int n) {
  if (pts.cols() == 0) throw BadSpec("cannot subsample an empty cloud");
  n = std::min<int>(n, static_cast<int>(pts.cols()));
  const Vec3 c = pts.rowwise().mean();
  Eigen::Index first = 0;
  (pts.colwise() - c).colwise().squaredNorm().maxCoeff(&first);
  Points out(3, n);
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(pts.cols(), std::numeric_limits<double>::infinity());
  Eigen::Index cur = first;
  for (int i = 0; i < n; ++i) {
    out.col(i) = pts.col(cur);
    dist = dist.cwiseMin((pts.colwise() - pts.col(cur)).colwise().squaredNorm().transpose());
    dist.maxCoeff(&cur);
  }
  return out;
}

/// n x 3 network input: centroid-centred subsample scaled by 1 / workspace.
inline Mat object_input(const ObjectModel& model, int n_points, double workspace) {
  const Points sub = farthest_point_sample(model.points, n_points);
  const Vec3 c = model.points.rowwise().mean();
  return ((sub.colwise() - c) / workspace).transpose();
}

/// B x (h w) depth rows for sensor s (zeros where that sensor is absent).
inline Mat imprint_rows(const std::vector<const TactileImprint*>& imps, int s, int pixels) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(imps.size()), pixels);
  for (std::size_t i = 0; i < imps.size(); ++i) {
    const TactileImprint& imp = *imps[i];
    if (imp.pixels() != pixels || imp.k != kNumSensors) throw ShapeMismatch("imprint grid does not match the model");
    if (!imp.present[s]) continue;
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(imp.sensor(s), pixels);
  }
  return out;
}

inline Mat present_col(const std::vector<const TactileImprint*>& imps, int s) {
  Mat out(static_cast<Eigen::Index>(imps.size()), 1);
  for (std::size_t i = 0; i < imps.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = imps[i]->present[s] ? 1.0 : 0.0;
  return out;
}

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8).
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Mat> m, v;
  long t = 0;

  void step(const std::vector<Var>& params, const std::vector<Var>& grads, double lr) {
    if (m.empty()) {
      for (const Var& p : params) {
        m.push_back(Mat::Zero(p.rows(), p.cols()));
        v.push_back(Mat::Zero(p.rows(), p.cols()));
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = grads[i].value();
      m[i] = beta1 * m[i] + (1 - beta1) * g;
      v[i] = beta2 * v[i] + (1 - beta2) * g.cwiseProduct(g);
      if (lr == 0.0) continue;
      Mat& w = params[i].node()->value;
      w.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

inline double global_norm(const std::vector<Var>& grads) {
  double s = 0.0;
  for (const Var& g : grads) s += g.value().squaredNorm();
  return std::sqrt(s);
}

// ---- raw parameter IO --------------------------------------------------------

inline std::size_t parameter_count(const std::vector<Var>& params) {
  std::size_t n = 0;
  for (const Var& p : params) n += static_cast<std::size_t>(p.value().size());
  return n;
}

/// Little-endian doubles in declared order (column-major within each array).
inline std::string pack_parameters(const std::vector<Var>& params) {
  std::string out;
  out.reserve(parameter_count(params) * 8);
  for (const Var& p : params)
    for (Eigen::Index i = 0; i < p.value().size(); ++i) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(p.value().data()[i]);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  return out;
}

inline void unpack_parameters(const std::string& bytes, const std::vector<Var>& params) {
  if (bytes.size() != parameter_count(params) * 8) throw CorruptCheckpoint("parameter payload has the wrong length");
  std::size_t at = 0;
  for (const Var& p : params) {
    Mat& w = p.node()->value;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at++])) << (8 * b);
      w.data()[i] = std::bit_cast<double>(bits);
    }
  }
}

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

/// Shared checkpoint container: text header lines, then `payload <n> <crc>` and the raw bytes.
inline void write_checkpoint(std::ostream& os, const std::string& kind, const std::vector<std::string>& header,
                             const std::vector<Var>& params) {
  const std::string body = pack_parameters(params);
  os << "ebmpose-ckpt v1\n" << "kind " << kind << '\n';
  for (const auto& line : header) os << line << '\n';
  os << "payload " << body.size() << ' ' << crc32_of(body) << '\n';
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw Error("checkpoint write failed");
}

struct CheckpointFile {
  std::string kind;
  std::vector<std::string> header;
  std::string payload;
};

inline CheckpointFile read_checkpoint(std::istream& is) {
  CheckpointFile f;
  std::string line;
  if (!std::getline(is, line)) throw CorruptCheckpoint("empty checkpoint");
  if (line.rfind("ebmpose-ckpt ", 0) != 0) throw CorruptCheckpoint("not a checkpoint file");
  if (line != "ebmpose-ckpt v1") throw VersionMismatch("unsupported checkpoint version: " + line.substr(13));
  if (!std::getline(is, line) || line.rfind("kind ", 0) != 0) throw CorruptCheckpoint("missing kind line");
  f.kind = line.substr(5);
  std::size_t size = 0;
  unsigned long crc = 0;
  for (;;) {
    if (!std::getline(is, line)) throw CorruptCheckpoint("header ended before the payload");
    if (line.rfind("payload ", 0) == 0) {
      std::istringstream ss(line.substr(8));
      if (!(ss >> size >> crc)) throw CorruptCheckpoint("bad payload line");
      break;
    }
    f.header.push_back(line);
  }
  f.payload.resize(size);
  is.read(f.payload.data(), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(is.gcount()) != size) throw CorruptCheckpoint("payload truncated");
  if (is.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint("trailing bytes after payload");
  if (crc32_of(f.payload) != crc) throw CorruptCheckpoint("payload CRC mismatch");
  return f;
}

}  // namespace ebmpose::nn
