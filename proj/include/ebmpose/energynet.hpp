#pragma once

// Render-compare energy network. Phi(p, O, T, t) is an MLP over
// [obs features | rendered features | object features | time features | p],
// scaled by 1 / sigma(t); the energy is <Phi, p> and the score is its exact
// gradient in p. The renderer is treated as constant in p.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "diffusion.hpp"
#include "errors.hpp"
#include "geom.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace ebmpose {

using ad::Mat;
using ad::Var;

struct ArchConfig {
  int enc_hidden = 128;
  int enc_out = 64;
  int pn_points = 256;
  int pn_hidden = 64;
  int pn_out = 128;
  int time_freqs = 16;
  int time_out = 32;
  int fusion_hidden = 256;
  double workspace = kDefaultWorkspace;  // mm, translation normalizer
  double nominal_indent = 0.6;           // mm, indentation used when rendering inside the network

  int obs_width() const { return kNumSensors * enc_out; }
  int fusion_in() const { return 2 * obs_width() + pn_out + time_out + 9; }
  void validate() const {
    if (enc_hidden < 1 || enc_out < 1 || pn_points < 1 || pn_hidden < 1 || pn_out < 1 || time_freqs < 1 ||
        time_out < 1 || fusion_hidden < 1)
      throw ConfigError("architecture widths must be positive");
    if (!(workspace > 0) || !(nominal_indent > 0)) throw ConfigError("workspace and nominal indent must be positive");
  }
};

/// 1 x 2F sinusoidal features, frequencies log-spaced over [0.5, 50].
inline Mat time_features(double t, int n_freqs) {
  Mat out(1, 2 * n_freqs);
  for (int k = 0; k < n_freqs; ++k) {
    const double w = 0.5 * std::pow(100.0, n_freqs > 1 ? static_cast<double>(k) / (n_freqs - 1) : 0.0);
    out(0, k) = std::sin(w * t);
    out(0, n_freqs + k) = std::cos(w * t);
  }
  return out;
}

class EnergyModel {
 public:
  ArchConfig arch;
  SensorConfig sensor;
  NoiseSchedule schedule;

  nn::Encoder obs_enc, ren_enc;
  nn::PointNet obj_enc;
  nn::Linear time_lin;
  nn::Linear fus1, fus2, fus3;

  EnergyModel() = default;
  EnergyModel(const ArchConfig& a, const SensorConfig& s, const NoiseSchedule& sch, std::uint64_t seed)
      : arch(a), sensor(s), schedule(sch) {
    arch.validate();
    sensor.validate();
    schedule.validate();
    Rng rng = make_rng(seed, "energy-init");
    obs_enc = nn::Encoder::init(sensor.pixels(), arch.enc_hidden, arch.enc_out, rng);
    ren_enc = nn::Encoder::init(sensor.pixels(), arch.enc_hidden, arch.enc_out, rng);
    obj_enc = nn::PointNet::init(arch.pn_hidden, arch.pn_out, rng);
    time_lin = nn::Linear::init(2 * arch.time_freqs, arch.time_out, rng);
    fus1 = nn::Linear::init(arch.fusion_in(), arch.fusion_hidden, rng);
    fus2 = nn::Linear::init(arch.fusion_hidden, arch.fusion_hidden, rng);
    fus3 = nn::Linear::init(arch.fusion_hidden, 9, rng, 0.1);
  }
  // Copies own their parameters.
  EnergyModel(const EnergyModel& o) { *this = o; }
  EnergyModel& operator=(const EnergyModel& o) {
    if (this == &o) return *this;
    arch = o.arch;
    sensor = o.sensor;
    schedule = o.schedule;
    obs_enc = o.obs_enc;
    ren_enc = o.ren_enc;
    obj_enc = o.obj_enc;
    time_lin = o.time_lin;
    fus1 = o.fus1;
    fus2 = o.fus2;
    fus3 = o.fus3;
    for (Var* p : parameter_refs()) *p = ad::variable(p->value());
    return *this;
  }
  EnergyModel(EnergyModel&&) = default;
  EnergyModel& operator=(EnergyModel&&) = default;

  /// Declared parameter order (also the checkpoint order).
  std::vector<Var*> parameter_refs() {
    return {&obs_enc.l1.w, &obs_enc.l1.b, &obs_enc.l2.w, &obs_enc.l2.b, &ren_enc.l1.w, &ren_enc.l1.b,
            &ren_enc.l2.w, &ren_enc.l2.b, &obj_enc.l1.w, &obj_enc.l1.b, &obj_enc.l2.w, &obj_enc.l2.b,
            &time_lin.w,   &time_lin.b,   &fus1.w,       &fus1.b,       &fus2.w,       &fus2.b,
            &fus3.w,       &fus3.b};
  }
  std::vector<Var> parameters() const {
    std::vector<Var> out;
    for (Var* p : const_cast<EnergyModel*>(this)->parameter_refs()) out.push_back(*p);
    return out;
  }
  std::vector<Var> ren_parameters() const {
    return {ren_enc.l1.w, ren_enc.l1.b, ren_enc.l2.w, ren_enc.l2.b};
  }

  Mat object_cloud(const ObjectModel& obj) const { return nn::object_input(obj, arch.pn_points, arch.workspace); }
};

/// Imprint the network compares against for state p: orthonormalized pose,
/// nominal indentation, same sensor mask as the observation. Degenerate
/// rotation states render as empty.
inline TactileImprint render_for_state(const EnergyModel& m, const ObjectModel& obj, const Vec9& p,
                                       const std::vector<char>& present) {
  TactileImprint imp(m.sensor.grid_h, m.sensor.grid_w);
  try {
    imp = render_imprint(obj, to_rigid(Pose9::from_vec(p), m.arch.workspace), m.sensor, m.arch.nominal_indent);
  } catch (const DegenerateRotation&) {
  }
  for (int s = 0; s < kNumSensors; ++s) imp.present[s] = present[s];
  return imp;
}

// ---------------------------------------------------------------------------
// Tape forward (training, gradient checks)

/// One row per element: state, time, observation, rendered imprint, object.
struct EnergyBatch {
  Mat p;                                   // B x 9
  std::vector<double> t;                   // B
  std::vector<const TactileImprint*> obs;  // B
  std::vector<TactileImprint> ren;         // B
  std::vector<Eigen::Index> object;        // B, index into clouds
  std::vector<Mat> clouds;                 // per distinct object, n x 3

  std::size_t size() const { return t.size(); }
};

inline Var imprint_features(const nn::Encoder& enc, const std::vector<const TactileImprint*>& imps, int pixels) {
  std::vector<Var> parts;
  for (int s = 0; s < kNumSensors; ++s) {
    const Var x = ad::constant(nn::imprint_rows(imps, s, pixels));
    parts.push_back(ad::mul_col(enc(x), ad::constant(nn::present_col(imps, s))));
  }
  return ad::concat_cols(parts);
}

/// Phi for every batch row as a differentiable function of P (B x 9).
inline Var phi_tape(const EnergyModel& m, const EnergyBatch& b, const Var& P) {
  const auto n = static_cast<Eigen::Index>(b.size());
  if (P.rows() != n || P.cols() != 9) throw ShapeMismatch("phi: state matrix must be B x 9");
  if (b.obs.size() != b.size() || b.ren.size() != b.size() || b.object.size() != b.size())
    throw ShapeMismatch("phi: batch fields have different lengths");
  std::vector<const TactileImprint*> ren;
  for (const auto& r : b.ren) ren.push_back(&r);
  const Var obs_f = imprint_features(m.obs_enc, b.obs, m.sensor.pixels());
  const Var ren_f = imprint_features(m.ren_enc, ren, m.sensor.pixels());
  std::vector<Var> pooled;
  for (const Mat& c : b.clouds) pooled.push_back(m.obj_enc(ad::constant(c)));
  Var obj_f;
  if (pooled.size() == 1) {
    obj_f = ad::gather_rows(pooled[0], std::vector<Eigen::Index>(b.size(), 0));
  } else {
    // Stack the per-object rows, then gather.
    std::vector<Var> rows;
    for (std::size_t i = 0; i < pooled.size(); ++i)
      rows.push_back(ad::scatter_add_rows(pooled[i], {static_cast<Eigen::Index>(i)},
                                          static_cast<Eigen::Index>(pooled.size())));
    Var stacked = rows[0];
    for (std::size_t i = 1; i < rows.size(); ++i) stacked = ad::add(stacked, rows[i]);
    obj_f = ad::gather_rows(stacked, b.object);
  }
  Mat tf(n, 2 * m.arch.time_freqs);
  Mat inv_sigma(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = b.t[static_cast<std::size_t>(i)];
    tf.row(i) = time_features(t, m.arch.time_freqs);
    inv_sigma(i, 0) = 1.0 / m.schedule.sigma(t);
  }
  const Var time_f = m.time_lin(ad::constant(tf));
  const Var x = ad::concat_cols({obs_f, ren_f, obj_f, time_f, P});
  const Var h = ad::silu(m.fus2(ad::silu(m.fus1(x))));
  return ad::mul_col(m.fus3(h), ad::constant(inv_sigma));
}

struct TapeScore {
  Var phi, energy, score;  // B x 9, 1 x 1 (summed over rows), B x 9
};

/// Score of every row, kept on the tape so it can be differentiated again.
inline TapeScore score_tape(const EnergyModel& m, const EnergyBatch& b, bool create_graph = true) {
  const Var P = ad::variable(b.p);
  TapeScore out;
  out.phi = phi_tape(m, b, P);
  out.energy = ad::sum_all(ad::mul(out.phi, P));
  out.score = ad::grad(out.energy, {P}, create_graph)[0];
  return out;
}

/// Mean over rows of lambda(t) ||score - target||^2, on the tape.
inline Var dsm_loss(const EnergyModel& m, const EnergyBatch& b, const Mat& target) {
  if (target.rows() != b.p.rows() || target.cols() != 9) throw ShapeMismatch("dsm: target must be B x 9");
  const TapeScore s = score_tape(m, b, true);
  const Var d = ad::sub(s.score, ad::constant(target));
  Mat lam(static_cast<Eigen::Index>(b.size()), 1);
  for (std::size_t i = 0; i < b.size(); ++i) lam(static_cast<Eigen::Index>(i), 0) = m.schedule.lambda(b.t[i]);
  const Var per_row = ad::mul_col(ad::sum_cols(ad::mul(d, d)), ad::constant(lam));
  const Var loss = ad::scale(ad::sum_all(per_row), 1.0 / static_cast<double>(b.size()));
  if (!std::isfinite(loss.scalar())) throw NonFiniteLoss("dsm loss is not finite");
  return loss;
}

// ---------------------------------------------------------------------------
// Inference context: one object and one observation, many states.

class EnergyContext {
 public:
  EnergyContext(const EnergyModel& model, const ObjectModel& object, const TactileImprint& obs)
      : m_(&model), object_(&object), obs_(obs) {
    if (obs.pixels() != model.sensor.pixels() || obs.k != kNumSensors)
      throw ShapeMismatch("observation grid does not match the model");
    const int px = model.sensor.pixels();
    const auto& w1 = model.fus1.w.value();
    const int ow = model.arch.obs_width();
    Mat obs_f(1, ow);
    const std::vector<const TactileImprint*> one{&obs_};
    for (int s = 0; s < kNumSensors; ++s)
      obs_f.middleCols(s * model.arch.enc_out, model.arch.enc_out) =
          model.obs_enc.plain(nn::imprint_rows(one, s, px)) * (obs_.present[s] ? 1.0 : 0.0);
    obj_f_ = model.obj_enc.plain(model.object_cloud(object));
    const_pre_ = obs_f * w1.topRows(ow) + obj_f_ * w1.middleRows(2 * ow, model.arch.pn_out) + model.fus1.b.value();
  }

  const EnergyModel& model() const { return *m_; }
  const ObjectModel& object() const { return *object_; }
  const TactileImprint& observation() const { return obs_; }

  TactileImprint render(const Vec9& p) const { return render_for_state(*m_, *object_, p, obs_.present); }
  std::vector<TactileImprint> render(const Mat& P) const {
    std::vector<TactileImprint> out;
    for (Eigen::Index i = 0; i < P.rows(); ++i) out.push_back(render(Vec9(P.row(i).transpose())));
    return out;
  }

  struct Eval {
    Mat phi;                  // n x 9
    Eigen::VectorXd energy;   // n
    Mat score;                // n x 9 (only when requested)
  };

  /// Phi, energy and optionally score for states P (n x 9) at time t. Pass
  /// `renders` to reuse imprints (for frozen-render checks or stale-render refinement).
  Eval evaluate(const Mat& P, double t, bool with_score, const std::vector<TactileImprint>* renders = nullptr) const {
    if (P.cols() != 9) throw ShapeMismatch("states must be n x 9");
    const EnergyModel& m = *m_;
    const auto n = P.rows();
    std::vector<TactileImprint> own;
    if (!renders) {
      own = render(P);
      renders = &own;
    }
    if (static_cast<Eigen::Index>(renders->size()) != n) throw ShapeMismatch("one render per state required");
    std::vector<const TactileImprint*> ren;
    for (const auto& r : *renders) ren.push_back(&r);

    const int ow = m.arch.obs_width();
    const auto& w1 = m.fus1.w.value();
    Mat ren_f(n, ow);
    for (int s = 0; s < kNumSensors; ++s)
      ren_f.middleCols(s * m.arch.enc_out, m.arch.enc_out) =
          m.ren_enc.plain(nn::imprint_rows(ren, s, m.sensor.pixels())).array().colwise() *
          nn::present_col(ren, s).col(0).array();
    const Mat time_f = m.time_lin.plain(time_features(t, m.arch.time_freqs));
    const Eigen::Index p_row = 2 * ow + m.arch.pn_out + m.arch.time_out;
    Eigen::RowVectorXd row_const = const_pre_.row(0) + time_f.row(0) * w1.middleRows(2 * ow + m.arch.pn_out, m.arch.time_out);
    Mat z1 = ren_f * w1.middleRows(ow, ow) + P * w1.middleRows(p_row, 9);
    z1.rowwise() += row_const;
    const Mat a1 = nn::silu_plain(z1);
    const Mat z2 = m.fus2.plain(a1);
    const Mat a2 = nn::silu_plain(z2);
    const double inv_sigma = 1.0 / m.schedule.sigma(t);
    Eval out;
    out.phi = m.fus3.plain(a2) * inv_sigma;
    out.energy = out.phi.cwiseProduct(P).rowwise().sum();
    if (with_score) {
      // d<Phi, p>/dp = Phi + J^T p, backpropagating p / sigma through the fusion MLP.
      const Mat g_a2 = (P * inv_sigma) * m.fus3.w.value().transpose();
      const Mat g_z2 = g_a2.cwiseProduct(nn::silu_grad_plain(z2));
      const Mat g_a1 = g_z2 * m.fus2.w.value().transpose();
      const Mat g_z1 = g_a1.cwiseProduct(nn::silu_grad_plain(z1));
      out.score = out.phi + g_z1 * w1.middleRows(p_row, 9).transpose();
    }
    return out;
  }

  Vec9 phi(const Vec9& p, double t) const { return evaluate(p.transpose(), t, false).phi.row(0).transpose(); }
  double energy(const Vec9& p, double t) const { return evaluate(p.transpose(), t, false).energy[0]; }
  Vec9 score(const Vec9& p, double t) const { return evaluate(p.transpose(), t, true).score.row(0).transpose(); }
  Eigen::VectorXd energies(const Mat& P, double t) const { return evaluate(P, t, false).energy; }

 private:
  const EnergyModel* m_;
  const ObjectModel* object_;
  TactileImprint obs_;
  Mat obj_f_;
  Mat const_pre_;  // 1 x hidden: obs and object contributions plus bias
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int batch_size = 32;
  int n_steps = 50000;
  double learning_rate = 1e-4;
  bool aug = false;
  double mask_prob = 0.0;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;     // global-norm clip, 0 = off
  double lr_final_frac = 1.0; // cosine decay to lr * frac over n_steps, 1 = constant

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (n_steps < 0) throw ConfigError("n_steps must be >= 0");
    if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
    if (!(mask_prob >= 0 && mask_prob <= 0.5)) throw ConfigError("mask_prob must lie in [0, 0.5]");
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
    if (!(lr_final_frac >= 0 && lr_final_frac <= 1)) throw ConfigError("lr_final_frac must lie in [0, 1]");
  }
  double lr_at(int step) const {
    if (lr_final_frac >= 1.0 || n_steps <= 1) return learning_rate;
    const double c = 0.5 * (1 + std::cos(std::numbers::pi * std::min(1.0, static_cast<double>(step) / n_steps)));
    return learning_rate * (lr_final_frac + (1 - lr_final_frac) * c);
  }
};

/// Objects by id plus their cached network inputs.
class ObjectTable {
 public:
  ObjectTable() = default;
  ObjectTable(const std::vector<ObjectModel>& objects, int pn_points, double workspace) {
    for (const auto& o : objects) {
      index_[o.id] = static_cast<Eigen::Index>(models_.size());
      models_.push_back(&o);
      clouds_.push_back(nn::object_input(o, pn_points, workspace));
    }
  }
  Eigen::Index index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw BadSpec("sample refers to unknown object '" + id + "'");
    return it->second;
  }
  const ObjectModel& model(Eigen::Index i) const { return *models_[static_cast<std::size_t>(i)]; }
  const std::vector<Mat>& clouds() const { return clouds_; }

 private:
  std::map<std::string, Eigen::Index> index_;
  std::vector<const ObjectModel*> models_;
  std::vector<Mat> clouds_;
};

struct DsmBatch {
  EnergyBatch batch;
  Mat target;
  std::vector<TactileImprint> obs_store;
};

/// Fresh t, noise, augmentation and masking for B random dataset rows.
inline DsmBatch make_dsm_batch(const EnergyModel& m, const std::vector<Sample>& data, const ObjectTable& objects,
                               const TrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw ConfigError("training set is empty");
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  DsmBatch d;
  d.batch.p.resize(static_cast<Eigen::Index>(B), 9);
  d.target.resize(static_cast<Eigen::Index>(B), 9);
  d.obs_store.reserve(B);
  d.batch.clouds = objects.clouds();
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = data[pick(rng)];
    const double t = uniform(rng, m.schedule.eps, 1.0);
    const Perturbed pt = perturb(to_pose9(s.pose, m.arch.workspace).vec(), t, m.schedule, rng);
    TactileImprint obs = s.imprint;
    if (cfg.aug) augment_imprint(obs, m.sensor, rng);
    mask_sensors(obs, cfg.mask_prob, rng);
    const Eigen::Index obj = objects.index(s.object_id);
    d.batch.p.row(static_cast<Eigen::Index>(i)) = pt.pt.transpose();
    d.target.row(static_cast<Eigen::Index>(i)) = pt.target.transpose();
    d.batch.t.push_back(t);
    d.batch.object.push_back(obj);
    d.batch.ren.push_back(render_for_state(m, objects.model(obj), pt.pt, obs.present));
    d.obs_store.push_back(std::move(obs));
  }
  for (const auto& o : d.obs_store) d.batch.obs.push_back(&o);
  return d;
}

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// One Adam step on the DSM loss (gradient of a loss that contains a gradient).
inline StepResult train_step(EnergyModel& m, const DsmBatch& d, nn::Adam& opt, double lr, double grad_clip = 0.0) {
  const Var loss = dsm_loss(m, d.batch, d.target);
  const std::vector<Var> params = m.parameters();
  std::vector<Var> grads = ad::grad(loss, params);
  StepResult r{loss.scalar(), nn::global_norm(grads)};
  if (!std::isfinite(r.grad_norm)) throw NonFiniteLoss("parameter gradient is not finite");
  if (grad_clip > 0 && r.grad_norm > grad_clip)
    for (auto& g : grads) g = ad::constant(g.value() * (grad_clip / r.grad_norm));
  opt.step(params, grads, lr);
  return r;
}

/// Full training run; `on_step(step, loss)` is called after every update.
inline std::vector<double> train_energy(EnergyModel& m, const std::vector<Sample>& data,
                                        const std::vector<ObjectModel>& objects, const TrainConfig& cfg,
                                        const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  const ObjectTable table(objects, m.arch.pn_points, m.arch.workspace);
  nn::Adam opt;
  Rng rng = make_rng(cfg.seed, "train");
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(cfg.n_steps));
  for (int step = 0; step < cfg.n_steps; ++step) {
    const DsmBatch d = make_dsm_batch(m, data, table, cfg, rng);
    const StepResult r = train_step(m, d, opt, cfg.lr_at(step), cfg.grad_clip);
    curve.push_back(r.loss);
    if (on_step) on_step(step, r.loss);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {
inline std::string kv_line(const std::string& tag, const std::vector<std::pair<std::string, double>>& kv) {
  std::ostringstream os;
  os.precision(17);
  os << tag;
  for (const auto& [k, v] : kv) os << ' ' << k << ' ' << v;
  return os.str();
}

inline std::map<std::string, double> parse_kv(const std::string& line, const std::string& tag) {
  std::istringstream is(line);
  std::string got;
  is >> got;
  if (got != tag) throw CorruptCheckpoint("expected '" + tag + "' header line");
  std::map<std::string, double> out;
  std::string k;
  double v;
  while (is >> k >> v) out[k] = v;
  return out;
}

inline double need(const std::map<std::string, double>& kv, const std::string& k) {
  auto it = kv.find(k);
  if (it == kv.end()) throw CorruptCheckpoint("header is missing '" + k + "'");
  return it->second;
}
}  // namespace detail

inline std::vector<std::string> config_header(const ArchConfig& a, const SensorConfig& s, const NoiseSchedule& n) {
  return {detail::kv_line("arch", {{"enc_hidden", a.enc_hidden},
                                   {"enc_out", a.enc_out},
                                   {"pn_points", a.pn_points},
                                   {"pn_hidden", a.pn_hidden},
                                   {"pn_out", a.pn_out},
                                   {"time_freqs", a.time_freqs},
                                   {"time_out", a.time_out},
                                   {"fusion_hidden", a.fusion_hidden},
                                   {"workspace", a.workspace},
                                   {"nominal_indent", a.nominal_indent}}),
          detail::kv_line("sensor", {{"grid_h", s.grid_h},
                                     {"grid_w", s.grid_w},
                                     {"plate_half_gap", s.plate_half_gap},
                                     {"pixel_pitch", s.pixel_pitch},
                                     {"max_depth", s.max_depth}}),
          detail::kv_line("schedule", {{"sigma_min", n.sigma_min}, {"sigma_max", n.sigma_max}, {"eps", n.eps}})};
}

inline void parse_config_header(const std::vector<std::string>& h, ArchConfig& a, SensorConfig& s, NoiseSchedule& n) {
  if (h.size() < 3) throw CorruptCheckpoint("checkpoint header is incomplete");
  using detail::need;
  const auto ak = detail::parse_kv(h[0], "arch");
  a.enc_hidden = static_cast<int>(need(ak, "enc_hidden"));
  a.enc_out = static_cast<int>(need(ak, "enc_out"));
  a.pn_points = static_cast<int>(need(ak, "pn_points"));
  a.pn_hidden = static_cast<int>(need(ak, "pn_hidden"));
  a.pn_out = static_cast<int>(need(ak, "pn_out"));
  a.time_freqs = static_cast<int>(need(ak, "time_freqs"));
  a.time_out = static_cast<int>(need(ak, "time_out"));
  a.fusion_hidden = static_cast<int>(need(ak, "fusion_hidden"));
  a.workspace = need(ak, "workspace");
  a.nominal_indent = need(ak, "nominal_indent");
  const auto sk = detail::parse_kv(h[1], "sensor");
  s.grid_h = static_cast<int>(need(sk, "grid_h"));
  s.grid_w = static_cast<int>(need(sk, "grid_w"));
  s.plate_half_gap = need(sk, "plate_half_gap");
  s.pixel_pitch = need(sk, "pixel_pitch");
  s.max_depth = need(sk, "max_depth");
  const auto nk = detail::parse_kv(h[2], "schedule");
  n.sigma_min = need(nk, "sigma_min");
  n.sigma_max = need(nk, "sigma_max");
  n.eps = need(nk, "eps");
  try {
    a.validate();
    s.validate();
    n.validate();
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(std::string("invalid configuration in header: ") + e.what());
  }
}

inline void save_energy_model(std::ostream& os, const EnergyModel& m) {
  nn::write_checkpoint(os, "energy", config_header(m.arch, m.sensor, m.schedule), m.parameters());
}

inline EnergyModel load_energy_model(std::istream& is) {
  const nn::CheckpointFile f = nn::read_checkpoint(is);
  if (f.kind != "energy") throw CorruptCheckpoint("checkpoint holds a '" + f.kind + "' model");
  ArchConfig a;
  SensorConfig s;
  NoiseSchedule n;
  parse_config_header(f.header, a, s, n);
  EnergyModel m(a, s, n, 0);
  nn::unpack_parameters(f.payload, m.parameters());
  return m;
}

inline void save_energy_model(const std::string& path, const EnergyModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  save_energy_model(os, m);
}

inline EnergyModel load_energy_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  return load_energy_model(is);
}

}  // namespace ebmpose
