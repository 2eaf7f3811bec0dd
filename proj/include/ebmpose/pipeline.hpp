#pragma once

// Three-stage inference (energy pre-filter, probability-flow refinement,
// energy post-ranking), tracking with a Gaussian prior around the last
// estimate, and candidate-spread uncertainty for grasp selection.

#include <algorithm>
#include <numeric>
#include <vector>

#include "diffusion.hpp"
#include "energynet.hpp"
#include "errors.hpp"
#include "geom.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace ebmpose {

struct StageFlags {
  bool prefilter = true;
  bool refine = true;
  bool postrank = true;
};

struct PipelineConfig {
  PriorConfig prior;          // prior.num_candidates is M
  int K = 16;
  double t0_est = 0.6;
  double t0_track = 0.1;
  double sigma_track = 0.05;  // normalized 9-vector units
  StageFlags stages;
  OdeTolerance ode_tol;
  double t_select = 0.0;      // time for energy ranking; 0 means the schedule's eps
  int stale_render = 1;       // RHS evaluations sharing one render (1 = re-render every evaluation)
  unsigned threads = 1;       // per-candidate refinement workers

  int M() const { return prior.num_candidates; }
  void validate(const NoiseSchedule& schedule) const {
    if (K < 1 || K > M()) throw ConfigError("pipeline needs 1 <= K <= M");
    if (!(t0_track > schedule.eps) || t0_track > t0_est || t0_est > 1.0)
      throw ConfigError("pipeline needs eps < t0_track <= t0_est <= 1");
    if (!(sigma_track >= 0)) throw ConfigError("sigma_track must be >= 0");
    if (t_select != 0.0 && !(t_select >= schedule.eps && t_select <= 1.0))
      throw ConfigError("t_select must lie in [eps, 1]");
    if (stale_render < 1) throw ConfigError("stale_render must be >= 1");
    if (!(ode_tol.rel > 0) || !(ode_tol.abs > 0)) throw ConfigError("ODE tolerances must be positive");
  }
  double selection_time(const NoiseSchedule& schedule) const { return t_select == 0.0 ? schedule.eps : t_select; }
};

/// Indices of the K highest-energy candidates, descending; ties to the lower index.
inline std::vector<int> top_k_by_energy(const Eigen::VectorXd& energy, int K) {
  std::vector<int> idx(static_cast<std::size_t>(energy.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return energy[a] > energy[b]; });
  idx.resize(static_cast<std::size_t>(std::min<Eigen::Index>(K, energy.size())));
  return idx;
}

inline Mat stack_states(const std::vector<Vec9>& states) {
  Mat P(static_cast<Eigen::Index>(states.size()), 9);
  for (std::size_t i = 0; i < states.size(); ++i) P.row(static_cast<Eigen::Index>(i)) = states[i].transpose();
  return P;
}

/// Top-K candidates by energy at the selection time.
inline std::vector<int> prefilter(const EnergyContext& ctx, const std::vector<Vec9>& candidates, int K, double t_sel) {
  if (K < 1 || static_cast<std::size_t>(K) > candidates.size()) throw ConfigError("prefilter needs 1 <= K <= M");
  return top_k_by_energy(ctx.energies(stack_states(candidates), t_sel), K);
}

struct RefineOutcome {
  Vec9 state;
  OdeReport<Vec9> report;
  bool failed = false;
};

/// PF-ODE from t0 down to eps for one state under an arbitrary score.
inline RefineOutcome refine_with_score(const ScoreFn& score, const NoiseSchedule& sch, const Vec9& p, double t0,
                                       const OdeTolerance& tol) {
  RefineOutcome out;
  try {
    out.report = integrate_pf_ode(score, sch, p, t0, sch.eps, tol);
    out.state = out.report.final_state;
    out.failed = !out.state.allFinite();
  } catch (const StepSizeUnderflow&) {
    out.state = p;
    out.failed = true;
  }
  return out;
}

/// Model score for one candidate; `stale` RHS evaluations share a render.
inline RefineOutcome refine_one(const EnergyContext& ctx, const Vec9& p, double t0, const OdeTolerance& tol,
                                int stale = 1) {
  std::vector<TactileImprint> cached(1);
  int uses = 0;
  auto score = [&](const Vec9& q, double t) -> Vec9 {
    if (stale <= 1 || uses % stale == 0) cached[0] = ctx.render(q);
    ++uses;
    return ctx.evaluate(q.transpose(), t, true, &cached).score.row(0).transpose();
  };
  return refine_with_score(score, ctx.model().schedule, p, t0, tol);
}

/// Independent refinement of every candidate; order preserved.
inline std::vector<RefineOutcome> refine_candidates(const EnergyContext& ctx, const std::vector<Vec9>& candidates,
                                                    double t0, const OdeTolerance& tol, int stale = 1,
                                                    unsigned threads = 1) {
  if (!(t0 > ctx.model().schedule.eps) || t0 > 1.0) throw DomainError("refinement needs t0 in (eps, 1]");
  std::vector<RefineOutcome> out(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) { out[i] = refine_one(ctx, candidates[i], t0, tol, stale); },
               threads);
  return out;
}

/// Index of the highest-energy candidate at the selection time (ties to the lowest index).
inline int postrank(const EnergyContext& ctx, const std::vector<Vec9>& refined, double t_sel) {
  if (refined.empty()) throw NoCandidates("post-ranking needs at least one candidate");
  return top_k_by_energy(ctx.energies(stack_states(refined), t_sel), 1)[0];
}

/// Rotates each candidate by the symmetry element that brings it closest to
/// the reference, so averaging does not mix equivalent orientations.
inline std::vector<RigidPose> align_to_reference(const std::vector<RigidPose>& poses, const RigidPose& ref,
                                                 const SymmetryClass& sym) {
  if (sym.kind == SymmetryKind::none) return poses;
  const std::vector<Mat3> group = sym.elements();
  std::vector<RigidPose> out;
  for (const RigidPose& p : poses) {
    Mat3 best = p.rotation;
    double best_d = (p.rotation - ref.rotation).squaredNorm();
    for (const Mat3& g : group) {
      const double d = (p.rotation * g - ref.rotation).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = p.rotation * g;
      }
    }
    out.push_back({best, p.translation});
  }
  return out;
}

/// Symmetry-aligned chordal mean; falls back to the reference when the mean is degenerate.
inline RigidPose candidate_mean(const std::vector<RigidPose>& poses, const ObjectModel& object,
                                const RigidPose& ref) {
  try {
    return mean_pose(align_to_reference(poses, ref, object.symmetry));
  } catch (const DegenerateMean&) {
    return ref;
  }
}

/// Mean pose distance of the candidates to their (symmetry-aligned) mean, in mm.
inline double estimate_uncertainty(const std::vector<RigidPose>& candidates, const ObjectModel& object) {
  if (candidates.empty()) throw NoCandidates("uncertainty needs at least one candidate");
  const RigidPose mean = candidate_mean(candidates, object, candidates.front());
  double s = 0.0;
  for (const RigidPose& c : candidates) s += pose_distance(c, mean, object);
  return s / static_cast<double>(candidates.size());
}

/// Lowest uncertainty wins; ties to the lowest index.
inline int select_grasp(const std::vector<double>& uncertainties) {
  if (uncertainties.empty()) throw NoCandidates("no grasps to choose from");
  return static_cast<int>(std::min_element(uncertainties.begin(), uncertainties.end()) - uncertainties.begin());
}

struct EstimationResult {
  RigidPose pose;
  std::vector<RigidPose> candidates;  // surviving candidates after refinement
  std::vector<double> energies;       // at the selection time, per candidate
  std::vector<OdeReport<Vec9>> reports;
  int selected = -1;                  // index into candidates, -1 when averaged
  int n_failed = 0;
  double uncertainty = 0.0;           // mm

  long rhs_evals() const {
    long n = 0;
    for (const auto& r : reports) n += r.n_rhs_evals;
    return n;
  }
};

inline RigidPose state_to_pose(const Vec9& p, double workspace) { return to_rigid(Pose9::from_vec(p), workspace); }

/// Shared tail of estimate and track: refine (optional) then rank or average.
inline EstimationResult finish_candidates(const EnergyContext& ctx, const std::vector<Vec9>& start, double t0,
                                          const PipelineConfig& cfg, bool refine, bool rank) {
  const EnergyModel& m = ctx.model();
  const double t_sel = cfg.selection_time(m.schedule);
  EstimationResult res;
  std::vector<Vec9> kept;
  if (refine) {
    const auto outcomes = refine_candidates(ctx, start, t0, cfg.ode_tol, cfg.stale_render, cfg.threads);
    for (const auto& o : outcomes) {
      res.reports.push_back(o.report);
      if (o.failed) {
        ++res.n_failed;
        continue;
      }
      kept.push_back(o.state);
    }
    if (kept.empty()) throw RefinementFailed("every candidate failed to refine");
  } else {
    kept = start;
  }
  // Degenerate states cannot be turned into poses; drop them like failed refinements.
  std::vector<Vec9> valid;
  for (const Vec9& p : kept) {
    try {
      res.candidates.push_back(state_to_pose(p, m.arch.workspace));
      valid.push_back(p);
    } catch (const DegenerateRotation&) {
      ++res.n_failed;
    }
  }
  if (valid.empty()) throw NoCandidates("no valid candidate poses");
  const Eigen::VectorXd e = ctx.energies(stack_states(valid), t_sel);
  res.energies.assign(e.data(), e.data() + e.size());
  const int best = top_k_by_energy(e, 1)[0];
  if (rank) {
    res.selected = best;
    res.pose = res.candidates[static_cast<std::size_t>(best)];
  } else {
    res.pose = candidate_mean(res.candidates, ctx.object(), res.candidates[static_cast<std::size_t>(best)]);
  }
  res.uncertainty = estimate_uncertainty(res.candidates, ctx.object());
  return res;
}

/// Prior sampling, then the enabled stages.
inline EstimationResult estimate(const EnergyContext& ctx, const PipelineConfig& cfg, Rng& rng) {
  const EnergyModel& m = ctx.model();
  cfg.validate(m.schedule);
  const std::vector<Pose9> prior = icosphere_prior_poses(cfg.prior, ctx.object(), rng);
  std::vector<Vec9> all;
  for (const Pose9& p : prior) all.push_back(p.vec());
  std::vector<int> chosen;
  if (cfg.stages.prefilter) {
    chosen = prefilter(ctx, all, cfg.K, cfg.selection_time(m.schedule));
  } else {
    std::vector<int> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.assign(idx.begin(), idx.begin() + cfg.K);
  }
  std::vector<Vec9> start;
  for (int i : chosen) start.push_back(all[static_cast<std::size_t>(i)]);
  return finish_candidates(ctx, start, cfg.t0_est, cfg, cfg.stages.refine, cfg.stages.postrank);
}

inline EstimationResult estimate(const EnergyModel& model, const ObjectModel& object, const TactileImprint& obs,
                                 const PipelineConfig& cfg, Rng& rng) {
  const EnergyContext ctx(model, object, obs);
  return estimate(ctx, cfg, rng);
}

struct TrackerState {
  RigidPose last_pose;
  int step_index = 0;
};

struct TrackResult {
  RigidPose pose;
  TrackerState state;
  EstimationResult detail;
};

/// K candidates from N(last, sigma_track^2 I) in normalized 9-vector space,
/// refined from t0_track, highest energy kept.
inline TrackResult track_step(const EnergyContext& ctx, const TrackerState& state, const PipelineConfig& cfg,
                              Rng& rng) {
  const EnergyModel& m = ctx.model();
  cfg.validate(m.schedule);
  const Vec9 center = to_pose9(state.last_pose, m.arch.workspace).vec();
  std::vector<Vec9> start;
  for (int k = 0; k < cfg.K; ++k) {
    Vec9 p = center;
    for (int i = 0; i < 9; ++i) p[i] += normal(rng, 0.0, cfg.sigma_track);
    start.push_back(p);
  }
  TrackResult out;
  out.detail = finish_candidates(ctx, start, cfg.t0_track, cfg, cfg.stages.refine, true);
  out.pose = out.detail.pose;
  out.state = {out.pose, state.step_index + 1};
  return out;
}

}  // namespace ebmpose
