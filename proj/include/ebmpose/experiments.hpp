#pragma once

// Benchmark harness: per-method evaluation, stage and t0 ablations, tracking
// runs and the grasp-uncertainty protocol. Used by the CLI and the
// acceptance runner.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "energynet.hpp"
#include "errors.hpp"
#include "geom.hpp"
#include "io.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace ebmpose {

enum class Method { ours, regression, icp_global, icp_partial, grid_match };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::ours: return "ours";
    case Method::regression: return "regression";
    case Method::icp_global: return "icp-global";
    case Method::icp_partial: return "icp-partial";
    case Method::grid_match: return "grid-match";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::ours, Method::regression, Method::icp_global, Method::icp_partial, Method::grid_match})
    if (method_name(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

/// Whatever the methods need; only the fields the chosen method uses must be set.
struct Evaluator {
  const EnergyModel* energy = nullptr;
  const RegressorModel* regressor = nullptr;
  PipelineConfig pipeline;
  SensorConfig sensor;
  IcpNoise icp_noise;
  IcpConfig icp;
  double grid_mm = 2.5;
  double grid_deg = 6.0;
  std::uint64_t seed = 0;

  const PoseGrid& grid_for(const ObjectModel& obj) {
    auto it = grids_.find(obj.id);
    if (it == grids_.end()) it = grids_.emplace(obj.id, make_pose_grid(obj, sensor, grid_mm, grid_deg)).first;
    return it->second;
  }

 private:
  std::map<std::string, PoseGrid> grids_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Fills the solver and candidate fields of a record from an estimation result.
inline void record_estimate(MetricsRecord& r, const EstimationResult& res, const ObjectModel& obj,
                            const RigidPose& gt) {
  r.pose = res.pose;
  r.s2 = res.uncertainty;
  r.energies = res.energies;
  for (const auto& rep : res.reports) {
    r.rhs_evals += rep.n_rhs_evals;
    r.accepted_steps += rep.n_accepted_steps;
    r.rejected_steps += rep.n_rejected_steps;
  }
  double s = 0.0;
  for (const auto& c : res.candidates) s += pose_distance(c, gt, obj);
  r.mean_candidate_error = res.candidates.empty() ? 0.0 : s / static_cast<double>(res.candidates.size());
}

/// One sample. The prior and ICP-noise streams depend only on (seed, index),
/// so variants evaluated with the same seed are paired.
inline MetricsRecord evaluate_sample(Method m, Evaluator& ev, const ObjectModel& obj, const Sample& s, int index,
                                     const std::string& label = "") {
  MetricsRecord r;
  r.method = label.empty() ? method_name(m) : label;
  r.object_id = obj.id;
  r.sample = index;
  r.metric = metric_kind(obj);
  const auto t0 = std::chrono::steady_clock::now();
  switch (m) {
    case Method::ours: {
      if (!ev.energy) throw ConfigError("method 'ours' needs an energy model");
      Rng rng = make_rng(ev.seed, "prior", static_cast<std::uint64_t>(index));
      const EnergyContext ctx(*ev.energy, obj, s.imprint);
      record_estimate(r, estimate(ctx, ev.pipeline, rng), obj, s.pose);
      break;
    }
    case Method::regression:
      if (!ev.regressor) throw ConfigError("method 'regression' needs a regressor model");
      r.pose = regress(*ev.regressor, obj, s.imprint);
      break;
    case Method::icp_global:
    case Method::icp_partial: {
      Rng rng = make_rng(ev.seed, "icp-init", static_cast<std::uint64_t>(index));
      const IcpMode mode = m == Method::icp_global ? IcpMode::global : IcpMode::partial;
      try {
        const IcpResult res = icp_baseline(obj, s.imprint, s.pose, ev.sensor, mode, rng, ev.icp_noise, ev.icp);
        r.pose = res.pose;
        r.accepted_steps = res.iterations;
      } catch (const DegenerateAlignment&) {
        // Too few contacts to align: keep the noisy initialization.
        Rng again = make_rng(ev.seed, "icp-init", static_cast<std::uint64_t>(index));
        r.pose = perturb_pose(s.pose, ev.icp_noise, again);
      }
      break;
    }
    case Method::grid_match:
      r.pose = grid_match(ev.grid_for(obj), s.imprint);
      break;
  }
  r.seconds = seconds_since(t0);
  // Without post-ranking the reported error is the mean over the refined candidates.
  if (m == Method::ours && !ev.pipeline.stages.postrank)
    r.error_mm = r.mean_candidate_error;
  else
    r.error_mm = pose_distance(r.pose, s.pose, obj);
  return r;
}

inline const ObjectModel& object_for(const std::vector<ObjectModel>& objects, const std::string& id) {
  for (const auto& o : objects)
    if (o.id == id) return o;
  throw BadSpec("sample refers to unknown object '" + id + "'");
}

inline std::vector<MetricsRecord> evaluate_method(Method m, Evaluator& ev, const std::vector<ObjectModel>& objects,
                                                  const std::vector<Sample>& samples, const std::string& label = "") {
  std::vector<MetricsRecord> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.push_back(evaluate_sample(m, ev, object_for(objects, samples[i].object_id), samples[i], static_cast<int>(i), label));
  return out;
}

inline std::vector<double> errors_of(const std::vector<MetricsRecord>& recs) {
  std::vector<double> e;
  for (const auto& r : recs) e.push_back(r.error_mm);
  return e;
}

// ---------------------------------------------------------------------------
// Ablations

struct Variant {
  std::string name;
  PipelineConfig config;
};

/// Full pipeline and the single-stage ablations.
inline std::vector<Variant> stage_variants(const PipelineConfig& base) {
  std::vector<Variant> out;
  out.push_back({"full", base});
  Variant v{"no-prefilter", base};
  v.config.stages.prefilter = false;
  out.push_back(v);
  v = {"no-refine", base};
  v.config.stages.refine = false;
  out.push_back(v);
  v = {"no-postrank", base};
  v.config.stages.postrank = false;
  out.push_back(v);
  v = {"refine-top1", base};
  v.config.K = 1;
  out.push_back(v);
  return out;
}

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::vector<Variant> t0_variants(const PipelineConfig& base, const std::vector<double>& values) {
  std::vector<Variant> out;
  for (double t0 : values) {
    Variant v{"t0=" + short_number(t0), base};
    v.config.t0_est = t0;
    v.config.t0_track = std::min(v.config.t0_track, t0);
    out.push_back(v);
  }
  return out;
}

inline std::vector<MetricsRecord> evaluate_variant(const Variant& v, Evaluator& ev,
                                                   const std::vector<ObjectModel>& objects,
                                                   const std::vector<Sample>& samples) {
  Evaluator local = ev;
  local.pipeline = v.config;
  return evaluate_method(Method::ours, local, objects, samples, v.name);
}

// ---------------------------------------------------------------------------
// Tracking

struct TrackingRun {
  std::vector<double> track_error, frame_error;  // per frame, mm
  std::vector<long> track_evals, frame_evals;    // RHS evaluations per frame
};

/// Frame 0 is initialized by a full estimate; later frames use track_step.
/// Every frame is also estimated independently for comparison.
inline TrackingRun run_tracking(const EnergyModel& model, const ObjectModel& obj, const std::vector<Sample>& traj,
                                const PipelineConfig& cfg, std::uint64_t seed, bool with_frame_estimates = true) {
  TrackingRun run;
  TrackerState state;
  for (std::size_t f = 0; f < traj.size(); ++f) {
    const EnergyContext ctx(model, obj, traj[f].imprint);
    std::optional<EstimationResult> frame;
    if (with_frame_estimates || f == 0) {
      Rng rng = make_rng(seed, "frame", f);
      frame = estimate(ctx, cfg, rng);
      run.frame_error.push_back(pose_distance(frame->pose, traj[f].pose, obj));
      run.frame_evals.push_back(frame->rhs_evals());
    }
    if (f == 0) {
      state = {frame->pose, 0};
      run.track_error.push_back(run.frame_error.back());
      run.track_evals.push_back(run.frame_evals.back());
      continue;
    }
    Rng rng = make_rng(seed, "track", f);
    const TrackResult tr = track_step(ctx, state, cfg, rng);
    state = tr.state;
    run.track_error.push_back(pose_distance(tr.pose, traj[f].pose, obj));
    run.track_evals.push_back(tr.detail.rhs_evals());
  }
  return run;
}

// ---------------------------------------------------------------------------
// Grasp uncertainty

struct GraspSetResult {
  std::vector<double> errors, s2;  // per grasp
  double top1 = 0, top3 = 0, top5 = 0, random = 0;
};

/// Ranks grasps by S^2 (ascending, ties to the lower index) and reports the
/// mean error of the k most confident; `random` is the expected error of a
/// uniformly random pick (the set mean).
inline GraspSetResult rank_grasp_set(const std::vector<double>& errors, const std::vector<double>& s2) {
  if (errors.empty() || errors.size() != s2.size()) throw ConfigError("grasp set needs matching errors and S^2");
  GraspSetResult r{errors, s2};
  std::vector<int> idx(errors.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s2[static_cast<std::size_t>(a)] < s2[static_cast<std::size_t>(b)]; });
  auto top = [&](std::size_t k) {
    k = std::min(k, idx.size());
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += errors[static_cast<std::size_t>(idx[i])];
    return s / static_cast<double>(k);
  };
  r.top1 = top(1);
  r.top3 = top(3);
  r.top5 = top(5);
  r.random = mean_of(errors);
  return r;
}

inline GraspSetResult run_grasp_set(Evaluator& ev, const ObjectModel& obj, const std::vector<Sample>& grasps) {
  std::vector<double> e, s2;
  for (std::size_t i = 0; i < grasps.size(); ++i) {
    const MetricsRecord r = evaluate_sample(Method::ours, ev, obj, grasps[i], static_cast<int>(i));
    e.push_back(r.error_mm);
    s2.push_back(r.s2);
  }
  return rank_grasp_set(e, s2);
}

}  // namespace ebmpose
