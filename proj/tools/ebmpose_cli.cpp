// ebmpose command-line front end.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ebmpose/baselines.hpp"
#include "ebmpose/config.hpp"
#include "ebmpose/experiments.hpp"
#include "ebmpose/io.hpp"

using namespace ebmpose;
namespace fs = std::filesystem;

namespace {

// Bad flags, bad config values: exit 2. Everything else that fails: exit 1.
struct UsageError : Error {
  using Error::Error;
};

struct Globals {
  std::string workdir = ".";
  std::string config;
  long long seed = -1;
};

std::string resolve(const Globals& g, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(g.workdir) / p).string();
}

RunConfig load_config(const Globals& g) {
  RunConfig c;
  if (!g.config.empty()) {
    try {
      c = load_run_config(resolve(g, g.config));
    } catch (const ParseError& e) {
      throw UsageError(g.config + ": " + e.what());
    }
  }
  if (g.seed >= 0) c.seed = static_cast<std::uint64_t>(g.seed);
  if (std::getenv("EBMPOSE_THREADS")) c.pipeline.threads = worker_count();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return c;
}

std::vector<ObjectModel> load_objects(const Globals& g, const std::vector<std::string>& paths) {
  std::vector<ObjectModel> out;
  for (const auto& p : paths) out.push_back(load_object(resolve(g, p)));
  return out;
}

ShapeKind shape_kind(const std::string& s) {
  if (s == "box") return ShapeKind::box;
  if (s == "cylinder") return ShapeKind::cylinder;
  if (s == "l_bracket") return ShapeKind::l_bracket;
  if (s == "notched_plate") return ShapeKind::notched_plate;
  if (s == "tube") return ShapeKind::tube;
  throw UsageError("unknown shape '" + s + "'");
}

std::ofstream open_out(const std::string& path) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  return os;
}

void write_records(const std::string& prefix, const std::vector<MetricsRecord>& recs) {
  auto js = open_out(prefix + ".jsonl");
  write_metrics(js, recs);
  auto csv = open_out(prefix + ".csv");
  write_summary_csv(csv, summarize(recs));
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad value '" + item + "' in --values");
    }
  }
  if (out.empty()) throw UsageError("--values is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-based diffusion pose estimation from tactile imprints"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--workdir", g.workdir, "Base directory for relative paths");
  app.add_option("--config", g.config, "Run configuration file (key = value)");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");

  // make-object
  auto* mk = app.add_subcommand("make-object", "Write a parametric object model");
  std::string shape, dims_s, obj_out;
  mk->add_option("--shape", shape, "box | cylinder | l_bracket | notched_plate | tube")->required();
  mk->add_option("--dims", dims_s, "Comma-separated dimensions in mm")->required();
  mk->add_option("--out", obj_out, "Output object file; its stem is the object id")->required();

  auto* show = app.add_subcommand("show-config", "Print the effective run configuration");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Simulate a grasp dataset");
  std::string gen_object, gen_out;
  std::size_t gen_n = 0;
  bool gen_aug = false;
  double gen_mask = 0.0;
  long long gen_seed = 0;
  gen->add_option("--object", gen_object, "Object file")->required();
  gen->add_option("--n", gen_n, "Number of samples")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--out", gen_out, "Output dataset file")->required();
  gen->add_flag("--aug", gen_aug, "Apply observation noise");
  gen->add_option("--mask-prob", gen_mask, "Per-sensor masking probability");

  // train
  auto* tr = app.add_subcommand("train", "Train the energy model or the regression baseline");
  std::string tr_data, tr_model = "ours", tr_out, tr_curve;
  std::vector<std::string> tr_objects;
  int tr_steps = -1;
  tr->add_option("--data", tr_data, "Training dataset")->required();
  tr->add_option("--objects", tr_objects, "Object files referenced by the dataset")->required();
  tr->add_option("--model", tr_model, "ours | regression");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--curve", tr_curve, "Loss curve CSV");
  tr->add_option("--steps", tr_steps, "Override train.n_steps");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a method on a dataset");
  std::string ev_method = "ours", ev_data, ev_ckpt, ev_out = "eval";
  std::vector<std::string> ev_objects;
  ev->add_option("--method", ev_method, "ours | regression | icp-global | icp-partial | grid-match");
  ev->add_option("--data", ev_data, "Evaluation dataset")->required();
  ev->add_option("--objects", ev_objects, "Object files")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint (ours, regression)");
  ev->add_option("--out", ev_out, "Output prefix (.jsonl and .csv)");

  // track
  auto* tk = app.add_subcommand("track", "Track simulated in-hand trajectories");
  std::string tk_ckpt, tk_object, tk_out = "track.csv";
  int tk_steps = 50, tk_n = 3;
  tk->add_option("--checkpoint", tk_ckpt, "Energy model checkpoint")->required();
  tk->add_option("--object", tk_object, "Object file")->required();
  tk->add_option("--n-steps", tk_steps, "Frames per trajectory");
  tk->add_option("--trajectories", tk_n, "Number of trajectories");
  tk->add_option("--out", tk_out, "Per-frame CSV");

  // uncertainty
  auto* un = app.add_subcommand("uncertainty", "Grasp-set confidence experiment");
  std::string un_ckpt, un_object, un_out = "uncertainty.csv";
  int un_sets = 10, un_size = 10;
  un->add_option("--checkpoint", un_ckpt, "Energy model checkpoint")->required();
  un->add_option("--object", un_object, "Object file")->required();
  un->add_option("--sets", un_sets, "Number of grasp sets");
  un->add_option("--set-size", un_size, "Grasps per set");
  un->add_option("--out", un_out, "Per-set CSV");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Stage or t0 ablations");
  std::string ab_sweep = "stages", ab_values, ab_data, ab_ckpt, ab_out = "ablate.csv";
  std::vector<std::string> ab_objects;
  ab->add_option("--sweep", ab_sweep, "stages | t0");
  ab->add_option("--values", ab_values, "Comma-separated t0 values for --sweep t0");
  ab->add_option("--data", ab_data, "Evaluation dataset")->required();
  ab->add_option("--objects", ab_objects, "Object files")->required();
  ab->add_option("--checkpoint", ab_ckpt, "Energy model checkpoint")->required();
  ab->add_option("--out", ab_out, "Summary CSV (one row per variant)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*mk) {
      std::vector<double> dims;
      for (double v : parse_values(dims_s)) dims.push_back(v);
      ShapeSpec spec{shape_kind(shape), dims, fs::path(obj_out).stem().string(), 4096};
      ObjectModel m;
      try {
        m = make_shape(spec);
      } catch (const BadSpec& e) {
        throw UsageError(e.what());
      }
      auto os = open_out(resolve(g, obj_out));
      write_object(os, m);
      return 0;
    }

    const RunConfig cfg = load_config(g);

    if (*show) {
      std::cout << to_string(cfg);
      return 0;
    }

    if (*gen) {
      const ObjectModel obj = load_object(resolve(g, gen_object));
      if (gen_mask < 0 || gen_mask > 0.5) throw UsageError("--mask-prob must lie in [0, 0.5]");
      auto data = generate_dataset(obj, gen_n, cfg.sensor, static_cast<std::uint64_t>(gen_seed), {gen_aug, gen_mask});
      for (auto& s : data) quantize_imprint(s.imprint);
      auto os = open_out(resolve(g, gen_out));
      write_dataset(os, data);
      return 0;
    }

    if (*tr) {
      const auto data = load_dataset(resolve(g, tr_data));
      const auto objects = load_objects(g, tr_objects);
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.seed, "train");
      if (tr_steps >= 0) tc.n_steps = tr_steps;
      std::vector<double> curve;
      auto progress = [&](int step, double loss) {
        if ((step + 1) % 1000 == 0) std::fprintf(stderr, "step %d loss %.5f\n", step + 1, loss);
      };
      if (tr_model == "ours") {
        EnergyModel m(cfg.arch, cfg.sensor, cfg.schedule, derive_seed(cfg.seed, "init"));
        curve = train_energy(m, data, objects, tc, progress);
        save_energy_model(resolve(g, tr_out), m);
      } else if (tr_model == "regression") {
        RegressorModel m(cfg.arch, cfg.sensor, derive_seed(cfg.seed, "init"));
        curve = train_regressor(m, data, objects, tc, progress);
        save_regressor(resolve(g, tr_out), m);
      } else {
        throw UsageError("--model must be 'ours' or 'regression'");
      }
      if (!tr_curve.empty()) {
        auto os = open_out(resolve(g, tr_curve));
        os << "step,loss\n";
        char buf[64];
        for (std::size_t i = 0; i < curve.size(); ++i) {
          std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i, curve[i]);
          os << buf;
        }
      }
      return 0;
    }

    if (*ev) {
      Method method;
      try {
        method = parse_method(ev_method);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      const auto data = load_dataset(resolve(g, ev_data));
      const auto objects = load_objects(g, ev_objects);
      Evaluator e;
      e.pipeline = cfg.pipeline;
      e.sensor = cfg.sensor;
      e.seed = derive_seed(cfg.seed, "eval");
      std::optional<EnergyModel> energy;
      std::optional<RegressorModel> reg;
      if (method == Method::ours || method == Method::regression) {
        if (ev_ckpt.empty()) throw UsageError("--checkpoint is required for method " + ev_method);
        if (method == Method::ours) {
          energy = load_energy_model(resolve(g, ev_ckpt));
          e.energy = &*energy;
        } else {
          reg = load_regressor(resolve(g, ev_ckpt));
          e.regressor = &*reg;
        }
      }
      const auto recs = evaluate_method(method, e, objects, data);
      write_records(resolve(g, ev_out), recs);
      for (const auto& row : summarize(recs))
        std::printf("%s %s %s n=%zu median=%.4f mean=%.4f\n", row.method.c_str(), row.object_id.c_str(),
                    row.metric.c_str(), row.n, row.median, row.mean);
      return 0;
    }

    if (*tk) {
      const EnergyModel m = load_energy_model(resolve(g, tk_ckpt));
      const ObjectModel obj = load_object(resolve(g, tk_object));
      auto os = open_out(resolve(g, tk_out));
      os << "trajectory,frame,track_error_mm,frame_error_mm,track_rhs_evals,frame_rhs_evals\n";
      for (int k = 0; k < tk_n; ++k) {
        Rng rng = make_rng(cfg.seed, "trajectory", static_cast<std::uint64_t>(k));
        const auto traj = generate_trajectory(obj, tk_steps, TrajectoryStep{}, cfg.sensor, rng);
        const TrackingRun run = run_tracking(m, obj, traj, cfg.pipeline, derive_seed(cfg.seed, "track", static_cast<std::uint64_t>(k)));
        for (std::size_t f = 0; f < traj.size(); ++f)
          os << k << ',' << f << ',' << run.track_error[f] << ',' << run.frame_error[f] << ',' << run.track_evals[f]
             << ',' << run.frame_evals[f] << '\n';
        std::printf("trajectory %d: median track %.4f mm, median per-frame %.4f mm\n", k, median_of(run.track_error),
                    median_of(run.frame_error));
      }
      return 0;
    }

    if (*un) {
      const EnergyModel m = load_energy_model(resolve(g, un_ckpt));
      const ObjectModel obj = load_object(resolve(g, un_object));
      Evaluator e;
      e.energy = &m;
      e.pipeline = cfg.pipeline;
      e.sensor = cfg.sensor;
      e.seed = derive_seed(cfg.seed, "uncertainty");
      auto os = open_out(resolve(g, un_out));
      os << "set,top1_mm,top3_mm,top5_mm,random_mm\n";
      double t1 = 0, t3 = 0, t5 = 0, rnd = 0;
      for (int k = 0; k < un_sets; ++k) {
        const auto grasps =
            generate_dataset(obj, static_cast<std::size_t>(un_size), cfg.sensor, derive_seed(cfg.seed, "grasp-set", static_cast<std::uint64_t>(k)));
        const GraspSetResult r = run_grasp_set(e, obj, grasps);
        os << k << ',' << r.top1 << ',' << r.top3 << ',' << r.top5 << ',' << r.random << '\n';
        t1 += r.top1;
        t3 += r.top3;
        t5 += r.top5;
        rnd += r.random;
      }
      std::printf("mean over %d sets: top1 %.4f top3 %.4f top5 %.4f random %.4f mm\n", un_sets, t1 / un_sets,
                  t3 / un_sets, t5 / un_sets, rnd / un_sets);
      return 0;
    }

    if (*ab) {
      const auto data = load_dataset(resolve(g, ab_data));
      const auto objects = load_objects(g, ab_objects);
      const EnergyModel m = load_energy_model(resolve(g, ab_ckpt));
      std::vector<Variant> variants;
      if (ab_sweep == "stages") {
        variants = stage_variants(cfg.pipeline);
      } else if (ab_sweep == "t0") {
        const auto values = parse_values(ab_values.empty() ? "0.4,0.6,0.8,1.0" : ab_values);
        for (double t : values)
          if (!(t > cfg.schedule.eps && t <= 1.0)) throw UsageError("t0 values must lie in (eps, 1]");
        variants = t0_variants(cfg.pipeline, values);
      } else {
        throw UsageError("--sweep must be 'stages' or 't0'");
      }
      Evaluator e;
      e.energy = &m;
      e.sensor = cfg.sensor;
      e.seed = derive_seed(cfg.seed, "eval");
      auto os = open_out(resolve(g, ab_out));
      os << "variant,n,median_mm,mean_mm,mean_candidate_mm,mean_rhs_evals\n";
      for (const auto& v : variants) {
        const auto recs = evaluate_variant(v, e, objects, data);
        std::vector<double> cand;
        double evals = 0;
        for (const auto& r : recs) {
          cand.push_back(r.mean_candidate_error);
          evals += static_cast<double>(r.rhs_evals);
        }
        const auto err = errors_of(recs);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%.17g\n", v.name.c_str(), recs.size(), median_of(err),
                      mean_of(err), mean_of(cand), evals / static_cast<double>(recs.size()));
        os << buf;
        std::printf("%s median %.4f mm\n", v.name.c_str(), median_of(err));
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
