#pragma once

// Run configuration: every module config plus a master seed in one flat
// `section.key = value` text document. Unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "diffusion.hpp"
#include "energynet.hpp"
#include "errors.hpp"
#include "geom.hpp"
#include "pipeline.hpp"
#include "simulator.hpp"

namespace ebmpose {

struct RunConfig {
  std::uint64_t seed = 0;
  SensorConfig sensor;
  NoiseSchedule schedule;
  ArchConfig arch;
  TrainConfig train;
  PipelineConfig pipeline;  // pipeline.prior holds the prior settings

  void validate() const {
    sensor.validate();
    schedule.validate();
    arch.validate();
    train.validate();
    pipeline.validate(schedule);
  }
};

namespace detail {

struct Binding {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
T parse_number(const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw ConfigError("'" + s + "' is not a valid number");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("'" + s + "' is not a boolean");
}

inline Binding bind(double& v) {
  return {[&v] { return fmt_double(v); }, [&v](const std::string& s) { v = parse_number<double>(s); }};
}
inline Binding bind(int& v) {
  return {[&v] { return std::to_string(v); }, [&v](const std::string& s) { v = parse_number<int>(s); }};
}
inline Binding bind(unsigned& v) {
  return {[&v] { return std::to_string(v); }, [&v](const std::string& s) { v = parse_number<unsigned>(s); }};
}
inline Binding bind(std::uint64_t& v) {
  return {[&v] { return std::to_string(v); }, [&v](const std::string& s) { v = parse_number<std::uint64_t>(s); }};
}
inline Binding bind(bool& v) {
  return {[&v] { return std::string(v ? "true" : "false"); }, [&v](const std::string& s) { v = parse_bool(s); }};
}

/// Ordered key table; the order is also the serialization order.
inline std::vector<std::pair<std::string, Binding>> bindings(RunConfig& c) {
  return {
      {"seed", bind(c.seed)},
      {"sensor.grid_h", bind(c.sensor.grid_h)},
      {"sensor.grid_w", bind(c.sensor.grid_w)},
      {"sensor.plate_half_gap", bind(c.sensor.plate_half_gap)},
      {"sensor.pixel_pitch", bind(c.sensor.pixel_pitch)},
      {"sensor.max_depth", bind(c.sensor.max_depth)},
      {"schedule.sigma_min", bind(c.schedule.sigma_min)},
      {"schedule.sigma_max", bind(c.schedule.sigma_max)},
      {"schedule.eps", bind(c.schedule.eps)},
      {"arch.enc_hidden", bind(c.arch.enc_hidden)},
      {"arch.enc_out", bind(c.arch.enc_out)},
      {"arch.pn_points", bind(c.arch.pn_points)},
      {"arch.pn_hidden", bind(c.arch.pn_hidden)},
      {"arch.pn_out", bind(c.arch.pn_out)},
      {"arch.time_freqs", bind(c.arch.time_freqs)},
      {"arch.time_out", bind(c.arch.time_out)},
      {"arch.fusion_hidden", bind(c.arch.fusion_hidden)},
      {"arch.workspace", bind(c.arch.workspace)},
      {"arch.nominal_indent", bind(c.arch.nominal_indent)},
      {"train.batch_size", bind(c.train.batch_size)},
      {"train.n_steps", bind(c.train.n_steps)},
      {"train.learning_rate", bind(c.train.learning_rate)},
      {"train.aug", bind(c.train.aug)},
      {"train.mask_prob", bind(c.train.mask_prob)},
      {"train.grad_clip", bind(c.train.grad_clip)},
      {"train.lr_final_frac", bind(c.train.lr_final_frac)},
      {"prior.level", bind(c.pipeline.prior.level)},
      {"prior.n_inplane", bind(c.pipeline.prior.n_inplane)},
      {"prior.sigma_prior", bind(c.pipeline.prior.sigma_prior)},
      {"prior.num_candidates", bind(c.pipeline.prior.num_candidates)},
      {"prior.replicate", bind(c.pipeline.prior.replicate)},
      {"pipeline.K", bind(c.pipeline.K)},
      {"pipeline.t0_est", bind(c.pipeline.t0_est)},
      {"pipeline.t0_track", bind(c.pipeline.t0_track)},
      {"pipeline.sigma_track", bind(c.pipeline.sigma_track)},
      {"pipeline.prefilter", bind(c.pipeline.stages.prefilter)},
      {"pipeline.refine", bind(c.pipeline.stages.refine)},
      {"pipeline.postrank", bind(c.pipeline.stages.postrank)},
      {"pipeline.ode_rel", bind(c.pipeline.ode_tol.rel)},
      {"pipeline.ode_abs", bind(c.pipeline.ode_tol.abs)},
      {"pipeline.t_select", bind(c.pipeline.t_select)},
      {"pipeline.stale_render", bind(c.pipeline.stale_render)},
      {"pipeline.threads", bind(c.pipeline.threads)},
  };
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`. '#' starts a comment.
inline RunConfig parse_run_config(std::istream& is, RunConfig base = {}) {
  auto table = detail::bindings(base);
  std::map<std::string, detail::Binding*> by_key;
  for (auto& [k, b] : table) by_key[k] = &b;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(no, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ParseError(no, "unknown key '" + key + "'");
    if (seen.count(key)) throw ParseError(no, "duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
    seen[key] = no;
    try {
      it->second->set(value);
    } catch (const ConfigError& e) {
      throw ParseError(no, key + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  std::istringstream is(text);
  return parse_run_config(is, std::move(base));
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  return parse_run_config(is);
}

inline void write_run_config(std::ostream& os, const RunConfig& c) {
  RunConfig copy = c;
  for (const auto& [k, b] : detail::bindings(copy)) os << k << " = " << b.get() << '\n';
}

inline std::string to_string(const RunConfig& c) {
  std::ostringstream os;
  write_run_config(os, c);
  return os.str();
}

}  // namespace ebmpose
