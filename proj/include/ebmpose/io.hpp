#pragma once

// Dataset files, per-sample metrics (JSON lines) and summary CSV.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "errors.hpp"
#include "geom.hpp"
#include "simulator.hpp"

namespace ebmpose {

// ---------------------------------------------------------------------------
// Dataset: header line, then one `sample` record per line.
//   sample <object_id> R <9 row-major> t <3> imprint <k> <h> <w>
//     present <k> plate <k> depth <k*h*w>
// Depths are written with 4 decimals (0.1 um), the format's resolution.

inline constexpr double kDepthSteps = 1e4;  // per mm

// k / 1e4 is the double nearest the 4-decimal text, so parsing gives it back.
inline double quantize_depth(double d) { return std::round(d * kDepthSteps) / kDepthSteps; }

/// Rounds depths to what the dataset format stores, so write/read is exact.
inline void quantize_imprint(TactileImprint& imp) {
  for (double& d : imp.depth) d = quantize_depth(d);
  imp.recompute_contact();
}

inline void write_sample(std::ostream& os, const Sample& s) {
  if (s.object_id.empty() || s.object_id.find_first_of(" \t\n") != std::string::npos)
    throw BadSpec("object ids must be non-empty and contain no whitespace");
  const TactileImprint& m = s.imprint;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << ' ' << buf;
  };
  os << "sample " << s.object_id << " R";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) num(s.pose.rotation(r, c));
  os << " t";
  for (int a = 0; a < 3; ++a) num(s.pose.translation[a]);
  os << " imprint " << m.k << ' ' << m.h << ' ' << m.w << " present";
  for (int i = 0; i < m.k; ++i) os << ' ' << (m.present[i] ? 1 : 0);
  os << " plate";
  for (int i = 0; i < m.k; ++i) num(m.plate_surface[i]);
  os << " depth";
  for (double d : m.depth) {
    std::snprintf(buf, sizeof buf, "%.4f", d);
    os << ' ' << buf;
  }
  os << '\n';
}

inline void write_dataset(std::ostream& os, const std::vector<Sample>& data) {
  os << "ebmpose-dataset v1\n";
  for (const auto& s : data) write_sample(os, s);
  if (!os) throw Error("dataset write failed");
}

inline Sample parse_sample(const std::string& line, std::size_t no) {
  std::istringstream ss(line);
  auto keyword = [&](const char* k) {
    std::string got;
    if (!(ss >> got) || got != k) throw ParseError(no, std::string("expected '") + k + "'");
  };
  auto number = [&](const char* what) {
    double v;
    if (!(ss >> v)) throw ParseError(no, std::string("bad or missing ") + what);
    return v;
  };
  auto count = [&](const char* what) {
    int v;
    if (!(ss >> v) || v < 1 || v > 4096) throw ParseError(no, std::string("bad ") + what);
    return v;
  };
  Sample s;
  keyword("sample");
  if (!(ss >> s.object_id)) throw ParseError(no, "missing object id");
  keyword("R");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) s.pose.rotation(r, c) = number("rotation entry");
  keyword("t");
  for (int a = 0; a < 3; ++a) s.pose.translation[a] = number("translation entry");
  keyword("imprint");
  const int k = count("sensor count"), h = count("grid height"), w = count("grid width");
  if (k != kNumSensors) throw ParseError(no, "imprints must have " + std::to_string(kNumSensors) + " sensors");
  TactileImprint imp(h, w);
  keyword("present");
  for (int i = 0; i < k; ++i) {
    const double p = number("present flag");
    if (p != 0.0 && p != 1.0) throw ParseError(no, "present flags must be 0 or 1");
    imp.present[static_cast<std::size_t>(i)] = p == 1.0;
  }
  keyword("plate");
  for (int i = 0; i < k; ++i) imp.plate_surface[static_cast<std::size_t>(i)] = number("plate surface");
  keyword("depth");
  for (double& d : imp.depth) d = number("depth value");
  std::string extra;
  if (ss >> extra) throw ParseError(no, "unexpected trailing field '" + extra + "'");
  for (double v : imp.depth)
    if (!std::isfinite(v) || v < 0) throw ParseError(no, "depth values must be finite and non-negative");
  imp.recompute_contact();
  s.imprint = std::move(imp);
  return s;
}

inline std::vector<Sample> read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "empty dataset file");
  if (line.rfind("ebmpose-dataset", 0) != 0) throw ParseError(1, "not a dataset file");
  if (line != "ebmpose-dataset v1") throw VersionMismatch("unsupported dataset version: " + line);
  std::vector<Sample> out;
  std::size_t no = 1;
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    out.push_back(parse_sample(line, no));
  }
  return out;
}

inline void save_dataset(const std::string& path, const std::vector<Sample>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  write_dataset(os, data);
}

inline std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  std::string method;
  std::string object_id;
  int sample = 0;
  double error_mm = 0.0;
  std::string metric;   // "ADD" or "ADD-S"
  double s2 = 0.0;      // candidate spread, mm (0 for single-output methods)
  double seconds = 0.0;
  long rhs_evals = 0;
  long accepted_steps = 0;
  long rejected_steps = 0;
  double mean_candidate_error = 0.0;  // mean error of the refined candidates (ours only)
  std::vector<double> energies;
  RigidPose pose;
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["object_id"] = r.object_id;
  j["sample"] = r.sample;
  j["error_mm"] = r.error_mm;
  j["metric"] = r.metric;
  j["s2"] = r.s2;
  j["seconds"] = r.seconds;
  j["rhs_evals"] = r.rhs_evals;
  j["accepted_steps"] = r.accepted_steps;
  j["rejected_steps"] = r.rejected_steps;
  j["mean_candidate_error"] = r.mean_candidate_error;
  j["energies"] = r.energies;
  std::vector<double> R, t;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) R.push_back(r.pose.rotation(a, b));
  for (int a = 0; a < 3; ++a) t.push_back(r.pose.translation[a]);
  j["pose"] = {{"R", R}, {"t", t}};
  return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.method = j.at("method").get<std::string>();
  r.object_id = j.at("object_id").get<std::string>();
  r.sample = j.at("sample").get<int>();
  r.error_mm = j.at("error_mm").get<double>();
  r.metric = j.at("metric").get<std::string>();
  r.s2 = j.at("s2").get<double>();
  r.seconds = j.at("seconds").get<double>();
  r.rhs_evals = j.at("rhs_evals").get<long>();
  r.accepted_steps = j.at("accepted_steps").get<long>();
  r.rejected_steps = j.at("rejected_steps").get<long>();
  r.mean_candidate_error = j.at("mean_candidate_error").get<double>();
  r.energies = j.at("energies").get<std::vector<double>>();
  const auto R = j.at("pose").at("R").get<std::vector<double>>();
  const auto t = j.at("pose").at("t").get<std::vector<double>>();
  if (R.size() != 9 || t.size() != 3) throw Error("pose must have 9 rotation and 3 translation entries");
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) r.pose.rotation(a, b) = R[static_cast<std::size_t>(3 * a + b)];
    r.pose.translation[a] = t[static_cast<std::size_t>(a)];
  }
  return r;
}

inline void write_metrics(std::ostream& os, const std::vector<MetricsRecord>& recs) {
  for (const auto& r : recs) os << to_json(r).dump() << '\n';
}

inline std::vector<MetricsRecord> read_metrics(std::istream& is) {
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(no, e.what());
    } catch (const Error& e) {
      throw ParseError(no, e.what());
    }
  }
  return out;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct SummaryRow {
  std::string method, object_id, metric;
  std::size_t n = 0;
  double median = 0.0, mean = 0.0;
};

/// One row per (method, object), in first-seen order.
inline std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& recs) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<double>> errs;
  std::map<std::pair<std::string, std::string>, std::string> kind;
  for (const auto& r : recs) {
    const auto key = std::make_pair(r.method, r.object_id);
    if (!errs.count(key)) order.push_back(key);
    errs[key].push_back(r.error_mm);
    kind[key] = r.metric;
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& e = errs[key];
    out.push_back({key.first, key.second, kind[key], e.size(), median_of(e), mean_of(e)});
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  char buf[64];
  os << "method,object_id,metric,n,median_mm,mean_mm\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.object_id << ',' << r.metric << ',' << r.n;
    std::snprintf(buf, sizeof buf, ",%.17g", r.median);
    os << buf;
    std::snprintf(buf, sizeof buf, ",%.17g", r.mean);
    os << buf << '\n';
  }
}

}  // namespace ebmpose
