#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "errors.hpp"
#include "geom.hpp"
#include "random.hpp"

namespace ebmpose {

/// Geometric variance-exploding schedule sigma(t) = smin * (smax / smin)^t.
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 1.0;
  double eps = 1e-5;

  void validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) throw ConfigError("schedule: need 0 < sigma_min < sigma_max");
    if (!(eps > 0.0) || !(eps < 1.0)) throw ConfigError("schedule: eps must lie in (0, 1)");
  }

  double log_ratio() const { return std::log(sigma_max / sigma_min); }

  void check(double t) const {
    if (!(t >= eps && t <= 1.0)) throw DomainError("schedule: t = " + std::to_string(t) + " outside [eps, 1]");
  }

  double sigma(double t) const {
    check(t);
    return sigma_min * std::pow(sigma_max / sigma_min, t);
  }
  /// sigma * dsigma/dt
  double drift_coeff(double t) const {
    const double s = sigma(t);
    return s * s * log_ratio();
  }
  double lambda(double t) const {
    const double s = sigma(t);
    return s * s;
  }
};

struct Perturbed {
  Vec9 pt;
  Vec9 target;
};

/// pt = p0 + sigma z, target = (p0 - pt) / sigma^2.
inline Perturbed perturb_with(const Vec9& p0, double sigma, const Vec9& z) {
  Perturbed out;
  out.pt = p0 + sigma * z;
  out.target = (p0 - out.pt) / (sigma * sigma);
  return out;
}

inline Perturbed perturb(const Vec9& p0, double t, const NoiseSchedule& schedule, Rng& rng) {
  Vec9 z;
  for (int i = 0; i < 9; ++i) z[i] = normal(rng, 0.0, 1.0);
  return perturb_with(p0, schedule.sigma(t), z);
}

// ---- Dormand-Prince 5(4) ---------------------------------------------------------

struct OdeTolerance {
  double rel = 1e-3;
  double abs = 1e-4;
};

template <class State>
struct OdeReport {
  State final_state;
  int n_accepted_steps = 0;
  int n_rejected_steps = 0;
  int n_rhs_evals = 0;
};

namespace dopri {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// 5th minus embedded 4th order weights
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;

/// One step from (t, y) with k1 = f(t, y); returns y5, fills k7 = f(t + h, y5) and the error vector.
template <class State, class Rhs>
State step(const Rhs& f, double t, const State& y, const State& k1, double h, State& k7, State& err) {
  const State k2 = f(y + h * (a21 * k1), t + c2 * h);
  const State k3 = f(y + h * (a31 * k1 + a32 * k2), t + c3 * h);
  const State k4 = f(y + h * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * h);
  const State k5 = f(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * h);
  const State k6 = f(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + h);
  const State y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  k7 = f(y5, t + h);
  err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  return y5;
}

template <class State>
double error_norm(const State& err, const State& y0, const State& y1, const OdeTolerance& tol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = tol.abs + tol.rel * std::max(std::abs(y0[i]), std::abs(y1[i]));
    acc += (err[i] / sc) * (err[i] / sc);
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}
}  // namespace dopri

inline constexpr double kMinStep = 1e-12;

/// Adaptive Dormand-Prince integration of dy/dt = f(y, t) from t0 to t_end
/// (either direction).
template <class State, class Rhs>
OdeReport<State> integrate_ode(const Rhs& f, const State& y_init, double t0, double t_end,
                               const OdeTolerance& tol = {}, int max_steps = 100000) {
  if (!(tol.rel > 0.0) || !(tol.abs > 0.0)) throw ConfigError("ode: tolerances must be positive");
  OdeReport<State> rep;
  rep.final_state = y_init;
  if (t0 == t_end) return rep;
  const double dir = t_end > t0 ? 1.0 : -1.0;
  const double span = std::abs(t_end - t0);
  auto rhs = [&](const State& y, double t) {
    ++rep.n_rhs_evals;
    return State(f(y, t));
  };

  State y = y_init;
  double t = t0;
  State k1 = rhs(y, t);

  // Initial step size (Hairer, Norsett & Wanner, II.4).
  double h;
  {
    auto scaled_norm = [&](const State& v) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double sc = tol.abs + tol.rel * std::abs(y[i]);
        acc += (v[i] / sc) * (v[i] / sc);
      }
      return std::sqrt(acc / static_cast<double>(v.size()));
    };
    const double d0 = scaled_norm(y), d1 = scaled_norm(k1);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    if (!std::isfinite(h0)) h0 = 1e-6;
    h0 = std::min(h0, span);
    const State k2 = rhs(State(y + dir * h0 * k1), t + dir * h0);
    const double d2 = scaled_norm(State(k2 - k1)) / h0;
    const double m = std::max(d1, d2);
    const double h1 = m <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / m, 1.0 / 5.0);
    h = std::min({100 * h0, h1, span});
    if (!std::isfinite(h)) h = h0;
  }

  State k7 = k1, err = k1;
  while (dir * (t_end - t) > 0.0) {
    if (rep.n_accepted_steps + rep.n_rejected_steps >= max_steps)
      throw StepSizeUnderflow("ode: step budget exhausted at t = " + std::to_string(t));
    const double remaining = std::abs(t_end - t);
    const bool last = h >= remaining;
    const double hs = last ? remaining : h;
    const State y_new = dopri::step(rhs, t, y, k1, dir * hs, k7, err);
    const double en = dopri::error_norm(err, y, y_new, tol);
    if (std::isfinite(en) && en <= 1.0) {
      t = last ? t_end : t + dir * hs;
      y = y_new;
      k1 = k7;
      ++rep.n_accepted_steps;
      const double fac = en == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 10.0);
      h = hs * fac;
    } else {
      ++rep.n_rejected_steps;
      const double fac = std::isfinite(en) ? std::clamp(0.9 * std::pow(en, -0.2), 0.2, 1.0) : 0.2;
      h = hs * fac;
      if (!(h >= kMinStep)) throw StepSizeUnderflow("ode: step size " + std::to_string(h) + " below 1e-12");
    }
  }
  rep.final_state = y;
  return rep;
}

/// Fixed-step Dormand-Prince (5th-order solution, no error control).
template <class State, class Rhs>
State integrate_ode_fixed(const Rhs& f, const State& y_init, double t0, double t_end, int n_steps) {
  if (n_steps < 1) throw ConfigError("ode: n_steps must be >= 1");
  const double h = (t_end - t0) / n_steps;
  State y = y_init, k7 = y_init, err = y_init;
  State k1 = f(y, t0);
  for (int i = 0; i < n_steps; ++i) {
    y = dopri::step(f, t0 + i * h, y, k1, h, k7, err);
    k1 = k7;
  }
  return y;
}

using ScoreFn = std::function<Vec9(const Vec9&, double)>;

/// Probability-flow ODE dp/dt = -drift(t) * score(p, t), integrated from t0 down to t_end.
inline OdeReport<Vec9> integrate_pf_ode(const ScoreFn& score,
                                        const NoiseSchedule& schedule, const Vec9& p_init, double t0,
                                        double t_end, const OdeTolerance& tol = {}) {
  if (!(t0 > t_end) || t_end < schedule.eps) throw DomainError("pf-ode: need t0 > t_end >= eps");
  schedule.check(t0);
  auto rhs = [&](const Vec9& p, double t) -> Vec9 {
    // Stages never leave [t_end, t0] but rounding can nudge t below eps.
    const double tc = std::clamp(t, schedule.eps, 1.0);
    return -schedule.drift_coeff(tc) * score(p, tc);
  };
  return integrate_ode<Vec9>(rhs, p_init, t0, t_end, tol);
}

}  // namespace ebmpose
