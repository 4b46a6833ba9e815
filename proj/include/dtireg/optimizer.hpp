/*
 * Copyright 2026 the dtireg authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Limited-memory quasi-Newton minimizer: two-loop recursion with strong
// Wolfe line search (cubic-interpolation zoom). Convergence follows the
// |c_t - c_{t-1}| < epsilon rule, backed by a gradient-norm floor. Optional
// box bounds are handled by projection; the unbounded two-loop path is the
// hot one.

#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dtireg/errors.hpp"

namespace dtireg {

/// Computes the value at x; fills *grad when non-null.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct OptimizerConfig {
  int memory = 10;
  double epsilon = 0.01;  // successive-cost-difference stopping rule
  int max_iterations = 200;
  double sufficient_decrease = 1e-4;  // Wolfe c1
  double curvature = 0.9;             // Wolfe c2
  double gradient_floor = 1e-8;       // safety stop on max-norm of the gradient
  double initial_step = 1.0;
  bool has_bounds = false;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

enum class OptimizeStatus { converged, stationary, max_iterations, line_search_failed };

struct OptimizeResult {
  Eigen::VectorXd x;
  double cost = 0.0;
  std::vector<double> trace;  // cost at x0 followed by each accepted iterate
  int iterations = 0;
  OptimizeStatus status = OptimizeStatus::converged;
  std::string message;
};

namespace detail {

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const OptimizerConfig& cfg) {
  if (!cfg.has_bounds) return x;
  return x.cwiseMax(cfg.lower).cwiseMin(cfg.upper);
}

/// Zeroes gradient components that push against an active bound.
inline Eigen::VectorXd project_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                        const OptimizerConfig& cfg) {
  if (!cfg.has_bounds) return g;
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x(i) <= cfg.lower(i) && g(i) > 0.0) pg(i) = 0.0;
    if (x(i) >= cfg.upper(i) && g(i) < 0.0) pg(i) = 0.0;
  }
  return pg;
}

struct LbfgsHistory {
  std::deque<Eigen::VectorXd> s, y;
  std::deque<double> rho;

  void push(const Eigen::VectorXd& si, const Eigen::VectorXd& yi, int memory) {
    const double sy = si.dot(yi);
    if (!(sy > 1e-10 * si.norm() * yi.norm())) return;  // keep curvature positive
    s.push_back(si);
    y.push_back(yi);
    rho.push_back(1.0 / sy);
    while (static_cast<int>(s.size()) > memory) {
      s.pop_front();
      y.pop_front();
      rho.pop_front();
    }
  }

  /// Two-loop recursion: returns H*g (an approximation of the Newton step).
  Eigen::VectorXd apply(const Eigen::VectorXd& g) const {
    Eigen::VectorXd q = g;
    const int m = static_cast<int>(s.size());
    std::vector<double> alpha(static_cast<std::size_t>(m));
    for (int i = m - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] =
          rho[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    }
    if (m > 0) {
      const auto& yl = y[static_cast<std::size_t>(m - 1)];
      const double gamma = s[static_cast<std::size_t>(m - 1)].dot(yl) / yl.squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta =
          rho[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)].dot(q);
      q += (alpha[static_cast<std::size_t>(i)] - beta) * s[static_cast<std::size_t>(i)];
    }
    return q;
  }
};

/// Cubic minimizer of a 1D function known at (a, fa, da) and (b, fb, db),
/// with a bisection fallback when the interpolant is unusable.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db) {
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  if (disc < 0.0 || !std::isfinite(disc)) return 0.5 * (a + b);
  const double d2 = (b > a ? 1.0 : -1.0) * std::sqrt(disc);
  const double denom = db - da + 2.0 * d2;
  if (denom == 0.0) return 0.5 * (a + b);
  double t = b - (b - a) * (db + d2 - d1) / denom;
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double margin = 0.1 * (hi - lo);
  if (!(t > lo + margin && t < hi - margin)) t = 0.5 * (a + b);
  return t;
}

}  // namespace detail

/// Minimizes the objective from x0. The trace is monotone nonincreasing
/// (every accepted step satisfies the sufficient-decrease condition). A
/// line-search failure returns the best iterate so far with a warning
/// status, not an error; a non-finite objective at x0 is an error.
inline OptimizeResult minimize(const Objective& objective, const Eigen::VectorXd& x0,
                               const OptimizerConfig& cfg = {}) {
  if (cfg.memory < 1) throw ValidationError("optimizer: memory must be >= 1");
  if (!(cfg.epsilon > 0.0)) throw ValidationError("optimizer: epsilon must be > 0");
  if (cfg.has_bounds &&
      (cfg.lower.size() != x0.size() || cfg.upper.size() != x0.size()))
    throw ValidationError("optimizer: bounds must match the parameter size");

  OptimizeResult res;
  res.x = detail::project_box(x0, cfg);
  Eigen::VectorXd g(x0.size());
  double f = objective(res.x, &g);
  if (!std::isfinite(f) || !g.allFinite())
    throw OptimizationError("optimizer: non-finite objective or gradient at the initial point");
  res.cost = f;
  res.trace.push_back(f);

  detail::LbfgsHistory hist;
  const double c1 = cfg.sufficient_decrease, c2 = cfg.curvature;

  for (int t = 0; t < cfg.max_iterations; ++t) {
    const Eigen::VectorXd pg = detail::project_gradient(res.x, g, cfg);
    if (pg.lpNorm<Eigen::Infinity>() < cfg.gradient_floor) {
      res.status = OptimizeStatus::stationary;
      res.message = "gradient below floor";
      return res;
    }

    Eigen::VectorXd d = -hist.apply(pg);
    double dg = d.dot(pg);
    if (!(dg < 0.0)) {  // not a descent direction; reset to steepest descent
      d = -pg;
      dg = d.dot(pg);
    }

    // Strong Wolfe line search (bracket then zoom).
    const double f0 = f, dg0 = dg;
    double alpha = cfg.initial_step, alpha_prev = 0.0, f_prev = f0, dg_prev = dg0;
    double alpha_lo = -1.0, f_lo = 0.0, dg_lo = 0.0;
    double alpha_hi = -1.0, f_hi = 0.0, dg_hi = 0.0;
    bool need_zoom = false, accepted = false;
    Eigen::VectorXd x_try, g_try(x0.size());
    double f_try = 0.0;

    auto eval_at = [&](double a) {
      x_try = detail::project_box(res.x + a * d, cfg);
      f_try = objective(x_try, &g_try);
      return g_try.dot(d);
    };

    for (int ls = 0; ls < 20; ++ls) {
      const double dga = eval_at(alpha);
      if (!std::isfinite(f_try)) {  // retreat from bad regions
        alpha = 0.5 * (alpha_prev + alpha);
        continue;
      }
      if (f_try > f0 + c1 * alpha * dg0 || (ls > 0 && f_try >= f_prev)) {
        alpha_lo = alpha_prev; f_lo = f_prev; dg_lo = dg_prev;
        alpha_hi = alpha; f_hi = f_try; dg_hi = dga;
        need_zoom = true;
        break;
      }
      if (std::abs(dga) <= -c2 * dg0) {
        accepted = true;
        break;
      }
      if (dga >= 0.0) {
        alpha_lo = alpha; f_lo = f_try; dg_lo = dga;
        alpha_hi = alpha_prev; f_hi = f_prev; dg_hi = dg_prev;
        need_zoom = true;
        break;
      }
      alpha_prev = alpha; f_prev = f_try; dg_prev = dga;
      alpha *= 2.5;
    }

    if (need_zoom) {
      for (int z = 0; z < 30 && !accepted; ++z) {
        alpha = detail::cubic_step(alpha_lo, f_lo, dg_lo, alpha_hi, f_hi, dg_hi);
        if (std::abs(alpha_hi - alpha_lo) < 1e-16 * std::max(1.0, std::abs(alpha_lo))) break;
        const double dga = eval_at(alpha);
        if (f_try > f0 + c1 * alpha * dg0 || f_try >= f_lo) {
          alpha_hi = alpha; f_hi = f_try; dg_hi = dga;
        } else {
          if (std::abs(dga) <= -c2 * dg0) {
            accepted = true;
            break;
          }
          if (dga * (alpha_hi - alpha_lo) >= 0.0) {
            alpha_hi = alpha_lo; f_hi = f_lo; dg_hi = dg_lo;
          }
          alpha_lo = alpha; f_lo = f_try; dg_lo = dga;
        }
      }
      // Fall back to the best bracketed point if curvature never held but
      // sufficient decrease did.
      if (!accepted && alpha_lo > 0.0 && f_lo < f0 + c1 * alpha_lo * dg0) {
        accepted = true;
        eval_at(alpha_lo);
      }
    }

    if (!accepted || !(f_try < f0)) {
      res.status = OptimizeStatus::line_search_failed;
      res.message = "line search failed at iteration " + std::to_string(t) +
                    "; returning best-so-far";
      return res;
    }

    const Eigen::VectorXd s = x_try - res.x;
    const Eigen::VectorXd yv = g_try - g;
    hist.push(s, yv, cfg.memory);
    res.x = x_try;
    g = g_try;
    const double drop = f - f_try;
    f = f_try;
    res.cost = f;
    res.trace.push_back(f);
    res.iterations = t + 1;
    if (std::abs(drop) < cfg.epsilon) {
      res.status = OptimizeStatus::converged;
      res.message = "successive cost difference below epsilon";
      return res;
    }
  }
  res.status = OptimizeStatus::max_iterations;
  res.message = "reached max iterations";
  return res;
}

struct GradientCheck {
  double max_rel = 0.0;      // worst |analytic - central| / max-norm(central)
  Eigen::Index worst_index = -1;
  Eigen::VectorXd central;   // finite-difference gradient
  double fd_scale = 0.0;     // max-norm of the central-difference gradient
};

/// Compares the objective's analytic gradient against central differences,
/// component-wise, normalized by the finite-difference gradient scale.
inline GradientCheck check_gradient(const Objective& objective, const Eigen::VectorXd& x,
                                    double h) {
  if (!(h > 0.0)) throw ValidationError("check_gradient: h must be > 0");
  Eigen::VectorXd analytic(x.size());
  objective(x, &analytic);
  GradientCheck chk;
  chk.central.resize(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = objective(xp, nullptr);
    xp(i) = x(i) - h;
    const double fm = objective(xp, nullptr);
    xp(i) = x(i);
    chk.central(i) = (fp - fm) / (2.0 * h);
  }
  chk.fd_scale = chk.central.lpNorm<Eigen::Infinity>();
  const double denom = std::max(chk.fd_scale, 1e-300);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double rel = std::abs(analytic(i) - chk.central(i)) / denom;
    if (rel > chk.max_rel) {
      chk.max_rel = rel;
      chk.worst_index = i;
    }
  }
  return chk;
}

}  // namespace dtireg
