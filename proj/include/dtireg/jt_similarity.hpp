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

// Tsallis entropy, the Jensen-Tsallis divergence/similarity, joint-histogram
// estimation between a fixed and a transformed moving image, and the
// analytic gradient of the multicomponent similarity with respect to the
// B-spline deformation coefficients.
//
// The joint estimator is Mattes-style Parzen windowing: a zero-order window
// on fixed-intensity rows and a cubic B-spline window on moving-intensity
// columns, which makes the cost C2 in the transform parameters. The n
// distributions entering the JT measure are the conditional rows
// p(moving-bin | fixed-bin), weighted by the fixed marginal. With those
// inputs the JT divergence is a Tsallis mutual information: it is largest
// at alignment, so registration MINIMIZES the similarity S = 1 - D/log_a(n).
//
// Gradient (alpha = 2): with P the joint matrix, w_a its row sums, and m_b
// its column sums,
//   D = sum_ab P_ab^2 / w_a - sum_b m_b^2,
//   dD/dP_ab = 2 p_ab - sum_j p_aj^2 - 2 m_b   (p = conditional row),
// and dP_ab/dmu flows through the moving Parzen window derivative, the
// moving image's spatial gradient and the B-spline basis of the transform.
// The included-voxel set and the occupied-row count are piecewise constant
// in mu and treated as constants, as in standard Parzen MI implementations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dtireg/bspline.hpp"
#include "dtireg/errors.hpp"
#include "dtireg/ffd.hpp"
#include "dtireg/optimizer.hpp"
#include "dtireg/volume.hpp"

namespace dtireg {

// ---------------------------------------------------------------------------
// JT calculus over explicit distributions
// ---------------------------------------------------------------------------

inline void validate_distribution(const Eigen::VectorXd& p) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) < -1e-12 || !std::isfinite(p(i)))
      throw ValidationError("distribution entries must be nonnegative and finite");
    sum += p(i);
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("distribution must sum to 1");
}

inline void validate_entropic_index(double alpha) {
  if (!(alpha > 0.0) || alpha == 1.0)
    throw ValidationError("entropic index must lie in (0,1) or (1,inf)");
}

/// alpha-logarithm: (1-alpha)^-1 (x^(1-alpha) - 1); log_a(1) = 0.
inline double alpha_log(double x, double alpha) {
  validate_entropic_index(alpha);
  if (!(x > 0.0)) throw ValidationError("alpha_log: argument must be positive");
  return (std::pow(x, 1.0 - alpha) - 1.0) / (1.0 - alpha);
}

/// Tsallis entropy H_a(p) = (1-a)^-1 (sum p^a - 1); for a=2 this is
/// 1 - sum p^2.
inline double tsallis_entropy(const Eigen::VectorXd& p, double alpha) {
  validate_entropic_index(alpha);
  validate_distribution(p);
  double s = 0.0;
  if (alpha == 2.0) {
    s = p.squaredNorm();
  } else {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p(i) > 0.0) s += std::pow(p(i), alpha);
  }
  return (s - 1.0) / (1.0 - alpha);
}

inline void validate_weights(const Eigen::VectorXd& w) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) < 0.0 || !std::isfinite(w(i)))
      throw ValidationError("weights must be nonnegative and finite");
    sum += w(i);
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("weights must sum to 1");
}

/// JT divergence H_a(sum w_i p_i) - sum w_i H_a(p_i); nonnegative for a=2
/// by convexity of sum p^2.
inline double jt_divergence(const std::vector<Eigen::VectorXd>& ps, const Eigen::VectorXd& w,
                            double alpha) {
  validate_entropic_index(alpha);
  if (ps.empty()) throw ValidationError("jt_divergence: needs at least one distribution");
  if (static_cast<Eigen::Index>(ps.size()) != w.size())
    throw ValidationError("jt_divergence: weight count must match distribution count");
  validate_weights(w);
  const Eigen::Index len = ps.front().size();
  Eigen::VectorXd mix = Eigen::VectorXd::Zero(len);
  double hsum = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].size() != len) throw ValidationError("jt_divergence: distribution length mismatch");
    const double wi = w(static_cast<Eigen::Index>(i));
    mix += wi * ps[i];
    if (wi > 0.0) hsum += wi * tsallis_entropy(ps[i], alpha);
  }
  return tsallis_entropy(mix, alpha) - hsum;
}

/// JT similarity 1 - D_a^w / log_a(n) over n >= 2 distributions. Equals 1
/// when all distributions coincide; for the registration conditionals it is
/// minimal at alignment (see file header).
inline double jt_similarity(const std::vector<Eigen::VectorXd>& ps, const Eigen::VectorXd& w,
                            double alpha) {
  if (ps.size() < 2) throw ValidationError("jt_similarity: needs n >= 2 distributions");
  return 1.0 - jt_divergence(ps, w, alpha) / alpha_log(static_cast<double>(ps.size()), alpha);
}

// ---------------------------------------------------------------------------
// Joint histogram estimation
// ---------------------------------------------------------------------------

/// Robust intensity window: [lo, hi] percentiles of the samples.
inline std::pair<double, double> percentile_window(const std::vector<double>& samples,
                                                   double lo = 0.01, double hi = 0.99) {
  if (samples.empty()) throw ValidationError("percentile_window: empty sample set");
  std::vector<double> v = samples;
  const auto pick = [&](double q) {
    const std::size_t idx = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(v.size() - 1)));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
    return v[idx];
  };
  const double a = pick(lo), b = pick(hi);
  return {a, b};
}

/// Smoothed joint distribution between fixed-intensity rows and
/// moving-intensity columns, with the bin-mapping metadata the gradient
/// needs. Total mass is 1 over the included voxels.
struct JointDistribution {
  Eigen::MatrixXd bins;            // n_f x n_m
  Eigen::VectorXd fixed_marginal;  // row sums (the weight vector omega)
  std::pair<double, double> fixed_window{0.0, 0.0};
  std::pair<double, double> moving_window{0.0, 0.0};
  double fixed_bin_width = 1.0;
  double moving_bin_width = 1.0;  // Mattes padded mapping (2 margin bins per side)
  int parzen_order_fixed = 0;
  int parzen_order_moving = 3;
  std::size_t included = 0;
  std::size_t excluded = 0;

  std::vector<int> occupied_rows() const {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < fixed_marginal.size(); ++i)
      if (fixed_marginal(i) > 0.0) rows.push_back(static_cast<int>(i));
    return rows;
  }

  Eigen::VectorXd conditional_row(int i) const {
    if (!(fixed_marginal(i) > 0.0))
      throw DegenerateError("joint distribution: conditional of an empty row");
    return bins.row(i).transpose() / fixed_marginal(i);
  }

  void validate() const {
    if (bins.rows() < 1 || bins.cols() < 1)
      throw ValidationError("joint distribution: empty bin matrix");
    double total = 0.0;
    for (Eigen::Index i = 0; i < bins.rows(); ++i)
      for (Eigen::Index j = 0; j < bins.cols(); ++j) {
        if (bins(i, j) < -1e-15 || !std::isfinite(bins(i, j)))
          throw ValidationError("joint distribution: negative or non-finite bin");
        total += bins(i, j);
      }
    if (std::abs(total - 1.0) > 1e-8)
      throw ValidationError("joint distribution: total mass must be 1");
    for (Eigen::Index i = 0; i < bins.rows(); ++i)
      if (std::abs(bins.row(i).sum() - fixed_marginal(i)) > 1e-9)
        throw ValidationError("joint distribution: marginal inconsistent with rows");
  }
};

namespace detail {

inline int fixed_bin(double v, double lo, double hi, int nbins) {
  if (!(hi > lo)) return 0;
  int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * nbins));
  if (b < 0) b = 0;
  if (b > nbins - 1) b = nbins - 1;
  return b;
}

/// Mattes-style padded moving-bin term: values map into [2, n_m - 2] so the
/// full 4-tap cubic window always stays inside [1, n_m - 1].
struct MovingBinMap {
  double lo = 0.0, hi = 0.0, width = 1.0;
  int nbins = 0;
  bool flat = false;  // degenerate window: everything in one column

  static MovingBinMap make(std::pair<double, double> window, int nbins) {
    MovingBinMap m;
    m.lo = window.first;
    m.hi = window.second;
    m.nbins = nbins;
    if (!(m.hi > m.lo)) {
      m.flat = true;
      m.width = 1.0;
    } else {
      m.width = (m.hi - m.lo) / static_cast<double>(nbins - 4);
    }
    return m;
  }

  /// Returns the continuous bin term and whether the value was clamped to
  /// the window (clamped samples carry no intensity gradient).
  double term(double v, bool& clamped) const {
    if (flat) {
      clamped = true;
      return static_cast<double>(nbins) / 2.0;
    }
    clamped = !(v > lo && v < hi);
    double c = v;
    if (c < lo) c = lo;
    if (c > hi) c = hi;
    return (c - lo) / width + 2.0;
  }

  int first_tap(double t) const {
    int idx = static_cast<int>(std::floor(t));
    if (idx < 2) idx = 2;
    if (idx > nbins - 3) idx = nbins - 3;
    return idx - 1;
  }
};

}  // namespace detail

/// Accumulates the Parzen joint histogram between `fixed` and the moving
/// image sampled through `transform` at every fixed voxel. Voxels mapping
/// outside the moving volume are excluded and counted.
template <typename TransformT>
JointDistribution build_joint(const ScalarVolume& fixed, const ScalarVolume& moving,
                              const TransformT& transform, int bins_fixed = 32,
                              int bins_moving = 32, double window_lo = 0.01,
                              double window_hi = 0.99) {
  fixed.validate();
  moving.validate();
  if (bins_fixed < 8 || bins_moving < 8)
    throw ValidationError("build_joint: needs at least 8 bins per axis");

  JointDistribution jd;
  jd.bins = Eigen::MatrixXd::Zero(bins_fixed, bins_moving);
  jd.fixed_window = percentile_window(fixed.samples, window_lo, window_hi);
  jd.moving_window = percentile_window(moving.samples, window_lo, window_hi);
  jd.fixed_bin_width = (jd.fixed_window.second - jd.fixed_window.first) / bins_fixed;
  const auto mmap = detail::MovingBinMap::make(jd.moving_window, bins_moving);
  jd.moving_bin_width = mmap.width;

  const CubicInterpolator interp(moving);
  CubicSampleWeights sw;
  const GridGeometry& g = fixed.geom;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Eigen::Vector3d y = transform.transform_point(g.position(i, j, k));
        if (!interp.weights_at(y, sw)) {
          ++jd.excluded;
          continue;
        }
        ++jd.included;
        const int row = detail::fixed_bin(fixed.samples[g.index(i, j, k)], jd.fixed_window.first,
                                          jd.fixed_window.second, bins_fixed);
        bool clamped = false;
        const double t = mmap.term(interp.value(sw), clamped);
        const int b0 = mmap.first_tap(t);
        for (int m = 0; m < 4; ++m)
          jd.bins(row, b0 + m) += bspline3(static_cast<double>(b0 + m) - t);
      }
  if (jd.included == 0)
    throw DegenerateError("build_joint: degenerate overlap (all voxels map outside)");
  jd.bins /= static_cast<double>(jd.included);
  jd.fixed_marginal = jd.bins.rowwise().sum();
  return jd;
}

/// JT similarity of one component: conditional rows as the n distributions,
/// the fixed marginal as the weight vector, n = occupied fixed bins.
inline double component_similarity(const JointDistribution& joint, double alpha) {
  joint.validate();
  validate_entropic_index(alpha);
  const auto rows = joint.occupied_rows();
  const int n = static_cast<int>(rows.size());
  if (n < 2)
    throw DegenerateError("component_similarity: fewer than 2 occupied fixed bins");
  // mixture of conditionals under omega weights == the moving marginal
  const Eigen::VectorXd mix = joint.bins.colwise().sum().transpose();
  double hsum = 0.0;
  for (int r : rows)
    hsum += joint.fixed_marginal(r) * tsallis_entropy(joint.conditional_row(r), alpha);
  const double d = tsallis_entropy(mix, alpha) - hsum;
  return 1.0 - d / alpha_log(static_cast<double>(n), alpha);
}

// ---------------------------------------------------------------------------
// Multicomponent objective with analytic gradient (alpha = 2)
// ---------------------------------------------------------------------------

struct JtConfig {
  int bins_fixed = 32;
  int bins_moving = 32;
  double alpha = 2.0;
  double window_lo = 0.01;
  double window_hi = 0.99;
};

/// Evaluates the multicomponent JT similarity S_{L,a} = (1/L) sum S_l and,
/// for alpha = 2, its analytic gradient with respect to the FFD coefficient
/// vector. Fixed rows, intensity windows, moving-image spline coefficients
/// and the per-axis B-spline basis of the transform are cached once; each
/// evaluation runs a histogram pass and (for gradients) a scatter pass.
class JtObjective {
public:
  JtObjective(std::vector<ScalarVolume> fixed_components,
              const std::vector<ScalarVolume>& moving_components, const ControlGrid& grid,
              JtConfig cfg = {})
      : cfg_(cfg), transform_(grid) {
    if (fixed_components.empty() || fixed_components.size() != moving_components.size())
      throw ValidationError("jt objective: component lists must be nonempty and aligned");
    if (cfg_.bins_fixed < 8 || cfg_.bins_moving < 8)
      throw ValidationError("jt objective: needs at least 8 bins per axis");
    validate_entropic_index(cfg_.alpha);
    fixed_geom_ = fixed_components.front().geom;
    for (const auto& f : fixed_components)
      if (f.geom != fixed_geom_)
        throw ValidationError("jt objective: fixed components must share one geometry");
    const GridGeometry moving_geom = moving_components.front().geom;
    for (const auto& m : moving_components)
      if (m.geom != moving_geom)
        throw ValidationError("jt objective: moving components must share one geometry");

    nl_ = fixed_components.size();
    const std::size_t nvox = fixed_geom_.num_voxels();
    rows_.resize(nl_);
    for (std::size_t l = 0; l < nl_; ++l) {
      const auto& f = fixed_components[l];
      fixed_win_.push_back(percentile_window(f.samples, cfg_.window_lo, cfg_.window_hi));
      moving_win_.push_back(
          percentile_window(moving_components[l].samples, cfg_.window_lo, cfg_.window_hi));
      mmap_.push_back(detail::MovingBinMap::make(moving_win_.back(), cfg_.bins_moving));
      rows_[l].resize(nvox);
      for (std::size_t v = 0; v < nvox; ++v)
        rows_[l][v] = static_cast<std::uint16_t>(detail::fixed_bin(
            f.samples[v], fixed_win_.back().first, fixed_win_.back().second, cfg_.bins_fixed));
      moving_.emplace_back(moving_components[l]);
    }

    // Per-axis FFD basis cache over the fixed grid (independent of mu).
    const ControlGrid& cg = transform_.grid();
    for (int a = 0; a < 3; ++a) {
      fbase_[a].resize(static_cast<std::size_t>(fixed_geom_.dims[a]));
      fw_[a].resize(static_cast<std::size_t>(fixed_geom_.dims[a]));
      for (int i = 0; i < fixed_geom_.dims[a]; ++i) {
        const double x = fixed_geom_.origin[a] + i * fixed_geom_.spacing[a];
        const double u = (x - cg.grid_origin[a]) / cg.delta[a];
        int i0 = static_cast<int>(std::floor(u));
        if (i0 < 1) i0 = 1;
        if (i0 > cg.mesh_dims[a] - 3) i0 = cg.mesh_dims[a] - 3;
        bspline3_weights(u - i0, fw_[a][static_cast<std::size_t>(i)]);
        fbase_[a][static_cast<std::size_t>(i)] = i0 - 1;
      }
    }
    include_.resize(nvox);
    hist_.assign(nl_, Eigen::MatrixXd::Zero(cfg_.bins_fixed, cfg_.bins_moving));
  }

  std::size_t num_parameters() const { return transform_.grid().num_parameters(); }
  std::size_t num_components() const { return nl_; }
  const GridGeometry& fixed_geometry() const { return fixed_geom_; }
  std::size_t last_excluded() const { return excluded_; }
  std::size_t last_included() const { return included_; }

  /// Similarity value (any alpha) and, when grad != nullptr, the analytic
  /// gradient (alpha = 2 only; other alphas must use finite differences).
  double evaluate(const Eigen::VectorXd& mu, Eigen::VectorXd* grad) {
    if (grad && cfg_.alpha != 2.0)
      throw ValidationError(
          "jt objective: analytic gradient supports alpha=2 only; "
          "use the finite-difference fallback for other entropic indices");
    transform_.grid().set_parameters(mu);
    run_histogram_pass();

    double total = 0.0;
    if (grad) {
      grad->setZero(static_cast<Eigen::Index>(num_parameters()));
      gmat_.assign(nl_, Eigen::MatrixXd());
    }
    occupied_.assign(nl_, 0);
    for (std::size_t l = 0; l < nl_; ++l) total += component_value(l, grad != nullptr);
    total /= static_cast<double>(nl_);
    if (grad) run_scatter_pass(*grad);
    return total;
  }

  Objective as_objective() {
    return [this](const Eigen::VectorXd& mu, Eigen::VectorXd* grad) {
      return evaluate(mu, grad);
    };
  }

private:
  void run_histogram_pass() {
    const std::size_t nvox = fixed_geom_.num_voxels();
    for (auto& h : hist_) h.setZero();
    included_ = 0;
    excluded_ = 0;
    const CubicInterpolator& front = moving_.front();
    CubicSampleWeights sw;
    std::size_t vox = 0;
    for (int k = 0; k < fixed_geom_.dims[2]; ++k)
      for (int j = 0; j < fixed_geom_.dims[1]; ++j)
        for (int i = 0; i < fixed_geom_.dims[0]; ++i, ++vox) {
          const Eigen::Vector3d x = fixed_geom_.position(i, j, k);
          const Eigen::Vector3d y = x + displacement_at(i, j, k);
          if (!front.weights_at(y, sw)) {
            include_[vox] = 0;
            ++excluded_;
            continue;
          }
          include_[vox] = 1;
          ++included_;
          for (std::size_t l = 0; l < nl_; ++l) {
            bool clamped = false;
            const double t = mmap_[l].term(moving_[l].value(sw), clamped);
            const int b0 = mmap_[l].first_tap(t);
            auto& h = hist_[l];
            const int row = rows_[l][vox];
            for (int m = 0; m < 4; ++m)
              h(row, b0 + m) += bspline3(static_cast<double>(b0 + m) - t);
          }
        }
    if (included_ == 0)
      throw DegenerateError("jt objective: degenerate overlap (all voxels map outside)");
    for (auto& h : hist_) h /= static_cast<double>(included_);
    (void)nvox;
  }

  /// S_l for alpha=2 via D = sum P^2/w - sum m^2; also prepares the
  /// dS/dP matrix when requested. Other alphas go through the generic
  /// entropy route (value only).
  double component_value(std::size_t l, bool want_gradient) {
    const Eigen::MatrixXd& p = hist_[l];
    const Eigen::VectorXd omega = p.rowwise().sum();
    const Eigen::VectorXd m = p.colwise().sum().transpose();
    int n = 0;
    for (Eigen::Index r = 0; r < omega.size(); ++r)
      if (omega(r) > 0.0) ++n;
    occupied_[l] = n;
    if (n < 2)
      throw DegenerateError("jt objective: fewer than 2 occupied fixed bins in component " +
                            std::to_string(l));
    const double norm = alpha_log(static_cast<double>(n), cfg_.alpha);

    if (cfg_.alpha == 2.0) {
      double d = -m.squaredNorm();
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        if (!(omega(r) > 0.0)) continue;
        d += p.row(r).squaredNorm() / omega(r);
      }
      if (want_gradient) {
        // dS/dP_ab = -(2 p_ab - sum_j p_aj^2 - 2 m_b) / norm
        Eigen::MatrixXd gm = Eigen::MatrixXd::Zero(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          if (!(omega(r) > 0.0)) continue;
          const Eigen::RowVectorXd cond = p.row(r) / omega(r);
          const double rowsq = cond.squaredNorm();
          for (Eigen::Index b = 0; b < p.cols(); ++b)
            gm(r, b) = -(2.0 * cond(b) - rowsq - 2.0 * m(b)) / norm;
        }
        gmat_[l] = std::move(gm);
      }
      return 1.0 - d / norm;
    }

    double hsum = 0.0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (!(omega(r) > 0.0)) continue;
      double s = 0.0;
      for (Eigen::Index b = 0; b < p.cols(); ++b) {
        const double c = p(r, b) / omega(r);
        if (c > 0.0) s += std::pow(c, cfg_.alpha);
      }
      hsum += omega(r) * (s - 1.0) / (1.0 - cfg_.alpha);
    }
    double smix = 0.0;
    for (Eigen::Index b = 0; b < m.size(); ++b)
      if (m(b) > 0.0) smix += std::pow(m(b), cfg_.alpha);
    const double d = (smix - 1.0) / (1.0 - cfg_.alpha) - hsum;
    return 1.0 - d / norm;
  }

  void run_scatter_pass(Eigen::VectorXd& grad) {
    const double inv_n = 1.0 / static_cast<double>(included_);
    const double inv_l = 1.0 / static_cast<double>(nl_);
    const ControlGrid& cg = transform_.grid();
    const CubicInterpolator& front = moving_.front();
    CubicSampleWeights sw;
    std::size_t vox = 0;
    double value;
    Eigen::Vector3d img_grad;
    for (int k = 0; k < fixed_geom_.dims[2]; ++k)
      for (int j = 0; j < fixed_geom_.dims[1]; ++j)
        for (int i = 0; i < fixed_geom_.dims[0]; ++i, ++vox) {
          if (!include_[vox]) continue;
          const Eigen::Vector3d x = fixed_geom_.position(i, j, k);
          const Eigen::Vector3d y = x + displacement_at(i, j, k);
          if (!front.weights_at(y, sw)) continue;  // matches histogram pass
          Eigen::Vector3d accum = Eigen::Vector3d::Zero();
          for (std::size_t l = 0; l < nl_; ++l) {
            if (mmap_[l].flat) continue;
            bool clamped = false;
            moving_[l].value_and_gradient(sw, value, img_grad);
            const double t = mmap_[l].term(value, clamped);
            if (clamped) continue;  // windowed value carries no gradient
            const int b0 = mmap_[l].first_tap(t);
            const int row = rows_[l][vox];
            const Eigen::MatrixXd& gm = gmat_[l];
            double q = 0.0;
            for (int m = 0; m < 4; ++m)
              q += gm(row, b0 + m) * bspline3_deriv(static_cast<double>(b0 + m) - t);
            // d t / d value = 1 / width; d beta(b - t) / d t = -beta'(b - t)
            q *= -inv_n / mmap_[l].width;
            accum += (q * inv_l) * img_grad;
          }
          if (accum.isZero(0.0)) continue;
          scatter(i, j, k, accum, cg, grad);
        }
  }

  Eigen::Vector3d displacement_at(int i, int j, int k) const {
    const ControlGrid& cg = transform_.grid();
    const auto& wx = fw_[0][static_cast<std::size_t>(i)];
    const auto& wy = fw_[1][static_cast<std::size_t>(j)];
    const auto& wz = fw_[2][static_cast<std::size_t>(k)];
    const int bx = fbase_[0][static_cast<std::size_t>(i)];
    const int by = fbase_[1][static_cast<std::size_t>(j)];
    const int bz = fbase_[2][static_cast<std::size_t>(k)];
    double dx = 0.0, dy = 0.0, dz = 0.0;
    for (int mz = 0; mz < 4; ++mz)
      for (int my = 0; my < 4; ++my) {
        const std::size_t rowi = cg.index(bx, by + my, bz + mz);
        const double wyz = wy[static_cast<std::size_t>(my)] * wz[static_cast<std::size_t>(mz)];
        double sx = 0.0, sy = 0.0, sz = 0.0;
        for (int mx = 0; mx < 4; ++mx) {
          const double w = wx[static_cast<std::size_t>(mx)];
          sx += w * cg.coef[0][rowi + static_cast<std::size_t>(mx)];
          sy += w * cg.coef[1][rowi + static_cast<std::size_t>(mx)];
          sz += w * cg.coef[2][rowi + static_cast<std::size_t>(mx)];
        }
        dx += wyz * sx;
        dy += wyz * sy;
        dz += wyz * sz;
      }
    return {dx, dy, dz};
  }

  void scatter(int i, int j, int k, const Eigen::Vector3d& v, const ControlGrid& cg,
               Eigen::VectorXd& grad) const {
    const auto& wx = fw_[0][static_cast<std::size_t>(i)];
    const auto& wy = fw_[1][static_cast<std::size_t>(j)];
    const auto& wz = fw_[2][static_cast<std::size_t>(k)];
    const int bx = fbase_[0][static_cast<std::size_t>(i)];
    const int by = fbase_[1][static_cast<std::size_t>(j)];
    const int bz = fbase_[2][static_cast<std::size_t>(k)];
    for (int mz = 0; mz < 4; ++mz)
      for (int my = 0; my < 4; ++my) {
        const std::size_t rowi = cg.index(bx, by + my, bz + mz);
        const double wyz = wy[static_cast<std::size_t>(my)] * wz[static_cast<std::size_t>(mz)];
        for (int mx = 0; mx < 4; ++mx) {
          const double w = wx[static_cast<std::size_t>(mx)] * wyz;
          const std::size_t base = 3 * (rowi + static_cast<std::size_t>(mx));
          grad(static_cast<Eigen::Index>(base)) += w * v.x();
          grad(static_cast<Eigen::Index>(base + 1)) += w * v.y();
          grad(static_cast<Eigen::Index>(base + 2)) += w * v.z();
        }
      }
  }

  JtConfig cfg_;
  GridGeometry fixed_geom_;
  FfdTransform transform_;
  std::size_t nl_ = 0;
  std::vector<std::vector<std::uint16_t>> rows_;
  std::vector<CubicInterpolator> moving_;
  std::vector<std::pair<double, double>> fixed_win_, moving_win_;
  std::vector<detail::MovingBinMap> mmap_;
  std::array<std::vector<int>, 3> fbase_;
  std::array<std::vector<std::array<double, 4>>, 3> fw_;
  std::vector<std::uint8_t> include_;
  std::vector<Eigen::MatrixXd> hist_;
  std::vector<Eigen::MatrixXd> gmat_;
  std::vector<int> occupied_;
  std::size_t included_ = 0;
  std::size_t excluded_ = 0;
};

/// Multicomponent JT similarity (1/L) sum_l S_l at the transform's current
/// coefficients; for L = 1 this reduces to the single-component JT measure.
inline double multicomponent_similarity(const std::vector<ScalarVolume>& fixed_components,
                                        const std::vector<ScalarVolume>& moving_components,
                                        const FfdTransform& transform, double alpha = 2.0,
                                        const JtConfig& cfg_in = {}) {
  JtConfig cfg = cfg_in;
  cfg.alpha = alpha;
  JtObjective obj(fixed_components, moving_components, transform.grid(), cfg);
  return obj.evaluate(transform.grid().parameters(), nullptr);
}

/// Analytic gradient dS/dmu of the multicomponent similarity (alpha = 2).
inline Eigen::VectorXd similarity_gradient(const std::vector<ScalarVolume>& fixed_components,
                                           const std::vector<ScalarVolume>& moving_components,
                                           const FfdTransform& transform, double alpha = 2.0,
                                           const JtConfig& cfg_in = {}) {
  JtConfig cfg = cfg_in;
  cfg.alpha = alpha;
  JtObjective obj(fixed_components, moving_components, transform.grid(), cfg);
  Eigen::VectorXd grad;
  obj.evaluate(transform.grid().parameters(), &grad);
  return grad;
}

/// Central finite-difference gradient; the slow fallback for alpha != 2.
inline Eigen::VectorXd similarity_fd_gradient(const std::vector<ScalarVolume>& fixed_components,
                                              const std::vector<ScalarVolume>& moving_components,
                                              const FfdTransform& transform, double alpha,
                                              double h, const JtConfig& cfg_in = {}) {
  JtConfig cfg = cfg_in;
  cfg.alpha = alpha;
  JtObjective obj(fixed_components, moving_components, transform.grid(), cfg);
  Eigen::VectorXd mu = transform.grid().parameters();
  Eigen::VectorXd g(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double save = mu(i);
    mu(i) = save + h;
    const double fp = obj.evaluate(mu, nullptr);
    mu(i) = save - h;
    const double fm = obj.evaluate(mu, nullptr);
    mu(i) = save;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace dtireg
