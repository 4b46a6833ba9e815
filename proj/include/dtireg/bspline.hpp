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

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "dtireg/errors.hpp"
#include "dtireg/volume.hpp"

namespace dtireg {

/// Centered cubic B-spline kernel, support (-2, 2), C2 continuous.
inline double bspline3(double t) {
  const double u = std::abs(t);
  if (u < 1.0) return 2.0 / 3.0 - u * u + 0.5 * u * u * u;
  if (u < 2.0) {
    const double w = 2.0 - u;
    return w * w * w / 6.0;
  }
  return 0.0;
}

/// First derivative of bspline3.
inline double bspline3_deriv(double t) {
  const double u = std::abs(t);
  double d;
  if (u < 1.0)
    d = -2.0 * u + 1.5 * u * u;
  else if (u < 2.0) {
    const double w = 2.0 - u;
    d = -0.5 * w * w;
  } else
    return 0.0;
  return t < 0.0 ? -d : d;
}

/// Weights of the four integer taps (i0-1, i0, i0+1, i0+2) around a
/// fractional position, with i0 = floor(u) and f = u - i0. Closed forms of
/// bspline3 at (f+1, f, f-1, f-2).
inline void bspline3_weights(double f, std::array<double, 4>& w) {
  const double g = 1.0 - f;
  w[0] = g * g * g / 6.0;
  w[1] = 2.0 / 3.0 - f * f + 0.5 * f * f * f;
  w[2] = 2.0 / 3.0 - g * g + 0.5 * g * g * g;
  w[3] = f * f * f / 6.0;
}

inline void bspline3_deriv_weights(double f, std::array<double, 4>& dw) {
  const double g = 1.0 - f;
  dw[0] = -0.5 * g * g;
  dw[1] = -2.0 * f + 1.5 * f * f;
  dw[2] = 2.0 * g - 1.5 * g * g;
  dw[3] = 0.5 * f * f;
}

namespace detail {

/// In-place direct B-spline transform along one dimension of length n with
/// stride `stride` (mirror boundaries, exact initialization). After this,
/// sum_k c[k] bspline3(u - k) interpolates the original samples.
inline void bspline_prefilter_line(double* data, int n, std::ptrdiff_t stride) {
  if (n == 1) return;
  static constexpr double kPole = -0.26794919243112270647;  // sqrt(3) - 2
  static constexpr double kGain = 6.0;

  // causal init: exact sum over the mirror-periodized signal
  const int period = 2 * n - 2;
  double zk = kPole;
  double sum = data[0];
  for (int k = 1; k < period; ++k) {
    const int idx = k < n ? k : period - k;
    sum += zk * data[static_cast<std::ptrdiff_t>(idx) * stride];
    zk *= kPole;
  }
  double cprev = sum / (1.0 - zk);  // zk == pole^period here
  data[0] = cprev;
  for (int k = 1; k < n; ++k) {
    cprev = data[static_cast<std::ptrdiff_t>(k) * stride] + kPole * cprev;
    data[static_cast<std::ptrdiff_t>(k) * stride] = cprev;
  }
  // anticausal
  double cnext = (kPole / (kPole * kPole - 1.0)) *
                 (data[static_cast<std::ptrdiff_t>(n - 1) * stride] +
                  kPole * data[static_cast<std::ptrdiff_t>(n - 2) * stride]);
  data[static_cast<std::ptrdiff_t>(n - 1) * stride] = cnext * kGain;
  for (int k = n - 2; k >= 0; --k) {
    cnext = kPole * (cnext - data[static_cast<std::ptrdiff_t>(k) * stride]);
    data[static_cast<std::ptrdiff_t>(k) * stride] = cnext * kGain;
  }
}

inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

}  // namespace detail

/// Per-voxel tap indices and kernel weights for one sample position, shared
/// across volumes defined on the same grid.
struct CubicSampleWeights {
  bool inside = false;
  std::array<std::array<int, 4>, 3> idx;    // mirrored tap indices per axis
  std::array<std::array<double, 4>, 3> w;   // value weights
  std::array<std::array<double, 4>, 3> dw;  // derivative weights (index units)
};

/// Cubic B-spline interpolator over a scalar volume. The constructor runs
/// the recursive prefilter so evaluation interpolates the original samples;
/// the valid domain is the voxel-center hull [0, n-1] in index space.
class CubicInterpolator {
public:
  explicit CubicInterpolator(const ScalarVolume& v) : geom_(v.geom), coef_(v.samples) {
    const int nx = geom_.dims[0], ny = geom_.dims[1], nz = geom_.dims[2];
    for (int a = 0; a < 3; ++a)
      if (geom_.dims[a] < 2)
        throw ValidationError("cubic interpolation needs at least 2 samples per axis");
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        detail::bspline_prefilter_line(&coef_[geom_.index(0, j, k)], nx, 1);
    for (int k = 0; k < nz; ++k)
      for (int i = 0; i < nx; ++i)
        detail::bspline_prefilter_line(&coef_[geom_.index(i, 0, k)], ny, nx);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        detail::bspline_prefilter_line(&coef_[geom_.index(i, j, 0)], nz,
                                       static_cast<std::ptrdiff_t>(nx) * ny);
  }

  const GridGeometry& geometry() const { return geom_; }

  /// Fills tap weights for a physical point; returns false (and marks the
  /// weights outside) when the point leaves the voxel-center hull.
  bool weights_at(const Eigen::Vector3d& p, CubicSampleWeights& sw) const {
    const Eigen::Vector3d u = geom_.continuous_index(p);
    for (int a = 0; a < 3; ++a) {
      if (!(u[a] >= 0.0 && u[a] <= geom_.dims[a] - 1)) {
        sw.inside = false;
        return false;
      }
    }
    for (int a = 0; a < 3; ++a) {
      int i0 = static_cast<int>(std::floor(u[a]));
      if (i0 > geom_.dims[a] - 2) i0 = geom_.dims[a] - 2;  // u == n-1 edge
      const double f = u[a] - i0;
      std::array<double, 4> w, dw;
      bspline3_weights(f, w);
      bspline3_deriv_weights(f, dw);
      for (int m = 0; m < 4; ++m) {
        sw.idx[a][m] = detail::mirror_index(i0 - 1 + m, geom_.dims[a]);
        sw.w[a][m] = w[m];
        sw.dw[a][m] = dw[m];
      }
    }
    sw.inside = true;
    return true;
  }

  double value(const CubicSampleWeights& sw) const {
    double acc = 0.0;
    for (int mz = 0; mz < 4; ++mz) {
      const std::size_t kz = static_cast<std::size_t>(sw.idx[2][mz]);
      for (int my = 0; my < 4; ++my) {
        const std::size_t base = (kz * geom_.dims[1] + sw.idx[1][my]) *
                                 static_cast<std::size_t>(geom_.dims[0]);
        const double wyz = sw.w[1][my] * sw.w[2][mz];
        double rowacc = 0.0;
        for (int mx = 0; mx < 4; ++mx)
          rowacc += sw.w[0][mx] * coef_[base + static_cast<std::size_t>(sw.idx[0][mx])];
        acc += wyz * rowacc;
      }
    }
    return acc;
  }

  /// Value and spatial gradient (per mm) in one pass.
  void value_and_gradient(const CubicSampleWeights& sw, double& val,
                          Eigen::Vector3d& grad_mm) const {
    double v = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
    for (int mz = 0; mz < 4; ++mz) {
      const std::size_t kz = static_cast<std::size_t>(sw.idx[2][mz]);
      const double wz = sw.w[2][mz], dz = sw.dw[2][mz];
      for (int my = 0; my < 4; ++my) {
        const std::size_t base = (kz * geom_.dims[1] + sw.idx[1][my]) *
                                 static_cast<std::size_t>(geom_.dims[0]);
        const double wy = sw.w[1][my], dy = sw.dw[1][my];
        double s = 0.0, sx = 0.0;
        for (int mx = 0; mx < 4; ++mx) {
          const double c = coef_[base + static_cast<std::size_t>(sw.idx[0][mx])];
          s += sw.w[0][mx] * c;
          sx += sw.dw[0][mx] * c;
        }
        v += wy * wz * s;
        gx += wy * wz * sx;
        gy += dy * wz * s;
        gz += wy * dz * s;
      }
    }
    val = v;
    grad_mm = {gx / geom_.spacing[0], gy / geom_.spacing[1], gz / geom_.spacing[2]};
  }

  /// Convenience single-point sample; returns false outside the domain.
  bool sample(const Eigen::Vector3d& p, double& val) const {
    CubicSampleWeights sw;
    if (!weights_at(p, sw)) return false;
    val = value(sw);
    return true;
  }

private:
  GridGeometry geom_;
  std::vector<double> coef_;
};

}  // namespace dtireg
