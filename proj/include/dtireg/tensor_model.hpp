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

// Diffusion-tensor estimation and scalar indices. The fit is log-linear
// least squares per voxel: ln(S_k/S0) = -b g_k' D g_k, exact for noiseless
// signals. Voxels with any nonpositive signal are flagged invalid and set
// to the zero tensor.

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dtireg/errors.hpp"
#include "dtireg/volume.hpp"

namespace dtireg {

constexpr double kPsdTolerance = 1e-12;   // most negative eigenvalue still clamped
constexpr double kEigenClampValue = 1e-12;

/// Apparent diffusion coefficient along a unit direction: g' D g.
inline double adc(const Eigen::Matrix3d& tensor, const Eigen::Vector3d& g) {
  if (std::abs(g.norm() - 1.0) > 1e-9)
    throw ValidationError("adc: gradient direction must have unit norm");
  return g.dot(tensor * g);
}

/// Eigenvalues sorted descending with orthonormal eigenvectors. The sign of
/// each eigenvector is fixed so its largest-magnitude component is positive,
/// which makes decompositions deterministic.
struct SpectralDecomposition {
  Eigen::Vector3d eigenvalues;              // l1 >= l2 >= l3
  std::array<Eigen::Vector3d, 3> eigenvectors;
};

inline SpectralDecomposition spectral(const Eigen::Matrix3d& tensor) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(tensor);
  SpectralDecomposition d;
  for (int i = 0; i < 3; ++i) {
    const int src = 2 - i;  // Eigen sorts ascending
    d.eigenvalues(i) = es.eigenvalues()(src);
    Eigen::Vector3d v = es.eigenvectors().col(src);
    int argmax = 0;
    for (int a = 1; a < 3; ++a)
      if (std::abs(v(a)) > std::abs(v(argmax))) argmax = a;
    if (v(argmax) < 0.0) v = -v;
    d.eigenvectors[static_cast<std::size_t>(i)] = v;
  }
  return d;
}

/// FA of sorted (or unsorted) eigenvalues: sqrt(3/2 * sum((l-mean)^2) /
/// sum(l^2)), defined as 0 for the zero tensor.
inline double fractional_anisotropy(const Eigen::Vector3d& lambda) {
  const double sq = lambda.squaredNorm();
  if (sq <= 0.0) return 0.0;
  const double mean = lambda.sum() / 3.0;
  const double dev = (lambda.array() - mean).matrix().squaredNorm();
  double fa = std::sqrt(1.5 * dev / sq);
  if (fa > 1.0) fa = 1.0;
  return fa;
}

/// Forward signal model S_k = S0 * exp(-b g' D g), evaluated exactly.
inline DwiSet synthesize_signals(const TensorVolume& tensors,
                                 const std::vector<Eigen::Vector3d>& gradients, double bvalue,
                                 const ScalarVolume& s0) {
  tensors.validate();
  s0.validate();
  if (tensors.geom != s0.geom)
    throw ValidationError("synthesize_signals: tensor and S0 geometries differ");
  DwiSet out;
  out.s0 = s0;
  out.bvalue = bvalue;
  const std::size_t n = tensors.geom.num_voxels();
  for (const auto& g : gradients) {
    const double norm = g.norm();
    if (!(norm > 0.0)) throw ValidationError("synthesize_signals: zero gradient");
    const Eigen::Vector3d gh = g / norm;
    out.gradients.push_back(gh);
    ScalarVolume w = make_scalar_volume(s0.geom);
    // quadratic-form row for this direction
    const double a0 = gh.x() * gh.x(), a1 = 2.0 * gh.x() * gh.y(), a2 = 2.0 * gh.x() * gh.z();
    const double a3 = gh.y() * gh.y(), a4 = 2.0 * gh.y() * gh.z(), a5 = gh.z() * gh.z();
    for (std::size_t v = 0; v < n; ++v) {
      const double q = a0 * tensors.comp[0][v] + a1 * tensors.comp[1][v] +
                       a2 * tensors.comp[2][v] + a3 * tensors.comp[3][v] +
                       a4 * tensors.comp[4][v] + a5 * tensors.comp[5][v];
      w.samples[v] = s0.samples[v] * std::exp(-bvalue * q);
    }
    out.dwis.push_back(std::move(w));
  }
  out.validate();
  return out;
}

struct TensorFitResult {
  TensorVolume tensors;
  std::size_t invalid_count = 0;
};

/// Per-voxel log-linear least-squares fit of the 6 unique tensor components.
/// Eigenvalues in [-kPsdTolerance, 0) are clamped to kEigenClampValue; any
/// eigenvalue below -kPsdTolerance invalidates the voxel (zero tensor), as
/// does any nonpositive signal.
inline TensorFitResult fit_tensor(const DwiSet& dwi) {
  dwi.validate();
  const Eigen::MatrixXd a = dwi.design_matrix();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < 6)
    throw ValidationError("fit_tensor: gradient set degenerate (design matrix rank < 6)");

  TensorFitResult r;
  r.tensors = make_tensor_volume(dwi.s0.geom);
  const std::size_t n = dwi.s0.geom.num_voxels();
  const int kcount = static_cast<int>(dwi.dwis.size());
  Eigen::VectorXd y(kcount);
  for (std::size_t v = 0; v < n; ++v) {
    const double s0 = dwi.s0.samples[v];
    bool ok = s0 > 0.0;
    if (ok) {
      for (int k = 0; k < kcount; ++k) {
        const double s = dwi.dwis[static_cast<std::size_t>(k)].samples[v];
        if (!(s > 0.0)) {
          ok = false;
          break;
        }
        y(k) = -std::log(s / s0) / dwi.bvalue;
      }
    }
    if (!ok) {
      ++r.invalid_count;
      continue;  // zero tensor
    }
    const Eigen::VectorXd d = qr.solve(y);
    Eigen::Matrix3d t;
    t << d(0), d(1), d(2), d(1), d(3), d(4), d(2), d(4), d(5);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(t);
    const double lmin = es.eigenvalues()(0);
    if (lmin < -kPsdTolerance) {
      ++r.invalid_count;
      continue;
    }
    if (lmin < 0.0) {
      Eigen::Vector3d l = es.eigenvalues();
      for (int i = 0; i < 3; ++i)
        if (l(i) < 0.0) l(i) = kEigenClampValue;
      t = es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
    }
    r.tensors.set_tensor(v, t);
  }
  return r;
}

/// FA, MD, trace and the direction-coded channels of the principal
/// eigenvector. The channel order follows the (G, R, B) = (|e1x|, |e1y|,
/// |e1z|) convention, G first.
struct ScalarIndexSet {
  ScalarVolume fa;
  ScalarVolume md;
  ScalarVolume trace;
  ScalarVolume rgb_g;  // |e1x|
  ScalarVolume rgb_r;  // |e1y|
  ScalarVolume rgb_b;  // |e1z|
};

inline ScalarIndexSet scalar_indices(const TensorVolume& tensors) {
  tensors.validate();
  ScalarIndexSet s;
  s.fa = make_scalar_volume(tensors.geom);
  s.md = make_scalar_volume(tensors.geom);
  s.trace = make_scalar_volume(tensors.geom);
  s.rgb_g = make_scalar_volume(tensors.geom);
  s.rgb_r = make_scalar_volume(tensors.geom);
  s.rgb_b = make_scalar_volume(tensors.geom);
  const std::size_t n = tensors.geom.num_voxels();
  for (std::size_t v = 0; v < n; ++v) {
    if (!tensors.voxel_valid(v)) continue;
    const SpectralDecomposition d = spectral(tensors.tensor_at(v));
    s.fa.samples[v] = fractional_anisotropy(d.eigenvalues);
    const double tr = d.eigenvalues.sum();
    s.trace.samples[v] = tr;
    s.md.samples[v] = tr / 3.0;
    s.rgb_g.samples[v] = std::abs(d.eigenvectors[0].x());
    s.rgb_r.samples[v] = std::abs(d.eigenvectors[0].y());
    s.rgb_b.samples[v] = std::abs(d.eigenvectors[0].z());
  }
  return s;
}

/// FA map alone (cheaper when the other indices are not needed).
inline ScalarVolume fa_map(const TensorVolume& tensors) {
  ScalarVolume fa = make_scalar_volume(tensors.geom);
  const std::size_t n = tensors.geom.num_voxels();
  for (std::size_t v = 0; v < n; ++v) {
    if (!tensors.voxel_valid(v)) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(tensors.tensor_at(v));
    fa.samples[v] = fractional_anisotropy(es.eigenvalues());
  }
  return fa;
}

}  // namespace dtireg
