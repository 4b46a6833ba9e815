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
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dtireg/errors.hpp"
#include "dtireg/geometry.hpp"

namespace dtireg {

namespace detail {
inline void require_finite(const std::vector<double>& v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw ValidationError(std::string(what) + ": non-finite sample at linear index " +
                            std::to_string(i));
}
}  // namespace detail

/// Dense scalar samples on a grid, x-fastest.
struct ScalarVolume {
  GridGeometry geom;
  std::vector<double> samples;

  double& at(int i, int j, int k) { return samples[geom.index(i, j, k)]; }
  double at(int i, int j, int k) const { return samples[geom.index(i, j, k)]; }

  void validate() const {
    geom.validate();
    if (samples.size() != geom.num_voxels())
      throw ValidationError("scalar volume: sample count does not match dims");
    detail::require_finite(samples, "scalar volume");
  }
};

inline ScalarVolume make_scalar_volume(const GridGeometry& g, double fill = 0.0) {
  ScalarVolume v;
  v.geom = g;
  v.samples.assign(g.num_voxels(), fill);
  return v;
}

/// Symmetric diffusion tensors stored as 6 planar component arrays in the
/// order (xx, xy, xz, yy, yz, zz). A voxel whose 6 components are all zero
/// is the "invalid" convention used by the tensor fit.
struct TensorVolume {
  GridGeometry geom;
  std::array<std::vector<double>, 6> comp;

  Eigen::Matrix3d tensor_at(std::size_t idx) const {
    Eigen::Matrix3d d;
    const double xx = comp[0][idx], xy = comp[1][idx], xz = comp[2][idx];
    const double yy = comp[3][idx], yz = comp[4][idx], zz = comp[5][idx];
    d << xx, xy, xz, xy, yy, yz, xz, yz, zz;
    return d;
  }

  void set_tensor(std::size_t idx, const Eigen::Matrix3d& d) {
    comp[0][idx] = d(0, 0);
    comp[1][idx] = d(0, 1);
    comp[2][idx] = d(0, 2);
    comp[3][idx] = d(1, 1);
    comp[4][idx] = d(1, 2);
    comp[5][idx] = d(2, 2);
  }

  bool voxel_valid(std::size_t idx) const {
    for (int c = 0; c < 6; ++c)
      if (comp[c][idx] != 0.0) return true;
    return false;
  }

  void validate() const {
    geom.validate();
    for (int c = 0; c < 6; ++c) {
      if (comp[c].size() != geom.num_voxels())
        throw ValidationError("tensor volume: component size mismatch");
      detail::require_finite(comp[c], "tensor volume");
    }
  }
};

inline TensorVolume make_tensor_volume(const GridGeometry& g) {
  TensorVolume t;
  t.geom = g;
  for (int c = 0; c < 6; ++c) t.comp[c].assign(g.num_voxels(), 0.0);
  return t;
}

/// One b=0 reference volume plus K>=6 diffusion-weighted volumes with their
/// unit gradient directions and the shared b-value.
struct DwiSet {
  ScalarVolume s0;
  std::vector<ScalarVolume> dwis;
  std::vector<Eigen::Vector3d> gradients;
  double bvalue = 0.0;

  /// 6-column quadratic-form design matrix, rows g_k ->
  /// (gx^2, 2 gx gy, 2 gx gz, gy^2, 2 gy gz, gz^2).
  Eigen::MatrixXd design_matrix() const {
    Eigen::MatrixXd a(static_cast<int>(gradients.size()), 6);
    for (int k = 0; k < a.rows(); ++k) {
      const Eigen::Vector3d& g = gradients[static_cast<std::size_t>(k)];
      a(k, 0) = g.x() * g.x();
      a(k, 1) = 2.0 * g.x() * g.y();
      a(k, 2) = 2.0 * g.x() * g.z();
      a(k, 3) = g.y() * g.y();
      a(k, 4) = 2.0 * g.y() * g.z();
      a(k, 5) = g.z() * g.z();
    }
    return a;
  }

  void validate() const {
    s0.validate();
    if (dwis.size() < 6) throw ValidationError("dwi set: needs at least 6 DW volumes");
    if (dwis.size() != gradients.size())
      throw ValidationError("dwi set: gradient count does not match DW volume count");
    if (!(bvalue > 0.0) || !std::isfinite(bvalue))
      throw ValidationError("dwi set: b-value must be positive");
    for (const auto& v : dwis) {
      v.validate();
      if (v.geom != s0.geom) throw ValidationError("dwi set: volumes must share one geometry");
    }
    for (const auto& g : gradients)
      if (std::abs(g.norm() - 1.0) > 1e-9)
        throw ValidationError("dwi set: gradients must have unit norm");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design_matrix());
    if (svd.singularValues()(5) < 1e-9 * svd.singularValues()(0))
      throw ValidationError("dwi set: gradient scheme is degenerate (design matrix rank < 6)");
  }
};

/// Per-voxel displacement vectors in mm, 3 planar channels (dx, dy, dz).
struct VectorField {
  GridGeometry geom;
  std::array<std::vector<double>, 3> comp;

  Eigen::Vector3d vec_at(std::size_t idx) const {
    return {comp[0][idx], comp[1][idx], comp[2][idx]};
  }
  void set_vec(std::size_t idx, const Eigen::Vector3d& v) {
    comp[0][idx] = v.x();
    comp[1][idx] = v.y();
    comp[2][idx] = v.z();
  }

  void validate() const {
    geom.validate();
    for (int c = 0; c < 3; ++c) {
      if (comp[c].size() != geom.num_voxels())
        throw ValidationError("vector field: channel size mismatch");
      detail::require_finite(comp[c], "vector field");
    }
  }
};

inline VectorField make_vector_field(const GridGeometry& g) {
  VectorField f;
  f.geom = g;
  for (int c = 0; c < 3; ++c) f.comp[c].assign(g.num_voxels(), 0.0);
  return f;
}

}  // namespace dtireg
