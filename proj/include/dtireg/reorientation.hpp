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

// Finite-strain tensor reorientation. The rotational part of the local
// Jacobian is its polar factor (Frobenius-nearest orthogonal matrix, with a
// reflection correction so det = +1); tensors transform as D' = R D R'.
//
// Direction convention: the pipeline's transform g maps fixed space to
// moving space and the resampled tensor at x is D_moving(g(x)). The rotation
// that carries moving-frame orientation back to the fixed frame is the polar
// factor of the inverse Jacobian, which equals the transpose of the polar
// factor of the forward Jacobian (if A = U S V', then inv(A) = V inv(S) U',
// whose polar factor is V U' = (U V')'). We therefore evaluate the forward
// Jacobian and transpose its polar factor, avoiding field inversion.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtireg/errors.hpp"
#include "dtireg/ffd.hpp"
#include "dtireg/volume.hpp"

namespace dtireg {

constexpr double kJacobianDetTolerance = 1e-8;

/// Nearest rotation to M in the Frobenius sense: R = U V' from M = U S V',
/// with the last singular vector flipped when det(U V') < 0. Requires
/// det(M) > kJacobianDetTolerance (locally orientation-preserving).
inline Eigen::Matrix3d polar_rotation(const Eigen::Matrix3d& m) {
  if (!(m.determinant() > kJacobianDetTolerance))
    throw DegenerateError("polar_rotation: Jacobian determinant below tolerance (folding)");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d r = u * v.transpose();
  if (r.determinant() < 0.0) {
    u.col(2) *= -1.0;
    r = u * v.transpose();
  }
  return r;
}

inline Eigen::Matrix3d reorient_tensor(const Eigen::Matrix3d& d, const Eigen::Matrix3d& r) {
  return r * d * r.transpose();
}

struct ReorientOptions {
  /// Substitute R = I at folding voxels instead of raising an error.
  bool permissive = false;
};

struct ReorientResult {
  TensorVolume tensors;
  std::size_t identity_substitutions = 0;  // permissive mode only
};

/// Applies finite-strain reorientation to every voxel of `tensors` using the
/// local Jacobian of `transform` at the voxel center. Eigenvalues (and hence
/// FA) are untouched; only orientations change.
inline ReorientResult reorient_field(const TensorVolume& tensors, const FfdTransform& transform,
                                     const ReorientOptions& opts = {}) {
  tensors.validate();
  ReorientResult out;
  out.tensors = tensors;
  std::vector<std::size_t> bad;
  const GridGeometry& g = tensors.geom;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        if (!tensors.voxel_valid(idx)) continue;
        const Eigen::Matrix3d jac = transform.jacobian(g.position(i, j, k));
        Eigen::Matrix3d r;
        if (jac.determinant() > kJacobianDetTolerance) {
          r = polar_rotation(jac).transpose();
        } else if (opts.permissive) {
          r = Eigen::Matrix3d::Identity();
          ++out.identity_substitutions;
        } else {
          bad.push_back(idx);
          continue;
        }
        out.tensors.set_tensor(idx, reorient_tensor(tensors.tensor_at(idx), r));
      }
  if (!bad.empty()) {
    std::string msg = "reorient_field: singular Jacobian at " + std::to_string(bad.size()) +
                      " voxel(s), first indices:";
    for (std::size_t i = 0; i < bad.size() && i < 8; ++i)
      msg += " " + std::to_string(bad[i]);
    throw DegenerateError(msg);
  }
  return out;
}

/// Constant-rotation variant used for affine transforms (their Jacobian is
/// the same everywhere) and by the synthetic-distortion pipeline.
inline TensorVolume reorient_field_constant(const TensorVolume& tensors,
                                            const Eigen::Matrix3d& rotation) {
  TensorVolume out = tensors;
  const std::size_t n = tensors.geom.num_voxels();
  for (std::size_t v = 0; v < n; ++v) {
    if (!tensors.voxel_valid(v)) continue;
    out.set_tensor(v, reorient_tensor(tensors.tensor_at(v), rotation));
  }
  return out;
}

}  // namespace dtireg
