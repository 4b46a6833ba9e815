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
#include <cstddef>
#include <string>

#include <Eigen/Core>

#include "dtireg/errors.hpp"

namespace dtireg {

/// Regular 3D sample grid: dimensions, physical spacing (mm) and the
/// physical position of voxel (0,0,0). Samples are stored x-fastest.
struct GridGeometry {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  std::size_t num_voxels() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>((static_cast<long long>(k) * dims[1] + j) * dims[0] + i);
  }

  Eigen::Vector3d position(int i, int j, int k) const {
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
  }

  /// Continuous voxel index of a physical point (no bounds check).
  Eigen::Vector3d continuous_index(const Eigen::Vector3d& p) const {
    return {(p.x() - origin[0]) / spacing[0], (p.y() - origin[1]) / spacing[1],
            (p.z() - origin[2]) / spacing[2]};
  }

  /// Physical extent spanned by voxel centers along each axis.
  std::array<double, 3> extent() const {
    return {(dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1], (dims[2] - 1) * spacing[2]};
  }

  bool operator==(const GridGeometry& o) const {
    return dims == o.dims && spacing == o.spacing && origin == o.origin;
  }
  bool operator!=(const GridGeometry& o) const { return !(*this == o); }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw ValidationError("grid dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw ValidationError("grid spacing must be positive and finite");
      if (!std::isfinite(origin[a])) throw ValidationError("grid origin must be finite");
    }
  }
};

inline GridGeometry make_geometry(int nx, int ny, int nz, double sx = 1.0, double sy = 1.0,
                                  double sz = 1.0, double ox = 0.0, double oy = 0.0,
                                  double oz = 0.0) {
  GridGeometry g;
  g.dims = {nx, ny, nz};
  g.spacing = {sx, sy, sz};
  g.origin = {ox, oy, oz};
  return g;
}

}  // namespace dtireg
