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

// Cubic B-spline free-form deformation under the displacement convention:
// g(x) = x + sum_ijk eta_ijk beta3((x - phi_ijk) / delta). The control mesh
// covers the image domain with a margin of two control points beyond each
// face, so every domain point has a full 4x4x4 kernel support and evaluation
// never needs boundary cases.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dtireg/bspline.hpp"
#include "dtireg/errors.hpp"
#include "dtireg/geometry.hpp"
#include "dtireg/volume.hpp"
#include "dtireg/volume_io.hpp"

namespace dtireg {

/// Uniform mesh of B-spline displacement coefficients. The flattened
/// parameter vector mu is laid out as mu[3 * cp + axis] with cp the
/// x-fastest mesh index (i fastest, then j, then k).
struct ControlGrid {
  std::array<int, 3> mesh_dims{0, 0, 0};
  std::array<double, 3> delta{1.0, 1.0, 1.0};        // mm
  std::array<double, 3> grid_origin{0.0, 0.0, 0.0};  // position of CP (0,0,0)
  GridGeometry domain;                               // covered image grid
  std::array<std::vector<double>, 3> coef;           // displacement (mm) per axis

  /// Builds a zero-coefficient mesh covering `domain` at spacing `delta_mm`.
  static ControlGrid cover(const GridGeometry& domain, const std::array<double, 3>& delta_mm) {
    domain.validate();
    ControlGrid g;
    g.domain = domain;
    g.delta = delta_mm;
    for (int a = 0; a < 3; ++a) {
      if (!(delta_mm[a] > 0.0) || !std::isfinite(delta_mm[a]))
        throw ValidationError("control grid spacing must be positive");
      const double extent = (domain.dims[a] - 1) * domain.spacing[a];
      const int spans = std::max(1, static_cast<int>(std::ceil(extent / delta_mm[a] - 1e-12)));
      g.mesh_dims[a] = spans + 5;  // interior spans + a 2-point margin per face
      g.grid_origin[a] = domain.origin[a] - 2.0 * delta_mm[a];
    }
    const std::size_t n = g.num_points();
    for (int a = 0; a < 3; ++a) g.coef[a].assign(n, 0.0);
    return g;
  }

  std::size_t num_points() const {
    return static_cast<std::size_t>(mesh_dims[0]) * mesh_dims[1] * mesh_dims[2];
  }
  std::size_t num_parameters() const { return 3 * num_points(); }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>((static_cast<long long>(k) * mesh_dims[1] + j) * mesh_dims[0] +
                                    i);
  }

  Eigen::Vector3d point_position(int i, int j, int k) const {
    return {grid_origin[0] + i * delta[0], grid_origin[1] + j * delta[1],
            grid_origin[2] + k * delta[2]};
  }

  void set_parameters(const Eigen::VectorXd& mu) {
    if (static_cast<std::size_t>(mu.size()) != num_parameters())
      throw ValidationError("control grid: parameter vector size mismatch");
    const std::size_t n = num_points();
    for (std::size_t c = 0; c < n; ++c)
      for (int a = 0; a < 3; ++a) coef[a][c] = mu(static_cast<Eigen::Index>(3 * c + a));
  }

  Eigen::VectorXd parameters() const {
    Eigen::VectorXd mu(static_cast<Eigen::Index>(num_parameters()));
    const std::size_t n = num_points();
    for (std::size_t c = 0; c < n; ++c)
      for (int a = 0; a < 3; ++a) mu(static_cast<Eigen::Index>(3 * c + a)) = coef[a][c];
    return mu;
  }
};

/// Tap indices and per-axis kernel weights of one evaluation point on the
/// control mesh (always fully interior thanks to the mesh margin).
struct FfdWeights {
  std::array<int, 3> base{};                // first tap index per axis
  std::array<std::array<double, 4>, 3> w;   // kernel weights
  std::array<std::array<double, 4>, 3> dw;  // kernel derivative weights (mesh units)
};

class FfdTransform {
public:
  FfdTransform() = default;
  explicit FfdTransform(ControlGrid grid) : grid_(std::move(grid)) {}

  const ControlGrid& grid() const { return grid_; }
  ControlGrid& grid() { return grid_; }

  bool in_domain(const Eigen::Vector3d& x) const {
    for (int a = 0; a < 3; ++a) {
      const double extent = (grid_.domain.dims[a] - 1) * grid_.domain.spacing[a];
      const double tol = 1e-9 * (extent + 1.0);
      if (x[a] < grid_.domain.origin[a] - tol || x[a] > grid_.domain.origin[a] + extent + tol)
        return false;
    }
    return true;
  }

  void weights_at(const Eigen::Vector3d& x, FfdWeights& fw) const {
    for (int a = 0; a < 3; ++a) {
      const double u = (x[a] - grid_.grid_origin[a]) / grid_.delta[a];
      int i0 = static_cast<int>(std::floor(u));
      if (i0 < 1) i0 = 1;  // guards exact-boundary rounding; interior by construction
      if (i0 > grid_.mesh_dims[a] - 3) i0 = grid_.mesh_dims[a] - 3;
      const double f = u - i0;
      std::array<double, 4> w, dw;
      bspline3_weights(f, w);
      bspline3_deriv_weights(f, dw);
      fw.base[a] = i0 - 1;
      for (int m = 0; m < 4; ++m) {
        fw.w[a][m] = w[m];
        fw.dw[a][m] = dw[m] / grid_.delta[a];
      }
    }
  }

  Eigen::Vector3d displacement_from_weights(const FfdWeights& fw) const {
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    for (int mz = 0; mz < 4; ++mz) {
      for (int my = 0; my < 4; ++my) {
        const std::size_t row =
            grid_.index(fw.base[0], fw.base[1] + my, fw.base[2] + mz);
        const double wyz = fw.w[1][my] * fw.w[2][mz];
        double sx = 0.0, sy = 0.0, sz = 0.0;
        for (int mx = 0; mx < 4; ++mx) {
          const double w = fw.w[0][mx];
          sx += w * grid_.coef[0][row + static_cast<std::size_t>(mx)];
          sy += w * grid_.coef[1][row + static_cast<std::size_t>(mx)];
          sz += w * grid_.coef[2][row + static_cast<std::size_t>(mx)];
        }
        d.x() += wyz * sx;
        d.y() += wyz * sy;
        d.z() += wyz * sz;
      }
    }
    return d;
  }

  Eigen::Vector3d displacement(const Eigen::Vector3d& x) const {
    FfdWeights fw;
    weights_at(x, fw);
    return displacement_from_weights(fw);
  }

  Eigen::Vector3d transform_point(const Eigen::Vector3d& x) const {
    if (!in_domain(x))
      throw ValidationError("ffd: point outside the covered domain");
    return x + displacement(x);
  }

  /// Forward spatial Jacobian of g(x) = x + u(x).
  Eigen::Matrix3d jacobian(const Eigen::Vector3d& x) const {
    if (!in_domain(x))
      throw ValidationError("ffd: point outside the covered domain");
    FfdWeights fw;
    weights_at(x, fw);
    Eigen::Matrix3d j = Eigen::Matrix3d::Identity();
    for (int mz = 0; mz < 4; ++mz)
      for (int my = 0; my < 4; ++my) {
        const std::size_t row = grid_.index(fw.base[0], fw.base[1] + my, fw.base[2] + mz);
        for (int mx = 0; mx < 4; ++mx) {
          const std::size_t cp = row + static_cast<std::size_t>(mx);
          const double wx = fw.w[0][mx], wy = fw.w[1][my], wz = fw.w[2][mz];
          const double dx = fw.dw[0][mx], dy = fw.dw[1][my], dz = fw.dw[2][mz];
          const Eigen::Vector3d eta(grid_.coef[0][cp], grid_.coef[1][cp], grid_.coef[2][cp]);
          j.col(0) += eta * (dx * wy * wz);
          j.col(1) += eta * (wx * dy * wz);
          j.col(2) += eta * (wx * wy * dz);
        }
      }
    return j;
  }

  /// Exact dyadic subdivision: the returned transform has spacing delta/2
  /// and induces the same displacement field over the whole domain.
  FfdTransform refine() const {
    const std::array<double, 3> half{grid_.delta[0] / 2.0, grid_.delta[1] / 2.0,
                                     grid_.delta[2] / 2.0};
    ControlGrid fine = ControlGrid::cover(grid_.domain, half);
    // Per-axis subdivision stencils. New CP j sits at old half-step m = j+2:
    // even m -> (c[i-1] + 6 c[i] + c[i+1]) / 8 at i = m/2,
    // odd  m -> (c[i] + c[i+1]) / 2 at i = (m-1)/2.
    std::array<std::vector<std::array<std::pair<int, double>, 3>>, 3> stencil;
    std::array<std::vector<int>, 3> stencil_len;
    for (int a = 0; a < 3; ++a) {
      stencil[a].resize(static_cast<std::size_t>(fine.mesh_dims[a]));
      stencil_len[a].resize(static_cast<std::size_t>(fine.mesh_dims[a]));
      for (int j = 0; j < fine.mesh_dims[a]; ++j) {
        const int m = j + 2;
        auto& s = stencil[a][static_cast<std::size_t>(j)];
        if (m % 2 == 0) {
          const int i = m / 2;
          s[0] = {i - 1, 1.0 / 8.0};
          s[1] = {i, 6.0 / 8.0};
          s[2] = {i + 1, 1.0 / 8.0};
          stencil_len[a][static_cast<std::size_t>(j)] = 3;
        } else {
          const int i = (m - 1) / 2;
          s[0] = {i, 0.5};
          s[1] = {i + 1, 0.5};
          stencil_len[a][static_cast<std::size_t>(j)] = 2;
        }
        for (int t = 0; t < stencil_len[a][static_cast<std::size_t>(j)]; ++t)
          if (s[static_cast<std::size_t>(t)].first < 0 ||
              s[static_cast<std::size_t>(t)].first >= grid_.mesh_dims[a])
            throw ValidationError("ffd refine: subdivision stencil out of range");
      }
    }
    for (int k = 0; k < fine.mesh_dims[2]; ++k)
      for (int j = 0; j < fine.mesh_dims[1]; ++j)
        for (int i = 0; i < fine.mesh_dims[0]; ++i) {
          double acc[3] = {0.0, 0.0, 0.0};
          for (int tz = 0; tz < stencil_len[2][static_cast<std::size_t>(k)]; ++tz)
            for (int ty = 0; ty < stencil_len[1][static_cast<std::size_t>(j)]; ++ty)
              for (int tx = 0; tx < stencil_len[0][static_cast<std::size_t>(i)]; ++tx) {
                const auto& sx = stencil[0][static_cast<std::size_t>(i)][static_cast<std::size_t>(tx)];
                const auto& sy = stencil[1][static_cast<std::size_t>(j)][static_cast<std::size_t>(ty)];
                const auto& sz = stencil[2][static_cast<std::size_t>(k)][static_cast<std::size_t>(tz)];
                const double w = sx.second * sy.second * sz.second;
                const std::size_t old = grid_.index(sx.first, sy.first, sz.first);
                for (int a = 0; a < 3; ++a) acc[a] += w * grid_.coef[a][old];
              }
          const std::size_t idx = fine.index(i, j, k);
          for (int a = 0; a < 3; ++a) fine.coef[a][idx] = acc[a];
        }
    return FfdTransform(std::move(fine));
  }

  /// Displacement at every voxel center of `geometry` (must lie inside the
  /// covered domain).
  VectorField render_field(const GridGeometry& geometry) const {
    VectorField f = make_vector_field(geometry);
    for (int k = 0; k < geometry.dims[2]; ++k)
      for (int j = 0; j < geometry.dims[1]; ++j)
        for (int i = 0; i < geometry.dims[0]; ++i) {
          const Eigen::Vector3d x = geometry.position(i, j, k);
          if (!in_domain(x))
            throw ValidationError("ffd render: geometry leaves the covered domain");
          f.set_vec(geometry.index(i, j, k), displacement(x));
        }
    return f;
  }

private:
  ControlGrid grid_;
};

struct ResampleResult {
  ScalarVolume volume;
  std::vector<std::uint8_t> valid;  // 1 where the mapped point was inside
  std::size_t excluded = 0;
};

/// Pulls `moving` back through `transform` onto `target`: out(x) =
/// moving(g(x)) with prefiltered cubic interpolation; samples mapping
/// outside the moving volume are zero-filled and masked out.
template <typename TransformT>
ResampleResult resample(const ScalarVolume& moving, const TransformT& transform,
                        const GridGeometry& target) {
  const CubicInterpolator interp(moving);
  ResampleResult r;
  r.volume = make_scalar_volume(target);
  r.valid.assign(target.num_voxels(), 0);
  CubicSampleWeights sw;
  for (int k = 0; k < target.dims[2]; ++k)
    for (int j = 0; j < target.dims[1]; ++j)
      for (int i = 0; i < target.dims[0]; ++i) {
        const std::size_t idx = target.index(i, j, k);
        const Eigen::Vector3d y = transform.transform_point(target.position(i, j, k));
        if (interp.weights_at(y, sw)) {
          r.volume.samples[idx] = interp.value(sw);
          r.valid[idx] = 1;
        } else {
          ++r.excluded;
        }
      }
  return r;
}

/// DTV serialization of an FFD ("ffd" kind): the geometry fields describe
/// the covered image grid; "mesh_dims" and "delta" describe the mesh. The
/// payload is 3 coefficient channels, x-fastest over the mesh.
inline void save_ffd(const FfdTransform& t, const std::string& path) {
  const ControlGrid& g = t.grid();
  auto h = dtv::geometry_header("ffd", g.domain);
  h["mesh_dims"] = g.mesh_dims;
  h["delta"] = g.delta;
  dtv::write_file(path, h, {&g.coef[0], &g.coef[1], &g.coef[2]});
}

inline FfdTransform load_ffd(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("dtv: cannot open " + path);
  const auto h = dtv::parse_header(is, path);
  if (dtv::header_field<std::string>(h, "kind") != "ffd")
    throw FormatError("expected an ffd DTV file: " + path);
  const GridGeometry domain = dtv::header_geometry(h);
  const auto delta = dtv::header_field<std::array<double, 3>>(h, "delta");
  const auto mesh_dims = dtv::header_field<std::array<int, 3>>(h, "mesh_dims");
  ControlGrid g = ControlGrid::cover(domain, delta);
  if (g.mesh_dims != mesh_dims)
    throw FormatError("dtv: header field \"mesh_dims\" inconsistent with dims/spacing/delta");
  const std::size_t n = g.num_points();
  for (int a = 0; a < 3; ++a) g.coef[a] = dtv::read_payload(is, n, "ffd coefficients");
  dtv::expect_end(is, path);
  return FfdTransform(std::move(g));
}

}  // namespace dtireg
