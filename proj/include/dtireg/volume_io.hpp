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

// DTV container: one UTF-8 JSON header line terminated by '\n', then a raw
// little-endian float32 payload, x-fastest, arrays concatenated in declared
// component/channel order. Kinds: "scalar", "tensor" (6 components in
// (xx,xy,xz,yy,yz,zz) order), "dwi" (S0 first, then DW volumes in gradient
// order), "field" (3 channels), and "ffd" (control-grid coefficients, see
// ffd.hpp).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dtireg/errors.hpp"
#include "dtireg/volume.hpp"

namespace dtireg {

namespace dtv {

using nlohmann::json;

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
}

inline void write_payload(std::ostream& os, const std::vector<double>& data) {
  std::vector<std::uint32_t> buf(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    buf[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * 4));
}

/// Reads exactly `count` float32 samples; throws a truncation error if the
/// stream runs short and a data error on non-finite values.
inline std::vector<double> read_payload(std::istream& is, std::size_t count, const char* what) {
  std::vector<std::uint32_t> buf(count);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<std::size_t>(is.gcount()) != count * 4)
    throw FormatError(std::string("dtv: truncated payload for ") + what + " (expected " +
                      std::to_string(count) + " float32 samples)");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(to_le(buf[i]));
    if (!std::isfinite(f))
      throw FormatError(std::string("dtv: non-finite sample in ") + what + " at index " +
                        std::to_string(i));
    out[i] = static_cast<double>(f);
  }
  return out;
}

inline json parse_header(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dtv: missing header line in " + path);
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError("dtv: malformed JSON header in " + path + ": " + e.what());
  }
  return h;
}

template <typename T>
T header_field(const json& h, const char* name) {
  if (!h.contains(name)) throw FormatError(std::string("dtv: header missing field \"") + name + "\"");
  try {
    return h.at(name).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("dtv: header field \"") + name + "\" has the wrong type");
  }
}

inline GridGeometry header_geometry(const json& h) {
  GridGeometry g;
  const auto dims = header_field<std::array<int, 3>>(h, "dims");
  g.dims = dims;
  g.spacing = header_field<std::array<double, 3>>(h, "spacing");
  g.origin = header_field<std::array<double, 3>>(h, "origin");
  g.validate();
  return g;
}

inline json geometry_header(const std::string& kind, const GridGeometry& g) {
  json h;
  h["kind"] = kind;
  h["dims"] = g.dims;
  h["spacing"] = g.spacing;
  h["origin"] = g.origin;
  return h;
}

inline void write_file(const std::string& path, const json& header,
                       const std::vector<const std::vector<double>*>& arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("dtv: cannot open " + path + " for writing");
  os << header.dump() << '\n';
  for (const auto* a : arrays) write_payload(os, *a);
  if (!os) throw IoError("dtv: write failed for " + path);
}

inline void expect_end(std::istream& is, const std::string& path) {
  char extra;
  if (is.read(&extra, 1))
    throw FormatError("dtv: payload larger than header declares in " + path);
}

}  // namespace dtv

using VolumeVariant = std::variant<ScalarVolume, TensorVolume, DwiSet, VectorField>;

inline void save_volume(const ScalarVolume& v, const std::string& path) {
  v.validate();
  dtv::write_file(path, dtv::geometry_header("scalar", v.geom), {&v.samples});
}

inline void save_volume(const TensorVolume& v, const std::string& path) {
  v.validate();
  auto h = dtv::geometry_header("tensor", v.geom);
  h["components"] = 6;
  dtv::write_file(path, h,
                  {&v.comp[0], &v.comp[1], &v.comp[2], &v.comp[3], &v.comp[4], &v.comp[5]});
}

inline void save_volume(const VectorField& v, const std::string& path) {
  v.validate();
  auto h = dtv::geometry_header("field", v.geom);
  h["channels"] = 3;
  dtv::write_file(path, h, {&v.comp[0], &v.comp[1], &v.comp[2]});
}

inline void save_volume(const DwiSet& d, const std::string& path) {
  d.validate();
  auto h = dtv::geometry_header("dwi", d.s0.geom);
  std::vector<std::array<double, 3>> grads;
  for (const auto& g : d.gradients) grads.push_back({g.x(), g.y(), g.z()});
  h["gradients"] = grads;
  h["bvalue"] = d.bvalue;
  std::vector<const std::vector<double>*> arrays{&d.s0.samples};
  for (const auto& w : d.dwis) arrays.push_back(&w.samples);
  dtv::write_file(path, h, arrays);
}

inline VolumeVariant load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("dtv: cannot open " + path);
  const auto h = dtv::parse_header(is, path);
  const auto kind = dtv::header_field<std::string>(h, "kind");
  const GridGeometry geom = dtv::header_geometry(h);
  const std::size_t n = geom.num_voxels();

  if (kind == "scalar") {
    ScalarVolume v;
    v.geom = geom;
    v.samples = dtv::read_payload(is, n, "scalar volume");
    dtv::expect_end(is, path);
    v.validate();
    return v;
  }
  if (kind == "tensor") {
    if (dtv::header_field<int>(h, "components") != 6)
      throw FormatError("dtv: tensor header field \"components\" must be 6");
    TensorVolume v;
    v.geom = geom;
    for (int c = 0; c < 6; ++c) v.comp[c] = dtv::read_payload(is, n, "tensor component");
    dtv::expect_end(is, path);
    v.validate();
    return v;
  }
  if (kind == "field") {
    if (dtv::header_field<int>(h, "channels") != 3)
      throw FormatError("dtv: field header field \"channels\" must be 3");
    VectorField v;
    v.geom = geom;
    for (int c = 0; c < 3; ++c) v.comp[c] = dtv::read_payload(is, n, "field channel");
    dtv::expect_end(is, path);
    v.validate();
    return v;
  }
  if (kind == "dwi") {
    DwiSet d;
    const auto grads = dtv::header_field<std::vector<std::array<double, 3>>>(h, "gradients");
    d.bvalue = dtv::header_field<double>(h, "bvalue");
    d.s0.geom = geom;
    d.s0.samples = dtv::read_payload(is, n, "dwi S0");
    for (std::size_t k = 0; k < grads.size(); ++k) {
      Eigen::Vector3d g(grads[k][0], grads[k][1], grads[k][2]);
      const double norm = g.norm();
      if (!(norm > 0.0))
        throw FormatError("dtv: header field \"gradients\" contains a zero vector");
      d.gradients.push_back(g / norm);  // stored normalized
      ScalarVolume w;
      w.geom = geom;
      w.samples = dtv::read_payload(is, n, "dwi volume");
      d.dwis.push_back(std::move(w));
    }
    dtv::expect_end(is, path);
    d.validate();
    return d;
  }
  throw FormatError("dtv: unknown header field \"kind\": " + kind);
}

inline ScalarVolume load_scalar(const std::string& path) {
  auto v = load_volume(path);
  if (auto* p = std::get_if<ScalarVolume>(&v)) return std::move(*p);
  throw FormatError("expected a scalar DTV file: " + path);
}

inline TensorVolume load_tensor(const std::string& path) {
  auto v = load_volume(path);
  if (auto* p = std::get_if<TensorVolume>(&v)) return std::move(*p);
  throw FormatError("expected a tensor DTV file: " + path);
}

inline VectorField load_field(const std::string& path) {
  auto v = load_volume(path);
  if (auto* p = std::get_if<VectorField>(&v)) return std::move(*p);
  throw FormatError("expected a field DTV file: " + path);
}

inline DwiSet load_dwi(const std::string& path) {
  auto v = load_volume(path);
  if (auto* p = std::get_if<DwiSet>(&v)) return std::move(*p);
  throw FormatError("expected a dwi DTV file: " + path);
}

namespace detail {

/// Min-max normalization to [0,255]; a zero value range maps to 0.
inline std::uint8_t normalize_byte(double v, double lo, double hi) {
  if (!(hi > lo)) return 0;
  double t = (v - lo) / (hi - lo);
  if (t < 0.0) t = 0.0;
  if (t > 1.0) t = 1.0;
  return static_cast<std::uint8_t>(std::lround(t * 255.0));
}

inline void slice_dims(const GridGeometry& g, int axis, int& nu, int& nv) {
  switch (axis) {
    case 0: nu = g.dims[1]; nv = g.dims[2]; break;
    case 1: nu = g.dims[0]; nv = g.dims[2]; break;
    default: nu = g.dims[0]; nv = g.dims[1]; break;
  }
}

inline std::size_t slice_index(const GridGeometry& g, int axis, int index, int u, int v) {
  switch (axis) {
    case 0: return g.index(index, u, v);
    case 1: return g.index(u, index, v);
    default: return g.index(u, v, index);
  }
}

}  // namespace detail

/// Writes one slice as a binary PPM (P6), min-max normalized per channel.
/// `axis` is 0/1/2 for x/y/z; the image u-axis is the first remaining grid
/// axis (left to right) and the v-axis the second (top to bottom).
inline void export_slice_ppm(const std::array<const ScalarVolume*, 3>& rgb, int axis, int index,
                             const std::string& path) {
  const GridGeometry& g = rgb[0]->geom;
  for (const auto* v : rgb) {
    v->validate();
    if (v->geom != g) throw ValidationError("ppm export: channels must share one geometry");
  }
  if (axis < 0 || axis > 2) throw ValidationError("ppm export: axis must be 0, 1 or 2");
  if (index < 0 || index >= g.dims[axis])
    throw ValidationError("ppm export: slice index " + std::to_string(index) +
                          " out of range for axis " + std::to_string(axis));

  std::array<double, 3> lo{}, hi{};
  for (int c = 0; c < 3; ++c) {
    lo[c] = std::numeric_limits<double>::infinity();
    hi[c] = -std::numeric_limits<double>::infinity();
    for (double s : rgb[c]->samples) {
      lo[c] = std::min(lo[c], s);
      hi[c] = std::max(hi[c], s);
    }
  }

  int nu = 0, nv = 0;
  detail::slice_dims(g, axis, nu, nv);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("ppm export: cannot open " + path);
  os << "P6\n" << nu << ' ' << nv << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(nu) * 3);
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      const std::size_t idx = detail::slice_index(g, axis, index, u, v);
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(u) * 3 + static_cast<std::size_t>(c)] =
            detail::normalize_byte(rgb[c]->samples[idx], lo[c], hi[c]);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("ppm export: write failed for " + path);
}

inline void export_slice_ppm(const ScalarVolume& vol, int axis, int index,
                             const std::string& path) {
  export_slice_ppm({&vol, &vol, &vol}, axis, index, path);
}

}  // namespace dtireg
