#pragma once

#include <array>
#include <cmath>
#include <span>

#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/layout.hpp"

namespace qdmsim {

/// NV-plane imaging geometry. standoff is the NV plane height above the rail
/// plane; rail_plane_z anchors the rail plane above the cell plane so the
/// renderer knows the absolute pixel z = rail_plane_z + standoff.
struct ImageSpec {
  int height_px = 96;
  int width_px = 96;
  double pixel_pitch = 24.0;            // µm
  double standoff = 50.0;               // µm above the rail plane
  std::array<double, 2> origin{0, 0};   // µm of pixel (0,0) corner
  double rail_plane_z = 5.0;            // µm, matches PowerGridSpec.rail_height

  std::array<double, 3> pixel_center(int i, int j) const {
    return {origin[0] + (j + 0.5) * pixel_pitch,
            origin[1] + (i + 0.5) * pixel_pitch, rail_plane_z + standoff};
  }
};

namespace detail {
constexpr double kGuardDistance = 1e-3;  // µm
// mu0/(4*pi) in µT per (µA/µm): 1e-7 T·m/A = 0.1 µT·µm/µA
constexpr double kBiotSavartPrefactor = 0.1;
}  // namespace detail

/// Finite-segment Biot-Savart field in µT at a point in µm for a current in
/// µA. Points on the segment axis beyond the endpoints see an exact zero;
/// points within the guard distance of the segment itself are singular.
inline std::array<double, 3> biot_savart_segment(
    const WireSegment& seg, const std::array<double, 3>& point) {
  const double lx = seg.end[0] - seg.start[0];
  const double ly = seg.end[1] - seg.start[1];
  const double lz = seg.end[2] - seg.start[2];
  const double len = std::sqrt(lx * lx + ly * ly + lz * lz);
  if (len <= 0) throw config_error("degenerate wire segment");
  const double ux = lx / len, uy = ly / len, uz = lz / len;

  const double ax = point[0] - seg.start[0];
  const double ay = point[1] - seg.start[1];
  const double az = point[2] - seg.start[2];
  const double bx = point[0] - seg.end[0];
  const double by = point[1] - seg.end[1];
  const double bz = point[2] - seg.end[2];

  const double t = ax * ux + ay * uy + az * uz;  // axial coordinate
  const double px = ax - t * ux;                 // perpendicular offset
  const double py = ay - t * uy;
  const double pz = az - t * uz;
  const double rho = std::sqrt(px * px + py * py + pz * pz);
  if (rho < detail::kGuardDistance) {
    if (t >= -detail::kGuardDistance && t <= len + detail::kGuardDistance)
      throw singularity_error("field point within guard distance of segment");
    return {0.0, 0.0, 0.0};  // collinear, beyond the ends
  }

  const double na = std::sqrt(ax * ax + ay * ay + az * az);
  const double nb = std::sqrt(bx * bx + by * by + bz * bz);
  const double cos1 = (ax * ux + ay * uy + az * uz) / na;
  const double cos2 = (bx * ux + by * uy + bz * uz) / nb;
  const double mag =
      detail::kBiotSavartPrefactor * seg.current / rho * (cos1 - cos2);
  // Azimuthal direction u x rho_hat
  const double cx = (uy * pz - uz * py) / rho;
  const double cy = (uz * px - ux * pz) / rho;
  const double cz = (ux * py - uy * px) / rho;
  return {mag * cx, mag * cy, mag * cz};
}

/// Superposed field of all segments at every pixel center on the NV plane.
inline VectorFieldImage render_field_image(std::span<const WireSegment> segments,
                                           const ImageSpec& spec) {
  VectorFieldImage img(spec.height_px, spec.width_px, 3);
  for (int i = 0; i < spec.height_px; ++i) {
    for (int j = 0; j < spec.width_px; ++j) {
      const auto p = spec.pixel_center(i, j);
      double bx = 0, by = 0, bz = 0;
      for (const WireSegment& seg : segments) {
        const auto b = biot_savart_segment(seg, p);
        bx += b[0];
        by += b[1];
        bz += b[2];
      }
      img.at(i, j, 0) = bx;
      img.at(i, j, 1) = by;
      img.at(i, j, 2) = bz;
    }
  }
  return img;
}

/// Per-frame noise sigma pinned to the measurement noise floor: the sigma at
/// which a single full-width rail segment carrying noise_floor_ua produces a
/// peak pixel |B| equal to sigma (SNR = 1 for that current).
inline double calibrate_noise(const ImageSpec& spec, const PowerGridSpec& grid,
                              double noise_floor_ua = 0.1) {
  WireSegment seg;
  const double y = spec.origin[1] + spec.height_px * spec.pixel_pitch / 2;
  seg.start = {spec.origin[0], y, grid.rail_height};
  seg.end = {spec.origin[0] + spec.width_px * spec.pixel_pitch, y,
             grid.rail_height};
  seg.current = noise_floor_ua;
  ImageSpec probe = spec;
  probe.rail_plane_z = grid.rail_height;
  double peak = 0.0;
  for (int i = 0; i < probe.height_px; ++i)
    for (int j = 0; j < probe.width_px; ++j) {
      const auto b = biot_savart_segment(seg, probe.pixel_center(i, j));
      const double m = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
      if (m > peak) peak = m;
    }
  return peak;
}

}  // namespace qdmsim
