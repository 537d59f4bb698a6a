#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "att3d/errors.hpp"

namespace att3d {

/// The 8 grid nodes surrounding a query point and their interpolation weights.
///
/// The grid has `res` nodes per axis spread uniformly over [-radius, radius].
/// Node (ix, iy, iz) has flat index (iz * res + iy) * res + ix. Queries outside
/// the cube are clamped to its boundary; `inside[a]` records whether axis `a`
/// was left unclamped (the derivative along a clamped axis is zero).
struct TrilinearCorners {
  std::array<std::uint32_t, 8> index{};
  std::array<double, 8> weight{};
  std::array<double, 3> frac{};
  std::array<bool, 3> inside{};
  /// d(local coordinate)/d(world coordinate).
  double coord_scale = 0;
};

/// Corner c uses offset bit 0 for x, bit 1 for y, bit 2 for z.
inline TrilinearCorners trilinear_corners(const double p[3], std::size_t res, double radius) {
  if (res < 2) throw StructuralError("grid resolution must be >= 2");
  TrilinearCorners out;
  const double cells = static_cast<double>(res - 1);
  out.coord_scale = cells / (2.0 * radius);
  std::array<std::size_t, 3> base{};
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(p[a])) throw InputError("non-finite query point");
    double u = (p[a] + radius) * out.coord_scale;
    out.inside[a] = u >= 0.0 && u <= cells;
    u = std::clamp(u, 0.0, cells);
    auto i0 = static_cast<std::size_t>(std::floor(u));
    if (i0 > res - 2) i0 = res - 2;
    base[a] = i0;
    out.frac[a] = u - static_cast<double>(i0);
  }
  for (int c = 0; c < 8; ++c) {
    const std::size_t dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double wx = dx ? out.frac[0] : 1.0 - out.frac[0];
    const double wy = dy ? out.frac[1] : 1.0 - out.frac[1];
    const double wz = dz ? out.frac[2] : 1.0 - out.frac[2];
    out.weight[c] = wx * wy * wz;
    out.index[c] = static_cast<std::uint32_t>(((base[2] + dz) * res + (base[1] + dy)) * res +
                                              (base[0] + dx));
  }
  return out;
}

/// d weight[c] / d frac[axis].
inline double trilinear_weight_derivative(const TrilinearCorners& t, int c, int axis) {
  double d = 1.0;
  for (int a = 0; a < 3; ++a) {
    const bool hi = (c >> a) & 1;
    if (a == axis) {
      d *= hi ? 1.0 : -1.0;
    } else {
      d *= hi ? t.frac[a] : 1.0 - t.frac[a];
    }
  }
  return d;
}

}  // namespace att3d
