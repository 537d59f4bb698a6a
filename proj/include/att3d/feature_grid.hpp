#pragma once

// Multi-resolution dense voxel point encoder.

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "att3d/autodiff.hpp"
#include "att3d/errors.hpp"
#include "att3d/tensor.hpp"
#include "att3d/trilinear.hpp"

namespace att3d {

struct GridConfig {
  std::vector<std::size_t> resolutions{9, 14, 22, 36, 58};
  std::size_t features_per_level = 4;
  /// Grid spans the cube [-radius, radius]^3.
  double radius = 2.0;

  void validate() const {
    if (resolutions.empty()) throw ConfigError("grid needs at least one level");
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
      if (resolutions[i] < 2) throw ConfigError("grid resolution must be >= 2");
      if (i > 0 && resolutions[i] <= resolutions[i - 1]) {
        throw ConfigError("grid resolutions must be strictly increasing");
      }
    }
    if (features_per_level == 0) throw ConfigError("features_per_level must be positive");
    if (!(radius > 0)) throw ConfigError("grid radius must be positive");
  }

  std::size_t levels() const { return resolutions.size(); }
  std::size_t feature_width() const { return levels() * features_per_level; }
  std::size_t level_rows(std::size_t level) const {
    const std::size_t r = resolutions.at(level);
    return r * r * r;
  }
  std::size_t level_size(std::size_t level) const { return level_rows(level) * features_per_level; }
  /// Offset of a level's block inside the flat parameter vector.
  std::size_t level_offset(std::size_t level) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < level; ++l) off += level_size(l);
    return off;
  }
  std::size_t param_count() const { return level_offset(levels()); }

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

/// Per-level feature tables (res^3 x features_per_level).
template <class T>
struct GridParams {
  std::vector<Matrix<T>> levels;

  static GridParams zeros(const GridConfig& cfg) {
    GridParams g;
    for (std::size_t l = 0; l < cfg.levels(); ++l) {
      g.levels.emplace_back(cfg.level_rows(l), cfg.features_per_level);
    }
    return g;
  }

  /// Splits a flat vector laid out level by level, low resolution first.
  static GridParams from_flat(std::span<const T> flat, const GridConfig& cfg) {
    if (flat.size() != cfg.param_count()) {
      throw StructuralError("grid parameter vector has " + std::to_string(flat.size()) +
                            " entries, layout needs " + std::to_string(cfg.param_count()));
    }
    GridParams g;
    for (std::size_t l = 0; l < cfg.levels(); ++l) {
      const auto begin = flat.begin() + static_cast<std::ptrdiff_t>(cfg.level_offset(l));
      g.levels.emplace_back(cfg.level_rows(l), cfg.features_per_level,
                            std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(cfg.level_size(l))));
    }
    return g;
  }

  void check(const GridConfig& cfg) const {
    if (levels.size() != cfg.levels()) throw StructuralError("grid level count mismatch");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (levels[l].rows() != cfg.level_rows(l) || levels[l].cols() != cfg.features_per_level) {
        throw StructuralError("grid level " + std::to_string(l) + " has shape " +
                              levels[l].shape_string());
      }
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.size();
    return n;
  }
};

inline TrilinearCorners trilinear_weights(const Vec3& x, std::size_t res, double radius = 2.0) {
  const double p[3] = {x.x, x.y, x.z};
  return trilinear_corners(p, res, radius);
}

template <class T>
std::vector<T> encode_point(const Vec3& x, const GridParams<T>& w, const GridConfig& cfg) {
  w.check(cfg);
  std::vector<T> out(cfg.feature_width(), T(0));
  const std::size_t f = cfg.features_per_level;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const TrilinearCorners tc = trilinear_weights(x, cfg.resolutions[l], cfg.radius);
    for (int c = 0; c < 8; ++c) {
      const auto row = w.levels[l].row(tc.index[c]);
      for (std::size_t k = 0; k < f; ++k) out[l * f + k] += static_cast<T>(tc.weight[c]) * row[k];
    }
  }
  return out;
}

/// Tape form of encode_point for a batch of points (N x 3) -> (N x width).
template <class T>
Var encode_points(Tape<T>& tape, std::span<const Var> level_tables, Var points,
                  const GridConfig& cfg) {
  if (level_tables.size() != cfg.levels()) throw StructuralError("grid level count mismatch");
  std::vector<Var> parts;
  parts.reserve(cfg.levels());
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    parts.push_back(tape.trilinear(level_tables[l], points, cfg.resolutions[l], cfg.radius));
  }
  if (parts.size() == 1) return parts[0];
  return tape.concat(parts);
}

}  // namespace att3d
