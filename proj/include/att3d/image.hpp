#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "att3d/errors.hpp"

namespace att3d {

using Rgb = std::array<double, 3>;

/// Row-major RGB image with channels interleaved, values nominally in [0, 1].
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::size_t pixels() const { return width * height; }
  std::size_t size() const { return rgb.size(); }
  double& at(std::size_t px, std::size_t py, int c) { return rgb[(py * width + px) * 3 + c]; }
  double at(std::size_t px, std::size_t py, int c) const { return rgb[(py * width + px) * 3 + c]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw StructuralError(std::string(what) + ": image sizes " + std::to_string(a.width) + "x" +
                          std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                          std::to_string(b.height) + " differ");
  }
}

inline double squared_error(const Image& a, const Image& b) {
  require_same_shape(a, b, "squared_error");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    s += d * d;
  }
  return s;
}

inline double mean_abs_error(const Image& a, const Image& b) {
  require_same_shape(a, b, "mean_abs_error");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.rgb[i] > b.rgb[i] ? a.rgb[i] - b.rgb[i] : b.rgb[i] - a.rgb[i];
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

}  // namespace att3d
