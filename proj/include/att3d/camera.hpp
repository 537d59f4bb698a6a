#pragma once

// Camera and light sampling, ray generation and bounding-sphere clipping.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "att3d/errors.hpp"
#include "att3d/random.hpp"
#include "att3d/tensor.hpp"

namespace att3d {

enum class ShadingMode { albedo, textureless, full };
enum class ViewBucket { front, side, rear };

inline const char* to_string(ShadingMode m) {
  switch (m) {
    case ShadingMode::albedo: return "albedo";
    case ShadingMode::textureless: return "textureless";
    case ShadingMode::full: return "full";
  }
  return "?";
}

inline const char* to_string(ViewBucket v) {
  switch (v) {
    case ViewBucket::front: return "front";
    case ViewBucket::side: return "side";
    case ViewBucket::rear: return "rear";
  }
  return "?";
}

inline double degrees(double deg) { return deg * std::numbers::pi / 180.0; }

struct Range {
  double lo = 0, hi = 0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct CameraConfig {
  Range distance{2.0, 3.0};
  Range focal{0.7, 1.35};
  Range elevation{degrees(-10.0), degrees(45.0)};
  Range light_distance{1.0, 3.0};
  double light_max_angle = std::numbers::pi / 4;
  Range ambient{0.2, 1.0};
  /// Probabilities of albedo, full and textureless shading (normalized on use).
  double p_albedo = 0.5, p_full = 0.25, p_textureless = 0.25;
  /// Half-width of the front and rear azimuth buckets.
  double front_half_width = degrees(45.0);
};

/// Azimuth 0 looks at the front of the object (camera on +x).
inline ViewBucket view_bucket(double azimuth, double front_half_width = degrees(45.0)) {
  double a = std::fmod(azimuth, 2 * std::numbers::pi);
  if (a < 0) a += 2 * std::numbers::pi;
  const double from_front = std::min(a, 2 * std::numbers::pi - a);
  if (from_front <= front_half_width) return ViewBucket::front;
  if (from_front >= std::numbers::pi - front_half_width) return ViewBucket::rear;
  return ViewBucket::side;
}

struct CameraSample {
  double distance = 2.5;
  double azimuth = 0;
  double elevation = 0;
  double focal = 1.0;
  Vec3 light{0, 0, 3};
  ShadingMode mode = ShadingMode::albedo;
  /// Ambient term used by textureless and full shading.
  double ambient = 1.0;
  double front_half_width = degrees(45.0);

  ViewBucket view() const { return view_bucket(azimuth, front_half_width); }

  /// Camera position, looking at the origin; z is up.
  Vec3 position() const {
    return {distance * std::cos(elevation) * std::cos(azimuth),
            distance * std::cos(elevation) * std::sin(azimuth), distance * std::sin(elevation)};
  }

  friend bool operator==(const CameraSample&, const CameraSample&) = default;
};

/// Fixed pose with albedo shading and an overhead light.
inline CameraSample make_camera(double azimuth, double elevation, double distance, double focal) {
  CameraSample c;
  c.azimuth = azimuth;
  c.elevation = elevation;
  c.distance = distance;
  c.focal = focal;
  c.light = c.position() + Vec3{0, 0, 1};
  return c;
}

inline CameraSample sample_camera(Rng& rng, const CameraConfig& cfg) {
  CameraSample c;
  c.front_half_width = cfg.front_half_width;
  c.distance = uniform(rng, cfg.distance.lo, cfg.distance.hi);
  c.azimuth = uniform(rng, 0.0, 2 * std::numbers::pi);
  c.elevation = uniform(rng, cfg.elevation.lo, cfg.elevation.hi);
  c.focal = uniform(rng, cfg.focal.lo, cfg.focal.hi);

  const Vec3 dir = normalized(c.position());
  const Vec3 helper = std::abs(dir.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  const Vec3 e1 = normalized(cross(dir, helper));
  const Vec3 e2 = cross(dir, e1);
  const double angle = uniform(rng, 0.0, cfg.light_max_angle);
  const double phi = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double light_dist = uniform(rng, cfg.light_distance.lo, cfg.light_distance.hi);
  const Vec3 light_dir = std::cos(angle) * dir +
                         std::sin(angle) * (std::cos(phi) * e1 + std::sin(phi) * e2);
  c.light = light_dist * light_dir;

  const double total = cfg.p_albedo + cfg.p_full + cfg.p_textureless;
  const double pick = uniform(rng, 0.0, total);
  if (pick < cfg.p_albedo) {
    c.mode = ShadingMode::albedo;
  } else if (pick < cfg.p_albedo + cfg.p_full) {
    c.mode = ShadingMode::full;
  } else {
    c.mode = ShadingMode::textureless;
  }
  c.ambient = uniform(rng, cfg.ambient.lo, cfg.ambient.hi);
  return c;
}

/// Angle between the light and the camera as seen from the origin.
inline double light_angle(const CameraSample& c) {
  const double cosang = dot(normalized(c.light), normalized(c.position()));
  return std::acos(std::clamp(cosang, -1.0, 1.0));
}

struct Ray {
  Vec3 origin;
  Vec3 dir;
  double t_near = 0;
  double t_far = 0;
  bool hit = false;
};

/// Entry and exit parameters of a unit-direction ray against a sphere at the
/// origin. Tangent rays count as misses; an origin inside gives t_near = 0.
inline std::optional<std::pair<double, double>> ray_sphere_segment(const Vec3& origin,
                                                                   const Vec3& dir,
                                                                   double radius = 2.0) {
  const double b = dot(origin, dir);
  const double c = dot(origin, origin) - radius * radius;
  const double disc = b * b - c;
  if (!(disc > 0)) return std::nullopt;
  const double s = std::sqrt(disc);
  const double t0 = -b - s, t1 = -b + s;
  if (t1 <= 0) return std::nullopt;
  return std::make_pair(std::max(t0, 0.0), t1);
}

struct CameraBasis {
  Vec3 position, forward, right, up;
};

inline CameraBasis camera_basis(const CameraSample& cam) {
  CameraBasis b;
  b.position = cam.position();
  b.forward = normalized(-b.position);
  const Vec3 world_up = std::abs(b.forward.z) > 0.999 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
  b.right = normalized(cross(b.forward, world_up));
  b.up = cross(b.right, b.forward);
  return b;
}

/// Focal length is in units of image width; row 0 is the top of the image.
inline Vec3 pixel_direction(const CameraBasis& b, double focal, std::size_t px, std::size_t py,
                            std::size_t width, std::size_t height) {
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const double sx = (static_cast<double>(px) + 0.5 - w / 2) / (focal * w);
  const double sy = (static_cast<double>(py) + 0.5 - h / 2) / (focal * w);
  return normalized(b.forward + sx * b.right - sy * b.up);
}

/// One ray per pixel in row-major order, clipped to the bounding sphere.
inline std::vector<Ray> generate_rays(const CameraSample& cam, std::size_t width,
                                      std::size_t height, double radius = 2.0) {
  if (width == 0 || height == 0) throw InputError("image size must be positive");
  if (!(cam.focal > 0)) throw InputError("focal length must be positive");
  const CameraBasis basis = camera_basis(cam);
  std::vector<Ray> rays;
  rays.reserve(width * height);
  for (std::size_t py = 0; py < height; ++py) {
    for (std::size_t px = 0; px < width; ++px) {
      Ray r;
      r.origin = basis.position;
      r.dir = pixel_direction(basis, cam.focal, px, py, width, height);
      if (auto seg = ray_sphere_segment(r.origin, r.dir, radius)) {
        r.hit = true;
        r.t_near = seg->first;
        r.t_far = seg->second;
      }
      rays.push_back(r);
    }
  }
  return rays;
}

}  // namespace att3d
