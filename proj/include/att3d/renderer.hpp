#pragma once

// Volume compositing, shading and the per-chunk render graph.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "att3d/autodiff.hpp"
#include "att3d/camera.hpp"
#include "att3d/feature_grid.hpp"
#include "att3d/image.hpp"
#include "att3d/neural_fields.hpp"

namespace att3d {



struct CompositeResult {
  Rgb rgb{};
  double alpha = 0;
  std::vector<double> weights;
  double transmittance = 1;
};

/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
/// pixel = sum T_i alpha_i c_i + T_N background.
inline CompositeResult composite(std::span<const double> sigmas, std::span<const Rgb> colors,
                                 std::span<const double> deltas, const Rgb& background) {
  if (sigmas.size() != colors.size() || sigmas.size() != deltas.size()) {
    throw StructuralError("composite: sigma, color and delta lists differ in length");
  }
  CompositeResult out;
  out.weights.resize(sigmas.size());
  double trans = 1.0;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double a = 1.0 - std::exp(-sigmas[i] * deltas[i]);
    const double w = trans * a;
    out.weights[i] = w;
    for (int c = 0; c < 3; ++c) out.rgb[c] += w * colors[i][c];
    trans *= 1.0 - a;
  }
  for (int c = 0; c < 3; ++c) out.rgb[c] += trans * background[c];
  out.transmittance = trans;
  out.alpha = 1.0 - trans;
  return out;
}

/// Gradients shorter than this give no usable normal.
inline constexpr double kNormalFloor = 1e-8;

/// Lambertian factor a + (1 - a) max(0, n . l) for a point lit from `light`.
inline double shading_factor(const Vec3& normal, const Vec3& light, const Vec3& point,
                             double ambient) {
  const Vec3 l = normalized(light - point);
  return ambient + (1.0 - ambient) * std::max(0.0, dot(normal, l));
}

/// A missing normal (nullopt) falls back to albedo shading.
inline Rgb shade(const Rgb& albedo, const std::optional<Vec3>& normal, const Vec3& light,
                 const Vec3& point, ShadingMode mode, double ambient) {
  if (mode == ShadingMode::albedo || !normal) return albedo;
  const double f = shading_factor(*normal, light, point, ambient);
  if (mode == ShadingMode::textureless) return {f, f, f};
  return {albedo[0] * f, albedo[1] * f, albedo[2] * f};
}

struct SampleOptions {
  std::size_t n_samples = 32;
  bool jitter = false;
  double radius = 2.0;
};

/// Ray samples for a contiguous block of rays, laid out ray-major.
template <class T>
struct RaySamples {
  std::size_t rays = 0, samples = 0;
  Matrix<T> points;      // rays*samples x 3
  Matrix<T> deltas;      // rays x samples, zero on rays missing the sphere
  Matrix<T> directions;  // rays x 3
};

/// Midpoints of `n_samples` uniform segments; `jitter` holds a per-ray
/// offset in [0, 1) replacing the 0.5 midpoint when non-empty.
template <class T>
RaySamples<T> sample_rays(std::span<const Ray> rays, const SampleOptions& opt,
                          std::span<const double> jitter = {}) {
  if (opt.n_samples == 0) throw InputError("need at least one sample per ray");
  RaySamples<T> s;
  s.rays = rays.size();
  s.samples = opt.n_samples;
  s.points = Matrix<T>(s.rays * s.samples, 3);
  s.deltas = Matrix<T>(s.rays, s.samples);
  s.directions = Matrix<T>(s.rays, 3);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Ray& ray = rays[r];
    for (int a = 0; a < 3; ++a) s.directions(r, a) = static_cast<T>(ray.dir[a]);
    const double offset = jitter.empty() ? 0.5 : jitter[r];
    const double delta = ray.hit ? (ray.t_far - ray.t_near) / static_cast<double>(s.samples) : 0.0;
    for (std::size_t i = 0; i < s.samples; ++i) {
      const double t = ray.t_near + (static_cast<double>(i) + offset) * delta;
      const Vec3 p = ray.hit ? ray.origin + t * ray.dir : Vec3{};
      const std::size_t row = r * s.samples + i;
      s.points(row, 0) = static_cast<T>(p.x);
      s.points(row, 1) = static_cast<T>(p.y);
      s.points(row, 2) = static_cast<T>(p.z);
      s.deltas(r, i) = static_cast<T>(delta);
    }
  }
  return s;
}

template <class T>
Matrix<T> posenc_rows(const Matrix<T>& directions, int frequencies) {
  const std::size_t width = 6 * static_cast<std::size_t>(frequencies);
  Matrix<T> out(directions.rows(), width);
  for (std::size_t r = 0; r < directions.rows(); ++r) {
    const Vec3 d{static_cast<double>(directions(r, 0)), static_cast<double>(directions(r, 1)),
                 static_cast<double>(directions(r, 2))};
    const std::vector<double> pe = posenc(d, frequencies);
    for (std::size_t i = 0; i < width; ++i) out(r, i) = static_cast<T>(pe[i]);
  }
  return out;
}

/// Handles of everything a render chunk reads, already on the chunk's tape.
struct FieldVars {
  std::vector<Var> levels;
  HeadVars head;
  Var env_w_hat;
  Var env_b;
  Var v;
};

/// Per-sample normals n = -grad(sigma)/|grad(sigma)| by differentiating the
/// density network with respect to the sample positions. Rows whose gradient
/// is shorter than kNormalFloor are reported as missing.
template <class T>
std::vector<std::optional<Vec3>> density_normals(const std::vector<Matrix<T>>& levels,
                                                 const NerfHeadParams<T>& head,
                                                 const GridConfig& grid, const Matrix<T>& points) {
  Tape<T> tape;
  std::vector<Var> tables;
  for (const auto& l : levels) tables.push_back(tape.constant(l));
  const HeadVars hv = head_vars(tape, head, false);
  const Var x = tape.leaf(points);
  const Var feat = encode_points(tape, tables, x, grid);
  const RadianceVars rad = nerf_head(tape, hv, feat, density_bias_on_tape(tape, x));
  tape.backward(tape.sum(rad.sigma));
  const Matrix<T>& g = tape.grad(x);
  std::vector<std::optional<Vec3>> out(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const Vec3 gv{static_cast<double>(g(i, 0)), static_cast<double>(g(i, 1)),
                  static_cast<double>(g(i, 2))};
    const double n = norm(gv);
    if (n >= kNormalFloor && std::isfinite(n)) out[i] = -gv / n;
  }
  return out;
}

/// Constant per-sample shading terms: color = albedo * scale + offset.
template <class T>
struct ShadingTerms {
  Matrix<T> scale;   // N x 1
  Matrix<T> offset;  // N x 3
};

template <class T>
ShadingTerms<T> shading_terms(const Matrix<T>& points, const std::vector<std::optional<Vec3>>& normals,
                              const CameraSample& cam) {
  ShadingTerms<T> s{Matrix<T>(points.rows(), 1, T(1)), Matrix<T>(points.rows(), 3)};
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (!normals[i]) continue;
    const Vec3 p{static_cast<double>(points(i, 0)), static_cast<double>(points(i, 1)),
                 static_cast<double>(points(i, 2))};
    const double f = shading_factor(*normals[i], cam.light, p, cam.ambient);
    if (cam.mode == ShadingMode::full) {
      s.scale[i] = static_cast<T>(f);
    } else if (cam.mode == ShadingMode::textureless) {
      s.scale[i] = T(0);
      for (int c = 0; c < 3; ++c) s.offset(i, c) = static_cast<T>(f);
    }
  }
  return s;
}

/// max(0, n . d)^2 per sample (rays x samples); zero where the normal is missing.
template <class T>
Matrix<T> orientation_penalty(const RaySamples<T>& s, const std::vector<std::optional<Vec3>>& normals) {
  Matrix<T> out(s.rays, s.samples);
  for (std::size_t r = 0; r < s.rays; ++r) {
    const Vec3 d{static_cast<double>(s.directions(r, 0)), static_cast<double>(s.directions(r, 1)),
                 static_cast<double>(s.directions(r, 2))};
    for (std::size_t i = 0; i < s.samples; ++i) {
      const auto& n = normals[r * s.samples + i];
      if (!n) continue;
      const double k = std::max(0.0, dot(*n, d));
      out(r, i) = static_cast<T>(k * k);
    }
  }
  return out;
}

struct ChunkVars {
  Var rgb;      // rays x 3
  Var alpha;    // rays x 1
  Var weights;  // rays x samples
  Var transmittance;  // rays x 1
};

/// Strictly upper-triangular ones: (tau * U)_i = sum_{j<i} tau_j.
template <class T>
Matrix<T> exclusive_prefix_matrix(std::size_t n) {
  Matrix<T> u(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j + 1; i < n; ++i) u(j, i) = T(1);
  }
  return u;
}

/// Render graph for one block of rays. `shading` may be null for albedo.
template <class T>
ChunkVars render_chunk(Tape<T>& tape, const FieldVars& f, const GridConfig& grid,
                       const RaySamples<T>& s, int posenc_frequencies,
                       const ShadingTerms<T>* shading) {
  const std::size_t R = s.rays, S = s.samples, N = R * S;
  const Var x = tape.constant(s.points);
  const Var feat = encode_points(tape, f.levels, x, grid);
  const RadianceVars rad =
      nerf_head(tape, f.head, feat, tape.constant(density_bias_matrix(s.points)));
  Var color = rad.rgb;
  if (shading) {
    color = tape.add(tape.mul(color, tape.constant(shading->scale)), tape.constant(shading->offset));
  }
  const Var tau = tape.mul(tape.reshape(rad.sigma, R, S), tape.constant(s.deltas));
  const Var cum = tape.matmul(tau, tape.constant(exclusive_prefix_matrix<T>(S)));
  const Var trans = tape.exp(tape.scale(cum, T(-1)));
  const Var trans_next = tape.exp(tape.scale(tape.add(cum, tau), T(-1)));
  ChunkVars out;
  out.weights = tape.sub(trans, trans_next);
  out.transmittance = tape.slice(trans_next, Axis::cols, S - 1, S);
  const Var contrib = tape.sum_groups(tape.mul(color, tape.reshape(out.weights, N, 1)), S);
  const Var pe = tape.constant(posenc_rows(s.directions, posenc_frequencies));
  const Var bg = envmap_on_tape(tape, f.env_w_hat, f.env_b, pe, f.v);
  out.rgb = tape.add(contrib, tape.mul(bg, out.transmittance));
  out.alpha = tape.sub(tape.constant(Matrix<T>::scalar(T(1))), out.transmittance);
  return out;
}

}  // namespace att3d
