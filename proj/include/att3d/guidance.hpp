#pragma once

// Noise schedule, classifier-free guidance, a closed-form teacher and the
// pixel-space score-distillation seed.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "att3d/camera.hpp"
#include "att3d/corpus.hpp"
#include "att3d/errors.hpp"
#include "att3d/image.hpp"
#include "att3d/mapping_network.hpp"
#include "att3d/random.hpp"

namespace att3d {

struct NoiseSchedule {
  double t_min = 0.002;
  double t_max = 1.0;
  double omega = 100.0;
};

/// alpha_bar(t) = cos^2(pi t / 2) on (0, 1].
inline double alpha_bar(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw InputError("timestep must lie in (0, 1]");
  const double c = std::cos(0.5 * std::numbers::pi * t);
  return c * c;
}

inline double sample_timestep(Rng& rng, const NoiseSchedule& s) { return uniform(rng, s.t_min, s.t_max); }

inline std::vector<double> add_noise(const std::vector<double>& x, const std::vector<double>& eps,
                                     double t) {
  if (x.size() != eps.size()) throw StructuralError("add_noise: image and noise differ in size");
  const double ab = alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * eps[i];
  return out;
}

/// eps_hat = (x_t - sqrt(ab) target) / sqrt(1 - ab).
inline std::vector<double> analytic_eps(const std::vector<double>& x_t, double t,
                                        const std::vector<double>& target) {
  if (x_t.size() != target.size()) throw StructuralError("analytic_eps: size mismatch");
  const double ab = alpha_bar(t);
  if (!(ab > 0.0 && ab < 1.0)) throw InputError("analytic_eps needs 0 < alpha_bar < 1");
  const double a = std::sqrt(ab), inv = 1.0 / std::sqrt(1.0 - ab);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - a * target[i]) * inv;
  return out;
}

inline std::vector<double> cfg_combine(const std::vector<double>& eps_uncond,
                                       const std::vector<double>& eps_cond, double omega) {
  if (eps_uncond.size() != eps_cond.size()) throw StructuralError("cfg_combine: size mismatch");
  std::vector<double> out(eps_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + omega * (eps_cond[i] - eps_uncond[i]);
  return out;
}

/// eps_uncond + (1 - alpha) omega1 eps1 + alpha omega2 eps2. The prompt terms
/// are guidance directions (conditional minus unconditional prediction).
inline std::vector<double> guidance_interp(const std::vector<double>& eps_uncond,
                                           const std::vector<double>& eps1,
                                           const std::vector<double>& eps2, double omega1,
                                           double omega2, double alpha) {
  if (eps_uncond.size() != eps1.size() || eps1.size() != eps2.size()) {
    throw StructuralError("guidance_interp: size mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("guidance alpha must lie in [0, 1]");
  std::vector<double> out(eps1.size());
  const double w1 = (1.0 - alpha) * omega1, w2 = alpha * omega2;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = eps_uncond[i];
    if (alpha < 1.0) v += w1 * eps1[i];
    if (alpha > 0.0) v += w2 * eps2[i];
    out[i] = v;
  }
  return out;
}

/// Conditioning for one SDS evaluation: one embedding, or a pair mixed by
/// guidance interpolation.
struct TeacherContext {
  std::vector<PromptEmbedding> cond;
  double alpha = 0.0;
  double t = 0.5;
  double omega = 100.0;
  double omega2 = 100.0;
  CameraSample camera;
  std::size_t width = 0, height = 0;

  void validate(const NoiseSchedule& s) const {
    if (cond.empty() || cond.size() > 2) throw ContractError("teacher context needs one or two embeddings");
    if (!(t >= s.t_min && t <= s.t_max)) throw InputError("timestep outside the sampling range");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha outside [0, 1]");
  }
};

/// Source of noise predictions. Implementations must be pure and thread-safe.
class Teacher {
 public:
  virtual ~Teacher() = default;
  /// Noise prediction for x_t; `c` is null for the unconditional branch.
  virtual std::vector<double> predict_eps(const std::vector<double>& x_t, double t,
                                          const PromptEmbedding* c, const CameraSample& cam,
                                          std::size_t width, std::size_t height) const = 0;
};

struct Sphere {
  Vec3 center;
  double radius = 0;
  Rgb color{};
};

/// Closed-form teacher over procedural scenes: each slot contributes one
/// colored sphere chosen by the fragment. Off-corpus embeddings are resolved
/// to per-slot fragment weights by least squares against the fragment
/// vectors, and the sphere parameters are blended with those weights.
class AnalyticTeacher : public Teacher {
 public:
  AnalyticTeacher(const Corpus& corpus, int supersample = 2)
      : embedder_(corpus.embedder), supersample_(supersample), corpus_embeddings_(corpus.embeddings) {
    const PromptTemplate& t = embedder_.prompt_template();
    for (std::size_t s = 0; s < t.slots.size(); ++s) {
      std::vector<std::vector<double>> vecs;
      std::vector<Sphere> spheres;
      for (std::size_t f = 0; f < t.slots[s].fragments.size(); ++f) {
        vecs.push_back(embedder_.fragment_vector(s, t.slots[s].fragments[f]));
        spheres.push_back(fragment_sphere(s, f, t.slots[s].fragments.size()));
      }
      fragment_vectors_.push_back(std::move(vecs));
      fragment_spheres_.push_back(std::move(spheres));
    }
  }

  static Rgb palette(std::size_t i) {
    static constexpr std::array<Rgb, 8> kColors = {{{0.85, 0.20, 0.15},
                                                     {0.15, 0.65, 0.25},
                                                     {0.20, 0.30, 0.85},
                                                     {0.90, 0.80, 0.15},
                                                     {0.75, 0.20, 0.70},
                                                     {0.15, 0.75, 0.80},
                                                     {0.95, 0.55, 0.10},
                                                     {0.35, 0.15, 0.45}}};
    return kColors[i % kColors.size()];
  }

  /// Slot 0 is a central body that differs by color; later slots place a
  /// smaller sphere around it at a fragment-dependent azimuth.
  static Sphere fragment_sphere(std::size_t slot, std::size_t fragment, std::size_t count) {
    Sphere s;
    if (slot == 0) {
      s.center = {0, 0, 0};
      s.radius = 0.6;
      s.color = palette(fragment);
      return s;
    }
    const double az = 2 * std::numbers::pi * static_cast<double>(fragment) / static_cast<double>(count) +
                      std::numbers::pi / 4 * static_cast<double>(slot - 1);
    const double el = degrees(30.0);
    const double r = 0.75;
    s.center = {r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)};
    s.radius = 0.35;
    s.color = palette(fragment + 4 * slot);
    return s;
  }

  /// Per-slot fragment weights solving min |row - sum_f a_f e_f|.
  std::vector<std::vector<double>> fragment_weights(const PromptEmbedding& c) const {
    if (c.tokens != embedder_.tokens() || c.dim != embedder_.dim()) {
      throw StructuralError("teacher received an embedding of the wrong shape");
    }
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s < c.tokens; ++s) {
      const auto& e = fragment_vectors_[s];
      const std::size_t k = e.size();
      std::vector<double> gram(k * k), rhs(k);
      const auto row = c.row(s);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0;
          for (std::size_t d = 0; d < c.dim; ++d) acc += e[i][d] * e[j][d];
          gram[i * k + j] = acc;
        }
        double acc = 0;
        for (std::size_t d = 0; d < c.dim; ++d) acc += e[i][d] * row[d];
        rhs[i] = acc;
      }
      out.push_back(solve_spd(gram, rhs, k));
    }
    return out;
  }

  std::vector<Sphere> scene(const PromptEmbedding& c) const {
    const auto weights = fragment_weights(c);
    std::vector<Sphere> out;
    for (std::size_t s = 0; s < weights.size(); ++s) {
      Sphere blend;
      for (std::size_t f = 0; f < weights[s].size(); ++f) {
        const double a = weights[s][f];
        const Sphere& sp = fragment_spheres_[s][f];
        blend.center += sp.center * a;
        blend.radius += sp.radius * a;
        for (int ch = 0; ch < 3; ++ch) blend.color[ch] += sp.color[ch] * a;
      }
      blend.radius = std::max(0.0, blend.radius);
      for (double& ch : blend.color) ch = std::clamp(ch, 0.0, 1.0);
      out.push_back(blend);
    }
    return out;
  }

  static double background(const Vec3& dir) { return 0.75 + 0.15 * dir.z; }

  static Image render_scene(const std::vector<Sphere>& spheres, const CameraSample& cam,
                            std::size_t width, std::size_t height, int supersample) {
    const CameraBasis basis = camera_basis(cam);
    Image img(width, height);
    const int ss = std::max(1, supersample);
    const double inv = 1.0 / static_cast<double>(ss * ss);
    const double w = static_cast<double>(width), h = static_cast<double>(height);
    for (std::size_t py = 0; py < height; ++py) {
      for (std::size_t px = 0; px < width; ++px) {
        Rgb acc{};
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const double u = (static_cast<double>(px) + (sx + 0.5) / ss - w / 2) / (cam.focal * w);
            const double v = (static_cast<double>(py) + (sy + 0.5) / ss - h / 2) / (cam.focal * w);
            const Vec3 dir = normalized(basis.forward + u * basis.right - v * basis.up);
            double best = std::numeric_limits<double>::infinity();
            const Sphere* hit = nullptr;
            for (const Sphere& s : spheres) {
              if (s.radius <= 0) continue;
              const Vec3 oc = basis.position - s.center;
              const double b = dot(oc, dir);
              const double disc = b * b - (dot(oc, oc) - s.radius * s.radius);
              if (disc <= 0) continue;
              const double t0 = -b - std::sqrt(disc);
              if (t0 > 0 && t0 < best) {
                best = t0;
                hit = &s;
              }
            }
            if (hit) {
              for (int c = 0; c < 3; ++c) acc[c] += hit->color[c];
            } else {
              const double bg = background(dir);
              for (int c = 0; c < 3; ++c) acc[c] += bg;
            }
          }
        }
        for (int c = 0; c < 3; ++c) img.at(px, py, c) = acc[c] * inv;
      }
    }
    return img;
  }

  Image target(const PromptEmbedding& c, const CameraSample& cam, std::size_t width,
               std::size_t height) const {
    return render_scene(scene(c), cam, width, height, supersample_);
  }

  /// Mean target over the corpus.
  Image unconditional(const CameraSample& cam, std::size_t width, std::size_t height) const {
    Image mean(width, height);
    for (const PromptEmbedding& c : corpus_embeddings_) {
      const Image t = target(c, cam, width, height);
      for (std::size_t i = 0; i < mean.size(); ++i) mean.rgb[i] += t.rgb[i];
    }
    const double n = static_cast<double>(corpus_embeddings_.size());
    for (double& x : mean.rgb) x /= n;
    return mean;
  }

  std::vector<double> predict_eps(const std::vector<double>& x_t, double t, const PromptEmbedding* c,
                                  const CameraSample& cam, std::size_t width,
                                  std::size_t height) const override {
    const Image tgt = c ? target(*c, cam, width, height) : unconditional(cam, width, height);
    return analytic_eps(x_t, t, tgt.rgb);
  }

 private:
  static std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, std::size_t n) {
    // Gaussian elimination with partial pivoting; n is a handful.
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < n; ++r) {
        if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
      }
      if (std::abs(a[piv * n + col]) < 1e-14) throw ContractError("fragment vectors are linearly dependent");
      if (piv != col) {
        for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
        std::swap(b[col], b[piv]);
      }
      for (std::size_t r = col + 1; r < n; ++r) {
        const double f = a[r * n + col] / a[col * n + col];
        for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
        b[r] -= f * b[col];
      }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
      double acc = b[r];
      for (std::size_t c = r + 1; c < n; ++c) acc -= a[r * n + c] * x[c];
      x[r] = acc / a[r * n + r];
    }
    return x;
  }

  Embedder embedder_;
  int supersample_ = 2;
  std::vector<PromptEmbedding> corpus_embeddings_;
  std::vector<std::vector<std::vector<double>>> fragment_vectors_;
  std::vector<std::vector<Sphere>> fragment_spheres_;
};

/// SDS weighting w(t); constant 1 unless replaced.
using SdsWeight = std::function<double(double t)>;

struct SdsResult {
  std::vector<double> gradient;  // w(t) (eps_hat - eps), pixel layout
  std::vector<double> eps;
  std::vector<double> eps_hat;
};

/// Noises `rendered`, queries the teacher and returns the pixel gradient to
/// seed into backward. The teacher only ever sees copies of plain values.
inline SdsResult sds_pixel_gradient(const std::vector<double>& rendered, const TeacherContext& ctx,
                                    const Teacher& teacher, Rng& rng,
                                    const NoiseSchedule& schedule = {},
                                    const SdsWeight& weight = nullptr) {
  ctx.validate(schedule);
  if (rendered.size() != ctx.width * ctx.height * 3) throw StructuralError("rendered image size mismatch");
  SdsResult r;
  r.eps.resize(rendered.size());
  for (double& e : r.eps) e = standard_normal(rng);
  const std::vector<double> x_t = add_noise(rendered, r.eps, ctx.t);
  const std::vector<double> eu =
      teacher.predict_eps(x_t, ctx.t, nullptr, ctx.camera, ctx.width, ctx.height);
  const std::vector<double> e1 =
      teacher.predict_eps(x_t, ctx.t, &ctx.cond[0], ctx.camera, ctx.width, ctx.height);
  if (ctx.cond.size() == 1) {
    r.eps_hat = cfg_combine(eu, e1, ctx.omega);
  } else {
    const std::vector<double> e2 =
        teacher.predict_eps(x_t, ctx.t, &ctx.cond[1], ctx.camera, ctx.width, ctx.height);
    std::vector<double> d1(eu.size()), d2(eu.size());
    for (std::size_t i = 0; i < eu.size(); ++i) {
      d1[i] = e1[i] - eu[i];
      d2[i] = e2[i] - eu[i];
    }
    r.eps_hat = guidance_interp(eu, d1, d2, ctx.omega, ctx.omega2, ctx.alpha);
  }
  const double w = weight ? weight(ctx.t) : 1.0;
  r.gradient.resize(rendered.size());
  for (std::size_t i = 0; i < rendered.size(); ++i) r.gradient[i] = w * (r.eps_hat[i] - r.eps[i]);
  for (double g : r.gradient) {
    if (!std::isfinite(g)) throw NumericalError("non-finite score-distillation gradient");
  }
  return r;
}

}  // namespace att3d
