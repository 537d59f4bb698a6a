#pragma once

// Amortized score-distillation training, Adam, regularizers, interpolation
// sampling and offset finetuning.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "att3d/camera.hpp"
#include "att3d/corpus.hpp"
#include "att3d/evaluation.hpp"
#include "att3d/guidance.hpp"
#include "att3d/model.hpp"
#include "att3d/parallel.hpp"
#include "att3d/renderer.hpp"

namespace att3d {

enum class InterpolationMode { none, latent, loss, guidance };

inline InterpolationMode parse_interpolation_mode(const std::string& s) {
  if (s == "none") return InterpolationMode::none;
  if (s == "latent") return InterpolationMode::latent;
  if (s == "loss") return InterpolationMode::loss;
  if (s == "guidance") return InterpolationMode::guidance;
  throw ConfigError("unknown interpolation mode '" + s + "'");
}

inline const char* to_string(InterpolationMode m) {
  switch (m) {
    case InterpolationMode::none: return "none";
    case InterpolationMode::latent: return "latent";
    case InterpolationMode::loss: return "loss";
    case InterpolationMode::guidance: return "guidance";
  }
  return "?";
}

struct KappaPhase {
  std::size_t steps = 0;  // 0 in the last phase means "forever"
  double kappa = 1.0;
};

struct InterpolationSpec {
  InterpolationMode mode = InterpolationMode::none;
  std::vector<KappaPhase> schedule{{5000, 2.0}, {0, 0.5}};

  double kappa_at(std::size_t step) const {
    std::size_t start = 0;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      const KappaPhase& ph = schedule[i];
      if (i + 1 == schedule.size() || step < start + ph.steps) return ph.kappa;
      start += ph.steps;
    }
    return 1.0;
  }

  void validate() const {
    if (schedule.empty()) throw ConfigError("kappa schedule is empty");
    for (const KappaPhase& p : schedule) {
      if (!(p.kappa >= 0)) throw ConfigError("kappa must be >= 0");
    }
  }
};

enum class FinetuneTarget { v, w };

struct TrainConfig {
  std::size_t batch = 1;
  std::size_t steps = 100;
  double lr = 0.1;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  RenderOptions render{32, 32, {32, false, 2.0}, 256, 1};
  CameraConfig camera;
  NoiseSchedule schedule;
  double opacity_weight = 0.0;
  double orientation_weight = 0.0;
  InterpolationSpec interpolation;
  std::uint64_t seed = 0;
  int spectral_iters = 1;
  std::size_t log_interval = 10;
  FinetuneTarget finetune_target = FinetuneTarget::v;
  /// SDS weighting; null means w(t) = 1.
  SdsWeight sds_weight;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 <= 0.95)) throw ConfigError("beta1 must lie in [0, 0.95]");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (log_interval == 0) throw ConfigError("log_interval must be positive");
    if (!(opacity_weight >= 0.0 && orientation_weight >= 0.0)) {
      throw ConfigError("regularizer weights must be >= 0");
    }
    interpolation.validate();
  }
};

/// Adam moments aligned with a list of parameter tensors.
template <class T>
struct AdamState {
  std::vector<Matrix<T>> m, v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const std::vector<Matrix<T>*>& params) {
    AdamState s;
    for (const Matrix<T>* p : params) {
      s.m.emplace_back(p->rows(), p->cols());
      s.v.emplace_back(p->rows(), p->cols());
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamHyper {
  double lr = 0.1, beta1 = 0.0, beta2 = 0.999, eps = 1e-8;
};

/// One bias-corrected Adam step.
template <class T>
void adam_update(const std::vector<Matrix<T>*>& params, const std::vector<Matrix<T>>& grads,
                 AdamState<T>& state, const AdamHyper& hp) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw StructuralError("adam_update: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix<T>& p = *params[k];
    const Matrix<T>& g = grads[k];
    if (!p.same_shape(g) || !p.same_shape(state.m[k])) throw StructuralError("adam_update: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double m = hp.beta1 * static_cast<double>(state.m[k][i]) + (1.0 - hp.beta1) * gi;
      const double v = hp.beta2 * static_cast<double>(state.v[k][i]) + (1.0 - hp.beta2) * gi * gi;
      state.m[k][i] = static_cast<T>(m);
      state.v[k][i] = static_cast<T>(v);
      const double step = hp.lr * (m / c1) / (std::sqrt(v / c2) + hp.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
  }
}

/// Two-category Dirichlet draw, i.e. Beta(kappa, kappa); kappa = 0 gives an
/// exact fair coin on {0, 1}.
inline double sample_interpolant(double kappa, Rng& rng) {
  if (!(kappa >= 0)) throw InputError("kappa must be >= 0");
  if (kappa == 0.0) return uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : 1.0;
  std::gamma_distribution<double> gamma(kappa, 1.0);
  const double x = gamma(rng), y = gamma(rng);
  if (!(x + y > 0)) return uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : 1.0;
  return x / (x + y);
}

struct InterpolationResult {
  /// What the mapping network consumes: always (1 - a) c1 + a c2.
  PromptEmbedding mapping_input;
  /// Teacher conditioning: one embedding, or a pair for guidance mixing.
  std::vector<PromptEmbedding> teacher_cond;
  double alpha = 0;
};

inline InterpolationResult apply_interpolation(InterpolationMode mode, const PromptEmbedding& c1,
                                               const PromptEmbedding& c2, double alpha, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("interpolation alpha must lie in [0, 1]");
  InterpolationResult r;
  if (mode == InterpolationMode::none) alpha = alpha < 0.5 ? 0.0 : 1.0;
  r.alpha = quantize_alpha(alpha);
  r.mapping_input = interpolate_embeddings(c1, c2, r.alpha);
  switch (mode) {
    case InterpolationMode::none:
    case InterpolationMode::latent: r.teacher_cond = {r.mapping_input}; break;
    case InterpolationMode::loss: {
      const bool z = uniform(rng, 0.0, 1.0) < r.alpha;
      r.teacher_cond = {z ? c2 : c1};
      break;
    }
    case InterpolationMode::guidance: r.teacher_cond = {c1, c2}; break;
  }
  return r;
}

/// weight * mean accumulated alpha over rays.
inline double opacity_regularizer(std::span<const double> alpha, double weight) {
  if (alpha.empty() || weight == 0.0) return 0.0;
  double s = 0;
  for (double a : alpha) s += a;
  return weight * s / static_cast<double>(alpha.size());
}

/// weight * sum_i w_i max(0, n_i . d_i)^2; missing normals contribute 0.
inline double orientation_regularizer(const std::vector<std::optional<Vec3>>& normals,
                                      const std::vector<Vec3>& view_dirs,
                                      std::span<const double> weights, double weight) {
  if (normals.size() != view_dirs.size() || normals.size() != weights.size()) {
    throw StructuralError("orientation_regularizer: list lengths differ");
  }
  if (weight == 0.0) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < normals.size(); ++i) {
    if (!normals[i]) continue;
    const double k = std::max(0.0, dot(*normals[i], view_dirs[i]));
    s += weights[i] * k * k;
  }
  return weight * s;
}

/// Gradient slots aligned with ModelParams::named_tensors().
template <class T>
struct GradBuffer {
  std::vector<std::string> names;
  std::vector<Matrix<T>> grads;

  static GradBuffer zeros_like(ModelParams<T>& p) {
    GradBuffer b;
    for (auto& [name, m] : p.named_tensors()) {
      b.names.push_back(name);
      b.grads.emplace_back(m->rows(), m->cols());
    }
    return b;
  }

  Matrix<T>& at(const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return grads[i];
    }
    throw LookupError("no gradient slot named " + name);
  }

  void add(const std::string& name, const Matrix<T>& g) {
    Matrix<T>& dst = at(name);
    if (!dst.same_shape(g)) throw StructuralError("gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  bool finite() const {
    for (const auto& g : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(static_cast<double>(g[i]))) return false;
      }
    }
    return true;
  }
};

/// One batch element: what the mapping network sees and how the teacher is
/// conditioned.
struct ElementSpec {
  PromptEmbedding mapping_input;
  std::vector<PromptEmbedding> teacher_cond;
  double alpha = 0;
  CameraSample camera;
  double t = 0.5;
};

struct ElementOutcome {
  Image rendered;
  std::vector<double> seed;  // SDS pixel gradient
  double seed_norm = 0;
};

enum class GradScope { full, offsets_only };

namespace detail {

template <class T>
Matrix<T> to_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = static_cast<T>(v[i]);
  return m;
}

template <class T>
struct ChunkWork {
  std::size_t begin = 0, end = 0;
  Tape<T> tape;
  FieldVars field;
  ChunkVars out;
  RaySamples<T> samples;
  std::vector<std::optional<Vec3>> normals;
};

}  // namespace detail

/// Renders one element, obtains the SDS seed from the teacher and
/// accumulates parameter gradients into `grads`.
template <class T>
ElementOutcome accumulate_element(const ModelParams<T>& params, const ElementSpec& el,
                                  const TrainConfig& cfg, const Teacher& teacher, Rng& rng,
                                  GradBuffer<T>& grads, GradScope scope = GradScope::full) {
  const bool full = scope == GradScope::full;
  Tape<T> t1;
  const ModulationGraph g = modulation_graph(t1, params, el.mapping_input, full, !full);
  Modulation<T> mod;
  mod.v = t1.value(g.mod.v);
  for (Var l : g.mod.levels) mod.levels.push_back(t1.value(l));
  mod.env_w_hat = t1.value(g.env_w_hat);

  const RenderOptions& ro = cfg.render;
  const std::vector<Ray> rays = generate_rays(el.camera, ro.width, ro.height, ro.sampling.radius);
  const std::vector<double> jitter = ray_jitter(rays.size(), ro.sampling, &rng);
  const auto ranges = chunk_ranges(rays.size(), ro.chunk_rays);
  const bool need_normals = el.camera.mode != ShadingMode::albedo || cfg.orientation_weight > 0;

  std::vector<detail::ChunkWork<T>> work(ranges.size());
  parallel_for(ranges.size(), ro.threads, [&](std::size_t k) {
    auto& w = work[k];
    w.begin = ranges[k].first;
    w.end = ranges[k].second;
    const std::span<const Ray> block(rays.data() + w.begin, w.end - w.begin);
    const std::span<const double> jit =
        jitter.empty() ? std::span<const double>() : std::span<const double>(jitter.data() + w.begin, w.end - w.begin);
    w.samples = sample_rays<T>(block, ro.sampling, jit);
    std::optional<ShadingTerms<T>> shading;
    if (need_normals) {
      w.normals = density_normals(mod.levels, params.head, params.config.grid, w.samples.points);
      if (el.camera.mode != ShadingMode::albedo) shading = shading_terms(w.samples.points, w.normals, el.camera);
    }
    w.field = field_vars(w.tape, params, mod, true);
    w.out = render_chunk(w.tape, w.field, params.config.grid, w.samples, params.env.frequencies,
                         shading ? &*shading : nullptr);
  });

  ElementOutcome res;
  res.rendered = Image(ro.width, ro.height);
  for (const auto& w : work) {
    const Matrix<T>& rgb = w.tape.value(w.out.rgb);
    for (std::size_t i = 0; i < rgb.size(); ++i) res.rendered.rgb[w.begin * 3 + i] = static_cast<double>(rgb[i]);
  }

  TeacherContext ctx;
  ctx.cond = el.teacher_cond;
  ctx.alpha = el.alpha;
  ctx.t = el.t;
  ctx.omega = cfg.schedule.omega;
  ctx.omega2 = cfg.schedule.omega;
  ctx.camera = el.camera;
  ctx.width = ro.width;
  ctx.height = ro.height;
  SdsResult sds = sds_pixel_gradient(res.rendered.rgb, ctx, teacher, rng, cfg.schedule, cfg.sds_weight);
  res.seed = std::move(sds.gradient);
  double n2 = 0;
  for (double x : res.seed) n2 += x * x;
  res.seed_norm = std::sqrt(n2);

  const double n_rays = static_cast<double>(rays.size());
  parallel_for(work.size(), ro.threads, [&](std::size_t k) {
    auto& w = work[k];
    Tape<T>& tp = w.tape;
    const std::size_t r = w.end - w.begin;
    const std::span<const double> seed(res.seed.data() + w.begin * 3, r * 3);
    Var root = tp.sum(tp.mul(w.out.rgb, tp.constant(detail::to_matrix<T>(seed, r, 3))));
    if (cfg.opacity_weight > 0) {
      root = tp.add(root, tp.scale(tp.sum(w.out.alpha), static_cast<T>(cfg.opacity_weight / n_rays)));
    }
    if (cfg.orientation_weight > 0) {
      const Var pen = tp.constant(orientation_penalty(w.samples, w.normals));
      root = tp.add(root, tp.scale(tp.sum(tp.mul(w.out.weights, pen)), static_cast<T>(cfg.orientation_weight)));
    }
    tp.backward(root);
  });

  // Fixed chunk order keeps the sums independent of scheduling.
  std::vector<Matrix<T>> level_grad;
  for (const auto& l : mod.levels) level_grad.emplace_back(l.rows(), l.cols());
  Matrix<T> v_grad(mod.v.rows(), mod.v.cols()), env_grad(mod.env_w_hat.rows(), mod.env_w_hat.cols());
  auto acc = [](Matrix<T>& dst, const Matrix<T>& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  };
  for (auto& w : work) {
    for (std::size_t l = 0; l < level_grad.size(); ++l) acc(level_grad[l], w.tape.grad(w.field.levels[l]));
    acc(v_grad, w.tape.grad(w.field.v));
    acc(env_grad, w.tape.grad(w.field.env_w_hat));
    if (full) {
      grads.add("head.w1", w.tape.grad(w.field.head.w1));
      grads.add("head.b1", w.tape.grad(w.field.head.b1));
      grads.add("head.w2", w.tape.grad(w.field.head.w2));
      grads.add("head.b2", w.tape.grad(w.field.head.b2));
      grads.add("env.b", w.tape.grad(w.field.env_b));
    }
  }
  work.clear();

  Var root = t1.sum(t1.mul(g.mod.v, t1.constant(std::move(v_grad))));
  root = t1.add(root, t1.sum(t1.mul(g.env_w_hat, t1.constant(std::move(env_grad)))));
  for (std::size_t l = 0; l < level_grad.size(); ++l) {
    root = t1.add(root, t1.sum(t1.mul(g.mod.levels[l], t1.constant(std::move(level_grad[l])))));
  }
  t1.backward(root);
  if (full) {
    grads.add("map.w1", t1.grad(g.map.w1));
    grads.add("map.b1", t1.grad(g.map.b1));
    grads.add("map.w2", t1.grad(g.map.w2));
    grads.add("env.w", t1.grad(g.env_w));
  }
  if (g.v_offset.valid()) grads.add("offset.v", t1.grad(g.v_offset));
  if (g.w_offset.valid()) grads.add("offset.w", t1.grad(g.w_offset));
  return res;
}

struct StepMetrics {
  std::size_t step = 0;
  std::size_t frames = 0;
  double mean_seed_norm = 0;
  double kappa = 0;
  bool skipped = false;
  std::string skip_reason;
};

struct MetricsRow {
  std::size_t step = 0;
  double frames_per_prompt = 0;
  double mean_sds_seed_norm = 0;
  double kappa = 0;
  double eval_r_prob_seen = std::numeric_limits<double>::quiet_NaN();
  double eval_r_prob_unseen = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0;
};

inline void write_metrics_header(std::ostream& os) {
  os << "step,frames_per_prompt,mean_sds_seed_norm,kappa,eval_r_prob_seen,eval_r_prob_unseen,wall_ms\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  auto num = [&](double x) {
    if (std::isfinite(x)) os << std::setprecision(9) << x;
  };
  os << r.step << ',';
  num(r.frames_per_prompt);
  os << ',';
  num(r.mean_sds_seed_norm);
  os << ',';
  num(r.kappa);
  os << ',';
  num(r.eval_r_prob_seen);
  os << ',';
  num(r.eval_r_prob_unseen);
  os << ',';
  num(r.wall_ms);
  os << '\n';
}

/// Everything that evolves during training.
template <class T>
struct TrainState {
  ModelParams<T> params;
  AdamState<T> adam;
  Rng rng;
  std::size_t step = 0;
  std::size_t skipped_steps = 0;
  std::size_t frames = 0;
  GradScope scope = GradScope::full;

  std::vector<Matrix<T>*> trainable() {
    std::vector<Matrix<T>*> out;
    for (auto& [name, m] : params.named_tensors()) {
      if (scope == GradScope::full || name.rfind("offset.", 0) == 0) out.push_back(m);
    }
    return out;
  }

  static TrainState start(ModelParams<T> p, std::uint64_t seed, GradScope scope = GradScope::full) {
    TrainState s;
    s.params = std::move(p);
    s.rng = Rng(seed);
    s.scope = scope;
    s.adam = AdamState<T>::zeros_like(s.trainable());
    return s;
  }
};

/// Draws the batch element for one step from the prompt pool.
inline ElementSpec sample_element(const Corpus& corpus, const std::vector<std::size_t>& pool,
                                  const TrainConfig& cfg, std::size_t step, Rng& rng) {
  if (pool.empty()) throw ConfigError("no prompts to train on");
  auto pick = [&] {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  ElementSpec el;
  const std::size_t a = pick();
  if (cfg.interpolation.mode == InterpolationMode::none) {
    el.mapping_input = corpus.embedding(a);
    el.teacher_cond = {el.mapping_input};
  } else {
    const std::size_t b = pick();
    const double alpha = sample_interpolant(cfg.interpolation.kappa_at(step), rng);
    InterpolationResult ir =
        apply_interpolation(cfg.interpolation.mode, corpus.embedding(a), corpus.embedding(b), alpha, rng);
    el.mapping_input = std::move(ir.mapping_input);
    el.teacher_cond = std::move(ir.teacher_cond);
    el.alpha = ir.alpha;
  }
  el.camera = sample_camera(rng, cfg.camera);
  el.t = sample_timestep(rng, cfg.schedule);
  return el;
}

/// One update: per-element gradients summed, then a single Adam step. Power
/// iteration advances once per step (full scope only).
template <class T>
StepMetrics train_step(TrainState<T>& st, const Corpus& corpus, const std::vector<std::size_t>& pool,
                       const Teacher& teacher, const TrainConfig& cfg) {
  StepMetrics m;
  m.step = st.step;
  m.kappa = cfg.interpolation.mode == InterpolationMode::none ? 0.0 : cfg.interpolation.kappa_at(st.step);
  if (st.scope == GradScope::full) {
    power_iterate(st.params.map.w1, st.params.map.sn1, cfg.spectral_iters);
    power_iterate(st.params.map.w2, st.params.map.sn2, cfg.spectral_iters);
    power_iterate(st.params.env.w, st.params.env.sn, cfg.spectral_iters);
  }
  GradBuffer<T> grads = GradBuffer<T>::zeros_like(st.params);
  double norm_sum = 0;
  try {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const ElementSpec el = sample_element(corpus, pool, cfg, st.step, st.rng);
      const ElementOutcome out = accumulate_element(st.params, el, cfg, teacher, st.rng, grads, st.scope);
      norm_sum += out.seed_norm;
    }
  } catch (const NumericalError& e) {
    m.skipped = true;
    m.skip_reason = e.what();
  }
  m.frames = cfg.batch;
  m.mean_seed_norm = norm_sum / static_cast<double>(cfg.batch);
  if (!m.skipped && !grads.finite()) {
    m.skipped = true;
    m.skip_reason = "non-finite gradient";
  }
  if (m.skipped) {
    ++st.skipped_steps;
  } else {
    std::vector<Matrix<T>> g;
    for (std::size_t i = 0; i < grads.names.size(); ++i) {
      if (st.scope == GradScope::full || grads.names[i].rfind("offset.", 0) == 0) g.push_back(std::move(grads.grads[i]));
    }
    adam_update(st.trainable(), g, st.adam, {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
  }
  st.frames += cfg.batch;
  ++st.step;
  return m;
}

struct EvalPair {
  double seen = std::numeric_limits<double>::quiet_NaN();
  double unseen = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  /// Called on log rows every `eval_interval` steps (0 disables).
  std::size_t eval_interval = 0;
  std::function<EvalPair(const ModelParams<float>&)> evaluate;
  std::ostream* metrics_csv = nullptr;
  std::ostream* log = nullptr;
  std::size_t checkpoint_interval = 0;
  std::function<void(const TrainState<float>&)> checkpoint;
};

/// Runs `cfg.steps - st.step` further steps over `pool`.
inline std::vector<MetricsRow> train(TrainState<float>& st, const Corpus& corpus,
                                     const std::vector<std::size_t>& pool, const Teacher& teacher,
                                     const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  std::vector<MetricsRow> rows;
  if (hooks.metrics_csv) write_metrics_header(*hooks.metrics_csv);
  const auto t0 = std::chrono::steady_clock::now();
  double norm_acc = 0;
  std::size_t norm_count = 0;
  while (st.step < cfg.steps) {
    const StepMetrics m = train_step(st, corpus, pool, teacher, cfg);
    if (m.skipped && hooks.log) *hooks.log << "step " << m.step << " skipped: " << m.skip_reason << '\n';
    norm_acc += m.mean_seed_norm;
    ++norm_count;
    if (st.step % cfg.log_interval == 0) {
      MetricsRow r;
      r.step = st.step;
      r.frames_per_prompt = frames_per_prompt(static_cast<double>(st.step), static_cast<double>(cfg.batch),
                                              static_cast<double>(pool.size()));
      r.mean_sds_seed_norm = norm_acc / static_cast<double>(norm_count);
      r.kappa = m.kappa;
      if (hooks.evaluate && hooks.eval_interval && st.step % hooks.eval_interval == 0) {
        const EvalPair e = hooks.evaluate(st.params);
        r.eval_r_prob_seen = e.seen;
        r.eval_r_prob_unseen = e.unseen;
      }
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (hooks.metrics_csv) write_metrics_row(*hooks.metrics_csv, r);
      rows.push_back(r);
      norm_acc = 0;
      norm_count = 0;
    }
    if (hooks.checkpoint && hooks.checkpoint_interval && st.step % hooks.checkpoint_interval == 0) {
      hooks.checkpoint(st);
    }
  }
  return rows;
}

/// Adds a zero offset to v (or w), freezes every other weight and the
/// spectral states, and trains the offset alone with fresh Adam state.
inline TrainState<float> start_finetune(ModelParams<float> p, const TrainConfig& cfg) {
  if (cfg.finetune_target == FinetuneTarget::v) {
    if (p.v_offset.empty()) p.v_offset = Matrix<float>(1, p.config.v_dim);
  } else {
    if (p.w_offset.empty()) p.w_offset = Matrix<float>(1, p.config.grid.param_count());
  }
  return TrainState<float>::start(std::move(p), cfg.seed, GradScope::offsets_only);
}

inline ModelParams<float> finetune(const ModelParams<float>& base, const PromptEmbedding& prompt,
                                   const Teacher& teacher, TrainConfig cfg) {
  if (prompt.size() != base.config.embedding_size()) {
    throw StructuralError("finetune prompt has " + std::to_string(prompt.size()) +
                          " entries, checkpoint expects " + std::to_string(base.config.embedding_size()));
  }
  cfg.interpolation.mode = InterpolationMode::none;
  Corpus single;
  single.embeddings = {prompt};
  single.prompts = {Prompt{0, "finetune", {}}};
  TrainState<float> st = start_finetune(base, cfg);
  train(st, single, {0}, teacher, cfg);
  return st.params;
}

}  // namespace att3d
