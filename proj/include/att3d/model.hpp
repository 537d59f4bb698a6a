#pragma once

// The complete amortized model and feed-forward rendering.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "att3d/camera.hpp"
#include "att3d/mapping_network.hpp"
#include "att3d/parallel.hpp"
#include "att3d/renderer.hpp"

namespace att3d {

struct ModelConfig {
  GridConfig grid;
  std::size_t tokens = 4;
  std::size_t embed_dim = 8;
  std::size_t v_dim = 32;
  std::size_t hidden = 32;
  int posenc_frequencies = kDefaultPosencFrequencies;

  std::size_t embedding_size() const { return tokens * embed_dim; }

  void validate() const {
    grid.validate();
    if (tokens == 0 || embed_dim == 0) throw ConfigError("embedding shape must be positive");
    if (v_dim == 0 || hidden == 0) throw ConfigError("v_dim and hidden must be positive");
    if (posenc_frequencies < 1) throw ConfigError("posenc_frequencies must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct ModelParams {
  ModelConfig config;
  MapNetParams<T> map;
  NerfHeadParams<T> head;
  EnvMapParams<T> env;
  /// Finetuning offsets added to v (1 x v_dim) and to w (1 x param count);
  /// empty when absent.
  Matrix<T> v_offset;
  Matrix<T> w_offset;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    p.map = MapNetParams<T>::init(cfg.embedding_size(), cfg.v_dim, cfg.grid.param_count(), rng);
    p.head = NerfHeadParams<T>::init(cfg.grid.feature_width(), cfg.hidden, rng);
    p.env = EnvMapParams<T>::init(cfg.v_dim, rng, cfg.posenc_frequencies);
    return p;
  }

  /// Trainable tensors in a fixed order.
  std::vector<std::pair<std::string, Matrix<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Matrix<T>*>> out = {
        {"map.w1", &map.w1},   {"map.b1", &map.b1},   {"map.w2", &map.w2},
        {"head.w1", &head.w1}, {"head.b1", &head.b1}, {"head.w2", &head.w2},
        {"head.b2", &head.b2}, {"env.w", &env.w},     {"env.b", &env.b}};
    if (!v_offset.empty()) out.emplace_back("offset.v", &v_offset);
    if (!w_offset.empty()) out.emplace_back("offset.w", &w_offset);
    return out;
  }

  std::vector<std::pair<std::string, SpectralNormState<T>*>> named_spectral_states() {
    return {{"map.sn1", &map.sn1}, {"map.sn2", &map.sn2}, {"env.sn", &env.sn}};
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> o;
    o.config = config;
    o.map = {map.w1.template cast<U>(), map.b1.template cast<U>(), map.w2.template cast<U>(),
             map.sn1.template cast<U>(), map.sn2.template cast<U>()};
    o.head = {head.w1.template cast<U>(), head.b1.template cast<U>(), head.w2.template cast<U>(),
              head.b2.template cast<U>()};
    o.env.w = env.w.template cast<U>();
    o.env.b = env.b.template cast<U>();
    o.env.sn = env.sn.template cast<U>();
    o.env.frequencies = env.frequencies;
    o.v_offset = v_offset.template cast<U>();
    o.w_offset = w_offset.template cast<U>();
    return o;
  }
};

/// Everything a render reads that depends on the prompt, computed once.
template <class T>
struct Modulation {
  Matrix<T> v;  // 1 x v_dim
  std::vector<Matrix<T>> levels;
  Matrix<T> env_w_hat;
};

/// Handles for the mapping-net stage of one prompt on a tape.
struct ModulationGraph {
  MapVars map;
  Var env_w, env_w_hat;
  Var v_offset, w_offset;
  ModulationVars mod;
};

template <class T>
ModulationGraph modulation_graph(Tape<T>& tape, const ModelParams<T>& p, const PromptEmbedding& c,
                                 bool map_grad, bool offset_grad) {
  if (c.size() != p.config.embedding_size()) {
    throw StructuralError("prompt embedding has " + std::to_string(c.size()) +
                          " entries, model expects " + std::to_string(p.config.embedding_size()));
  }
  ModulationGraph g;
  g.map = map_vars(tape, p.map, map_grad);
  g.env_w = tape.leaf(p.env.w, map_grad);
  g.env_w_hat = spectral_normalized(tape, g.env_w, p.env.sn);
  if (!p.v_offset.empty()) g.v_offset = tape.leaf(p.v_offset, offset_grad);
  if (!p.w_offset.empty()) g.w_offset = tape.leaf(p.w_offset, offset_grad);
  g.mod = modulate_on_tape(tape, g.map, p.map, tape.constant(c.template flattened<T>()),
                           p.config.grid, g.v_offset, g.w_offset);
  return g;
}

template <class T>
Modulation<T> modulate(const ModelParams<T>& p, const PromptEmbedding& c) {
  Tape<T> tape;
  const ModulationGraph g = modulation_graph(tape, p, c, false, false);
  Modulation<T> m;
  m.v = tape.value(g.mod.v);
  for (Var l : g.mod.levels) m.levels.push_back(tape.value(l));
  m.env_w_hat = tape.value(g.env_w_hat);
  return m;
}

struct RenderOptions {
  std::size_t width = 64;
  std::size_t height = 64;
  SampleOptions sampling;
  std::size_t chunk_rays = 256;
  unsigned threads = 1;
};

struct RenderedFrame {
  std::size_t width = 0, height = 0, samples = 0;
  std::vector<double> rgb;      // row-major pixels, 3 per pixel
  std::vector<double> alpha;    // per pixel
  std::vector<double> weights;  // per pixel, `samples` each
  std::vector<double> transmittance;

  Rgb pixel(std::size_t px, std::size_t py) const {
    const std::size_t i = (py * width + px) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  double alpha_at(std::size_t px, std::size_t py) const { return alpha[py * width + px]; }
};

template <class T>
FieldVars field_vars(Tape<T>& tape, const ModelParams<T>& p, const Modulation<T>& m,
                     bool requires_grad) {
  FieldVars f;
  for (const auto& l : m.levels) f.levels.push_back(tape.leaf(l, requires_grad));
  f.head = head_vars(tape, p.head, requires_grad);
  f.env_w_hat = tape.leaf(m.env_w_hat, requires_grad);
  f.env_b = tape.leaf(p.env.b, requires_grad);
  f.v = tape.leaf(m.v, requires_grad);
  return f;
}

/// Splits `count` rays into fixed-size chunks (independent of thread count).
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t count,
                                                                     std::size_t chunk) {
  if (chunk == 0) chunk = count;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < count; b += chunk) out.emplace_back(b, std::min(count, b + chunk));
  return out;
}

/// Draws per-ray sample offsets when jittering is on; empty otherwise.
inline std::vector<double> ray_jitter(std::size_t rays, const SampleOptions& opt, Rng* rng) {
  if (!opt.jitter || rng == nullptr) return {};
  std::vector<double> j(rays);
  for (auto& x : j) x = uniform(*rng, 0.0, 1.0);
  return j;
}

template <class T>
RenderedFrame render_frame(const ModelParams<T>& p, const Modulation<T>& m,
                           const CameraSample& cam, const RenderOptions& opt, Rng* rng = nullptr) {
  const std::vector<Ray> rays = generate_rays(cam, opt.width, opt.height, opt.sampling.radius);
  const std::vector<double> jitter = ray_jitter(rays.size(), opt.sampling, rng);
  const auto chunks = chunk_ranges(rays.size(), opt.chunk_rays);
  const std::size_t S = opt.sampling.n_samples;
  RenderedFrame frame;
  frame.width = opt.width;
  frame.height = opt.height;
  frame.samples = S;
  frame.rgb.resize(rays.size() * 3);
  frame.alpha.resize(rays.size());
  frame.weights.resize(rays.size() * S);
  frame.transmittance.resize(rays.size());

  parallel_for(chunks.size(), opt.threads, [&](std::size_t k) {
    const auto [begin, end] = chunks[k];
    const std::span<const Ray> block(rays.data() + begin, end - begin);
    const std::span<const double> jit =
        jitter.empty() ? std::span<const double>() : std::span<const double>(jitter.data() + begin, end - begin);
    const RaySamples<T> s = sample_rays<T>(block, opt.sampling, jit);
    std::optional<ShadingTerms<T>> shading;
    if (cam.mode != ShadingMode::albedo) {
      shading = shading_terms(s.points, density_normals(m.levels, p.head, p.config.grid, s.points), cam);
    }
    Tape<T> tape;
    const FieldVars f = field_vars(tape, p, m, false);
    const ChunkVars out = render_chunk(tape, f, p.config.grid, s, p.env.frequencies,
                                       shading ? &*shading : nullptr);
    const Matrix<T>& rgb = tape.value(out.rgb);
    const Matrix<T>& alpha = tape.value(out.alpha);
    const Matrix<T>& w = tape.value(out.weights);
    const Matrix<T>& tr = tape.value(out.transmittance);
    for (std::size_t r = 0; r < s.rays; ++r) {
      for (int c = 0; c < 3; ++c) frame.rgb[(begin + r) * 3 + c] = static_cast<double>(rgb(r, c));
      frame.alpha[begin + r] = static_cast<double>(alpha[r]);
      frame.transmittance[begin + r] = static_cast<double>(tr[r]);
      for (std::size_t i = 0; i < S; ++i) frame.weights[(begin + r) * S + i] = static_cast<double>(w(r, i));
    }
  });
  return frame;
}

template <class T>
RenderedFrame render_frame(const ModelParams<T>& p, const PromptEmbedding& c,
                           const CameraSample& cam, const RenderOptions& opt, Rng* rng = nullptr) {
  return render_frame(p, modulate(p, c), cam, opt, rng);
}

}  // namespace att3d
