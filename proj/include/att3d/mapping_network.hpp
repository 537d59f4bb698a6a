#pragma once

// Hypernetwork from a prompt embedding to the point-encoder parameters:
//   v = SiLU(SN-linear with bias(flatten(c)))
//   w = reshape(SN-linear without bias(v))

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "att3d/autodiff.hpp"
#include "att3d/feature_grid.hpp"
#include "att3d/neural_fields.hpp"
#include "att3d/spectral_norm.hpp"

namespace att3d {

/// Token rows x embedding width, standing in for cached text-encoder output.
struct PromptEmbedding {
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // row-major, tokens * dim

  PromptEmbedding() = default;
  PromptEmbedding(std::size_t t, std::size_t d) : tokens(t), dim(d), values(t * d, 0.0) {}
  PromptEmbedding(std::size_t t, std::size_t d, std::vector<double> v)
      : tokens(t), dim(d), values(std::move(v)) {
    if (values.size() != t * d) throw StructuralError("embedding values do not match shape");
  }

  std::size_t size() const { return values.size(); }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * dim, dim}; }
  bool same_shape(const PromptEmbedding& o) const { return tokens == o.tokens && dim == o.dim; }

  template <class T>
  Matrix<T> flattened() const {
    Matrix<T> m(1, values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m[i] = static_cast<T>(values[i]);
    return m;
  }

  friend bool operator==(const PromptEmbedding&, const PromptEmbedding&) = default;
};

/// Interpolation weights are snapped to multiples of 2^-24 so that 1 - alpha
/// is exact and interpolate(c1, c2, a) == interpolate(c2, c1, 1 - a) bitwise.
inline double quantize_alpha(double alpha) {
  constexpr double kGrid = 16777216.0;  // 2^24
  return std::nearbyint(alpha * kGrid) / kGrid;
}

inline PromptEmbedding interpolate_embeddings(const PromptEmbedding& c1, const PromptEmbedding& c2,
                                              double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("interpolation alpha must lie in [0, 1]");
  if (!c1.same_shape(c2)) throw StructuralError("interpolated embeddings differ in shape");
  const double a = quantize_alpha(alpha);
  const double keep = 1.0 - a;
  PromptEmbedding out(c1.tokens, c1.dim);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = keep * c1.values[i] + a * c2.values[i];
  }
  return out;
}

template <class T>
struct MapNetParams {
  Matrix<T> w1;  // flattened-c x v_dim
  Matrix<T> b1;  // 1 x v_dim
  Matrix<T> w2;  // v_dim x grid parameter count, no bias
  SpectralNormState<T> sn1, sn2;

  static MapNetParams init(std::size_t input, std::size_t v_dim, std::size_t outputs, Rng& rng) {
    MapNetParams p;
    p.w1 = fan_in_uniform<T>(input, v_dim, rng);
    p.b1 = Matrix<T>(1, v_dim);
    p.w2 = fan_in_uniform<T>(v_dim, outputs, rng, 0.1);
    p.sn1 = SpectralNormState<T>::random(input, rng);
    p.sn2 = SpectralNormState<T>::random(v_dim, rng);
    return p;
  }

  std::size_t input_width() const { return w1.rows(); }
  std::size_t v_dim() const { return w1.cols(); }
  std::size_t output_width() const { return w2.cols(); }
};

/// Uses the spectral states as they are (no power iteration).
template <class T>
std::vector<T> map_embedding(const PromptEmbedding& c, const MapNetParams<T>& p) {
  if (c.size() != p.input_width()) {
    throw StructuralError("embedding has " + std::to_string(c.size()) +
                          " entries, mapping network expects " + std::to_string(p.input_width()));
  }
  const Matrix<T> w1 = spectral_apply(p.w1, p.sn1);
  std::vector<T> v(p.v_dim());
  for (std::size_t j = 0; j < v.size(); ++j) {
    T acc = p.b1[j];
    for (std::size_t i = 0; i < c.size(); ++i) acc += static_cast<T>(c.values[i]) * w1(i, j);
    v[j] = scalar::silu(acc);
  }
  return v;
}

template <class T>
std::vector<T> generate_flat_grid(std::span<const T> v, const MapNetParams<T>& p) {
  if (v.size() != p.v_dim()) throw StructuralError("modulation vector width mismatch");
  const Matrix<T> w2 = spectral_apply(p.w2, p.sn2);
  std::vector<T> out(p.output_width(), T(0));
  for (std::size_t j = 0; j < v.size(); ++j) {
    const T vj = v[j];
    if (vj == T(0)) continue;
    const T* row = w2.data() + j * w2.cols();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += vj * row[k];
  }
  return out;
}

template <class T>
GridParams<T> generate_grid_params(std::span<const T> v, const MapNetParams<T>& p,
                                   const GridConfig& cfg) {
  if (p.output_width() != cfg.param_count()) {
    throw StructuralError("mapping network emits " + std::to_string(p.output_width()) +
                          " values but grid layout needs " + std::to_string(cfg.param_count()));
  }
  const std::vector<T> flat = generate_flat_grid(v, p);
  return GridParams<T>::from_flat(flat, cfg);
}

struct MapVars {
  Var w1, b1, w2;
};

template <class T>
MapVars map_vars(Tape<T>& tape, const MapNetParams<T>& p, bool requires_grad) {
  return {tape.leaf(p.w1, requires_grad), tape.leaf(p.b1, requires_grad),
          tape.leaf(p.w2, requires_grad)};
}

struct ModulationVars {
  Var v;       // 1 x v_dim, after any offset
  Var w_flat;  // 1 x grid parameter count, after any offset
  std::vector<Var> levels;
};

/// Optional offsets (invalid Var = absent) are added to v and to w.
template <class T>
ModulationVars modulate_on_tape(Tape<T>& tape, const MapVars& m, const MapNetParams<T>& p,
                                Var c_row, const GridConfig& cfg, Var v_offset = {},
                                Var w_offset = {}) {
  const Var w1 = spectral_normalized(tape, m.w1, p.sn1);
  const Var w2 = spectral_normalized(tape, m.w2, p.sn2);
  ModulationVars out;
  out.v = tape.silu(tape.add(tape.matmul(c_row, w1), m.b1));
  if (v_offset.valid()) out.v = tape.add(out.v, v_offset);
  out.w_flat = tape.matmul(out.v, w2);
  if (w_offset.valid()) out.w_flat = tape.add(out.w_flat, w_offset);
  if (tape.value(out.w_flat).cols() != cfg.param_count()) {
    throw StructuralError("mapping network output does not match grid layout");
  }
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const std::size_t off = cfg.level_offset(l);
    const Var block = tape.slice(out.w_flat, Axis::cols, off, off + cfg.level_size(l));
    out.levels.push_back(tape.reshape(block, cfg.level_rows(l), cfg.features_per_level));
  }
  return out;
}

}  // namespace att3d
