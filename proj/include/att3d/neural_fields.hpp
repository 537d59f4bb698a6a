#pragma once

// NeRF head, spatial density bias and the text-conditioned environment map.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "att3d/autodiff.hpp"
#include "att3d/random.hpp"
#include "att3d/spectral_norm.hpp"
#include "att3d/tensor.hpp"

namespace att3d {

/// Added to the density logit before softplus: 10 (1 - 2 |x|).
inline double density_bias(const Vec3& x) { return 10.0 * (1.0 - 2.0 * norm(x)); }

struct RadianceSample {
  double sigma = 0;
  std::array<double, 3> rgb{};
};

template <class T>
Matrix<T> fan_in_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  Matrix<T> m(fan_in, fan_out);
  const double s = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : m.values()) x = static_cast<T>(uniform(rng, -s, s));
  return m;
}

/// Single hidden layer (SiLU), output [density logit, r, g, b]. Weights are
/// stored input-major so a batch of row features multiplies on the left.
template <class T>
struct NerfHeadParams {
  Matrix<T> w1, b1, w2, b2;

  static constexpr std::size_t kOutputs = 4;

  static NerfHeadParams zeros(std::size_t feature_width, std::size_t hidden) {
    return {Matrix<T>(feature_width, hidden), Matrix<T>(1, hidden), Matrix<T>(hidden, kOutputs),
            Matrix<T>(1, kOutputs)};
  }

  static NerfHeadParams init(std::size_t feature_width, std::size_t hidden, Rng& rng) {
    NerfHeadParams p = zeros(feature_width, hidden);
    p.w1 = fan_in_uniform<T>(feature_width, hidden, rng);
    p.w2 = fan_in_uniform<T>(hidden, kOutputs, rng);
    return p;
  }

  std::size_t feature_width() const { return w1.rows(); }
  std::size_t hidden() const { return w1.cols(); }
};

template <class T>
RadianceSample nerf_eval(std::span<const T> feature, const Vec3& x, const NerfHeadParams<T>& p) {
  if (feature.size() != p.feature_width()) {
    throw StructuralError("feature width " + std::to_string(feature.size()) +
                          " does not match head input " + std::to_string(p.feature_width()));
  }
  std::vector<double> h(p.hidden());
  for (std::size_t j = 0; j < h.size(); ++j) {
    double acc = static_cast<double>(p.b1[j]);
    for (std::size_t i = 0; i < feature.size(); ++i) {
      acc += static_cast<double>(feature[i]) * static_cast<double>(p.w1(i, j));
    }
    h[j] = scalar::silu(acc);
  }
  std::array<double, 4> o{};
  for (std::size_t k = 0; k < 4; ++k) {
    double acc = static_cast<double>(p.b2[k]);
    for (std::size_t j = 0; j < h.size(); ++j) acc += h[j] * static_cast<double>(p.w2(j, k));
    o[k] = acc;
  }
  RadianceSample s;
  s.sigma = scalar::softplus(o[0] + density_bias(x));
  for (int c = 0; c < 3; ++c) s.rgb[c] = scalar::sigmoid(o[c + 1]);
  return s;
}

struct HeadVars {
  Var w1, b1, w2, b2;
};

template <class T>
HeadVars head_vars(Tape<T>& tape, const NerfHeadParams<T>& p, bool requires_grad) {
  return {tape.leaf(p.w1, requires_grad), tape.leaf(p.b1, requires_grad),
          tape.leaf(p.w2, requires_grad), tape.leaf(p.b2, requires_grad)};
}

struct RadianceVars {
  Var sigma;  // N x 1
  Var rgb;    // N x 3
};

/// density_bias over rows of `points`, built on the tape so it differentiates
/// with respect to the points.
template <class T>
Var density_bias_on_tape(Tape<T>& tape, Var points) {
  const Var r = tape.norm2(points);
  return tape.add(tape.scale(r, T(-20)), tape.constant(Matrix<T>::scalar(T(10))));
}

template <class T>
Matrix<T> density_bias_matrix(const Matrix<T>& points) {
  Matrix<T> out(points.rows(), 1);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const Vec3 x{static_cast<double>(points(i, 0)), static_cast<double>(points(i, 1)),
                 static_cast<double>(points(i, 2))};
    out[i] = static_cast<T>(density_bias(x));
  }
  return out;
}

/// features: N x F; bias: N x 1.
template <class T>
RadianceVars nerf_head(Tape<T>& tape, const HeadVars& p, Var features, Var bias) {
  const Var hidden = tape.silu(tape.add(tape.matmul(features, p.w1), p.b1));
  const Var out = tape.add(tape.matmul(hidden, p.w2), p.b2);
  const Var logit = tape.slice(out, Axis::cols, 0, 1);
  const Var color = tape.slice(out, Axis::cols, 1, 4);
  return {tape.softplus(tape.add(logit, bias)), tape.sigmoid(color)};
}

inline constexpr int kDefaultPosencFrequencies = 8;

/// [sin(2^k d_i), cos(2^k d_i)] for k < L, i in {x, y, z}; length 6L.
inline std::vector<double> posenc(const Vec3& d, int frequencies = kDefaultPosencFrequencies) {
  if (frequencies < 1) throw InputError("posenc needs at least one frequency");
  std::vector<double> out;
  out.reserve(6 * static_cast<std::size_t>(frequencies));
  for (int k = 0; k < frequencies; ++k) {
    const double f = std::ldexp(1.0, k);
    for (int i = 0; i < 3; ++i) {
      out.push_back(std::sin(f * d[i]));
      out.push_back(std::cos(f * d[i]));
    }
  }
  return out;
}

/// Linear layer over [posenc(d), v] with sigmoid output; the weight is
/// spectrally normalized when read.
template <class T>
struct EnvMapParams {
  Matrix<T> w;  // (6L + v_dim) x 3
  Matrix<T> b;  // 1 x 3
  SpectralNormState<T> sn;
  int frequencies = kDefaultPosencFrequencies;

  static EnvMapParams init(std::size_t v_dim, Rng& rng, int frequencies = kDefaultPosencFrequencies) {
    EnvMapParams e;
    e.frequencies = frequencies;
    const std::size_t in = 6 * static_cast<std::size_t>(frequencies) + v_dim;
    e.w = fan_in_uniform<T>(in, 3, rng);
    e.b = Matrix<T>(1, 3);
    e.sn = SpectralNormState<T>::random(in, rng);
    return e;
  }

  std::size_t posenc_width() const { return 6 * static_cast<std::size_t>(frequencies); }
  std::size_t v_dim() const { return w.rows() - posenc_width(); }
};

template <class T>
std::array<double, 3> envmap_eval_normalized(const Vec3& d, std::span<const T> v,
                                             const Matrix<T>& w_hat, const Matrix<T>& b,
                                             int frequencies) {
  const std::vector<double> pe = posenc(d, frequencies);
  if (pe.size() + v.size() != w_hat.rows()) {
    throw StructuralError("environment map expects v of length " +
                          std::to_string(w_hat.rows() - pe.size()) + ", got " +
                          std::to_string(v.size()));
  }
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    double acc = static_cast<double>(b[c]);
    for (std::size_t i = 0; i < pe.size(); ++i) acc += pe[i] * static_cast<double>(w_hat(i, c));
    for (std::size_t i = 0; i < v.size(); ++i) {
      acc += static_cast<double>(v[i]) * static_cast<double>(w_hat(pe.size() + i, c));
    }
    rgb[c] = scalar::sigmoid(acc);
  }
  return rgb;
}

template <class T>
std::array<double, 3> envmap_eval(const Vec3& d, std::span<const T> v, const EnvMapParams<T>& p) {
  return envmap_eval_normalized(d, v, spectral_apply(p.w, p.sn), p.b, p.frequencies);
}

/// Background colors for a batch of directions. `posenc_rows` is R x 6L,
/// `w_hat` the normalized weight, `v` 1 x v_dim.
template <class T>
Var envmap_on_tape(Tape<T>& tape, Var w_hat, Var b, Var posenc_rows, Var v) {
  const std::size_t pw = tape.value(posenc_rows).cols();
  const std::size_t rows = tape.value(w_hat).rows();
  if (pw + tape.value(v).cols() != rows) throw StructuralError("environment map v width mismatch");
  const Var w_dir = tape.slice(w_hat, Axis::rows, 0, pw);
  const Var w_v = tape.slice(w_hat, Axis::rows, pw, rows);
  const Var logits = tape.add(tape.add(tape.matmul(posenc_rows, w_dir), tape.matmul(v, w_v)), b);
  return tape.sigmoid(logits);
}

}  // namespace att3d
