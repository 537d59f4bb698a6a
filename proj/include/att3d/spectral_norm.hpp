#pragma once

// Spectral normalization by power iteration with a persistent left vector.

#include <cmath>
#include <vector>

#include "att3d/autodiff.hpp"
#include "att3d/random.hpp"
#include "att3d/tensor.hpp"

namespace att3d {

template <class T>
struct SpectralNormState {
  /// Unit estimate of the leading left singular vector (length = rows of W).
  std::vector<T> u;
  int n_iters = 1;

  static SpectralNormState random(std::size_t rows, Rng& rng, int n_iters = 1) {
    SpectralNormState s;
    s.n_iters = n_iters;
    s.u.resize(rows);
    double n2 = 0;
    for (auto& x : s.u) {
      const double z = standard_normal(rng);
      x = static_cast<T>(z);
      n2 += z * z;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : s.u) x = static_cast<T>(static_cast<double>(x) * inv);
    return s;
  }

  template <class U>
  SpectralNormState<U> cast() const {
    SpectralNormState<U> s;
    s.n_iters = n_iters;
    s.u.assign(u.begin(), u.end());
    return s;
  }

  friend bool operator==(const SpectralNormState&, const SpectralNormState&) = default;
};

/// Below this estimate the matrix is treated as zero and left unnormalized.
inline constexpr double kSpectralFloor = 1e-12;

/// Iterations used when an estimate must match the true norm tightly. Twenty
/// is not enough when the top two singular values are close.
inline constexpr int kVerificationIterations = 200;

namespace detail {

/// Returns the norm of v before normalizing it in place.
inline double normalize_in_place(std::vector<double>& v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n > 0) {
    for (double& x : v) x /= n;
  }
  return n;
}

template <class T>
std::vector<double> transpose_times(const Matrix<T>& w, const std::vector<double>& u) {
  std::vector<double> v(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double ur = u[r];
    const T* row = w.data() + r * w.cols();
    for (std::size_t c = 0; c < w.cols(); ++c) v[c] += ur * static_cast<double>(row[c]);
  }
  return v;
}

template <class T>
std::vector<double> times(const Matrix<T>& w, const std::vector<double>& v) {
  std::vector<double> u(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const T* row = w.data() + r * w.cols();
    double acc = 0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += static_cast<double>(row[c]) * v[c];
    u[r] = acc;
  }
  return u;
}

}  // namespace detail

/// Right vector v = W^T u / |W^T u| and sigma = u^T W v for a frozen u.
template <class T>
struct SpectralEstimate {
  std::vector<double> v;
  double sigma = 0;
  bool degenerate = false;
};

template <class T>
SpectralEstimate<T> spectral_estimate(const Matrix<T>& w, const SpectralNormState<T>& state) {
  if (state.u.size() != w.rows()) throw StructuralError("spectral state length != matrix rows");
  SpectralEstimate<T> e;
  std::vector<double> u(state.u.begin(), state.u.end());
  e.v = detail::transpose_times(w, u);
  e.sigma = detail::normalize_in_place(e.v);
  e.degenerate = !(e.sigma >= kSpectralFloor);
  return e;
}

/// Advances u by `iters` rounds of u <- normalize(W normalize(W^T u)).
template <class T>
void power_iterate(const Matrix<T>& w, SpectralNormState<T>& state, int iters) {
  if (state.u.size() != w.rows()) throw StructuralError("spectral state length != matrix rows");
  std::vector<double> u(state.u.begin(), state.u.end());
  for (int i = 0; i < iters; ++i) {
    std::vector<double> v = detail::transpose_times(w, u);
    if (detail::normalize_in_place(v) < kSpectralFloor) return;
    std::vector<double> next = detail::times(w, v);
    if (detail::normalize_in_place(next) < kSpectralFloor) return;
    u = std::move(next);
  }
  for (std::size_t r = 0; r < u.size(); ++r) state.u[r] = static_cast<T>(u[r]);
}

template <class T>
struct SpectralNormResult {
  Matrix<T> normalized;
  double sigma = 0;
  /// Set when sigma fell below kSpectralFloor; `normalized` is then W itself.
  bool degenerate = false;
};

/// Runs state.n_iters power iterations (updating state.u) and divides W by
/// the resulting estimate of its largest singular value.
template <class T>
SpectralNormResult<T> spectral_normalize(const Matrix<T>& w, SpectralNormState<T>& state) {
  power_iterate(w, state, state.n_iters);
  const SpectralEstimate<T> e = spectral_estimate(w, state);
  SpectralNormResult<T> out;
  out.sigma = e.sigma;
  out.degenerate = e.degenerate;
  out.normalized = w;
  if (!e.degenerate) {
    for (auto& x : out.normalized.values()) x = static_cast<T>(static_cast<double>(x) / e.sigma);
  }
  return out;
}

/// Normalization using a frozen state, without advancing it.
template <class T>
Matrix<T> spectral_apply(const Matrix<T>& w, const SpectralNormState<T>& state) {
  SpectralNormState<T> frozen = state;
  frozen.n_iters = 0;
  return spectral_normalize(w, frozen).normalized;
}

/// Tape form with frozen u: W / sigma with sigma = sum(W .* u v^T), so the
/// gradient flows through the estimate.
template <class T>
Var spectral_normalized(Tape<T>& tape, Var w, const SpectralNormState<T>& state) {
  const Matrix<T>& wv = tape.value(w);
  const SpectralEstimate<T> e = spectral_estimate(wv, state);
  if (e.degenerate) return w;
  Matrix<T> outer(wv.rows(), wv.cols());
  for (std::size_t r = 0; r < wv.rows(); ++r) {
    const double ur = static_cast<double>(state.u[r]);
    for (std::size_t c = 0; c < wv.cols(); ++c) outer(r, c) = static_cast<T>(ur * e.v[c]);
  }
  const Var sigma = tape.sum(tape.mul(w, tape.constant(std::move(outer))));
  return tape.div(w, sigma);
}

}  // namespace att3d
