#pragma once

#include <Eigen/SVD>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "att3d/corpus.hpp"
#include "att3d/model.hpp"
#include "att3d/random.hpp"
#include "att3d/tensor.hpp"

namespace att3d::testing {

inline PromptTemplate desk_template() {
  return {"a {animal} wearing a {hat}",
          {{"animal", {"pig", "fox", "owl", "frog"}}, {"hat", {"crown", "beanie", "top hat", "sombrero"}}}};
}

inline Corpus desk_corpus() { return Corpus::build(desk_template(), 8, 0.75, 7); }

inline ModelConfig desk_model() {
  ModelConfig mc;
  mc.grid.resolutions = {4, 8, 16};
  mc.tokens = 2;
  mc.embed_dim = 8;
  return mc;
}

/// Small corpus and model for fast gradient and loop checks.
inline Corpus tiny_corpus() {
  return Corpus::build({"{a} {b}", {{"a", {"p", "q"}}, {"b", {"x", "y"}}}}, 4, 0.75, 7);
}

inline ModelConfig tiny_model() {
  ModelConfig mc;
  mc.grid.resolutions = {3, 5};
  mc.grid.features_per_level = 2;
  mc.tokens = 2;
  mc.embed_dim = 4;
  mc.v_dim = 4;
  mc.hidden = 5;
  mc.posenc_frequencies = 2;
  return mc;
}

/// Two-sided one-sample KS p-value from the asymptotic Kolmogorov
/// distribution with the Stephens small-sample correction.
inline double ks_p_value(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 1e-3) return 1.0;
  double q = 0, sign = 1;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * 2 * std::exp(-2.0 * k * k * lambda * lambda);
    q += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(q, 0.0, 1.0);
}

inline std::function<double(double)> uniform_cdf(double lo, double hi) {
  return [lo, hi](double x) { return std::clamp((x - lo) / (hi - lo), 0.0, 1.0); };
}

/// Largest singular value via Eigen's Jacobi SVD.
inline double svd_sigma_max(const Matrix<double>& w) {
  Eigen::MatrixXd m(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w(r, c);
  }
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2, double hi = 2) {
  Matrix<double> m(rows, cols);
  for (auto& x : m.values()) x = uniform(rng, lo, hi);
  return m;
}

inline std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

template <class T>
bool bitwise_equal(const Matrix<T>& a, const Matrix<T>& b) {
  return a.same_shape(b) &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin(),
                    [](T x, T y) { return std::memcmp(&x, &y, sizeof(T)) == 0; });
}

template <class T>
bool params_bitwise_equal(ModelParams<T> a, ModelParams<T> b) {
  auto na = a.named_tensors(), nb = b.named_tensors();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || !bitwise_equal(*na[i].second, *nb[i].second)) return false;
  }
  auto sa = a.named_spectral_states(), sb = b.named_spectral_states();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].second->u != sb[i].second->u) return false;
  }
  return true;
}

/// Independent PNG reader for 8-bit RGB, filter-0 files: checks the
/// signature and chunk CRCs and inflates IDAT with zlib.
struct DecodedPng {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> rgb;
};

inline DecodedPng decode_png(const std::vector<unsigned char>& b) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (b.size() < 8 || std::memcmp(b.data(), sig, 8) != 0) throw std::runtime_error("bad PNG signature");
  auto be32 = [&](std::size_t at) {
    return (std::uint32_t{b.at(at)} << 24) | (std::uint32_t{b.at(at + 1)} << 16) | (std::uint32_t{b.at(at + 2)} << 8) |
           std::uint32_t{b.at(at + 3)};
  };
  DecodedPng out;
  std::vector<unsigned char> idat;
  bool ended = false;
  for (std::size_t at = 8; at < b.size() && !ended;) {
    const std::uint32_t len = be32(at);
    const std::string type(b.begin() + static_cast<std::ptrdiff_t>(at + 4), b.begin() + static_cast<std::ptrdiff_t>(at + 8));
    if (crc32(0L, b.data() + at + 4, len + 4) != be32(at + 8 + len)) throw std::runtime_error("bad chunk CRC");
    const unsigned char* data = b.data() + at + 8;
    if (type == "IHDR") {
      out.width = be32(at + 8);
      out.height = be32(at + 12);
      if (data[8] != 8 || data[9] != 2) throw std::runtime_error("not 8-bit RGB");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      ended = true;
    }
    at += 12 + len;
  }
  if (!ended) throw std::runtime_error("missing IEND");
  const std::size_t stride = out.width * 3 + 1;
  std::vector<unsigned char> raw(stride * out.height);
  uLongf n = raw.size();
  if (uncompress(raw.data(), &n, idat.data(), idat.size()) != Z_OK || n != raw.size()) {
    throw std::runtime_error("IDAT inflate failed");
  }
  for (std::size_t y = 0; y < out.height; ++y) {
    if (raw[y * stride] != 0) throw std::runtime_error("unsupported filter");
    out.rgb.insert(out.rgb.end(), raw.begin() + static_cast<std::ptrdiff_t>(y * stride + 1),
                   raw.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
  }
  return out;
}

}  // namespace att3d::testing
