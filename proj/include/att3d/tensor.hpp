#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "att3d/errors.hpp"

namespace att3d {

/// Dense row-major 2-D array. Vectors are 1 x n or n x 1 matrices.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw StructuralError("matrix data length " + std::to_string(data_.size()) +
                            " does not match " + std::to_string(rows_) + "x" +
                            std::to_string(cols_));
    }
  }

  static Matrix row_vector(std::span<const T> v) {
    return Matrix(1, v.size(), std::vector<T>(v.begin(), v.end()));
  }
  static Matrix scalar(T v) { return Matrix(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(std::size_t rows, std::size_t cols) {
    if (rows * cols != data_.size()) throw StructuralError("reshape changes element count");
    rows_ = rows;
    cols_ = cols;
  }

  template <class U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// out += a * b for row-major a (n x k), b (k x m).
template <class T>
void gemm_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (m < 16) {
    // Narrow outputs: dot products against columns of b.
    std::vector<T> bt(m * k);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b.data()[p * m + j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const T* arow = a.data() + i * k;
      T* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const T* bcol = bt.data() + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * bcol[p];
        orow[j] += acc;
      }
    }
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = out.data() + i * m;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out += g * b^T for g (n x m), b (k x m); out is n x k.
template <class T>
void gemm_nt_accumulate(const Matrix<T>& g, const Matrix<T>& b, Matrix<T>& out) {
  const std::size_t n = g.rows(), m = g.cols(), k = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const T* grow = g.data() + i * m;
    T* orow = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b.data() + p * m;
      T acc = T(0);
      for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

/// out += a^T * g for a (n x k), g (n x m); out is k x m.
template <class T>
void gemm_tn_accumulate(const Matrix<T>& a, const Matrix<T>& g, Matrix<T>& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a.data() + i * k;
    const T* grow = g.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* orow = out.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * grow[j];
    }
  }
}

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  return n > 0 ? v / n : v;
}
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

}  // namespace att3d
