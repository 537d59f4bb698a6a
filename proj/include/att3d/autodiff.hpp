#pragma once

// Reverse-mode differentiation over a closed set of matrix-valued primitives.
//
// Every node holds a dense matrix. Binary elementwise primitives broadcast an
// operand along any axis of extent 1 (scalars, row vectors, column vectors).
// A tape is single-threaded; independent tapes can run on separate threads.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "att3d/errors.hpp"
#include "att3d/tensor.hpp"
#include "att3d/trilinear.hpp"

namespace att3d {

enum class Primitive : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  matmul,
  concat,
  slice,
  reshape,
  trilinear,
  silu,
  sigmoid,
  softplus,
  exp,
  sum,
  sum_groups,
  scale,
  norm2,
};

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::leaf: return "leaf";
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::div: return "div";
    case Primitive::matmul: return "matmul";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::reshape: return "reshape";
    case Primitive::trilinear: return "trilinear";
    case Primitive::silu: return "silu";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::softplus: return "softplus";
    case Primitive::exp: return "exp";
    case Primitive::sum: return "sum";
    case Primitive::sum_groups: return "sum_groups";
    case Primitive::scale: return "scale";
    case Primitive::norm2: return "norm2";
  }
  return "?";
}

enum class Axis : std::uint8_t { rows, cols };

/// Reference to a node on a specific tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

namespace scalar {

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <class T>
T silu(T x) {
  return x * sigmoid(x);
}

template <class T>
T silu_derivative(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

}  // namespace scalar

template <class T>
class Tape {
 public:
  using Mat = Matrix<T>;

  Var leaf(Mat value, bool requires_grad = true) {
    Node n;
    n.op = Primitive::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }
  Var constant(Mat value) { return leaf(std::move(value), false); }

  Var add(Var a, Var b) { return binary(Primitive::add, a, b); }
  Var sub(Var a, Var b) { return binary(Primitive::sub, a, b); }
  Var mul(Var a, Var b) { return binary(Primitive::mul, a, b); }
  Var div(Var a, Var b) { return binary(Primitive::div, a, b); }

  Var matmul(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw StructuralError("matmul shape mismatch " + av.shape_string() + " * " +
                            bv.shape_string());
    }
    Node n = make(Primitive::matmul, {a, b});
    n.value = Mat(av.rows(), bv.cols());
    gemm_accumulate(av, bv, n.value);
    return push(std::move(n));
  }

  /// Concatenate along columns; all inputs share the row count.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw StructuralError("concat of zero inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw StructuralError("concat row mismatch");
      cols += value(p).cols();
    }
    Node n = make(Primitive::concat, parts);
    n.value = Mat(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Mat& pv = value(p);
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(pv.row(r).begin(), pv.row(r).end(), n.value.row(r).begin() + off);
      }
      off += pv.cols();
    }
    return push(std::move(n));
  }

  /// Half-open range [begin, end) along `axis`.
  Var slice(Var a, Axis axis, std::size_t begin, std::size_t end) {
    const Mat& av = value(a);
    const std::size_t extent = axis == Axis::rows ? av.rows() : av.cols();
    if (begin >= end || end > extent) throw StructuralError("slice range out of bounds");
    Node n = make(Primitive::slice, {a});
    n.axis = axis;
    n.p0 = begin;
    n.p1 = end;
    if (axis == Axis::rows) {
      n.value = Mat(end - begin, av.cols());
      std::copy(av.data() + begin * av.cols(), av.data() + end * av.cols(), n.value.data());
    } else {
      n.value = Mat(av.rows(), end - begin);
      for (std::size_t r = 0; r < av.rows(); ++r) {
        std::copy(av.row(r).begin() + begin, av.row(r).begin() + end, n.value.row(r).begin());
      }
    }
    return push(std::move(n));
  }

  Var reshape(Var a, std::size_t rows, std::size_t cols) {
    if (rows * cols != value(a).size()) {
      throw StructuralError("reshape from " + value(a).shape_string() + " to " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    }
    Node n = make(Primitive::reshape, {a});
    n.value = value(a);
    n.value.reshape(rows, cols);
    return push(std::move(n));
  }

  /// Gather-weighted-sum: trilinear interpolation of `table` (res^3 x F) at
  /// each row of `points` (N x 3). Differentiable in both inputs.
  Var trilinear(Var table, Var points, std::size_t res, double radius) {
    const Mat& tv = value(table);
    const Mat& pv = value(points);
    if (tv.rows() != res * res * res) {
      throw StructuralError("trilinear table has " + std::to_string(tv.rows()) +
                            " rows, expected res^3 = " + std::to_string(res * res * res));
    }
    if (pv.cols() != 3) throw StructuralError("trilinear points must be N x 3");
    Node n = make(Primitive::trilinear, {table, points});
    n.p0 = res;
    n.radius = radius;
    const std::size_t count = pv.rows(), width = tv.cols();
    n.value = Mat(count, width);
    n.corners.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double p[3] = {static_cast<double>(pv(i, 0)), static_cast<double>(pv(i, 1)),
                           static_cast<double>(pv(i, 2))};
      n.corners[i] = trilinear_corners(p, res, radius);
      const TrilinearCorners& tc = n.corners[i];
      T* out = n.value.data() + i * width;
      for (int c = 0; c < 8; ++c) {
        const T w = static_cast<T>(tc.weight[c]);
        if (w == T(0)) continue;
        const T* src = tv.data() + static_cast<std::size_t>(tc.index[c]) * width;
        for (std::size_t f = 0; f < width; ++f) out[f] += w * src[f];
      }
    }
    return push(std::move(n));
  }

  Var silu(Var a) { return unary(Primitive::silu, a, [](T x) { return scalar::silu(x); }); }
  Var sigmoid(Var a) {
    return unary(Primitive::sigmoid, a, [](T x) { return scalar::sigmoid(x); });
  }
  Var softplus(Var a) {
    return unary(Primitive::softplus, a, [](T x) { return scalar::softplus(x); });
  }
  Var exp(Var a) { return unary(Primitive::exp, a, [](T x) { return std::exp(x); }); }

  Var scale(Var a, T s) {
    Node n = make(Primitive::scale, {a});
    n.scalar = s;
    n.value = value(a);
    for (auto& x : n.value.values()) x *= s;
    return push(std::move(n));
  }

  /// Sum of all entries, 1 x 1.
  Var sum(Var a) {
    Node n = make(Primitive::sum, {a});
    T acc = T(0);
    for (T x : value(a).values()) acc += x;
    n.value = Mat::scalar(acc);
    return push(std::move(n));
  }

  /// Sums consecutive blocks of `group` rows: (G*group x C) -> (G x C).
  Var sum_groups(Var a, std::size_t group) {
    const Mat& av = value(a);
    if (group == 0 || av.rows() % group != 0) {
      throw StructuralError("sum_groups: rows not divisible by group size");
    }
    Node n = make(Primitive::sum_groups, {a});
    n.p0 = group;
    n.value = Mat(av.rows() / group, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
      T* out = n.value.data() + (r / group) * av.cols();
      const T* src = av.data() + r * av.cols();
      for (std::size_t c = 0; c < av.cols(); ++c) out[c] += src[c];
    }
    return push(std::move(n));
  }

  /// Row-wise Euclidean norm: (N x C) -> (N x 1).
  Var norm2(Var a) {
    const Mat& av = value(a);
    Node n = make(Primitive::norm2, {a});
    n.value = Mat(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      T acc = T(0);
      for (T x : av.row(r)) acc += x * x;
      n.value[r] = std::sqrt(acc);
    }
    return push(std::move(n));
  }

  const Mat& value(Var v) const { return node(v).value; }
  Primitive primitive(Var v) const { return node(v).op; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const std::uint32_t> inputs(Var v) const { return node(v).inputs; }

  /// Gradient of the last backward() root with respect to `v`; zero for
  /// non-ancestors and for nodes that do not require gradients.
  const Mat& grad(Var v) const {
    const Node& n = node(v);
    if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
    Mat& g = grads_[v.id];
    if (!g.same_shape(n.value)) g = Mat(n.value.rows(), n.value.cols());
    return g;
  }

  void backward(Var root) {
    const Node& r = node(root);
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw ContractError("backward root must be 1x1, got " + r.value.shape_string());
    }
    grads_.assign(nodes_.size(), Mat());
    for (std::size_t i = 0; i <= root.id; ++i) {
      if (nodes_[i].requires_grad) {
        grads_[i] = Mat(nodes_[i].value.rows(), nodes_[i].value.cols());
      }
    }
    if (!r.requires_grad) return;
    grads_[root.id][0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.requires_grad || n.op == Primitive::leaf) continue;
      propagate(n, grads_[i]);
    }
  }

 private:
  struct Node {
    Primitive op = Primitive::leaf;
    std::vector<std::uint32_t> inputs;
    Mat value;
    bool requires_grad = false;
    T scalar = T(0);
    std::size_t p0 = 0, p1 = 0;
    Axis axis = Axis::rows;
    double radius = 0;
    std::vector<TrilinearCorners> corners;
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw ContractError("variable not on this tape");
    return nodes_[v.id];
  }

  Node make(Primitive op, std::initializer_list<Var> in) {
    return make(op, std::span<const Var>(in.begin(), in.size()));
  }
  Node make(Primitive op, std::span<const Var> in) {
    Node n;
    n.op = op;
    for (Var v : in) {
      n.requires_grad = n.requires_grad || node(v).requires_grad;
      n.inputs.push_back(v.id);
    }
    return n;
  }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  static bool broadcastable(std::size_t a, std::size_t b) { return a == b || a == 1 || b == 1; }

  template <class F>
  Var unary(Primitive op, Var a, F f) {
    Node n = make(op, {a});
    n.value = value(a);
    for (auto& x : n.value.values()) x = f(x);
    return push(std::move(n));
  }

  Var binary(Primitive op, Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (!broadcastable(av.rows(), bv.rows()) || !broadcastable(av.cols(), bv.cols())) {
      throw StructuralError(std::string(primitive_name(op)) + " shape mismatch " +
                            av.shape_string() + " vs " + bv.shape_string());
    }
    Node n = make(op, {a, b});
    n.value = Mat(std::max(av.rows(), bv.rows()), std::max(av.cols(), bv.cols()));
    switch (op) {
      case Primitive::add: apply_binary(av, bv, n.value, [](T x, T y) { return x + y; }); break;
      case Primitive::sub: apply_binary(av, bv, n.value, [](T x, T y) { return x - y; }); break;
      case Primitive::mul: apply_binary(av, bv, n.value, [](T x, T y) { return x * y; }); break;
      default: apply_binary(av, bv, n.value, [](T x, T y) { return x / y; }); break;
    }
    return push(std::move(n));
  }

  /// out = f(a, b) with broadcasting; out has the broadcast shape.
  template <class F>
  static void apply_binary(const Mat& a, const Mat& b, Mat& out, F f) {
    const std::size_t rows = out.rows(), cols = out.cols();
    T* o = out.data();
    const T* pa = a.data();
    const T* pb = b.data();
    if (a.same_shape(out) && b.same_shape(out)) {
      for (std::size_t i = 0; i < rows * cols; ++i) o[i] = f(pa[i], pb[i]);
    } else if (a.same_shape(out) && b.size() == 1) {
      const T y = pb[0];
      for (std::size_t i = 0; i < rows * cols; ++i) o[i] = f(pa[i], y);
    } else if (b.same_shape(out) && a.size() == 1) {
      const T x = pa[0];
      for (std::size_t i = 0; i < rows * cols; ++i) o[i] = f(x, pb[i]);
    } else if (a.same_shape(out) && b.rows() == 1) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = f(pa[r * cols + c], pb[c]);
      }
    } else if (a.same_shape(out) && b.cols() == 1) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T y = pb[r];
        for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = f(pa[r * cols + c], y);
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t ra = a.rows() == 1 ? 0 : r, rb = b.rows() == 1 ? 0 : r;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t ca = a.cols() == 1 ? 0 : c, cb = b.cols() == 1 ? 0 : c;
          o[r * cols + c] = f(pa[ra * a.cols() + ca], pb[rb * b.cols() + cb]);
        }
      }
    }
  }

  /// dst += src summed down to dst's (broadcast) shape.
  static void reduce_into(const Mat& src, Mat& dst) {
    const std::size_t rows = src.rows(), cols = src.cols();
    const T* s = src.data();
    T* d = dst.data();
    if (src.same_shape(dst)) {
      for (std::size_t i = 0; i < rows * cols; ++i) d[i] += s[i];
    } else if (dst.size() == 1) {
      T acc = T(0);
      for (std::size_t i = 0; i < rows * cols; ++i) acc += s[i];
      d[0] += acc;
    } else if (dst.rows() == 1) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) d[c] += s[r * cols + c];
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = T(0);
        for (std::size_t c = 0; c < cols; ++c) acc += s[r * cols + c];
        d[r] += acc;
      }
    }
  }

  void propagate(const Node& n, const Mat& g) {
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    auto in_grad = [&](std::size_t k) -> Mat& { return grads_[n.inputs[k]]; };
    auto in_value = [&](std::size_t k) -> const Mat& { return nodes_[n.inputs[k]].value; };

    switch (n.op) {
      case Primitive::leaf: break;
      case Primitive::add:
      case Primitive::sub:
      case Primitive::mul:
      case Primitive::div: {
        const Mat& av = in_value(0);
        const Mat& bv = in_value(1);
        Mat tmp(g.rows(), g.cols());
        if (wants(0)) {
          switch (n.op) {
            case Primitive::add:
            case Primitive::sub: reduce_into(g, in_grad(0)); break;
            case Primitive::mul:
              apply_binary(g, bv, tmp, [](T x, T y) { return x * y; });
              reduce_into(tmp, in_grad(0));
              break;
            default:
              apply_binary(g, bv, tmp, [](T x, T y) { return x / y; });
              reduce_into(tmp, in_grad(0));
              break;
          }
        }
        if (wants(1)) {
          switch (n.op) {
            case Primitive::add: reduce_into(g, in_grad(1)); break;
            case Primitive::sub:
              for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = -g[i];
              reduce_into(tmp, in_grad(1));
              break;
            case Primitive::mul:
              apply_binary(g, av, tmp, [](T x, T y) { return x * y; });
              reduce_into(tmp, in_grad(1));
              break;
            default:
              // d(a/b)/db = -(a/b)/b
              apply_binary(n.value, bv, tmp, [](T q, T y) { return -q / y; });
              for (std::size_t i = 0; i < g.size(); ++i) tmp[i] *= g[i];
              reduce_into(tmp, in_grad(1));
              break;
          }
        }
        break;
      }
      case Primitive::matmul:
        if (wants(0)) gemm_nt_accumulate(g, in_value(1), in_grad(0));
        if (wants(1)) gemm_tn_accumulate(in_value(0), g, in_grad(1));
        break;
      case Primitive::concat: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t w = in_value(k).cols();
          if (wants(k)) {
            Mat& d = in_grad(k);
            for (std::size_t r = 0; r < g.rows(); ++r) {
              for (std::size_t c = 0; c < w; ++c) d(r, c) += g(r, off + c);
            }
          }
          off += w;
        }
        break;
      }
      case Primitive::slice: {
        Mat& d = in_grad(0);
        if (n.axis == Axis::rows) {
          T* dst = d.data() + n.p0 * d.cols();
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        } else {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) d(r, n.p0 + c) += g(r, c);
          }
        }
        break;
      }
      case Primitive::reshape: {
        Mat& d = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        break;
      }
      case Primitive::trilinear: {
        const Mat& table = in_value(0);
        const std::size_t width = table.cols();
        if (wants(0)) {
          Mat& dt = in_grad(0);
          for (std::size_t i = 0; i < n.corners.size(); ++i) {
            const TrilinearCorners& tc = n.corners[i];
            const T* go = g.data() + i * width;
            for (int c = 0; c < 8; ++c) {
              const T w = static_cast<T>(tc.weight[c]);
              if (w == T(0)) continue;
              T* dst = dt.data() + static_cast<std::size_t>(tc.index[c]) * width;
              for (std::size_t f = 0; f < width; ++f) dst[f] += w * go[f];
            }
          }
        }
        if (wants(1)) {
          Mat& dp = in_grad(1);
          for (std::size_t i = 0; i < n.corners.size(); ++i) {
            const TrilinearCorners& tc = n.corners[i];
            const T* go = g.data() + i * width;
            for (int a = 0; a < 3; ++a) {
              if (!tc.inside[a]) continue;
              T acc = T(0);
              for (int c = 0; c < 8; ++c) {
                const T dw = static_cast<T>(trilinear_weight_derivative(tc, c, a));
                const T* src = table.data() + static_cast<std::size_t>(tc.index[c]) * width;
                T dotv = T(0);
                for (std::size_t f = 0; f < width; ++f) dotv += go[f] * src[f];
                acc += dw * dotv;
              }
              dp(i, a) += acc * static_cast<T>(tc.coord_scale);
            }
          }
        }
        break;
      }
      case Primitive::silu: {
        const Mat& x = in_value(0);
        Mat& d = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * scalar::silu_derivative(x[i]);
        break;
      }
      case Primitive::sigmoid: {
        Mat& d = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T s = n.value[i];
          d[i] += g[i] * s * (T(1) - s);
        }
        break;
      }
      case Primitive::softplus: {
        const Mat& x = in_value(0);
        Mat& d = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * scalar::sigmoid(x[i]);
        break;
      }
      case Primitive::exp: {
        Mat& d = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.value[i];
        break;
      }
      case Primitive::scale: {
        Mat& d = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.scalar;
        break;
      }
      case Primitive::sum: {
        Mat& d = in_grad(0);
        const T go = g[0];
        for (auto& x : d.values()) x += go;
        break;
      }
      case Primitive::sum_groups: {
        Mat& d = in_grad(0);
        const std::size_t cols = d.cols();
        for (std::size_t r = 0; r < d.rows(); ++r) {
          const T* src = g.data() + (r / n.p0) * cols;
          T* dst = d.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
        break;
      }
      case Primitive::norm2: {
        const Mat& x = in_value(0);
        Mat& d = in_grad(0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const T len = n.value[r];
          if (len == T(0)) continue;
          const T k = g[r] / len;
          for (std::size_t c = 0; c < x.cols(); ++c) d(r, c) += k * x(r, c);
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  mutable std::vector<Mat> grads_;
};

/// Outcome of comparing an analytic gradient against central differences.
struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  bool finite = true;
  std::string message;
  std::vector<double> analytic;
  std::vector<double> numeric;

  bool passed(double tol) const { return finite && max_rel_error < tol; }
};

/// Relative error per coordinate is |analytic - fd| / max(1, |analytic|).
inline GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                                  std::vector<double> x, double step) {
  GradCheckReport rep;
  rep.analytic = grad(x);
  if (rep.analytic.size() != x.size()) {
    throw StructuralError("grad_check: gradient length differs from input length");
  }
  rep.numeric.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    const double fd = (fp - fm) / (2 * step);
    rep.numeric[i] = fd;
    const double a = rep.analytic[i];
    if (!std::isfinite(fd) || !std::isfinite(a)) {
      rep.finite = false;
      rep.worst_index = i;
      rep.message = "non-finite value at coordinate " + std::to_string(i);
      return rep;
    }
    const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  return rep;
}

/// Gradient check for a function built on a tape from a single matrix leaf.
inline GradCheckReport grad_check(const std::function<Var(Tape<double>&, Var)>& build,
                                  const Matrix<double>& x, double step) {
  const std::size_t rows = x.rows(), cols = x.cols();
  auto value = [&](const std::vector<double>& p) {
    Tape<double> tape;
    const Var root = build(tape, tape.leaf(Matrix<double>(rows, cols, p)));
    return tape.value(root)[0];
  };
  auto gradient = [&](const std::vector<double>& p) {
    Tape<double> tape;
    const Var in = tape.leaf(Matrix<double>(rows, cols, p));
    const Var root = build(tape, in);
    tape.backward(root);
    return tape.grad(in).values();
  };
  return grad_check(value, gradient, x.values(), step);
}

}  // namespace att3d
