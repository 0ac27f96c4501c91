#pragma once

// Differentiable operations on BasicTensor. Every op validates shapes up
// front and throws ShapeError naming the offending dimension.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gsnaco/tensor.hpp"

namespace gsnaco {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* arg) {
  require(t.dim() == rank, std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                               ", got shape " + to_string(t.shape()));
}

// Shapes are compatible when equal or when one side is a single value.
template <class T>
void require_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require(a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1,
          std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
              to_string(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_broadcast(a, b, "add");
  const bool sa = a.numel() == 1 && b.numel() != 1;
  const bool sb = b.numel() == 1 && a.numel() != 1;
  const Shape shape = sa ? b.shape() : a.shape();
  const std::size_t n = numel_of(shape);
  std::vector<T> out(n);
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[sa ? 0 : i] + y[sb ? 0 : i];
  return detail::make_result<T>(shape, std::move(out), "add", {a, b}, [sa, sb](Node<T>& self) {
    const auto& g = self.grad;
    if (T* ga = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[sa ? 0 : i] += g[i];
    }
    if (T* gb = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[sb ? 0 : i] += g[i];
    }
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_broadcast(a, b, "sub");
  const bool sa = a.numel() == 1 && b.numel() != 1;
  const bool sb = b.numel() == 1 && a.numel() != 1;
  const Shape shape = sa ? b.shape() : a.shape();
  const std::size_t n = numel_of(shape);
  std::vector<T> out(n);
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[sa ? 0 : i] - y[sb ? 0 : i];
  return detail::make_result<T>(shape, std::move(out), "sub", {a, b}, [sa, sb](Node<T>& self) {
    const auto& g = self.grad;
    if (T* ga = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[sa ? 0 : i] += g[i];
    }
    if (T* gb = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[sb ? 0 : i] -= g[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_broadcast(a, b, "multiply");
  const bool sa = a.numel() == 1 && b.numel() != 1;
  const bool sb = b.numel() == 1 && a.numel() != 1;
  const Shape shape = sa ? b.shape() : a.shape();
  const std::size_t n = numel_of(shape);
  std::vector<T> out(n);
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[sa ? 0 : i] * y[sb ? 0 : i];
  return detail::make_result<T>(shape, std::move(out), "multiply", {a, b}, [sa, sb](Node<T>& self) {
    const auto& g = self.grad;
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    if (T* ga = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[sa ? 0 : i] += g[i] * y[sb ? 0 : i];
    }
    if (T* gb = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[sb ? 0 : i] += g[i] * x[sa ? 0 : i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= c;
  return detail::make_result<T>(a.shape(), std::move(out), "scale", {a}, [c](Node<T>& self) {
    if (T* ga = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
    }
  });
}

namespace detail {

// Unary op whose derivative is expressed through input x and output y.
template <class T, class F, class D>
BasicTensor<T> unary(const BasicTensor<T>& a, const char* name, F f, D dfdx) {
  std::vector<T> out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(a.shape(), std::move(out), name, {a}, [dfdx](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      const auto& x = self.parents[0]->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.data[i]);
    }
  });
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  return detail::unary(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  return detail::unary(
      a, "sigmoid", [](T x) { return detail::sigmoid_value(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return detail::unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// log(a + eps), elementwise.
template <class T>
BasicTensor<T> log_eps(const BasicTensor<T>& a, T eps) {
  return detail::unary(
      a, "log", [eps](T x) { return std::log(x + eps); }, [eps](T x, T) { return T(1) / (x + eps); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  return detail::make_result<T>(Shape{1}, {s}, "sum", {a}, [](Node<T>& self) {
    if (T* ga = detail::grad_of(self, 0)) {
      const T g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) ga[i] += g;
    }
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  detail::require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

namespace detail {

// Sum (or mean) over the trailing two axes of an N×C×H×W tensor.
template <class T>
BasicTensor<T> reduce_spatial(const BasicTensor<T>& x, bool average, const char* name) {
  require_rank(x, 4, name, "input");
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  require(hw > 0, std::string(name) + ": empty spatial axes in shape " + to_string(x.shape()));
  const T factor = average ? T(1) / static_cast<T>(hw) : T(1);
  std::vector<T> out(n * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n * c; ++i) {
    T s = T(0);
    for (std::size_t p = 0; p < hw; ++p) s += xv[i * hw + p];
    out[i] = average ? s / static_cast<T>(hw) : s;
  }
  return make_result<T>(Shape{n, c}, std::move(out), name, {x}, [hw, factor](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T g = self.grad[i] * factor;
        for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += g;
      }
    }
  });
}

}  // namespace detail

/// N×C×H×W → N×C, arithmetic mean over space.
template <class T>
BasicTensor<T> avg_pool_spatial(const BasicTensor<T>& x) {
  return detail::reduce_spatial(x, true, "avg_pool_spatial");
}

/// N×C×H×W → N×C, sum over space.
template <class T>
BasicTensor<T> sum_spatial(const BasicTensor<T>& x) {
  return detail::reduce_spatial(x, false, "sum_spatial");
}

/// B×T×... → B×..., arithmetic mean over the temporal axis (axis 1).
template <class T>
BasicTensor<T> avg_pool_temporal(const BasicTensor<T>& x) {
  detail::require(x.dim() >= 2, "avg_pool_temporal: input needs a temporal axis, got shape " +
                                    to_string(x.shape()));
  const std::size_t b = x.size(0), t = x.size(1);
  detail::require(t > 0, "avg_pool_temporal: empty temporal axis");
  const std::size_t inner = x.numel() / std::max<std::size_t>(1, b * t);
  Shape shape{b};
  shape.insert(shape.end(), x.shape().begin() + 2, x.shape().end());
  std::vector<T> out(b * inner, T(0));
  const auto& xv = x.values();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < inner; ++i) {
      T s = T(0);
      for (std::size_t ti = 0; ti < t; ++ti) s += xv[(bi * t + ti) * inner + i];
      out[bi * inner + i] = s / static_cast<T>(t);
    }
  }
  return detail::make_result<T>(shape, std::move(out), "avg_pool_temporal", {x},
                                [b, t, inner](Node<T>& self) {
                                  if (T* gx = detail::grad_of(self, 0)) {
                                    for (std::size_t bi = 0; bi < b; ++bi)
                                      for (std::size_t ti = 0; ti < t; ++ti)
                                        for (std::size_t i = 0; i < inner; ++i)
                                          gx[(bi * t + ti) * inner + i] +=
                                              self.grad[bi * inner + i] / static_cast<T>(t);
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  detail::require(numel_of(shape) == x.numel(), "reshape: cannot view " + to_string(x.shape()) +
                                                    " as " + to_string(shape));
  return detail::make_result<T>(std::move(shape), x.values(), "reshape", {x}, [](Node<T>& self) {
    if (T* gx = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

/// Concatenation along axis 1. All inputs agree on every other axis.
template <class T>
BasicTensor<T> concat1(const std::vector<BasicTensor<T>>& parts) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts[0].shape();
  detail::require(ref.size() >= 2, "concat: inputs need at least 2 axes");
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require(p.dim() == ref.size(), "concat: rank mismatch");
    for (std::size_t ax = 0; ax < ref.size(); ++ax) {
      if (ax == 1) continue;
      detail::require(p.size(ax) == ref[ax], "concat: axis " + std::to_string(ax) + " differs (" +
                                                 std::to_string(p.size(ax)) + " vs " +
                                                 std::to_string(ref[ax]) + ")");
    }
    total += p.size(1);
    widths.push_back(p.size(1));
  }
  const std::size_t outer = ref[0];
  const std::size_t inner = numel_of(Shape(ref.begin() + 2, ref.end()));
  Shape shape = ref;
  shape[1] = total;
  std::vector<T> out(outer * total * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& v = parts[k].values();
      std::copy_n(v.begin() + o * widths[k] * inner, widths[k] * inner,
                  out.begin() + (o * total + off) * inner);
      off += widths[k];
    }
  }
  return detail::make_result<T>(shape, std::move(out), "concat", parts,
                                [outer, total, inner, widths](Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    if (T* g = detail::grad_of(self, k)) {
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t i = 0; i < widths[k] * inner; ++i)
                                          g[o * widths[k] * inner + i] +=
                                              self.grad[(o * total + off) * inner + i];
                                    }
                                    off += widths[k];
                                  }
                                });
}

/// Slice [begin, end) along axis 1.
template <class T>
BasicTensor<T> slice1(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require(x.dim() >= 2, "slice: input needs at least 2 axes");
  detail::require(begin < end && end <= x.size(1), "slice: range [" + std::to_string(begin) + "," +
                                                       std::to_string(end) + ") outside axis 1 of size " +
                                                       std::to_string(x.size(1)));
  const std::size_t outer = x.size(0), width = x.size(1), len = end - begin;
  const std::size_t inner = x.numel() / std::max<std::size_t>(1, outer * width);
  Shape shape = x.shape();
  shape[1] = len;
  std::vector<T> out(outer * len * inner);
  const auto& v = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.begin() + (o * width + begin) * inner, len * inner, out.begin() + o * len * inner);
  return detail::make_result<T>(shape, std::move(out), "slice", {x},
                                [outer, width, len, inner, begin](Node<T>& self) {
                                  if (T* g = detail::grad_of(self, 0)) {
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < len * inner; ++i)
                                        g[(o * width + begin) * inner + i] += self.grad[o * len * inner + i];
                                  }
                                });
}

/// Picks index t of axis 1 and drops that axis: B×T×rest → B×rest.
template <class T>
BasicTensor<T> select1(const BasicTensor<T>& x, std::size_t t) {
  auto s = slice1(x, t, t + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + 1);
  return reshape(s, shape);
}

/// Stacks equally shaped B×rest tensors into B×K×rest.
template <class T>
BasicTensor<T> stack1(const std::vector<BasicTensor<T>>& parts) {
  detail::require(!parts.empty(), "stack: no inputs");
  std::vector<BasicTensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    detail::require(p.shape() == parts[0].shape(), "stack: shape " + to_string(p.shape()) +
                                                       " differs from " + to_string(parts[0].shape()));
    Shape s = p.shape();
    s.insert(s.begin() + 1, 1);
    expanded.push_back(reshape(p, s));
  }
  return concat1(expanded);
}

/// N×G×H×W → N×(G·reps)×H×W; output channel c copies plane c / reps.
template <class T>
BasicTensor<T> repeat_channels(const BasicTensor<T>& x, std::size_t reps) {
  detail::require_rank(x, 4, "repeat_channels", "input");
  const std::size_t n = x.size(0), g = x.size(1), hw = x.size(2) * x.size(3);
  std::vector<T> out(n * g * reps * hw);
  const auto& v = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < g * reps; ++c)
      std::copy_n(v.begin() + (i * g + c / reps) * hw, hw, out.begin() + (i * g * reps + c) * hw);
  return detail::make_result<T>(Shape{n, g * reps, x.size(2), x.size(3)}, std::move(out), "repeat_channels",
                                {x}, [n, g, reps, hw](Node<T>& self) {
                                  if (T* gx = detail::grad_of(self, 0)) {
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t c = 0; c < g * reps; ++c)
                                        for (std::size_t p = 0; p < hw; ++p)
                                          gx[(i * g + c / reps) * hw + p] +=
                                              self.grad[(i * g * reps + c) * hw + p];
                                  }
                                });
}

/// N×C → N×C×H×W, each value broadcast over the plane.
template <class T>
BasicTensor<T> expand_spatial(const BasicTensor<T>& x, std::size_t h, std::size_t w) {
  detail::require_rank(x, 2, "expand_spatial", "input");
  const std::size_t nc = x.numel(), hw = h * w;
  std::vector<T> out(nc * hw);
  const auto& v = x.values();
  for (std::size_t i = 0; i < nc; ++i) std::fill_n(out.begin() + i * hw, hw, v[i]);
  return detail::make_result<T>(Shape{x.size(0), x.size(1), h, w}, std::move(out), "expand_spatial", {x},
                                [nc, hw](Node<T>& self) {
                                  if (T* gx = detail::grad_of(self, 0)) {
                                    for (std::size_t i = 0; i < nc; ++i) {
                                      T s = T(0);
                                      for (std::size_t p = 0; p < hw; ++p) s += self.grad[i * hw + p];
                                      gx[i] += s;
                                    }
                                  }
                                });
}

/// N×C×H×W → N×H×W×C (channels-last permutation).
template <class T>
BasicTensor<T> channels_last(const BasicTensor<T>& x) {
  detail::require_rank(x, 4, "channels_last", "input");
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  std::vector<T> out(x.numel());
  const auto& v = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t p = 0; p < hw; ++p) out[(i * hw + p) * c + k] = v[(i * c + k) * hw + p];
  return detail::make_result<T>(Shape{n, x.size(2), x.size(3), c}, std::move(out), "channels_last", {x},
                                [n, c, hw](Node<T>& self) {
                                  if (T* g = detail::grad_of(self, 0)) {
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t k = 0; k < c; ++k)
                                        for (std::size_t p = 0; p < hw; ++p)
                                          g[(i * c + k) * hw + p] += self.grad[(i * hw + p) * c + k];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Attention and classification helpers

/// Softmax over the spatial plane of every (sample, channel). Max-subtracted.
template <class T>
BasicTensor<T> softmax_spatial(const BasicTensor<T>& x) {
  detail::require_rank(x, 4, "softmax_spatial", "input");
  const std::size_t planes = x.size(0) * x.size(1), hw = x.size(2) * x.size(3);
  detail::require(hw > 0, "softmax_spatial: empty plane");
  std::vector<T> out(x.numel());
  const auto& v = x.values();
  for (std::size_t i = 0; i < planes; ++i) {
    const T* src = v.data() + i * hw;
    T* dst = out.data() + i * hw;
    const T m = *std::max_element(src, src + hw);
    T z = T(0);
    for (std::size_t p = 0; p < hw; ++p) z += (dst[p] = std::exp(src[p] - m));
    for (std::size_t p = 0; p < hw; ++p) dst[p] /= z;
  }
  return detail::make_result<T>(x.shape(), std::move(out), "softmax_spatial", {x}, [planes, hw](Node<T>& self) {
    if (T* gx = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < planes; ++i) {
        const T* y = self.data.data() + i * hw;
        const T* g = self.grad.data() + i * hw;
        T dot = T(0);
        for (std::size_t p = 0; p < hw; ++p) dot += y[p] * g[p];
        for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += y[p] * (g[p] - dot);
      }
    }
  });
}

/// Row-wise softmax of an N×K matrix.
template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  detail::require_rank(x, 2, "softmax_rows", "input");
  auto as_planes = reshape(x, Shape{x.size(0), 1, 1, x.size(1)});
  return reshape(softmax_spatial(as_planes), x.shape());
}

/// Mean over rows of -log softmax(logits)[label].
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t n = logits.size(0), k = logits.size(1);
  detail::require(labels.size() == n, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                          std::to_string(n) + " rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0," +
                              std::to_string(k) + ")");
    }
  }
  const auto& v = logits.values();
  std::vector<T> probs(n * k);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = v.data() + i * k;
    const T m = *std::max_element(row, row + k);
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) z += (probs[i * k + j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    total += (m + std::log(z)) - row[labels[i]];
  }
  return detail::make_result<T>(Shape{1}, {total / static_cast<T>(n)}, "cross_entropy", {logits},
                                [probs = std::move(probs), labels, n, k](Node<T>& self) {
                                  if (T* g = detail::grad_of(self, 0)) {
                                    const T s = self.grad[0] / static_cast<T>(n);
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t j = 0; j < k; ++j)
                                        g[i * k + j] +=
                                            s * (probs[i * k + j] - (static_cast<int>(j) == labels[i] ? T(1) : T(0)));
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Dense layers

/// out[b,k] = Σ_d weight[k,d]·input[b,d] + bias[k]. `bias` may be undefined.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias = {}) {
  detail::require_rank(input, 2, "linear", "input");
  detail::require_rank(weight, 2, "linear", "weight");
  const std::size_t b = input.size(0), d = input.size(1), k = weight.size(0);
  detail::require(weight.size(1) == d, "linear: input feature dimension " + std::to_string(d) +
                                           " does not match weight columns " + std::to_string(weight.size(1)));
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::require(bias.dim() == 1 && bias.size(0) == k, "linear: bias must have " + std::to_string(k) +
                                                              " entries, got shape " + to_string(bias.shape()));
  }
  std::vector<T> out(b * k);
  {
    detail::CMapMat<T> x(input.values().data(), b, d);
    detail::CMapMat<T> w(weight.values().data(), k, d);
    detail::MapMat<T> y(out.data(), b, k);
    y.noalias() = x * w.transpose();
    if (has_bias) {
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bias.values()[j];
    }
  }
  auto fn = [b, d, k, has_bias](Node<T>& self) {
    detail::CMapMat<T> g(self.grad.data(), b, k);
    if (T* gx = detail::grad_of(self, 0)) {
      detail::CMapMat<T> w(self.parents[1]->data.data(), k, d);
      detail::MapMat<T>(gx, b, d).noalias() += g * w;
    }
    if (T* gw = detail::grad_of(self, 1)) {
      detail::CMapMat<T> x(self.parents[0]->data.data(), b, d);
      detail::MapMat<T>(gw, k, d).noalias() += g.transpose() * x;
    }
    if (has_bias) {
      if (T* gb = detail::grad_of(self, 2)) {
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < k; ++j) gb[j] += self.grad[i * k + j];
      }
    }
  };
  if (has_bias) return detail::make_result<T>(Shape{b, k}, std::move(out), "linear", {input, weight, bias}, fn);
  return detail::make_result<T>(Shape{b, k}, std::move(out), "linear", {input, weight}, fn);
}

/// (N×K)·(K×M) → N×M.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank(a, 2, "matmul", "lhs");
  detail::require_rank(b, 2, "matmul", "rhs");
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  detail::require(b.size(0) == k, "matmul: inner dimensions " + std::to_string(k) + " and " +
                                      std::to_string(b.size(0)) + " differ");
  std::vector<T> out(n * m);
  detail::MapMat<T>(out.data(), n, m).noalias() =
      detail::CMapMat<T>(a.values().data(), n, k) * detail::CMapMat<T>(b.values().data(), k, m);
  return detail::make_result<T>(Shape{n, m}, std::move(out), "matmul", {a, b}, [n, k, m](Node<T>& self) {
    detail::CMapMat<T> g(self.grad.data(), n, m);
    if (T* ga = detail::grad_of(self, 0)) {
      detail::MapMat<T>(ga, n, k).noalias() += g * detail::CMapMat<T>(self.parents[1]->data.data(), k, m).transpose();
    }
    if (T* gb = detail::grad_of(self, 1)) {
      detail::MapMat<T>(gb, k, m).noalias() += detail::CMapMat<T>(self.parents[0]->data.data(), n, k).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t groups = 1;
};

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, hout, wout, groups;
  std::size_t sh, sw, ph, pw;
  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t krows() const { return cin_g() * kh * kw; }
  std::size_t positions() const { return hout * wout; }
};

// Unrolls the receptive fields of one channel group of one image into a
// (cin_g·kh·kw) × (hout·wout) matrix.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wout + ox] = inside ? img[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(c * g.h + iy) * g.w + ix] += row[oy * g.wout + ox];
          }
        }
      }
    }
  }
}

// Images per weight-gradient partial; partials are summed in chunk order so
// the result does not depend on the number of worker threads.
inline constexpr std::size_t kConvChunk = 8;

}  // namespace detail

/// Cross-correlation of an N×C_in×H×W input with a C_out×(C_in/groups)×kH×kW
/// kernel. `bias` (C_out) may be undefined.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias = {},
                      Conv2dOptions opt = {}) {
  using detail::require;
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  require(opt.groups >= 1 && opt.stride_h >= 1 && opt.stride_w >= 1, "conv2d: groups and strides must be >= 1");
  detail::ConvGeometry g{};
  g.n = input.size(0);
  g.cin = input.size(1);
  g.h = input.size(2);
  g.w = input.size(3);
  g.cout = weight.size(0);
  g.kh = weight.size(2);
  g.kw = weight.size(3);
  g.groups = opt.groups;
  g.sh = opt.stride_h;
  g.sw = opt.stride_w;
  g.ph = opt.pad_h;
  g.pw = opt.pad_w;
  require(g.cin % g.groups == 0, "conv2d: input channels " + std::to_string(g.cin) + " not divisible by groups " +
                                     std::to_string(g.groups));
  require(g.cout % g.groups == 0, "conv2d: output channels " + std::to_string(g.cout) +
                                      " not divisible by groups " + std::to_string(g.groups));
  require(weight.size(1) == g.cin_g(), "conv2d: weight input-channel dimension " + std::to_string(weight.size(1)) +
                                           " does not match input channels / groups = " + std::to_string(g.cin_g()));
  require(g.h + 2 * g.ph >= g.kh, "conv2d: kernel height " + std::to_string(g.kh) + " exceeds padded input height " +
                                      std::to_string(g.h + 2 * g.ph));
  require(g.w + 2 * g.pw >= g.kw, "conv2d: kernel width " + std::to_string(g.kw) + " exceeds padded input width " +
                                      std::to_string(g.w + 2 * g.pw));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.dim() == 1 && bias.size(0) == g.cout,
            "conv2d: bias must have " + std::to_string(g.cout) + " entries, got shape " + to_string(bias.shape()));
  }
  g.hout = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.wout = (g.w + 2 * g.pw - g.kw) / g.sw + 1;

  const std::size_t P = g.positions(), K = g.krows();
  std::vector<T> out(g.n * g.cout * P);
  const T* x = input.values().data();
  const T* wt = weight.values().data();
  const T* bs = has_bias ? bias.values().data() : nullptr;
  const std::ptrdiff_t N = static_cast<std::ptrdiff_t>(g.n);
#pragma omp parallel
  {
    std::vector<T> col(K * P);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < N; ++i) {
      for (std::size_t gi = 0; gi < g.groups; ++gi) {
        detail::im2col(x + (i * g.cin + gi * g.cin_g()) * g.h * g.w, g, col.data());
        detail::MapMat<T> y(out.data() + (i * g.cout + gi * g.cout_g()) * P, g.cout_g(), P);
        y.noalias() = detail::CMapMat<T>(wt + gi * g.cout_g() * K, g.cout_g(), K) * detail::CMapMat<T>(col.data(), K, P);
        if (bs) {
          for (std::size_t c = 0; c < g.cout_g(); ++c) y.row(c).array() += bs[gi * g.cout_g() + c];
        }
      }
    }
  }

  auto fn = [g, has_bias](Node<T>& self) {
    const std::size_t P = g.positions(), K = g.krows();
    const T* x = self.parents[0]->data.data();
    const T* wt = self.parents[1]->data.data();
    const T* gy = self.grad.data();
    T* gx = detail::grad_of(self, 0);
    T* gw = detail::grad_of(self, 1);
    T* gb = has_bias ? detail::grad_of(self, 2) : nullptr;
    const std::size_t wsize = g.cout * K;
    const std::size_t chunks = (g.n + detail::kConvChunk - 1) / detail::kConvChunk;
    std::vector<T> partial_w(gw ? chunks * wsize : 0, T(0));
    std::vector<T> partial_b(gb ? chunks * g.cout : 0, T(0));
    const std::ptrdiff_t C = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel
    {
      std::vector<T> col(K * P), dcol(K * P);
#pragma omp for schedule(static)
      for (std::ptrdiff_t ch = 0; ch < C; ++ch) {
        const std::size_t lo = static_cast<std::size_t>(ch) * detail::kConvChunk;
        const std::size_t hi = std::min(g.n, lo + detail::kConvChunk);
        for (std::size_t i = lo; i < hi; ++i) {
          for (std::size_t gi = 0; gi < g.groups; ++gi) {
            detail::CMapMat<T> dy(gy + (i * g.cout + gi * g.cout_g()) * P, g.cout_g(), P);
            detail::CMapMat<T> w(wt + gi * g.cout_g() * K, g.cout_g(), K);
            if (gw) {
              detail::im2col(x + (i * g.cin + gi * g.cin_g()) * g.h * g.w, g, col.data());
              detail::MapMat<T>(partial_w.data() + ch * wsize + gi * g.cout_g() * K, g.cout_g(), K).noalias() +=
                  dy * detail::CMapMat<T>(col.data(), K, P).transpose();
            }
            if (gx) {
              detail::MapMat<T>(dcol.data(), K, P).noalias() = w.transpose() * dy;
              detail::col2im(dcol.data(), g, gx + (i * g.cin + gi * g.cin_g()) * g.h * g.w);
            }
            if (gb) {
              for (std::size_t c = 0; c < g.cout_g(); ++c) partial_b[ch * g.cout + gi * g.cout_g() + c] += dy.row(c).sum();
            }
          }
        }
      }
    }
    for (std::size_t ch = 0; ch < chunks; ++ch) {
      if (gw)
        for (std::size_t j = 0; j < wsize; ++j) gw[j] += partial_w[ch * wsize + j];
      if (gb)
        for (std::size_t c = 0; c < g.cout; ++c) gb[c] += partial_b[ch * g.cout + c];
    }
  };
  Shape shape{g.n, g.cout, g.hout, g.wout};
  if (has_bias) return detail::make_result<T>(shape, std::move(out), "conv2d", {input, weight, bias}, fn);
  return detail::make_result<T>(shape, std::move(out), "conv2d", {input, weight}, fn);
}

/// Per-channel scale and shift of an N×C×H×W map (stands in for batch norm).
template <class T>
BasicTensor<T> channel_affine(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& shift) {
  detail::require_rank(x, 4, "channel_affine", "input");
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  detail::require(gain.numel() == c && shift.numel() == c,
                  "channel_affine: scale/shift must have " + std::to_string(c) + " entries");
  std::vector<T> out(x.numel());
  const auto& v = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const T a = gain.values()[k], b = shift.values()[k];
      for (std::size_t p = 0; p < hw; ++p) out[(i * c + k) * hw + p] = a * v[(i * c + k) * hw + p] + b;
    }
  return detail::make_result<T>(x.shape(), std::move(out), "channel_affine", {x, gain, shift},
                                [n, c, hw](Node<T>& self) {
                                  const auto& v = self.parents[0]->data;
                                  const auto& a = self.parents[1]->data;
                                  T* gx = detail::grad_of(self, 0);
                                  T* ga = detail::grad_of(self, 1);
                                  T* gb = detail::grad_of(self, 2);
                                  for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t k = 0; k < c; ++k) {
                                      T sa = T(0), sb = T(0);
                                      for (std::size_t p = 0; p < hw; ++p) {
                                        const std::size_t j = (i * c + k) * hw + p;
                                        const T g = self.grad[j];
                                        if (gx) gx[j] += a[k] * g;
                                        sa += g * v[j];
                                        sb += g;
                                      }
                                      if (ga) ga[k] += sa;
                                      if (gb) gb[k] += sb;
                                    }
                                });
}

/// Temporal shift of a B×T×C×H×W tensor: the first C/2 channels move forward
/// in time (out[t] = in[t-1]), the remaining channels move backward
/// (out[t] = in[t+1]). Vacated frames are zero.
template <class T>
BasicTensor<T> group_shift(const BasicTensor<T>& x) {
  detail::require_rank(x, 5, "group_shift", "input");
  const std::size_t b = x.size(0), t = x.size(1), c = x.size(2), hw = x.size(3) * x.size(4);
  const std::size_t fw = c / 2;
  std::vector<T> out(x.numel(), T(0));
  const auto& v = x.values();
  auto at = [=](std::size_t bi, std::size_t ti, std::size_t ci) { return ((bi * t + ti) * c + ci) * hw; };
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t ci = 0; ci < c; ++ci) {
        if (ci < fw) {
          if (ti >= 1) std::copy_n(v.begin() + at(bi, ti - 1, ci), hw, out.begin() + at(bi, ti, ci));
        } else if (ti + 1 < t) {
          std::copy_n(v.begin() + at(bi, ti + 1, ci), hw, out.begin() + at(bi, ti, ci));
        }
      }
  return detail::make_result<T>(x.shape(), std::move(out), "group_shift", {x}, [b, t, c, hw, fw, at](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t ci = 0; ci < c; ++ci) {
            const T* src = self.grad.data() + at(bi, ti, ci);
            if (ci < fw) {
              if (ti >= 1)
                for (std::size_t p = 0; p < hw; ++p) g[at(bi, ti - 1, ci) + p] += src[p];
            } else if (ti + 1 < t) {
              for (std::size_t p = 0; p < hw; ++p) g[at(bi, ti + 1, ci) + p] += src[p];
            }
          }
    }
  });
}

/// Inverted dropout: zeroes each value with probability p and rescales the
/// survivors by 1/(1-p).
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? s : T(0);
  BasicTensor<T> m(x.shape(), std::move(mask));
  return mul(x, m);
}

}  // namespace gsnaco
