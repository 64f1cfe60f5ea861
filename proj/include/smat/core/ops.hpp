#pragma once

// Differentiable tensor primitives. Matrices are rank-2 row-major, vectors
// rank-1. Broadcasting is limited to the row-wise bias/gain forms the model
// needs.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smat/core/tensor.hpp"

namespace smat {

namespace detail {

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

// f(x) elementwise with derivative df(x, f(x)).
template <class T, class F, class DF>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return make_op<T>(op, a.shape(), std::move(out), {a}, [df](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    auto& pg = p.grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary<T>("scale", a, [c](const T& x) { return x * c; },
                          [c](const T&, const T&) { return c; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](const T& x) { return x > T(0) ? x : T(0); },
      [](const T& x, const T&) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  using std::exp;
  return detail::unary<T>("exp", a, [](const T& x) { return exp(x); },
                          [](const T&, const T& y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  using std::log;
  return detail::unary<T>("log", a, [](const T& x) { return log(x); },
                          [](const T& x, const T&) { return T(1) / x; });
}

/// Clamps to [lo, hi]; the gradient is zero where the bound is active.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a,
      [lo, hi](const T& x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](const T& x, const T&) { return (x < lo || x > hi) ? T(0) : T(1); });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_op<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// X (r, c) + b (c) broadcast over rows.
template <class T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_rank("add_row", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (b.size() != c) throw ShapeError("add_row: bias size mismatch");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  return make_op<T>("add_row", x.shape(), std::move(out), {x, b}, [r, c](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

/// X (r, c) * g (c) broadcast over rows.
template <class T>
Tensor<T> mul_row(const Tensor<T>& x, const Tensor<T>& gain) {
  detail::require_rank("mul_row", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gain.size() != c) throw ShapeError("mul_row: gain size mismatch");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * gain[j];
  return make_op<T>("mul_row", x.shape(), std::move(out), {x, gain}, [r, c](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pg = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * pg.value[j];
    }
    if (pg.requires_grad) {
      auto& g = pg.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * px.value[i * c + j];
    }
  });
}

/// A (m, k) @ B (k, n).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const auto& go = self.grad;
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc(0);
          for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * pb.value[p * n + j];
          g[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = pa.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += av * go[i * n + j];
        }
    }
  });
}

/// A (m, k) @ B(n, k)^T.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul_nt", a, 2);
  detail::require_rank("matmul_nt", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      out[i * n + j] = acc;
    }
  return make_op<T>("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const auto& go = self.grad;
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T gv = go[i * n + j];
          for (std::size_t p = 0; p < k; ++p) g[i * k + p] += gv * pb.value[j * k + p];
        }
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T gv = go[i * n + j];
          for (std::size_t p = 0; p < k; ++p) g[j * k + p] += gv * pa.value[i * k + p];
        }
    }
  });
}

/// Columns [start, start + count) of X (r, c).
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_rank("slice_cols", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (start + count > c) throw ShapeError("slice_cols: range out of bounds");
  std::vector<T> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + start + j];
  return make_op<T>("slice_cols", {r, count}, std::move(out), {x},
                    [r, c, start, count](Node<T>& self) {
                      auto& g = self.parents[0]->grad_buffer();
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < count; ++j)
                          g[i * c + start + j] += self.grad[i * count + j];
                    });
}

/// Rows [start, start + count) of X (r, c).
template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_rank("slice_rows", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (start + count > r) throw ShapeError("slice_rows: range out of bounds");
  std::vector<T> out(x.values().begin() + start * c, x.values().begin() + (start + count) * c);
  return make_op<T>("slice_rows", {count, c}, std::move(out), {x}, [c, start](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * c + i] += self.grad[i];
  });
}

/// Horizontal concatenation of matrices with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_cols", p, 2);
    if (p.dim(0) != r) throw ShapeError("concat_cols: row mismatch");
    widths.push_back(p.dim(1));
    c += p.dim(1);
  }
  std::vector<T> out(r * c);
  std::size_t off = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[t]; ++j) out[i * c + off + j] = parts[t][i * widths[t] + j];
    off += widths[t];
  }
  return make_op<T>("concat_cols", {r, c}, std::move(out), parts, [r, c, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < self.parents.size(); ++t) {
      Node<T>& p = *self.parents[t];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[t]; ++j) g[i * widths[t] + j] += self.grad[i * c + off + j];
      }
      off += widths[t];
    }
  });
}

/// Stacks equal-length vectors into a (count, n) matrix.
template <class T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t n = rows[0].size();
  std::vector<T> out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw ShapeError("stack_rows: length mismatch");
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  return make_op<T>("stack_rows", {rows.size(), n}, std::move(out), rows, [n](Node<T>& self) {
    for (std::size_t t = 0; t < self.parents.size(); ++t) {
      Node<T>& p = *self.parents[t];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[t * n + j];
    }
  });
}

/// Rows of `table` (V, d) selected by `ids`.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::int32_t>& ids) {
  detail::require_rank("gather_rows", table, 2);
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = table[static_cast<std::size_t>(ids[i]) * d + j];
  }
  return make_op<T>("gather_rows", {ids.size(), d}, std::move(out), {table}, [ids, d](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
  });
}

/// Mean over rows: X (r, c) -> (c).
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require_rank("mean_rows", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (r == 0) throw ShapeError("mean_rows: no rows");
  std::vector<T> out(c, T(0));
  const T inv = T(1) / T(static_cast<double>(r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  for (auto& o : out) o *= inv;
  return make_op<T>("mean_rows", {c}, std::move(out), {x}, [r, c, inv](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc(0);
  for (const T& x : a.values()) acc += x;
  return make_op<T>("sum", {}, {acc}, {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), T(1) / T(static_cast<double>(a.size())));
}

/// Adds scalar tensors (shape ()) or any same-shape tensors.
template <class T>
Tensor<T> add_all(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("add_all: no inputs");
  std::vector<T> out(parts[0].size(), T(0));
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) throw ShapeError("add_all: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  }
  return make_op<T>("add_all", parts[0].shape(), std::move(out), parts, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Element `i` of a tensor as a scalar tensor.
template <class T>
Tensor<T> index(const Tensor<T>& a, std::size_t i) {
  if (i >= a.size()) throw ShapeError("index out of range");
  return make_op<T>("index", {}, {a[i]}, {a}, [i](Node<T>& self) {
    self.parents[0]->accumulate(i, self.grad[0]);
  });
}

namespace detail {

template <class T>
void softmax_inplace(std::span<T> z) {
  using std::exp;
  T mx = z[0];
  for (const T& x : z) if (x > mx) mx = x;
  T total(0);
  for (T& x : z) { x = exp(x - mx); total += x; }
  for (T& x : z) x /= total;
}

}  // namespace detail

/// Softmax over a vector.
template <class T>
Tensor<T> softmax(const Tensor<T>& z) {
  detail::require_rank("softmax", z, 1);
  if (z.size() == 0) throw ShapeError("softmax of empty vector");
  std::vector<T> out(z.values().begin(), z.values().end());
  detail::softmax_inplace(std::span<T>(out));
  return make_op<T>("softmax", z.shape(), std::move(out), {z}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    T dot(0);
    for (std::size_t i = 0; i < g.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.value[i] * (self.grad[i] - dot);
  });
}

/// Row-wise softmax of X (r, c).
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_rank("softmax_rows", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < r; ++i) detail::softmax_inplace(std::span<T>(out.data() + i * c, c));
  return make_op<T>("softmax_rows", x.shape(), std::move(out), {x}, [r, c](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      T dot(0);
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& z) {
  using std::exp;
  using std::log;
  detail::require_rank("log_softmax", z, 1);
  if (z.size() == 0) throw ShapeError("log_softmax of empty vector");
  T mx = z[0];
  for (const T& x : z.values()) if (x > mx) mx = x;
  T total(0);
  for (const T& x : z.values()) total += exp(x - mx);
  const T lse = mx + log(total);
  std::vector<T> out(z.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] - lse;
  return make_op<T>("log_softmax", z.shape(), std::move(out), {z}, [](Node<T>& self) {
    using std::exp;
    auto& g = self.parents[0]->grad_buffer();
    T gsum(0);
    for (const T& x : self.grad) gsum += x;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] - exp(self.value[i]) * gsum;
  });
}

/// Normalizes each row of X (r, c) to zero mean and unit variance (no affine part).
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, double eps = 1e-5) {
  using std::sqrt;
  detail::require_rank("layer_norm_rows", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.size());
  std::vector<T> inv_std(r);
  const T inv_c = T(1) / T(static_cast<double>(c));
  for (std::size_t i = 0; i < r; ++i) {
    T mu(0);
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu *= inv_c;
    T var(0);
    for (std::size_t j = 0; j < c; ++j) {
      const T d = x[i * c + j] - mu;
      var += d * d;
    }
    var *= inv_c;
    inv_std[i] = T(1) / sqrt(var + T(eps));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (x[i * c + j] - mu) * inv_std[i];
  }
  return make_op<T>("layer_norm", x.shape(), std::move(out), {x}, [r, c, inv_std, inv_c](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      T gmean(0), gydot(0);
      for (std::size_t j = 0; j < c; ++j) {
        gmean += self.grad[i * c + j];
        gydot += self.grad[i * c + j] * self.value[i * c + j];
      }
      gmean *= inv_c;
      gydot *= inv_c;
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += inv_std[i] * (self.grad[i * c + j] - gmean - self.value[i * c + j] * gydot);
      }
    }
  });
}

}  // namespace smat
