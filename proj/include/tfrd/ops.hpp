#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tfrd/tensor.hpp"

namespace tfrd {

enum class Axis { Row, Column };

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// dst (+)= lhs * rhs. Tensor buffers are 64-byte aligned, which keeps
// Eigen's results independent of where they were allocated.
template <typename T, typename Lhs, typename Rhs>
void product(T* dst, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  MatMap<T> out(dst, lhs.rows(), rhs.cols());
  if (accumulate) {
    out.noalias() += lhs * rhs;
  } else {
    out.noalias() = lhs * rhs;
  }
}

inline void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(shape));
  }
}

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
using NodeRef = std::shared_ptr<Node<T>>;


struct ConvGeometry {
  std::size_t cin, h, w, kh, kw, stride, pad, oh, ow;
};

// Output columns [lo, hi) whose input column ox*stride + kx - pad is inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  std::size_t lo = 0;
  while (lo < g.ow && lo * g.stride + kx < g.pad) ++lo;
  std::size_t hi = lo;
  while (hi < g.ow && hi * g.stride + kx < g.w + g.pad) ++hi;
  return {lo, hi};
}

template <typename T>
void im2col(const T* src, T* cols, const ConvGeometry& g) {
  const std::size_t positions = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * positions;
        auto [lo, hi] = valid_columns(g, kx);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          T* dst = row + oy * g.ow;
          const std::size_t iy_shifted = oy * g.stride + ky;
          if (iy_shifted < g.pad || iy_shifted >= g.h + g.pad || lo >= hi) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* in_row = src + (ci * g.h + iy_shifted - g.pad) * g.w;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(in_row + lo + kx - g.pad, in_row + hi + kx - g.pad, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = in_row[ox * g.stride + kx - g.pad];
          }
          std::fill(dst + hi, dst + g.ow, T(0));
        }
      }
}

template <typename T>
void col2im_add(const T* cols, T* dst, const ConvGeometry& g) {
  const std::size_t positions = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * positions;
        auto [lo, hi] = valid_columns(g, kx);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::size_t iy_shifted = oy * g.stride + ky;
          if (iy_shifted < g.pad || iy_shifted >= g.h + g.pad) continue;
          T* out_row = dst + (ci * g.h + iy_shifted - g.pad) * g.w;
          const T* in = row + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) out_row[ox * g.stride + kx - g.pad] += in[ox];
        }
      }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  auto out = detail::buffer<T>(m * n);
  detail::product(out.data(), detail::ConstMatMap<T>(a.data().data(), m, k),
                  detail::ConstMatMap<T>(b.data().data(), k, n), false);
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                                [m, k, n](Node<T>& o) {
    auto& na = *o.inputs[0];
    auto& nb = *o.inputs[1];
    detail::ConstMatMap<T> g(o.grad.data(), m, n);
    if (na.requires_grad) {
      detail::product(na.ensure_grad().data(), g, detail::ConstMatMap<T>(nb.value.data(), k, n).transpose(), true);
    }
    if (nb.requires_grad) {
      detail::product(nb.ensure_grad().data(), detail::ConstMatMap<T>(na.value.data(), m, k).transpose(), g, true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto out = detail::buffer<T>(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return detail::make_result<T>("transpose", {c, r}, std::move(out), {a.node()}, [r, c](Node<T>& o) {
    auto& na = *o.inputs[0];
    auto& ga = na.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += o.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

/// a + b. b either has a's shape or matches a's trailing axes (bias broadcast).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool same = sa == sb;
  bool trailing = !same && sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!same && !trailing) {
    throw ShapeError("add: cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
  }
  const std::size_t n = a.numel(), period = b.numel();
  auto out = detail::buffer<T>(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t base = 0; base < n; base += period)
    for (std::size_t j = 0; j < period; ++j) out[base + j] = av[base + j] + bv[j];
  return detail::make_result<T>("add", sa, std::move(out), {a.node(), b.node()}, [n, period](Node<T>& o) {
    auto& na = *o.inputs[0];
    auto& nb = *o.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t base = 0; base < n; base += period)
        for (std::size_t j = 0; j < period; ++j) g[j] += o.grad[base + j];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.numel();
  auto out = detail::buffer<T>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [n](Node<T>& o) {
    auto& na = *o.inputs[0];
    auto& nb = *o.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const std::size_t n = a.numel();
  auto out = detail::buffer<T>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * factor;
  return detail::make_result<T>("scale", a.shape(), std::move(out), {a.node()}, [n, factor](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const std::size_t n = a.numel();
  auto out = detail::buffer<T>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  return detail::make_result<T>("relu", a.shape(), std::move(out), {a.node()}, [n](Node<T>& o) {
    auto& na = *o.inputs[0];
    auto& g = na.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (na.value[i] > T(0)) g[i] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const std::size_t n = a.numel();
  auto out = detail::buffer<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    T x = a.data()[i];
    // Split by sign so exp() never overflows.
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  return detail::make_result<T>("sigmoid", a.shape(), std::move(out), {a.node()}, [n](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * o.value[i] * (T(1) - o.value[i]);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return detail::make_result<T>("sum", {1}, Buffer<T>{total}, {a.node()}, [](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax of a 2-D tensor along each row (Axis::Row) or each column.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Axis axis) {
  detail::require_rank(x.shape(), 2, "softmax");
  detail::check_finite<T>(x.data(), "softmax");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  // Walk "lines" (rows or columns) through a stride so both axes share code.
  const bool by_row = axis == Axis::Row;
  const std::size_t lines = by_row ? rows : cols;
  const std::size_t length = by_row ? cols : rows;
  const std::size_t line_step = by_row ? cols : 1;
  const std::size_t elem_step = by_row ? 1 : cols;
  auto out = detail::buffer<T>(x.numel());
  auto in = x.data();
  if (by_row) {
    for (std::size_t l = 0; l < lines; ++l) {
      const T* src = in.data() + l * line_step;
      T* dst = out.data() + l * line_step;
      T peak = *std::max_element(src, src + length);
      T total = 0;
      for (std::size_t e = 0; e < length; ++e) total += (dst[e] = std::exp(src[e] - peak));
      for (std::size_t e = 0; e < length; ++e) dst[e] /= total;
    }
  } else {
    // Column softmax: accumulate per-column statistics row by row.
    std::vector<T> peak(in.begin(), in.begin() + cols);
    for (std::size_t r = 1; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) peak[c] = std::max(peak[c], in[r * cols + c]);
    std::vector<T> total(cols, T(0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) total[c] += (out[r * cols + c] = std::exp(in[r * cols + c] - peak[c]));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total[c];
  }
  const char* name = by_row ? "softmax_row" : "softmax_col";
  return detail::make_result<T>(name, x.shape(), std::move(out), {x.node()},
                                [lines, length, line_step, elem_step](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = l * line_step;
      T dot = 0;
      for (std::size_t e = 0; e < length; ++e) {
        std::size_t i = base + e * elem_step;
        dot += o.grad[i] * o.value[i];
      }
      for (std::size_t e = 0; e < length; ++e) {
        std::size_t i = base + e * elem_step;
        g[i] += o.value[i] * (o.grad[i] - dot);
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row layer normalization of x[n x c] with affine gain/bias of length c.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(kLayerNormEps)) {
  detail::require_rank(x.shape(), 2, "layer_norm");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  auto out = detail::buffer<T>(n * c);
  std::vector<T> normalized(n * c);
  std::vector<T> inv_std(n);
  auto in = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      T xhat = (row[j] - mu) * inv_std[r];
      normalized[r * c + j] = xhat;
      out[r * c + j] = xhat * gamma.data()[j] + beta.data()[j];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [n, c, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node<T>& o) {
        auto& nx = *o.inputs[0];
        auto& ng = *o.inputs[1];
        auto& nb = *o.inputs[2];
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += o.grad[r * c + j] * normalized[r * c + j];
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += o.grad[r * c + j];
        }
        if (nx.requires_grad) {
          auto& gx = nx.ensure_grad();
          std::vector<T> dxhat(c);
          for (std::size_t r = 0; r < n; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = o.grad[r * c + j] * ng.value[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * normalized[r * c + j];
            }
            mean_d /= static_cast<T>(c);
            mean_dx /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              gx[r * c + j] += inv_std[r] * (dxhat[j] - mean_d - normalized[r * c + j] * mean_dx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial ops on c x h x w maps

/// Cross-correlation of x[cin x h x w] with w[cout x cin x kh x kw] plus bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1,
                 std::size_t pad = 0) {
  detail::require_rank(x.shape(), 3, "conv2d");
  detail::require_rank(w.shape(), 4, "conv2d");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: weight " + shape_string(w.shape()) + " does not accept input " +
                     shape_string(x.shape()));
  }
  if (b.numel() != cout) throw ShapeError("conv2d: bias must have " + std::to_string(cout) + " entries");
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const long span_h = static_cast<long>(h + 2 * pad) - static_cast<long>(kh);
  const long span_w = static_cast<long>(wd + 2 * pad) - static_cast<long>(kw);
  if (span_h < 0 || span_w < 0 || span_h % static_cast<long>(stride) || span_w % static_cast<long>(stride)) {
    throw ConfigError("conv2d: kernel/stride/pad do not tile input " + shape_string(x.shape()));
  }
  const std::size_t oh = static_cast<std::size_t>(span_h) / stride + 1;
  const std::size_t ow = static_cast<std::size_t>(span_w) / stride + 1;
  const std::size_t patch = cin * kh * kw, positions = oh * ow;

  // im2col: cols[patch x positions]
  auto cols = detail::buffer<T>(patch * positions);
  detail::im2col(x.data().data(), cols.data(), {cin, h, wd, kh, kw, stride, pad, oh, ow});
  auto out = detail::buffer<T>(cout * positions);
  detail::product(out.data(), detail::ConstMatMap<T>(w.data().data(), cout, patch),
                  detail::ConstMatMap<T>(cols.data(), patch, positions), false);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t p = 0; p < positions; ++p) out[co * positions + p] += b.data()[co];
  }

  return detail::make_result<T>(
      "conv2d", {cout, oh, ow}, std::move(out), {x.node(), w.node(), b.node()},
      [=, cols = std::move(cols)](Node<T>& o) {
        auto& nx = *o.inputs[0];
        auto& nw = *o.inputs[1];
        auto& nb = *o.inputs[2];
        detail::ConstMatMap<T> g(o.grad.data(), cout, positions);
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            const T* row = o.grad.data() + co * positions;
            gb[co] += std::accumulate(row, row + positions, T(0));
          }
        }
        if (nw.requires_grad) {
          detail::product(nw.ensure_grad().data(), g,
                          detail::ConstMatMap<T>(cols.data(), patch, positions).transpose(), true);
        }
        if (nx.requires_grad) {
          auto dcols = detail::buffer<T>(patch * positions);
          detail::product(dcols.data(), detail::ConstMatMap<T>(nw.value.data(), cout, patch).transpose(), g, false);
          detail::col2im_add(dcols.data(), nx.ensure_grad().data(), {cin, h, wd, kh, kw, stride, pad, oh, ow});
        }
      });
}

/// 2x2 max pooling with stride 2. Extents must be even.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 3, "max_pool2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw ConfigError("max_pool2: extents must be even, got " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  auto out = detail::buffer<T>(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  auto in = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
            if (in[idx] > in[best]) best = idx;
          }
        std::size_t o = (ch * oh + y) * ow + xx;
        out[o] = in[best];
        argmax[o] = best;
      }
  return detail::make_result<T>("max_pool2", {c, oh, ow}, std::move(out), {x.node()},
                                [argmax = std::move(argmax)](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
  });
}

namespace detail {

struct BilinearTap {
  std::size_t lo, hi;
  double frac;
};

// align_corners=false source coordinate for each output index.
inline std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<BilinearTap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear upsampling of x[c x h x w] by 2 or 4 (align_corners=false).
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t factor) {
  detail::require_rank(x.shape(), 3, "bilinear_upsample");
  if (factor != 2 && factor != 4) {
    throw ConfigError("bilinear_upsample: factor must be 2 or 4, got " + std::to_string(factor));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  auto ty = detail::bilinear_taps(h, factor);
  auto tx = detail::bilinear_taps(w, factor);
  auto out = detail::buffer<T>(c * oh * ow);
  auto in = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = in.data() + ch * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty[y].frac);
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T fx = static_cast<T>(tx[xx].frac);
        T top = src[ty[y].lo * w + tx[xx].lo] * (T(1) - fx) + src[ty[y].lo * w + tx[xx].hi] * fx;
        T bottom = src[ty[y].hi * w + tx[xx].lo] * (T(1) - fx) + src[ty[y].hi * w + tx[xx].hi] * fx;
        out[(ch * oh + y) * ow + xx] = top * (T(1) - fy) + bottom * fy;
      }
    }
  }
  return detail::make_result<T>("bilinear_upsample", {c, oh, ow}, std::move(out), {x.node()},
                                [=](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* dst = g.data() + ch * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T fx = static_cast<T>(tx[xx].frac);
          const T go = o.grad[(ch * oh + y) * ow + xx];
          dst[ty[y].lo * w + tx[xx].lo] += go * (T(1) - fy) * (T(1) - fx);
          dst[ty[y].lo * w + tx[xx].hi] += go * (T(1) - fy) * fx;
          dst[ty[y].hi * w + tx[xx].lo] += go * fy * (T(1) - fx);
          dst[ty[y].hi * w + tx[xx].hi] += go * fy * fx;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const std::size_t n = x.numel();
  auto out = detail::buffer<T>(n);
  std::copy(x.data().begin(), x.data().end(), out.begin());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {x.node()}, [n](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
  });
}

/// Stacks 2-D tensors with a common column count along the row axis.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().shape().back();
  std::size_t rows = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(p.shape()) + " vs " +
                       std::to_string(cols));
    }
    rows += p.dim(0);
    inputs.push_back(p.node());
  }
  auto out = detail::buffer<T>(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  return detail::make_result<T>("concat_rows", {rows, cols}, std::move(out), std::move(inputs), [](Node<T>& o) {
    std::size_t offset = 0;
    for (auto& in : o.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad) {
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
      }
      offset += n;
    }
  });
}

/// Columns [begin, begin + count) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  detail::require_rank(x.shape(), 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || begin + count > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(x.shape()));
  }
  auto out = detail::buffer<T>(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = x.data()[r * cols + begin + j];
  return detail::make_result<T>("slice_cols", {rows, count}, std::move(out), {x.node()},
                                [rows, cols, begin, count](Node<T>& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) g[r * cols + begin + j] += o.grad[r * count + j];
  });
}

/// Joins 2-D tensors with a common row count side by side.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch " + shape_string(p.shape()));
    cols += p.dim(1);
    inputs.push_back(p.node());
  }
  auto out = detail::buffer<T>(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t width = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) out[r * cols + offset + j] = p.data()[r * width + j];
    offset += width;
  }
  return detail::make_result<T>("concat_cols", {rows, cols}, std::move(out), std::move(inputs),
                                [rows, cols](Node<T>& o) {
    std::size_t offset = 0;
    for (auto& in : o.inputs) {
      const std::size_t width = in->shape[1];
      if (in->requires_grad) {
        auto& g = in->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < width; ++j) g[r * width + j] += o.grad[r * cols + offset + j];
      }
      offset += width;
    }
  });
}

/// c x h x w map -> (h*w) x c tokens, positions in row-scan order.
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
  detail::require_rank(map.shape(), 3, "map_to_tokens");
  return transpose(reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}

/// Inverse of map_to_tokens.
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t h, std::size_t w) {
  detail::require_rank(tokens.shape(), 2, "tokens_to_map");
  if (tokens.dim(0) != h * w) {
    throw ShapeError("tokens_to_map: " + shape_string(tokens.shape()) + " is not " + std::to_string(h) +
                     "x" + std::to_string(w) + " positions");
  }
  return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy between probabilities p and targets s (same
/// shape). p is clamped to [eps, 1 - eps]; the clamp has zero gradient.
template <typename T>
Tensor<T> bce(const Tensor<T>& p, const Tensor<T>& s) {
  if (p.shape() != s.shape()) {
    throw ShapeError("bce: prediction " + shape_string(p.shape()) + " vs target " + shape_string(s.shape()));
  }
  const std::size_t n = p.numel();
  const T lo = T(kProbabilityClamp), hi = T(1) - T(kProbabilityClamp);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T q = std::clamp(p.data()[i], lo, hi);
    T t = s.data()[i];
    total -= t * std::log(q) + (T(1) - t) * std::log(T(1) - q);
  }
  total /= static_cast<T>(n);
  return detail::make_result<T>("bce", {1}, Buffer<T>{total}, {p.node(), s.node()}, [n, lo, hi](Node<T>& o) {
    auto& np = *o.inputs[0];
    auto& ns = *o.inputs[1];
    if (!np.requires_grad) return;
    auto& g = np.ensure_grad();
    const T scale_factor = o.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      T q = np.value[i];
      if (q < lo || q > hi) continue;
      T t = ns.value[i];
      g[i] += scale_factor * (q - t) / (q * (T(1) - q));
    }
  });
}

}  // namespace tfrd
