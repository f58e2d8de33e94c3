#pragma once

// Straight-line reference implementations used as test oracles. They share
// no code with the library beyond reading tensor values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "tfrd/tfrd.hpp"

namespace oracle {

using Real = long double;

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<Real> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, Real fill = 0) : rows(r), cols(c), v(r * c, fill) {}
  Real& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

template <typename T>
Mat of(const tfrd::Tensor<T>& t) {
  const std::size_t cols = t.shape().back();
  Mat m(t.numel() / cols, cols);
  for (std::size_t i = 0; i < t.numel(); ++i) m.v[i] = static_cast<Real>(t.data()[i]);
  return m;
}

template <typename T>
std::vector<Real> flat(const tfrd::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      Real s = 0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

// Adds a length-cols vector to every row.
inline Mat add_row(const Mat& a, const std::vector<Real>& bias) {
  Mat out = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) += bias[j];
  return out;
}

inline Mat relu(const Mat& a) {
  Mat out = a;
  for (auto& x : out.v) x = x > 0 ? x : 0;
  return out;
}

inline Mat softmax_rows(const Mat& a) {
  Mat out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    Real total = 0;
    for (std::size_t j = 0; j < a.cols; ++j) total += std::exp(a(i, j));
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) = std::exp(a(i, j)) / total;
  }
  return out;
}

inline Mat softmax_cols(const Mat& a) { return transpose(softmax_rows(transpose(a))); }

inline Mat layer_norm(const Mat& a, const std::vector<Real>& gain, const std::vector<Real>& bias, Real eps = 1e-5L) {
  Mat out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    Real mean = 0;
    for (std::size_t j = 0; j < a.cols; ++j) mean += a(i, j);
    mean /= static_cast<Real>(a.cols);
    Real var = 0;
    for (std::size_t j = 0; j < a.cols; ++j) var += (a(i, j) - mean) * (a(i, j) - mean);
    var /= static_cast<Real>(a.cols);
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) = (a(i, j) - mean) / std::sqrt(var + eps) * gain[j] + bias[j];
  }
  return out;
}

inline Mat slice_cols(const Mat& a, std::size_t begin, std::size_t count) {
  Mat out(a.rows, count);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  return out;
}

inline Mat concat_cols(const std::vector<Mat>& parts) {
  std::size_t cols = 0;
  for (const auto& p : parts) cols += p.cols;
  Mat out(parts[0].rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows; ++i)
      for (std::size_t j = 0; j < p.cols; ++j) out(i, off + j) = p(i, j);
    off += p.cols;
  }
  return out;
}

/// Explicit n_Q x n_P weight matrix, then the weighted sum of V.
inline Mat dot_product_attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat w(q.rows, k.rows);
  for (std::size_t i = 0; i < q.rows; ++i)
    for (std::size_t p = 0; p < k.rows; ++p) {
      Real s = 0;
      for (std::size_t j = 0; j < q.cols; ++j) s += q(i, j) * k(p, j);
      w(i, p) = s;
    }
  return matmul(softmax_rows(w), v);
}

/// Literal efficient attention: first the c x c product of the
/// column-normalized keys with V, then the row-normalized queries.
inline Mat efficient_attention(const Mat& q, const Mat& k, const Mat& v) {
  const Mat ks = softmax_cols(k);
  Mat context(k.cols, v.cols);
  for (std::size_t a = 0; a < k.cols; ++a)
    for (std::size_t b = 0; b < v.cols; ++b) {
      Real s = 0;
      for (std::size_t p = 0; p < k.rows; ++p) s += ks(p, a) * v(p, b);
      context(a, b) = s;
    }
  return matmul(softmax_rows(q), context);
}

template <typename T>
Mat linear(const Mat& x, const tfrd::Linear<T>& l) {
  return add_row(matmul(x, of(l.weight)), flat(l.bias));
}

template <typename T>
Mat multi_head(const Mat& q, const Mat& k, const Mat& v, std::size_t heads, const tfrd::AttentionWeights<T>& w) {
  const Mat qp = linear(q, w.query), kp = linear(k, w.key), vp = linear(v, w.value);
  const std::size_t width = q.cols / heads;
  std::vector<Mat> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(efficient_attention(slice_cols(qp, h * width, width), slice_cols(kp, h * width, width),
                                       slice_cols(vp, h * width, width)));
  }
  return linear(concat_cols(outs), w.output);
}

template <typename T>
Mat norm(const Mat& x, const tfrd::NormParams<T>& n) {
  return layer_norm(x, flat(n.gain), flat(n.bias));
}

/// Post-norm decoder block with explicit intermediates.
template <typename T>
Mat td_block(const Mat& x, const Mat& y, const Mat& pos_x, const Mat& pos_y, const tfrd::DecoderBlockParams<T>& p) {
  const Mat x_tilde = add(x, pos_x);
  const Mat sa = multi_head(x_tilde, x_tilde, x, p.heads, p.self_attn);
  const Mat o_sa = norm(add(x, sa), p.norm_sa);
  const Mat o_sa_tilde = add(o_sa, pos_x);
  const Mat y_tilde = add(y, pos_y);
  const Mat ca = multi_head(o_sa_tilde, y_tilde, y, p.heads, p.cross_attn);
  const Mat o_ca = norm(add(o_sa, ca), p.norm_ca);
  const Mat hidden = relu(linear(o_ca, p.ffn_in));
  const Mat ff = linear(hidden, p.ffn_out);
  return norm(add(o_ca, ff), p.norm_ff);
}

inline Mat concat_rows(const std::vector<Mat>& parts) {
  Mat out(0, parts[0].cols);
  for (const auto& p : parts) {
    out.v.insert(out.v.end(), p.v.begin(), p.v.end());
    out.rows += p.rows;
  }
  return out;
}

/// Cross-correlation with zero padding, six nested loops.
inline std::vector<Real> conv2d(const std::vector<Real>& x, std::size_t cin, std::size_t h, std::size_t w,
                                const std::vector<Real>& wt, std::size_t cout, std::size_t k,
                                const std::vector<Real>& bias, std::size_t stride, std::size_t pad, std::size_t& oh,
                                std::size_t& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  std::vector<Real> out(cout * oh * ow);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        Real s = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              const long yy = static_cast<long>(i * stride + a) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + b) - static_cast<long>(pad);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
              s += x[(c * h + yy) * w + xx] * wt[((o * cin + c) * k + a) * k + b];
            }
        out[(o * oh + i) * ow + j] = s;
      }
  return out;
}

/// Bilinear resampling with half-pixel centres (align_corners = false),
/// evaluated per output pixel.
inline std::vector<Real> bilinear(const std::vector<Real>& x, std::size_t ch, std::size_t h, std::size_t w,
                                  std::size_t f) {
  const std::size_t oh = h * f, ow = w * f;
  std::vector<Real> out(ch * oh * ow);
  auto src = [&](std::size_t o, std::size_t n) {
    Real s = (static_cast<Real>(o) + 0.5L) / static_cast<Real>(f) - 0.5L;
    if (s < 0) s = 0;
    if (s > static_cast<Real>(n - 1)) s = static_cast<Real>(n - 1);
    return s;
  };
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const Real sy = src(i, h), sx = src(j, w);
        const std::size_t y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
        const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const Real dy = sy - static_cast<Real>(y0), dx = sx - static_cast<Real>(x0);
        auto at = [&](std::size_t yy, std::size_t xx) { return x[(c * h + yy) * w + xx]; };
        out[(c * oh + i) * ow + j] = (1 - dy) * ((1 - dx) * at(y0, x0) + dx * at(y0, x1)) +
                                     dy * ((1 - dx) * at(y1, x0) + dx * at(y1, x1));
      }
  return out;
}

inline Real bce(const std::vector<Real>& p, const std::vector<Real>& s) {
  Real total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real q = std::clamp(p[i], 1e-7L, 1 - 1e-7L);
    total += -(s[i] * std::log(q) + (1 - s[i]) * std::log(1 - q));
  }
  return total / static_cast<Real>(p.size());
}

/// Bias-corrected Adam on a single scalar.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return x - lr * mh / (std::sqrt(vh) + eps);
  }
};

/// Sine encoding entry for grid (h, w), position (y, x), channel j of c.
inline Real sine_entry(std::size_t h, std::size_t w, std::size_t y, std::size_t x, std::size_t j, std::size_t c) {
  const std::size_t half = c / 2;
  const bool vertical = j < half;
  const std::size_t k = vertical ? j : j - half;
  const Real coord = vertical ? static_cast<Real>(y + 1) / (static_cast<Real>(h) + 1e-6L)
                              : static_cast<Real>(x + 1) / (static_cast<Real>(w) + 1e-6L);
  const Real angle = coord * 2 * 3.14159265358979323846264338327950288L /
                     std::pow(10000.0L, 2 * static_cast<Real>(k / 2) / static_cast<Real>(half));
  return k % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

// ---- saliency metrics, written directly from their definitions ----

inline double s_measure(const std::vector<double>& P, const std::vector<double>& S, std::size_t H, std::size_t W) {
  const double eps = 2.2204e-16;
  const double N = static_cast<double>(H * W);
  double gt_mean = 0, p_mean = 0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    gt_mean += S[i];
    p_mean += P[i];
  }
  gt_mean /= N;
  p_mean /= N;
  if (gt_mean == 0) return 1 - p_mean;
  if (gt_mean == 1) return p_mean;

  // object term
  auto score = [&](const std::vector<double>& xs) {
    double mu = 0;
    for (double x : xs) mu += x;
    mu /= static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - mu) * (x - mu);
    const double sigma = std::sqrt(var / static_cast<double>(xs.size()));
    return 2 * mu / (mu * mu + 1 + sigma + eps);
  };
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (S[i] == 1)
      fg.push_back(P[i]);
    else
      bg.push_back(1 - P[i]);
  }
  const double u = static_cast<double>(fg.size()) / N;
  const double object = u * score(fg) + (1 - u) * score(bg);

  // region term
  double cnt = 0, sx = 0, sy = 0;
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      if (S[r * W + c] == 1) {
        cnt += 1;
        sx += static_cast<double>(c + 1);
        sy += static_cast<double>(r + 1);
      }
  const std::size_t X = static_cast<std::size_t>(std::lround(sx / cnt));
  const std::size_t Y = static_cast<std::size_t>(std::lround(sy / cnt));
  auto ssim = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    const double n = static_cast<double>((r1 - r0) * (c1 - c0));
    double mx = 0, my = 0;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) {
        mx += P[r * W + c];
        my += S[r * W + c];
      }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) {
        const double a = P[r * W + c] - mx, b = S[r * W + c] - my;
        vx += a * a;
        vy += b * b;
        cxy += a * b;
      }
    vx /= n;
    vy /= n;
    cxy /= n;
    const double alpha = 4 * mx * my * cxy;
    const double beta = (mx * mx + my * my) * (vx + vy);
    if (alpha != 0) return alpha / (beta + eps);
    if (beta == 0) return 1.0;
    return 0.0;
  };
  double region = 0;
  const std::size_t rs[3] = {0, Y, H}, cs[3] = {0, X, W};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const std::size_t area = (rs[a + 1] - rs[a]) * (cs[b + 1] - cs[b]);
      if (area == 0) continue;
      region += static_cast<double>(area) / N * ssim(rs[a], rs[a + 1], cs[b], cs[b + 1]);
    }
  const double q = 0.5 * object + 0.5 * region;
  return q < 0 ? 0 : q;
}

inline double e_measure(const std::vector<double>& P, const std::vector<double>& S) {
  const double eps = 2.2204e-16;
  const double N = static_cast<double>(P.size());
  double mean = 0;
  for (double p : P) mean += p;
  mean /= N;
  const double tau = std::min(2 * mean, 1.0);
  std::vector<double> B(P.size());
  for (std::size_t i = 0; i < P.size(); ++i) B[i] = (P[i] >= tau && P[i] > 0) ? 1 : 0;
  double gs = 0, bs = 0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    gs += S[i];
    bs += B[i];
  }
  double total = 0;
  if (gs == 0) {
    for (double b : B) total += 1 - b;
  } else if (gs == N) {
    for (double b : B) total += b;
  } else {
    for (std::size_t i = 0; i < P.size(); ++i) {
      const double fb = B[i] - bs / N, fs = S[i] - gs / N;
      const double xi = 2 * fb * fs / (fb * fb + fs * fs + eps);
      total += (1 + xi) * (1 + xi) / 4;
    }
  }
  return total / N;
}

}  // namespace oracle
