#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tfrd/attention.hpp"
#include "tfrd/params.hpp"

namespace tfrd {

inline constexpr double kPositionTemperature = 10000.0;
inline constexpr double kTwoPi = 6.283185307179586476925;

/// 2-D sine encoding for an h x w grid, one row per position (row-scan
/// order). The first c/2 channels encode the vertical coordinate and the last
/// c/2 the horizontal one; within each half even channels are sines and odd
/// channels cosines over geometric frequencies. Coordinates are normalized
/// to (0, 2*pi] so grids of different resolution share a frame.
template <typename T>
Tensor<T> sine_positional_encoding(std::size_t h, std::size_t w, std::size_t c) {
  if (c == 0 || c % 4 != 0) {
    throw ConfigError("positional encoding needs a channel count divisible by 4, got " + std::to_string(c));
  }
  const std::size_t half = c / 2;
  std::vector<double> frequency(half);
  for (std::size_t k = 0; k < half; ++k) {
    frequency[k] = std::pow(kPositionTemperature, 2.0 * static_cast<double>(k / 2) / static_cast<double>(half));
  }
  constexpr double eps = 1e-6;
  auto table = detail::buffer<T>(h * w * c);
  for (std::size_t y = 0; y < h; ++y) {
    const double y_embed = static_cast<double>(y + 1) / (static_cast<double>(h) + eps) * kTwoPi;
    for (std::size_t x = 0; x < w; ++x) {
      const double x_embed = static_cast<double>(x + 1) / (static_cast<double>(w) + eps) * kTwoPi;
      T* row = table.data() + (y * w + x) * c;
      for (std::size_t k = 0; k < half; ++k) {
        const double ay = y_embed / frequency[k];
        const double ax = x_embed / frequency[k];
        row[k] = static_cast<T>(k % 2 == 0 ? std::sin(ay) : std::cos(ay));
        row[half + k] = static_cast<T>(k % 2 == 0 ? std::sin(ax) : std::cos(ax));
      }
    }
  }
  return Tensor<T>::from({h * w, c}, std::move(table));
}

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <typename T>
NormParams<T> make_norm(ParamStore<T>& store, const std::string& prefix, std::size_t c) {
  return {store.constant(prefix + ".gain", {c}, T(1)), store.constant(prefix + ".bias", {c}, T(0))};
}

/// Weights of one transformer decoder block.
template <typename T>
struct DecoderBlockParams {
  AttentionWeights<T> self_attn;
  AttentionWeights<T> cross_attn;
  Linear<T> ffn_in;
  Linear<T> ffn_out;
  NormParams<T> norm_sa;
  NormParams<T> norm_ca;
  NormParams<T> norm_ff;
  std::size_t heads = 4;

  std::size_t channels() const { return ffn_in.in_features(); }
};

/// Registers a block under `prefix`. The feedforward hidden width is
/// ffn_multiplier * c.
template <typename T>
DecoderBlockParams<T> make_decoder_block(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                                         std::size_t heads, Rng& rng, std::size_t ffn_multiplier = 2) {
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("decoder block: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  DecoderBlockParams<T> p;
  p.self_attn = make_attention(store, prefix + ".self_attn", c, rng);
  p.norm_sa = make_norm(store, prefix + ".norm_sa", c);
  p.cross_attn = make_attention(store, prefix + ".cross_attn", c, rng);
  p.norm_ca = make_norm(store, prefix + ".norm_ca", c);
  p.ffn_in = make_linear(store, prefix + ".ffn_in", c, ffn_multiplier * c, rng);
  p.ffn_out = make_linear(store, prefix + ".ffn_out", ffn_multiplier * c, c, rng);
  p.norm_ff = make_norm(store, prefix + ".norm_ff", c);
  p.heads = heads;
  return p;
}

/// TD(x, y): self-attention on x, cross-attention from the result into y,
/// then a ReLU feedforward. Each sub-layer is followed by
/// LayerNorm(sublayer_input + sublayer_output). Positional encodings are added
/// to queries and keys only, never to values.
template <typename T>
Tensor<T> td_block(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& pos_x, const Tensor<T>& pos_y,
                   const DecoderBlockParams<T>& p) {
  detail::require_rank(x.shape(), 2, "td_block");
  detail::require_rank(y.shape(), 2, "td_block");
  if (x.dim(1) != y.dim(1) || x.dim(1) != p.channels()) {
    throw ShapeError("td_block: channel mismatch between x " + shape_string(x.shape()) + ", y " +
                     shape_string(y.shape()) + " and block width " + std::to_string(p.channels()));
  }
  if (pos_x.shape() != x.shape()) {
    throw ShapeError("td_block: query encoding " + shape_string(pos_x.shape()) + " does not match x " +
                     shape_string(x.shape()));
  }
  if (pos_y.shape() != y.shape()) {
    throw ShapeError("td_block: memory encoding " + shape_string(pos_y.shape()) + " does not match y " +
                     shape_string(y.shape()));
  }
  auto x_pos = add(x, pos_x);
  auto o_sa = p.norm_sa(add(x, multi_head(x_pos, x_pos, x, p.heads, p.self_attn)));
  auto o_ca = p.norm_ca(add(o_sa, multi_head(add(o_sa, pos_x), add(y, pos_y), y, p.heads, p.cross_attn)));
  auto ffn = p.ffn_out(relu(p.ffn_in(o_ca)));
  return p.norm_ff(add(o_ca, ffn));
}

}  // namespace tfrd
