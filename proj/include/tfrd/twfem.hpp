#pragma once

#include <array>
#include <string>
#include <vector>

#include "tfrd/decoder.hpp"

namespace tfrd {

enum class Modality { Rgb, Depth };

inline const char* modality_name(Modality m) { return m == Modality::Rgb ? "rgb" : "depth"; }

/// Spatial extent of one scale.
struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t positions() const { return h * w; }
  bool operator==(const Grid&) const = default;
};

/// Scale slots: index 0 is scale 3 (stride 4), 1 is scale 4 (stride 8),
/// 2 is scale 5 (stride 16).
inline constexpr std::size_t kScales = 3;

/// Per-modality features at the three scales, stored as position-major tokens
/// (n_i x c) with their grids.
template <typename T>
struct FeaturePyramid {
  Modality modality = Modality::Rgb;
  std::array<Tensor<T>, kScales> tokens;
  std::array<Grid, kScales> grids;

  std::size_t channels() const { return tokens[0].dim(1); }
};

/// Enhanced features f3e, f4e, f5e. Same layout and shapes as the input pyramid.
template <typename T>
using EnhancedPyramid = FeaturePyramid<T>;

/// Sine encodings for the three grids of a pyramid.
template <typename T>
struct ScaleEncodings {
  std::array<Tensor<T>, kScales> pos;

  static ScaleEncodings build(const std::array<Grid, kScales>& grids, std::size_t c) {
    ScaleEncodings e;
    for (std::size_t i = 0; i < kScales; ++i) e.pos[i] = sine_positional_encoding<T>(grids[i].h, grids[i].w, c);
    return e;
  }
};

template <typename T>
struct TwfemParams {
  std::array<ConvParams<T>, kScales> projection;
  // TE blocks keyed by target scale: te[0] enhances f3, te[2] enhances f5.
  std::array<DecoderBlockParams<T>, kScales> te;
};

inline constexpr std::array<const char*, kScales> kScaleNames{"s3", "s4", "s5"};

/// Registers the projection convs (raw widths -> c) and, unless
/// `with_te` is false, the three TE blocks of one modality stream.
template <typename T>
TwfemParams<T> make_twfem(ParamStore<T>& store, const std::string& prefix, const std::array<std::size_t, kScales>& raw,
                          std::size_t c, std::size_t heads, Rng& rng, bool with_te = true) {
  TwfemParams<T> p;
  for (std::size_t i = 0; i < kScales; ++i) {
    p.projection[i] = make_conv(store, prefix + ".proj." + kScaleNames[i], raw[i], c, 1, rng);
  }
  if (with_te) {
    // Registration order follows evaluation order: f5e, f4e, f3e.
    for (std::size_t i = kScales; i-- > 0;) {
      p.te[i] = make_decoder_block(store, prefix + ".te." + kScaleNames[i], c, heads, rng);
    }
  }
  return p;
}

/// 1x1 convolution of each raw backbone map to c channels, then flattening
/// into tokens.
template <typename T>
FeaturePyramid<T> project(Modality modality, const std::array<Tensor<T>, kScales>& raw,
                          const std::array<ConvParams<T>, kScales>& projection) {
  FeaturePyramid<T> p;
  p.modality = modality;
  for (std::size_t i = 0; i < kScales; ++i) {
    detail::require_rank(raw[i].shape(), 3, "project");
    auto mapped = projection[i](raw[i]);
    p.grids[i] = {mapped.dim(1), mapped.dim(2)};
    p.tokens[i] = map_to_tokens(mapped);
  }
  const auto& g = p.grids;
  if (!(g[0].h == 2 * g[1].h && g[0].w == 2 * g[1].w && g[1].h == 2 * g[2].h && g[1].w == 2 * g[2].w)) {
    throw ShapeError("project: scales must halve from f3 to f4 to f5");
  }
  return p;
}

/// One transformer enhancement block: a decoder block refining `target` with
/// the concatenated other-scale tokens `others` as memory.
template <typename T>
Tensor<T> te_block(const Tensor<T>& target, const Tensor<T>& others, const Tensor<T>& pos_target,
                   const Tensor<T>& pos_others, const DecoderBlockParams<T>& params) {
  return td_block(target, others, pos_target, pos_others, params);
}

/// Coarse-to-fine enhancement within one modality:
///   f5e = TE(f5, [f3; f4])
///   f4e = TE(f4, [f3; f5e])      (non-progressive: [f3; f5])
///   f3e = TE(f3, [f4e; f5e])     (non-progressive: [f4; f5])
template <typename T>
EnhancedPyramid<T> enhance_modality(const FeaturePyramid<T>& p, const TwfemParams<T>& params,
                                    const ScaleEncodings<T>& enc, bool progressive = true) {
  const auto& f = p.tokens;
  const auto& pos = enc.pos;
  for (std::size_t i = 0; i < kScales; ++i) {
    if (f[i].shape() != pos[i].shape()) {
      throw ShapeError("enhance_modality: scale " + std::string(kScaleNames[i]) + " tokens " +
                       shape_string(f[i].shape()) + " vs encoding " + shape_string(pos[i].shape()));
    }
  }
  EnhancedPyramid<T> e;
  e.modality = p.modality;
  e.grids = p.grids;
  e.tokens[2] = te_block(f[2], concat_rows<T>({f[0], f[1]}), pos[2], concat_rows<T>({pos[0], pos[1]}), params.te[2]);
  const auto& f5_src = progressive ? e.tokens[2] : f[2];
  e.tokens[1] = te_block(f[1], concat_rows<T>({f[0], f5_src}), pos[1], concat_rows<T>({pos[0], pos[2]}), params.te[1]);
  const auto& f4_src = progressive ? e.tokens[1] : f[1];
  e.tokens[0] = te_block(f[0], concat_rows<T>({f4_src, f5_src}), pos[0], concat_rows<T>({pos[1], pos[2]}), params.te[0]);
  return e;
}

template <typename T>
EnhancedPyramid<T> enhance_modality_nonprogressive(const FeaturePyramid<T>& p, const TwfemParams<T>& params,
                                                   const ScaleEncodings<T>& enc) {
  return enhance_modality(p, params, enc, false);
}

/// f_ms = f3e + up2(f4e) + up4(f5e) for one modality, as n3 x c tokens.
template <typename T>
Tensor<T> multiscale_sum(const EnhancedPyramid<T>& e) {
  const auto& g = e.grids;
  auto up4 = map_to_tokens(bilinear_upsample(tokens_to_map(e.tokens[1], g[1].h, g[1].w), 2));
  auto up5 = map_to_tokens(bilinear_upsample(tokens_to_map(e.tokens[2], g[2].h, g[2].w), 4));
  return add(add(e.tokens[0], up4), up5);
}

/// f_init = f_ms(rgb) + f_ms(depth).
template <typename T>
Tensor<T> initial_fusion(const EnhancedPyramid<T>& rgb, const EnhancedPyramid<T>& depth) {
  for (std::size_t i = 0; i < kScales; ++i) {
    if (rgb.tokens[i].shape() != depth.tokens[i].shape() || !(rgb.grids[i] == depth.grids[i])) {
      throw ShapeError("initial_fusion: modality pyramids differ at scale " + std::string(kScaleNames[i]));
    }
  }
  return add(multiscale_sum(rgb), multiscale_sum(depth));
}

/// Classifier head shared by the initial and fused predictions: 1x1 conv to a
/// single channel, sigmoid, then bilinear x4 to input resolution.
template <typename T>
Tensor<T> predict_map(const Tensor<T>& tokens, const Grid& grid, const ConvParams<T>& classifier) {
  return bilinear_upsample(sigmoid(classifier(tokens_to_map(tokens, grid.h, grid.w))), 4);
}

template <typename T>
Tensor<T> initial_prediction(const Tensor<T>& f_init, const Grid& grid3, const ConvParams<T>& classifier) {
  return predict_map(f_init, grid3, classifier);
}

/// Mean BCE between a prediction map and ground truth of identical shape.
template <typename T>
Tensor<T> initial_loss(const Tensor<T>& p_init, const Tensor<T>& gt) {
  if (p_init.numel() != gt.numel()) {
    throw ShapeError("initial_loss: prediction " + shape_string(p_init.shape()) + " vs ground truth " +
                     shape_string(gt.shape()));
  }
  return bce(p_init, gt.shape() == p_init.shape() ? gt : reshape(gt, p_init.shape()));
}

}  // namespace tfrd
