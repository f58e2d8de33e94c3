#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "tfrd/twfem.hpp"

namespace tfrd {

struct MemorySegment {
  Modality modality;
  std::size_t scale;  // slot index, 0 = scale 3
  std::size_t begin;
  std::size_t length;
};

/// All enhanced tokens of both modalities, concatenated without resampling:
/// [rgb f3e; rgb f4e; rgb f5e; depth f3e; depth f4e; depth f5e].
template <typename T>
struct FusionMemory {
  Tensor<T> tokens;
  Tensor<T> pos;
  std::vector<MemorySegment> segments;

  std::size_t length() const { return tokens.dim(0); }
};

template <typename T>
FusionMemory<T> build_memory(const EnhancedPyramid<T>& rgb, const EnhancedPyramid<T>& depth,
                             const ScaleEncodings<T>& enc) {
  if (rgb.channels() != depth.channels()) {
    throw ShapeError("build_memory: rgb has " + std::to_string(rgb.channels()) + " channels, depth " +
                     std::to_string(depth.channels()));
  }
  FusionMemory<T> mem;
  std::vector<Tensor<T>> parts, pos;
  std::size_t offset = 0;
  for (const auto* p : {&rgb, &depth}) {
    for (std::size_t i = 0; i < kScales; ++i) {
      parts.push_back(p->tokens[i]);
      pos.push_back(enc.pos[i]);
      mem.segments.push_back({p->modality, i, offset, p->tokens[i].dim(0)});
      offset += p->tokens[i].dim(0);
    }
  }
  mem.tokens = concat_rows(parts);
  mem.pos = concat_rows(pos);
  return mem;
}

/// TF^t: decoder block with the current fused feature as query side and the
/// fusion memory as key/value side.
template <typename T>
Tensor<T> tf_block(const Tensor<T>& f_prev, const FusionMemory<T>& mem, const Tensor<T>& pos3,
                   const DecoderBlockParams<T>& params) {
  return td_block(f_prev, mem.tokens, pos3, mem.pos, params);
}

template <typename T>
struct TffmParams {
  std::vector<DecoderBlockParams<T>> blocks;  // one per stack, independent
  ConvParams<T> classifier;                   // shared by every stack
};

template <typename T>
TffmParams<T> make_tffm(ParamStore<T>& store, const std::string& prefix, std::size_t c, std::size_t heads,
                        std::size_t stacks, Rng& rng, double classifier_gain) {
  TffmParams<T> p;
  for (std::size_t t = 1; t <= stacks; ++t) {
    p.blocks.push_back(make_decoder_block(store, prefix + ".block" + std::to_string(t), c, heads, rng));
  }
  p.classifier = make_conv(store, prefix + ".classifier", c, 1, 1, rng, classifier_gain);
  return p;
}

template <typename T>
struct FusionState {
  std::vector<Tensor<T>> features;     // f_o^0 .. f_o^T, f_o^0 = f_init
  std::vector<Tensor<T>> predictions;  // P_o^1 .. P_o^T at input resolution
  std::size_t stacks() const { return predictions.size(); }
};

/// Runs the T fusion blocks in sequence, predicting a map after each with the
/// shared classifier.
template <typename T>
FusionState<T> fuse(const Tensor<T>& f_init, const FusionMemory<T>& mem, const Tensor<T>& pos3, const Grid& grid3,
                    const TffmParams<T>& params) {
  FusionState<T> state;
  state.features.push_back(f_init);
  for (const auto& block : params.blocks) {
    auto next = tf_block(state.features.back(), mem, pos3, block);
    state.predictions.push_back(predict_map(next, grid3, params.classifier));
    state.features.push_back(std::move(next));
  }
  return state;
}

/// Sum over stacks of the mean BCE of each prediction. Zero (with a warning)
/// for an empty list.
template <typename T>
Tensor<T> final_loss(const std::vector<Tensor<T>>& predictions, const Tensor<T>& gt, bool warn_if_empty = true) {
  if (predictions.empty()) {
    if (warn_if_empty) std::cerr << "warning: final_loss over zero fusion stacks is 0\n";
    return Tensor<T>::scalar(T(0));
  }
  Tensor<T> total;
  for (const auto& p : predictions) {
    auto term = initial_loss(p, gt);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace tfrd
