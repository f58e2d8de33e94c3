#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tfrd/tffm.hpp"

namespace tfrd {

/// Architecture hyper-parameters. Everything that changes the parameter set
/// lives here.
struct ModelConfig {
  std::size_t channels = 64;
  std::size_t stacks = 4;
  std::size_t heads = 4;
  std::size_t input_size = 64;
  bool progressive = true;
  bool baseline_msmmf = false;
  std::array<std::size_t, kScales> widths{32, 64, 128};
  std::uint64_t seed = 7;
  // Gain applied to the He-uniform init of both classifier heads.
  double classifier_gain = 0.1;

  void validate() const {
    if (input_size == 0 || input_size % 16 != 0) {
      throw ConfigError("input size must be a positive multiple of 16, got " + std::to_string(input_size));
    }
    if (channels == 0 || channels % 4 != 0) {
      throw ConfigError("channel count must be a positive multiple of 4, got " + std::to_string(channels));
    }
    if (heads == 0 || channels % heads != 0) {
      throw ConfigError(std::to_string(channels) + " channels cannot be split into " + std::to_string(heads) +
                        " heads");
    }
    if (baseline_msmmf && stacks != 0) throw ConfigError("the MSMMF baseline has no fusion stacks (use T=0)");
  }
};

/// Two 3x3 conv + ReLU layers followed by `pools` 2x2 max pools.
template <typename T>
struct BackboneStage {
  ConvParams<T> conv1;
  ConvParams<T> conv2;
  std::size_t pools = 1;
};

/// Desk-scale VGG stand-in. Stage outputs land on strides 4, 8 and 16.
template <typename T>
struct BackboneParams {
  std::array<BackboneStage<T>, kScales> stages;
};

template <typename T>
BackboneParams<T> make_backbone(ParamStore<T>& store, const std::string& prefix, std::size_t in_channels,
                                const std::array<std::size_t, kScales>& widths, Rng& rng) {
  BackboneParams<T> b;
  std::size_t cin = in_channels;
  for (std::size_t s = 0; s < kScales; ++s) {
    const std::string name = prefix + ".stage" + std::to_string(s + 1);
    b.stages[s].conv1 = make_conv(store, name + ".conv1", cin, widths[s], 3, rng);
    b.stages[s].conv2 = make_conv(store, name + ".conv2", widths[s], widths[s], 3, rng);
    b.stages[s].pools = s == 0 ? 2 : 1;
    cin = widths[s];
  }
  return b;
}

template <typename T>
std::array<Tensor<T>, kScales> backbone_forward(const Tensor<T>& image, const BackboneParams<T>& params) {
  detail::require_rank(image.shape(), 3, "backbone_forward");
  if (image.dim(1) % 16 || image.dim(2) % 16) {
    throw ConfigError("backbone input extents must be multiples of 16, got " + shape_string(image.shape()));
  }
  std::array<Tensor<T>, kScales> out;
  Tensor<T> x = image;
  for (std::size_t s = 0; s < kScales; ++s) {
    const auto& stage = params.stages[s];
    x = relu(stage.conv2(relu(stage.conv1(x))));
    for (std::size_t k = 0; k < stage.pools; ++k) x = max_pool2(x);
    out[s] = x;
  }
  return out;
}

template <typename T>
struct ModelForward {
  Tensor<T> p_init;
  std::vector<Tensor<T>> p_fused;  // P_o^1..P_o^T
  Tensor<T> f_init;
  std::vector<Tensor<T>> fused_features;  // f_o^0..f_o^T
  std::size_t memory_length = 0;

  /// P_o^T, or P_init when there are no fusion stacks.
  const Tensor<T>& final_map() const { return p_fused.empty() ? p_init : p_fused.back(); }
  std::size_t map_count() const { return 1 + p_fused.size(); }
};

template <typename T>
struct Losses {
  Tensor<T> init;
  Tensor<T> final;
  Tensor<T> total;
};

/// The full two-stream network with its parameter registry.
template <typename T>
class SaliencyModel {
 public:
  explicit SaliencyModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    const auto c = config_.channels;
    rgb_backbone_ = make_backbone(store_, "rgb.backbone", 3, config_.widths, rng);
    depth_backbone_ = make_backbone(store_, "depth.backbone", 1, config_.widths, rng);
    const bool with_te = !config_.baseline_msmmf;
    rgb_twfem_ = make_twfem(store_, "rgb", config_.widths, c, config_.heads, rng, with_te);
    depth_twfem_ = make_twfem(store_, "depth", config_.widths, c, config_.heads, rng, with_te);
    init_classifier_ = make_conv(store_, "init_classifier", c, 1, 1, rng, config_.classifier_gain);
    tffm_ = make_tffm(store_, "tffm", c, config_.heads, config_.stacks, rng, config_.classifier_gain);
    const std::size_t s3 = config_.input_size / 4;
    grids_ = {Grid{s3, s3}, Grid{s3 / 2, s3 / 2}, Grid{s3 / 4, s3 / 4}};
    encodings_ = ScaleEncodings<T>::build(grids_, c);
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const TffmParams<T>& tffm() const { return tffm_; }
  const std::array<Grid, kScales>& grids() const { return grids_; }
  const ScaleEncodings<T>& encodings() const { return encodings_; }

  /// rgb[3 x H x W], depth[1 x H x W] -> P_init and P_o^1..T, each [1 x H x W].
  ModelForward<T> forward(const Tensor<T>& rgb, const Tensor<T>& depth) const {
    const std::size_t size = config_.input_size;
    if (rgb.shape() != Shape{3, size, size} || depth.shape() != Shape{1, size, size}) {
      throw ShapeError("model expects rgb [3x" + std::to_string(size) + "x" + std::to_string(size) +
                       "] and depth [1x...], got " + shape_string(rgb.shape()) + " and " +
                       shape_string(depth.shape()));
    }
    auto rgb_raw = backbone_forward(rgb, rgb_backbone_);
    auto depth_raw = backbone_forward(depth, depth_backbone_);
    auto rgb_p = project(Modality::Rgb, rgb_raw, rgb_twfem_.projection);
    auto depth_p = project(Modality::Depth, depth_raw, depth_twfem_.projection);

    ModelForward<T> out;
    if (config_.baseline_msmmf) {
      out.f_init = initial_fusion(rgb_p, depth_p);
      out.p_init = initial_prediction(out.f_init, grids_[0], init_classifier_);
      out.fused_features.push_back(out.f_init);
      return out;
    }
    auto rgb_e = enhance_modality(rgb_p, rgb_twfem_, encodings_, config_.progressive);
    auto depth_e = enhance_modality(depth_p, depth_twfem_, encodings_, config_.progressive);
    out.f_init = initial_fusion(rgb_e, depth_e);
    out.p_init = initial_prediction(out.f_init, grids_[0], init_classifier_);
    auto mem = build_memory(rgb_e, depth_e, encodings_);
    out.memory_length = mem.length();
    auto state = fuse(out.f_init, mem, encodings_.pos[0], grids_[0], tffm_);
    out.p_fused = std::move(state.predictions);
    out.fused_features = std::move(state.features);
    return out;
  }

  /// L_init + L_final against gt[1 x H x W] (or [H x W]).
  Losses<T> losses(const ModelForward<T>& f, const Tensor<T>& gt) const {
    Losses<T> l;
    l.init = initial_loss(f.p_init, gt);
    l.final = final_loss(f.p_fused, gt, false);
    l.total = f.p_fused.empty() ? l.init : add(l.init, l.final);
    return l;
  }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  BackboneParams<T> rgb_backbone_;
  BackboneParams<T> depth_backbone_;
  TwfemParams<T> rgb_twfem_;
  TwfemParams<T> depth_twfem_;
  ConvParams<T> init_classifier_;
  TffmParams<T> tffm_;
  std::array<Grid, kScales> grids_;
  ScaleEncodings<T> encodings_;
};

}  // namespace tfrd
