#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spotfast/module.hpp"

namespace spotfast {

/// Named shapes recorded during a forward pass, in execution order.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

struct BackboneConfig {
  std::int64_t window_size = 23;
  std::int64_t clip_frames = 29;
  std::int64_t in_channels = 3;
  std::int64_t input_size = 112;
  std::int64_t stem_kernel = 7;
  std::int64_t stem_stride = 4;
  std::int64_t stem_channels_spot = 64;
  std::int64_t stem_channels_fast = 8;
  std::vector<std::int64_t> stage_channels_spot{256, 512, 1024, 2048};
  std::vector<std::int64_t> stage_channels_fast{32, 64, 128, 256};
  std::vector<std::int64_t> spatial_strides{1, 2, 2, 2};
  std::vector<std::int64_t> blocks{3, 4, 6, 3};
  std::int64_t temporal_kernel = 3;
  std::int64_t fusion_ratio = 2;
  std::int64_t fusion_kernel = 5;
  std::string scale = "paper";

  std::int64_t c_spot() const { return stage_channels_spot.back(); }
  std::int64_t c_fast() const { return stage_channels_fast.back(); }
  std::int64_t stages() const { return static_cast<std::int64_t>(stage_channels_spot.size()); }
  /// Spatial size after the stem and every stage.
  std::int64_t output_size() const;
  /// Spot input channels of stage `s` (includes the fused fast channels).
  std::int64_t spot_stage_input(std::int64_t s) const;

  /// Throws std::invalid_argument when the configuration is inconsistent.
  void validate() const;
};

/// Output length of a conv/pool with floor arithmetic.
inline std::int64_t conv_out_len(std::int64_t len, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  return (len + 2 * pad - kernel) / stride + 1;
}

/// Adaptive average pooling over the time axis of a [B,C,T,H,W] map.
Var adaptive_avg_pool_time(const Var& x, std::int64_t target_t);

/// 1x4x4 average pooling with stride 1 over a [B,C,T,H,W] map.
Var spatial_pool(const Var& x);

/// Pools `fast` to spot's time length, applies `conv` and concatenates the
/// result after spot's channels.
Var lateral_fuse(const Var& fast, const Var& spot, const Conv3d& conv);

/// conv(kt,3,3) -> BN -> ReLU -> conv(kt,3,3) -> BN, plus a projected shortcut
/// when the shape changes, then ReLU.
class ResBlock3d : public Module {
 public:
  ResBlock3d(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t kt, std::mt19937_64& rng);
  Var forward(const Var& x);

 private:
  Conv3d conv1_;
  BatchNorm bn1_;
  Conv3d conv2_;
  BatchNorm bn2_;
  std::unique_ptr<Conv3d> down_;
  std::unique_ptr<BatchNorm> down_bn_;
};

/// Stem plus residual stages for one pathway.
class Pathway : public Module {
 public:
  Pathway(const BackboneConfig& cfg, bool spot, std::mt19937_64& rng);
  Var stem(const Var& x);
  Var stage(std::size_t s, const Var& x);

 private:
  std::unique_ptr<Conv3d> stem_conv_;
  std::unique_ptr<BatchNorm> stem_bn_;
  std::vector<std::vector<std::unique_ptr<ResBlock3d>>> stages_;
};

struct BackboneOutput {
  Var spot;  // [B, C_spot, w, h', w']
  Var fast;  // [B, C_fast, T, h', w']
};

class SpotFastBackbone : public Module {
 public:
  SpotFastBackbone(const BackboneConfig& cfg, std::mt19937_64& rng);

  /// window [B,C,w,S,S], full [B,C,T,S,S].
  BackboneOutput forward(const Var& window, const Var& full, ShapeTrace* trace = nullptr);

  const BackboneConfig& config() const { return cfg_; }
  /// Fusion convolutions, one per lateral attachment point.
  std::vector<Conv3d*> fusion_convs();

 private:
  BackboneConfig cfg_;
  Pathway spot_;
  Pathway fast_;
  std::vector<std::unique_ptr<Conv3d>> fuse_;
};

inline BackboneOutput spotfast_forward(SpotFastBackbone& net, const Var& window, const Var& full) {
  return net.forward(window, full);
}

}  // namespace spotfast
