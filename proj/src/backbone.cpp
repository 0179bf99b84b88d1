#include "spotfast/backbone.hpp"

#include "spotfast/error.hpp"

namespace spotfast {

std::int64_t BackboneConfig::output_size() const {
  std::int64_t s = conv_out_len(input_size, stem_kernel, stem_stride, stem_kernel / 2);
  for (auto st : spatial_strides) s = conv_out_len(s, 3, st, 1);
  return s;
}

std::int64_t BackboneConfig::spot_stage_input(std::int64_t s) const {
  const std::int64_t spot = s == 0 ? stem_channels_spot : stage_channels_spot[s - 1];
  const std::int64_t fast = s == 0 ? stem_channels_fast : stage_channels_fast[s - 1];
  return spot + fusion_ratio * fast;
}

void BackboneConfig::validate() const {
  require(window_size >= 1 && window_size % 2 == 1, "backbone: window_size must be odd");
  require(window_size <= clip_frames, "backbone: window_size exceeds clip_frames");
  require(in_channels >= 1 && input_size >= 1, "backbone: bad input geometry");
  require(stem_kernel >= 1 && stem_stride >= 1, "backbone: bad stem");
  require(!stage_channels_spot.empty(), "backbone: at least one stage required");
  require(stage_channels_fast.size() == stage_channels_spot.size() &&
              spatial_strides.size() == stage_channels_spot.size() && blocks.size() == stage_channels_spot.size(),
          "backbone: per-stage lists must have equal length");
  for (auto b : blocks) require(b >= 1, "backbone: blocks per stage must be positive");
  require(temporal_kernel % 2 == 1 && fusion_kernel % 2 == 1, "backbone: temporal kernels must be odd");
  require(fusion_ratio >= 1, "backbone: fusion_ratio must be positive");
  require(output_size() >= 4, "backbone: final spatial size " + std::to_string(output_size()) +
                                  " is smaller than the 4x4 pooling window");
  if (scale == "desk") {
    require(c_spot() % 8 == 0 && c_fast() % 8 == 0, "backbone: desk widths must be divisible by 8");
    require(c_spot() >= 4 * c_fast(), "backbone: desk spot width must be at least 4x the fast width");
  }
}

Var adaptive_avg_pool_time(const Var& x, std::int64_t target_t) {
  require(x.shape().size() == 5, "adaptive_avg_pool_time: expected [B,C,T,H,W]");
  require(target_t >= 1, "adaptive_avg_pool_time: target must be positive");
  if (x.shape()[2] == target_t) return x;
  return ops::adaptive_avg_pool(x, 2, target_t);
}

Var spatial_pool(const Var& x) {
  require(x.shape().size() == 5, "spatial_pool: expected [B,C,T,H,W]");
  require(x.shape()[3] >= 4 && x.shape()[4] >= 4,
          "spatial_pool: spatial size " + shape_str(x.shape()) + " smaller than 4x4");
  return ops::avg_pool_hw(x, 4, 4);
}

Var lateral_fuse(const Var& fast, const Var& spot, const Conv3d& conv) {
  require(fast.shape().size() == 5 && spot.shape().size() == 5, "lateral_fuse: expected 5-mode maps");
  require(fast.shape()[0] == spot.shape()[0], "lateral_fuse: batch mismatch");
  require(fast.shape()[3] == spot.shape()[3] && fast.shape()[4] == spot.shape()[4],
          "lateral_fuse: spatial mismatch " + shape_str(fast.shape()) + " vs " + shape_str(spot.shape()));
  const Var pooled = adaptive_avg_pool_time(fast, spot.shape()[2]);
  return ops::concat({spot, conv.forward(pooled)}, 1);
}

ResBlock3d::ResBlock3d(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t kt,
                       std::mt19937_64& rng)
    : conv1_(in, out, {kt, 3, 3}, {1, stride, stride}, {kt / 2, 1, 1}, false, rng),
      bn1_(out, 1),
      conv2_(out, out, {kt, 3, 3}, {1, 1, 1}, {kt / 2, 1, 1}, false, rng),
      bn2_(out, 1) {
  register_module("conv1", &conv1_);
  register_module("bn1", &bn1_);
  register_module("conv2", &conv2_);
  register_module("bn2", &bn2_);
  if (stride != 1 || in != out) {
    down_ = std::make_unique<Conv3d>(in, out, ops::Index3{1, 1, 1}, ops::Index3{1, stride, stride},
                                     ops::Index3{0, 0, 0}, false, rng);
    down_bn_ = std::make_unique<BatchNorm>(out, 1);
    register_module("shortcut", down_.get());
    register_module("shortcut_bn", down_bn_.get());
  }
}

Var ResBlock3d::forward(const Var& x) {
  Var h = ops::relu(bn1_.forward(conv1_.forward(x)));
  h = bn2_.forward(conv2_.forward(h));
  const Var skip = down_ ? down_bn_->forward(down_->forward(x)) : x;
  return ops::relu(ops::add(h, skip));
}

Pathway::Pathway(const BackboneConfig& cfg, bool spot, std::mt19937_64& rng) {
  const std::int64_t stem_out = spot ? cfg.stem_channels_spot : cfg.stem_channels_fast;
  const std::int64_t k = cfg.stem_kernel;
  stem_conv_ = std::make_unique<Conv3d>(cfg.in_channels, stem_out, ops::Index3{cfg.temporal_kernel, k, k},
                                        ops::Index3{1, cfg.stem_stride, cfg.stem_stride},
                                        ops::Index3{cfg.temporal_kernel / 2, k / 2, k / 2}, false, rng);
  stem_bn_ = std::make_unique<BatchNorm>(stem_out, 1);
  register_module("stem", stem_conv_.get());
  register_module("stem_bn", stem_bn_.get());
  for (std::int64_t s = 0; s < cfg.stages(); ++s) {
    const std::int64_t out = spot ? cfg.stage_channels_spot[s] : cfg.stage_channels_fast[s];
    std::int64_t in = spot ? cfg.spot_stage_input(s) : (s == 0 ? stem_out : cfg.stage_channels_fast[s - 1]);
    auto& blocks = stages_.emplace_back();
    for (std::int64_t b = 0; b < cfg.blocks[s]; ++b) {
      blocks.push_back(std::make_unique<ResBlock3d>(in, out, b == 0 ? cfg.spatial_strides[s] : 1,
                                                    cfg.temporal_kernel, rng));
      register_module("stage" + std::to_string(s + 1) + "." + std::to_string(b), blocks.back().get());
      in = out;
    }
  }
}

Var Pathway::stem(const Var& x) { return ops::relu(stem_bn_->forward(stem_conv_->forward(x))); }

Var Pathway::stage(std::size_t s, const Var& x) {
  Var h = x;
  for (auto& block : stages_.at(s)) h = block->forward(h);
  return h;
}

SpotFastBackbone::SpotFastBackbone(const BackboneConfig& cfg, std::mt19937_64& rng)
    : cfg_((cfg.validate(), cfg)), spot_(cfg, true, rng), fast_(cfg, false, rng) {
  register_module("spot", &spot_);
  register_module("fast", &fast_);
  // Attachments after the stem and after every stage but the last.
  for (std::int64_t s = 0; s < cfg.stages(); ++s) {
    const std::int64_t c = s == 0 ? cfg.stem_channels_fast : cfg.stage_channels_fast[s - 1];
    fuse_.push_back(std::make_unique<Conv3d>(c, cfg.fusion_ratio * c, ops::Index3{cfg.fusion_kernel, 1, 1},
                                             ops::Index3{1, 1, 1}, ops::Index3{cfg.fusion_kernel / 2, 0, 0},
                                             true, rng));
    register_module("lateral" + std::to_string(s), fuse_.back().get());
  }
}

std::vector<Conv3d*> SpotFastBackbone::fusion_convs() {
  std::vector<Conv3d*> out;
  for (auto& c : fuse_) out.push_back(c.get());
  return out;
}

BackboneOutput SpotFastBackbone::forward(const Var& window, const Var& full, ShapeTrace* trace) {
  const Shape want_w{window.shape().empty() ? 0 : window.shape()[0], cfg_.in_channels, cfg_.window_size,
                     cfg_.input_size, cfg_.input_size};
  const Shape want_f{want_w[0], cfg_.in_channels, cfg_.clip_frames, cfg_.input_size, cfg_.input_size};
  require(window.shape() == want_w, "spotfast_forward: window shape " + shape_str(window.shape()) +
                                        ", expected " + shape_str(want_w));
  require(full.shape() == want_f,
          "spotfast_forward: clip shape " + shape_str(full.shape()) + ", expected " + shape_str(want_f));
  auto note = [&](const std::string& name, const Var& v) {
    if (trace) trace->emplace_back(name, v.shape());
  };

  Var s = spot_.stem(window);
  Var f = fast_.stem(full);
  note("spot.stem", s);
  note("fast.stem", f);
  for (std::int64_t st = 0; st < cfg_.stages(); ++st) {
    s = lateral_fuse(f, s, *fuse_[st]);
    note("spot.fused" + std::to_string(st), s);
    s = spot_.stage(st, s);
    f = fast_.stage(st, f);
    note("spot.stage" + std::to_string(st + 1), s);
    note("fast.stage" + std::to_string(st + 1), f);
  }
  return {s, f};
}

}  // namespace spotfast
