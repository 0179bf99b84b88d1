#include "spotfast/shapes.hpp"

#include "spotfast/error.hpp"

namespace spotfast {

ShapeTrace infer_shapes(const ModelConfig& cfg, std::int64_t batch, bool with_transformer) {
  cfg.validate();
  require(batch >= 1, "infer_shapes: batch must be positive");
  const BackboneConfig& b = cfg.backbone;
  ShapeTrace out;
  const std::int64_t w = b.window_size, t = b.clip_frames;
  std::int64_t size = conv_out_len(b.input_size, b.stem_kernel, b.stem_stride, b.stem_kernel / 2);
  std::int64_t cs = b.stem_channels_spot, cf = b.stem_channels_fast;
  out.emplace_back("spot.stem", Shape{batch, cs, w, size, size});
  out.emplace_back("fast.stem", Shape{batch, cf, t, size, size});
  for (std::int64_t s = 0; s < b.stages(); ++s) {
    cs += b.fusion_ratio * cf;
    out.emplace_back("spot.fused" + std::to_string(s), Shape{batch, cs, w, size, size});
    size = conv_out_len(size, 3, b.spatial_strides[s], 1);
    cs = b.stage_channels_spot[s];
    cf = b.stage_channels_fast[s];
    out.emplace_back("spot.stage" + std::to_string(s + 1), Shape{batch, cs, w, size, size});
    out.emplace_back("fast.stage" + std::to_string(s + 1), Shape{batch, cf, t, size, size});
  }
  out.emplace_back("spot.sequence", Shape{batch, w, cs});
  out.emplace_back("fast.sequence", Shape{batch, t, cf});
  if (with_transformer) {
    out.emplace_back("spot.encoded", Shape{batch, w, cs});
    out.emplace_back("fast.encoded", Shape{batch, t, cf});
  }
  const auto ls = tc_lengths(w, cfg.tc.kernel_spot, cfg.tc);
  const auto lf = tc_lengths(t, cfg.tc.kernel_fast, cfg.tc);
  out.emplace_back("spot.tc1", Shape{batch, 2 * cs, ls[1]});
  out.emplace_back("spot.tc2", Shape{batch, 4 * cs, ls[3]});
  out.emplace_back("fast.tc1", Shape{batch, 2 * cf, lf[1]});
  out.emplace_back("fast.tc2", Shape{batch, 4 * cf, lf[3]});
  out.emplace_back("logits", Shape{batch, cfg.num_classes});
  return out;
}

nlohmann::ordered_json shapes_to_json(const ShapeTrace& trace) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, shape] : trace) j[name] = shape;
  return j;
}

}  // namespace spotfast
