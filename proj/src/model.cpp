#include "spotfast/model.hpp"

#include "spotfast/error.hpp"

namespace spotfast {

MemoryConfig ModelConfig::spot_memory() const {
  MemoryConfig m = memory;
  m.slots = memory_slots_spot;
  m.value_dim = transformer.model_dim;
  return m;
}

MemoryConfig ModelConfig::fast_memory() const {
  MemoryConfig m = memory;
  m.slots = memory_slots_fast;
  m.value_dim = transformer.model_dim;
  return m;
}

void ModelConfig::validate() const {
  require(num_classes >= 2, "model: num_classes must be at least 2");
  backbone.validate();
  transformer.validate();
  spot_memory().validate();
  fast_memory().validate();
  const auto spot_len = tc_lengths(backbone.window_size, tc.kernel_spot, tc);
  const auto fast_len = tc_lengths(backbone.clip_frames, tc.kernel_fast, tc);
  require(spot_len.back() >= 1, "model: window " + std::to_string(backbone.window_size) +
                                    " collapses to length 0 in the temporal conv stack");
  require(fast_len.back() >= 1, "model: clip length " + std::to_string(backbone.clip_frames) +
                                    " collapses to length 0 in the temporal conv stack");
}

Var to_sequence(const Var& map) {
  const Var pooled = spatial_pool(map);
  // Whatever spatial extent survives the 4x4 pool is averaged away.
  const Var flat = ops::mean(ops::mean(pooled, 4), 3);  // [B,C,T]
  return ops::permute(flat, {0, 2, 1});
}

SpotFastModel::SpotFastModel(const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_((cfg.validate(), cfg)),
      backbone_(cfg.backbone, rng),
      xf_(cfg.backbone.c_spot(), cfg.backbone.c_fast(), cfg.transformer, cfg.spot_memory(), cfg.fast_memory(),
          rng),
      head_(cfg.backbone.c_spot(), cfg.backbone.c_fast(), cfg.num_classes, cfg.tc, rng) {
  register_module("backbone", &backbone_);
  register_module("transformer", &xf_);
  register_module("head", &head_);
}

void SpotFastModel::train(bool on) {
  Module::train(on);
  if (backbone_frozen_) backbone_.train(false);
}

void SpotFastModel::set_backbone_frozen(bool on) {
  backbone_frozen_ = on;
  train(is_training());
}

Var SpotFastModel::forward(const Var& window, const Var& full, ForwardTrace* trace) {
  BackboneOutput feats;
  if (backbone_frozen_) {
    NoGradGuard no_grad;
    feats = backbone_.forward(window, full, trace ? &trace->shapes : nullptr);
  } else {
    feats = backbone_.forward(window, full, trace ? &trace->shapes : nullptr);
  }
  auto note = [&](const std::string& name, const Var& v) {
    if (trace) trace->shapes.emplace_back(name, v.shape());
  };
  Var s = to_sequence(feats.spot);
  Var f = to_sequence(feats.fast);
  note("spot.sequence", s);
  note("fast.sequence", f);
  if (use_transformer_) {
    const EncodeResult enc = xf_.encode(s, f, trace ? &trace->layers : nullptr);
    note("spot.encoded", enc.spot);
    note("fast.encoded", enc.fast);
    s = ops::add(s, enc.spot);
    f = ops::add(f, enc.fast);
  }
  const Var logits =
      head_.forward(ops::permute(s, {0, 2, 1}), ops::permute(f, {0, 2, 1}), trace ? &trace->shapes : nullptr);
  note("logits", logits);
  return logits;
}

}  // namespace spotfast
