#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "spotfast/backbone.hpp"
#include "spotfast/lateralxf.hpp"
#include "spotfast/pkmem.hpp"
#include "spotfast/tcback.hpp"

namespace spotfast {

struct ModelConfig {
  std::int64_t num_classes = 500;
  BackboneConfig backbone;
  TransformerConfig transformer;
  MemoryConfig memory;  // value_dim follows transformer.model_dim
  std::int64_t memory_slots_spot = 168;
  std::int64_t memory_slots_fast = 50;
  TcConfig tc;

  MemoryConfig spot_memory() const;
  MemoryConfig fast_memory() const;
  void validate() const;
};

/// Named shapes plus the per-layer transformer states of one forward.
struct ForwardTrace {
  ShapeTrace shapes;
  LayerTrace layers;
};

/// Backbone -> spatial pool -> (transformers, residual) -> dual TC -> logits.
class SpotFastModel : public Module {
 public:
  SpotFastModel(const ModelConfig& cfg, std::mt19937_64& rng);

  /// window [B,C,w,S,S], full [B,C,T,S,S] -> logits [B,K].
  Var forward(const Var& window, const Var& full, ForwardTrace* trace = nullptr);

  /// Phase 1 runs the TC head directly on backbone features.
  void set_use_transformer(bool on) { use_transformer_ = on; }
  bool use_transformer() const { return use_transformer_; }
  /// Keeps the backbone in eval mode regardless of train(); used while frozen.
  void set_backbone_frozen(bool on);
  bool backbone_frozen() const { return backbone_frozen_; }
  void train(bool on = true) override;

  /// Reseeds every dropout stream.
  void reseed(std::uint64_t seed) { xf_.reseed(seed); }

  const ModelConfig& config() const { return cfg_; }
  SpotFastBackbone& backbone() { return backbone_; }
  LateralTransformer& transformer() { return xf_; }
  TcHead& head() { return head_; }

 private:
  ModelConfig cfg_;
  SpotFastBackbone backbone_;
  LateralTransformer xf_;
  TcHead head_;
  bool use_transformer_ = true;
  bool backbone_frozen_ = false;
};

/// Spatially pooled backbone map [B,C,T,H,W] -> time-major [B,T,C].
Var to_sequence(const Var& map);

}  // namespace spotfast
