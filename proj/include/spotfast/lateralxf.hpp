#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "spotfast/module.hpp"
#include "spotfast/pkmem.hpp"

namespace spotfast {

struct TransformerConfig {
  std::int64_t layers = 6;
  std::int64_t attn_heads = 8;
  std::int64_t model_dim = 512;
  std::int64_t ff_dim = 2048;
  std::int64_t memory_layer = 5;  // 1-based
  double pe_dropout = 0.1;
  bool lateral = true;
  bool memory = true;
  // Zero the output projection so a freshly added encoder starts as a no-op.
  bool zero_init_output = true;

  void validate() const;
};

/// Sinusoidal encoding of absolute positions offset .. offset+T-1, shape [T, d].
Tensor sinusoidal_table(std::int64_t t, std::int64_t d, std::int64_t offset);

/// seq [B,T,d] plus the encoding at positions starting from `offset`, then
/// dropout when training.
Var positional_encode(const Var& seq, std::int64_t offset, double dropout, std::mt19937_64& rng, bool training);

class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(std::int64_t dim, std::int64_t heads, std::mt19937_64& rng);
  Var forward(const Var& x);  // [B,T,d]

  Linear& qkv() { return qkv_; }
  Linear& out() { return out_; }
  std::int64_t heads() const { return heads_; }

 private:
  std::int64_t dim_, heads_;
  Linear qkv_;
  Linear out_;
};

/// Pre-LN encoder layer, optionally with a product-key memory on the
/// feed-forward output.
class EncoderLayer : public Module {
 public:
  EncoderLayer(const TransformerConfig& cfg, const MemoryConfig* memory, std::mt19937_64& rng);
  Var forward(const Var& h);

  MultiHeadAttention& attention() { return attn_; }
  LayerNorm& norm1() { return ln1_; }
  LayerNorm& norm2() { return ln2_; }
  Linear& ff1() { return ff1_; }
  Linear& ff2() { return ff2_; }
  ProductKeyMemory* memory() { return memory_.get(); }

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  Linear ff1_;
  Linear ff2_;
  std::unique_ptr<ProductKeyMemory> memory_;
};

/// proj_in -> positional encoding -> layers -> LN -> proj_out, one pathway.
class PathwayEncoder : public Module {
 public:
  PathwayEncoder(std::int64_t width, const TransformerConfig& cfg, const MemoryConfig* memory,
                 std::mt19937_64& rng);

  Var embed(const Var& x, std::int64_t offset);
  Var layer(std::size_t i, const Var& h) { return layers_.at(i)->forward(h); }
  Var finish(const Var& h);

  EncoderLayer& layer_module(std::size_t i) { return *layers_.at(i); }
  std::size_t depth() const { return layers_.size(); }
  Linear& proj_in() { return proj_in_; }
  Linear& proj_out() { return proj_out_; }
  LayerNorm& final_norm() { return final_; }
  double pe_dropout() const { return pe_dropout_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  double pe_dropout_;
  Linear proj_in_;
  std::vector<std::unique_ptr<EncoderLayer>> layers_;
  LayerNorm final_;
  Linear proj_out_;
  std::mt19937_64 rng_;
};

/// Fast -> spot link: pointwise projection of fast, adaptive pooling to the
/// spot length, concatenation, linear -> batchnorm -> ReLU, added to spot.
class LateralConnection : public Module {
 public:
  LateralConnection(std::int64_t fast_dim, std::int64_t spot_dim, std::mt19937_64& rng);
  Var forward(const Var& fast, const Var& spot);  // [B,T_f,d_f], [B,T_s,d_s]

  Linear& proj() { return proj_; }
  Linear& fuse() { return fuse_; }
  BatchNorm& norm() { return bn_; }

 private:
  Linear proj_;
  Linear fuse_;
  BatchNorm bn_;
};

inline Var lateral_connect(LateralConnection& link, const Var& fast, const Var& spot) {
  return link.forward(fast, spot);
}

struct EncodeResult {
  Var spot;
  Var fast;
};

/// Hidden states after each layer, spot and fast.
struct LayerTrace {
  std::vector<Var> spot;
  std::vector<Var> fast;
};

class LateralTransformer : public Module {
 public:
  LateralTransformer(std::int64_t spot_width, std::int64_t fast_width, const TransformerConfig& cfg,
                     const MemoryConfig& spot_memory, const MemoryConfig& fast_memory, std::mt19937_64& rng);

  /// spot [B,T_s,C_s], fast [B,T_f,C_f]; outputs keep the input shapes.
  EncodeResult encode(const Var& spot, const Var& fast, LayerTrace* trace = nullptr);

  const TransformerConfig& config() const { return cfg_; }
  PathwayEncoder& spot_encoder() { return spot_; }
  PathwayEncoder& fast_encoder() { return fast_; }
  LateralConnection& lateral(std::size_t i) { return *laterals_.at(i); }
  std::size_t lateral_count() const { return laterals_.size(); }
  void reseed(std::uint64_t seed);

 private:
  TransformerConfig cfg_;
  PathwayEncoder spot_;
  PathwayEncoder fast_;
  std::vector<std::unique_ptr<LateralConnection>> laterals_;
};

/// Position of spot frame 0 among the fast frames.
std::int64_t spot_offset(std::int64_t clip_frames, std::int64_t window);

}  // namespace spotfast
