#include "spotfast/lateralxf.hpp"

#include <cmath>

#include "spotfast/error.hpp"
#include "spotfast/rng.hpp"
#include "spotfast/windowing.hpp"

namespace spotfast {

void TransformerConfig::validate() const {
  require(layers >= 1, "transformer: layers must be positive");
  require(model_dim >= 1 && attn_heads >= 1 && model_dim % attn_heads == 0,
          "transformer: model_dim must be divisible by attn_heads");
  require(ff_dim >= 1, "transformer: ff_dim must be positive");
  require(memory_layer == layers - 1, "transformer: memory_layer must be the layer before the last");
  require(pe_dropout >= 0.0 && pe_dropout < 1.0, "transformer: pe_dropout must lie in [0, 1)");
}

Tensor sinusoidal_table(std::int64_t t, std::int64_t d, std::int64_t offset) {
  require(offset >= 0, "positional_encode: offset must be non-negative");
  Tensor pe({t, d});
  for (std::int64_t p = 0; p < t; ++p)
    for (std::int64_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(p + offset) * freq;
      pe[p * d + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  return pe;
}

Var positional_encode(const Var& seq, std::int64_t offset, double dropout, std::mt19937_64& rng, bool training) {
  const Shape& s = seq.shape();
  require(s.size() >= 2, "positional_encode: expected [..., T, d]");
  const Tensor pe = sinusoidal_table(s[s.size() - 2], s.back(), offset);
  return ops::dropout(ops::add_const(seq, pe), dropout, rng, training);
}

std::int64_t spot_offset(std::int64_t clip_frames, std::int64_t window) {
  return windowing::window_start(clip_frames, window);
}

MultiHeadAttention::MultiHeadAttention(std::int64_t dim, std::int64_t heads, std::mt19937_64& rng)
    : dim_(dim), heads_(heads), qkv_(dim, 3 * dim, true, rng), out_(dim, dim, true, rng) {
  require(dim % heads == 0, "attention: dim must be divisible by heads");
  register_module("qkv", &qkv_);
  register_module("out", &out_);
}

Var MultiHeadAttention::forward(const Var& x) {
  require(x.shape().size() == 3 && x.shape()[2] == dim_, "attention: expected [B,T," + std::to_string(dim_) + "]");
  const std::int64_t b = x.shape()[0], t = x.shape()[1], dh = dim_ / heads_;
  const Var qkv = qkv_.forward(x);
  auto split = [&](std::int64_t part) {
    const Var p = ops::reshape(ops::slice(qkv, 2, part * dim_, dim_), {b, t, heads_, dh});
    return ops::reshape(ops::permute(p, {0, 2, 1, 3}), {b * heads_, t, dh});
  };
  const Var q = split(0), k = split(1), v = split(2);
  const Var att = ops::softmax(ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))));
  const Var ctx = ops::reshape(ops::bmm(att, v, false), {b, heads_, t, dh});
  return out_.forward(ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {b, t, dim_}));
}

EncoderLayer::EncoderLayer(const TransformerConfig& cfg, const MemoryConfig* memory, std::mt19937_64& rng)
    : ln1_(cfg.model_dim),
      attn_(cfg.model_dim, cfg.attn_heads, rng),
      ln2_(cfg.model_dim),
      ff1_(cfg.model_dim, cfg.ff_dim, true, rng),
      ff2_(cfg.ff_dim, cfg.model_dim, true, rng) {
  register_module("norm1", &ln1_);
  register_module("attn", &attn_);
  register_module("norm2", &ln2_);
  register_module("ff1", &ff1_);
  register_module("ff2", &ff2_);
  if (memory) {
    require(memory->value_dim == cfg.model_dim, "transformer: memory value_dim must equal model_dim");
    memory_ = std::make_unique<ProductKeyMemory>(cfg.model_dim, *memory, rng);
    register_module("memory", memory_.get());
  }
}

Var EncoderLayer::forward(const Var& h) {
  const Var a = ops::add(h, attn_.forward(ln1_.forward(h)));
  Var f = ff2_.forward(ops::relu(ff1_.forward(ln2_.forward(a))));
  if (memory_) f = ops::add(f, memory_->forward(f));
  return ops::add(a, f);
}

PathwayEncoder::PathwayEncoder(std::int64_t width, const TransformerConfig& cfg, const MemoryConfig* memory,
                               std::mt19937_64& rng)
    : pe_dropout_(cfg.pe_dropout),
      proj_in_(width, cfg.model_dim, true, rng),
      final_(cfg.model_dim),
      proj_out_(cfg.model_dim, width, true, rng),
      rng_(rng()) {
  register_module("proj_in", &proj_in_);
  for (std::int64_t i = 0; i < cfg.layers; ++i) {
    const bool with_memory = cfg.memory && i + 1 == cfg.memory_layer;
    layers_.push_back(std::make_unique<EncoderLayer>(cfg, with_memory ? memory : nullptr, rng));
    register_module("layer" + std::to_string(i + 1), layers_.back().get());
  }
  register_module("norm", &final_);
  register_module("proj_out", &proj_out_);
  if (cfg.zero_init_output) zero_parameters(proj_out_);
}

Var PathwayEncoder::embed(const Var& x, std::int64_t offset) {
  return positional_encode(proj_in_.forward(x), offset, pe_dropout_, rng_, is_training());
}

Var PathwayEncoder::finish(const Var& h) { return proj_out_.forward(final_.forward(h)); }

LateralConnection::LateralConnection(std::int64_t fast_dim, std::int64_t spot_dim, std::mt19937_64& rng)
    : proj_(fast_dim, fast_dim, true, rng), fuse_(spot_dim + fast_dim, spot_dim, true, rng), bn_(spot_dim, 1) {
  register_module("proj", &proj_);
  register_module("fuse", &fuse_);
  register_module("bn", &bn_);
}

Var LateralConnection::forward(const Var& fast, const Var& spot) {
  require(fast.shape().size() == 3 && spot.shape().size() == 3 && fast.shape()[0] == spot.shape()[0],
          "lateral_connect: expected [B,T,d] inputs with equal batch");
  const std::int64_t b = spot.shape()[0], ts = spot.shape()[1], ds = spot.shape()[2];
  Var f = proj_.forward(fast);
  if (f.shape()[1] != ts) f = ops::adaptive_avg_pool(f, 1, ts);
  const Var z = fuse_.forward(ops::concat({spot, f}, 2));
  const Var n = bn_.forward(ops::reshape(z, {b * ts, ds}));
  return ops::add(spot, ops::reshape(ops::relu(n), {b, ts, ds}));
}

LateralTransformer::LateralTransformer(std::int64_t spot_width, std::int64_t fast_width,
                                       const TransformerConfig& cfg, const MemoryConfig& spot_memory,
                                       const MemoryConfig& fast_memory, std::mt19937_64& rng)
    : cfg_((cfg.validate(), cfg)),
      spot_(spot_width, cfg, &spot_memory, rng),
      fast_(fast_width, cfg, &fast_memory, rng) {
  register_module("spot", &spot_);
  register_module("fast", &fast_);
  if (cfg.lateral)
    for (std::int64_t i = 0; i + 1 < cfg.layers; ++i) {
      laterals_.push_back(std::make_unique<LateralConnection>(cfg.model_dim, cfg.model_dim, rng));
      register_module("lateral" + std::to_string(i + 1), laterals_.back().get());
    }
}

void LateralTransformer::reseed(std::uint64_t seed) {
  spot_.reseed(rng::mix({seed, 1}));
  fast_.reseed(rng::mix({seed, 2}));
  for (std::size_t i = 0; i < spot_.depth(); ++i) {
    if (auto* m = spot_.layer_module(i).memory()) m->reseed(rng::mix({seed, 3, i}));
    if (auto* m = fast_.layer_module(i).memory()) m->reseed(rng::mix({seed, 4, i}));
  }
}

EncodeResult LateralTransformer::encode(const Var& spot, const Var& fast, LayerTrace* trace) {
  require(spot.shape().size() == 3 && fast.shape().size() == 3, "encode: expected [B,T,C] sequences");
  require(spot.shape()[0] == fast.shape()[0], "encode: batch mismatch");
  const std::int64_t ts = spot.shape()[1], tf = fast.shape()[1];
  require(ts <= tf && ts % 2 == 1, "encode: spot length must be odd and no longer than the fast length");
  Var s = spot_.embed(spot, spot_offset(tf, ts));
  Var f = fast_.embed(fast, 0);
  for (std::size_t i = 0; i < spot_.depth(); ++i) {
    s = spot_.layer(i, s);
    f = fast_.layer(i, f);
    if (i < laterals_.size()) s = laterals_[i]->forward(f, s);
    if (trace) {
      trace->spot.push_back(s);
      trace->fast.push_back(f);
    }
  }
  return {spot_.finish(s), fast_.finish(f)};
}

}  // namespace spotfast
