#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spotfast/backbone.hpp"
#include "spotfast/module.hpp"

namespace spotfast {

struct TcConfig {
  std::int64_t kernel_spot = 3;
  std::int64_t kernel_fast = 5;
  std::int64_t stride = 2;
  std::int64_t pool = 2;
  bool ceil_mode = false;
};

/// Lengths after conv1, pool1, conv2, pool2 (0 once the stack collapses).
std::vector<std::int64_t> tc_lengths(std::int64_t t, std::int64_t kernel, const TcConfig& cfg);

/// Two rounds of conv1d(k, stride, pad k/2) -> BN -> ReLU -> maxpool, C -> 2C -> 4C.
class TemporalConvStack : public Module {
 public:
  TemporalConvStack(std::int64_t channels, std::int64_t kernel, const TcConfig& cfg, std::mt19937_64& rng);
  /// [B,C,T] -> [B,4C,T']; intermediate shapes go to `trace` under `prefix`.
  Var forward(const Var& x, ShapeTrace* trace = nullptr, const std::string& prefix = "");

 private:
  Var block(const Var& x, const Conv3d& conv, BatchNorm& bn);

  std::int64_t channels_, kernel_;
  TcConfig cfg_;
  Conv3d conv1_;
  BatchNorm bn1_;
  Conv3d conv2_;
  BatchNorm bn2_;
};

inline Var temporal_conv_stack(TemporalConvStack& stack, const Var& x) { return stack.forward(x); }

/// Concatenates [B,4C_s] and [B,4C_f] and maps them to logits.
Var fuse_and_classify(const Linear& classifier, const Var& spot_vec, const Var& fast_vec);

class TcHead : public Module {
 public:
  TcHead(std::int64_t c_spot, std::int64_t c_fast, std::int64_t num_classes, const TcConfig& cfg,
         std::mt19937_64& rng);
  /// spot [B,C_s,T_s], fast [B,C_f,T_f] -> logits [B,K].
  Var forward(const Var& spot, const Var& fast, ShapeTrace* trace = nullptr);

  Linear& classifier() { return fc_; }
  std::int64_t num_classes() const { return fc_.out_features(); }

 private:
  TemporalConvStack spot_;
  TemporalConvStack fast_;
  Linear fc_;
};

}  // namespace spotfast
