#include "spotfast/tcback.hpp"

#include <algorithm>

#include "spotfast/backbone.hpp"
#include "spotfast/error.hpp"

namespace spotfast {

std::vector<std::int64_t> tc_lengths(std::int64_t t, std::int64_t kernel, const TcConfig& cfg) {
  std::vector<std::int64_t> out;
  for (int round = 0; round < 2; ++round) {
    t = t >= 1 ? conv_out_len(t, kernel, cfg.stride, kernel / 2) : 0;
    out.push_back(std::max<std::int64_t>(t, 0));
    t = t >= 1 ? ops::pool_out_len(t, cfg.pool, cfg.pool, cfg.ceil_mode) : 0;
    out.push_back(t);
  }
  return out;
}

TemporalConvStack::TemporalConvStack(std::int64_t channels, std::int64_t kernel, const TcConfig& cfg,
                                     std::mt19937_64& rng)
    : channels_(channels),
      kernel_(kernel),
      cfg_(cfg),
      conv1_(channels, 2 * channels, {kernel, 1, 1}, {cfg.stride, 1, 1}, {kernel / 2, 0, 0}, false, rng),
      bn1_(2 * channels, 1),
      conv2_(2 * channels, 4 * channels, {kernel, 1, 1}, {cfg.stride, 1, 1}, {kernel / 2, 0, 0}, false, rng),
      bn2_(4 * channels, 1) {
  require(kernel >= 1 && cfg.stride >= 1 && cfg.pool >= 1, "temporal_conv_stack: bad kernel/stride");
  register_module("conv1", &conv1_);
  register_module("bn1", &bn1_);
  register_module("conv2", &conv2_);
  register_module("bn2", &bn2_);
}

Var TemporalConvStack::block(const Var& x, const Conv3d& conv, BatchNorm& bn) {
  const std::int64_t b = x.shape()[0], c = x.shape()[1], t = x.shape()[2];
  Var h = conv.forward(ops::reshape(x, {b, c, t, 1, 1}));
  h = ops::relu(bn.forward(h));
  const Shape& s = h.shape();
  return ops::max_pool_time(ops::reshape(h, {s[0], s[1], s[2]}), cfg_.pool, cfg_.pool, cfg_.ceil_mode);
}

Var TemporalConvStack::forward(const Var& x, ShapeTrace* trace, const std::string& prefix) {
  require(x.shape().size() == 3 && x.shape()[1] == channels_,
          "temporal_conv_stack: input " + shape_str(x.shape()) + ", expected [B," + std::to_string(channels_) +
              ",T]");
  const auto lens = tc_lengths(x.shape()[2], kernel_, cfg_);
  require(lens.back() >= 1, "temporal_conv_stack: time length " + std::to_string(x.shape()[2]) +
                                " is too short for kernel " + std::to_string(kernel_));
  const Var h = block(x, conv1_, bn1_);
  const Var out = block(h, conv2_, bn2_);
  if (trace) {
    trace->emplace_back(prefix + "tc1", h.shape());
    trace->emplace_back(prefix + "tc2", out.shape());
  }
  return out;
}

Var fuse_and_classify(const Linear& classifier, const Var& spot_vec, const Var& fast_vec) {
  require(spot_vec.shape().size() == 2 && fast_vec.shape().size() == 2 &&
              spot_vec.shape()[0] == fast_vec.shape()[0],
          "fuse_and_classify: expected [B,F] inputs with equal batch");
  require(spot_vec.shape()[1] + fast_vec.shape()[1] == classifier.in_features(),
          "fuse_and_classify: fused width " + std::to_string(spot_vec.shape()[1] + fast_vec.shape()[1]) +
              " does not match classifier input " + std::to_string(classifier.in_features()));
  return classifier.forward(ops::concat({spot_vec, fast_vec}, 1));
}

TcHead::TcHead(std::int64_t c_spot, std::int64_t c_fast, std::int64_t num_classes, const TcConfig& cfg,
               std::mt19937_64& rng)
    : spot_(c_spot, cfg.kernel_spot, cfg, rng),
      fast_(c_fast, cfg.kernel_fast, cfg, rng),
      fc_(4 * c_spot + 4 * c_fast, num_classes, true, rng) {
  require(num_classes >= 2, "tc head: num_classes must be at least 2");
  register_module("spot", &spot_);
  register_module("fast", &fast_);
  register_module("fc", &fc_);
}

Var TcHead::forward(const Var& spot, const Var& fast, ShapeTrace* trace) {
  const Var s = ops::mean(spot_.forward(spot, trace, "spot."), 2);
  const Var f = ops::mean(fast_.forward(fast, trace, "fast."), 2);
  return fuse_and_classify(fc_, s, f);
}

}  // namespace spotfast
