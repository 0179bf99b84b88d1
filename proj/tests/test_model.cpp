#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "spotfast/config.hpp"
#include "spotfast/shapes.hpp"
#include "spotfast/windowing.hpp"

using namespace spotfast;

namespace {

Tensor window_of(const Tensor& full, std::int64_t w) {
  const Shape& s = full.shape();
  const std::int64_t start = windowing::window_start(s[2], w), plane = s[3] * s[4];
  Tensor out({s[0], s[1], w, s[3], s[4]});
  for (std::int64_t bc = 0; bc < s[0] * s[1]; ++bc)
    for (std::int64_t t = 0; t < w; ++t)
      for (std::int64_t p = 0; p < plane; ++p) out[(bc * w + t) * plane + p] = full[(bc * s[2] + start + t) * plane + p];
  return out;
}

Shape find(const ShapeTrace& trace, const std::string& name) {
  for (const auto& [n, s] : trace)
    if (n == name) return s;
  FAIL("missing trace entry " << name);
  return {};
}

}  // namespace

TEST_CASE("inferred shapes match a desk forward") {
  const ModelConfig cfg = desk_preset().model;
  std::mt19937_64 g(1);
  SpotFastModel model(cfg, g);
  const Tensor full = Tensor::randn({2, 3, 29, 32, 32}, g, 1.0);
  for (bool xf : {true, false}) {
    model.set_use_transformer(xf);
    ForwardTrace trace;
    const Var logits = model.forward(Var(window_of(full, 7)), Var(full), &trace);
    CHECK(logits.shape() == Shape{2, 10});
    CHECK(trace.shapes == infer_shapes(cfg, 2, xf));
    CHECK(trace.layers.spot.size() == (xf ? 6u : 0u));
  }
}

TEST_CASE("paper-scale shapes") {
  for (std::int64_t w : {15, 19, 23}) {
    ModelConfig cfg = paper_preset().model;
    cfg.backbone.window_size = w;
    const ShapeTrace s = infer_shapes(cfg, 3);
    CHECK(find(s, "spot.stem") == Shape{3, 64, w, 28, 28});
    CHECK(find(s, "spot.stage4") == Shape{3, 2048, w, 4, 4});
    CHECK(find(s, "fast.stage4") == Shape{3, 256, 29, 4, 4});
    CHECK(find(s, "spot.sequence") == Shape{3, w, 2048});
    CHECK(find(s, "spot.encoded") == Shape{3, w, 2048});
    CHECK(find(s, "fast.encoded") == Shape{3, 29, 256});
    const auto ls = tc_lengths(w, 3, cfg.tc);
    CHECK(find(s, "spot.tc2") == Shape{3, 8192, ls[3]});
    CHECK(find(s, "fast.tc2") == Shape{3, 1024, 2});
    CHECK(find(s, "logits") == Shape{3, 500});
  }
  ModelConfig cfg = paper_preset().model;
  CHECK(find(infer_shapes(cfg, 1), "spot.tc1") == Shape{1, 4096, 6});
  cfg.backbone.window_size = 29;
  CHECK(find(infer_shapes(cfg, 1), "spot.stage4") == Shape{1, 2048, 29, 4, 4});
  cfg.backbone.window_size = 31;
  CHECK_THROWS_AS(infer_shapes(cfg, 1), std::invalid_argument);
}

TEST_CASE("zero-initialised encoders leave logits unchanged at start") {
  const ModelConfig cfg = desk_preset().model;
  std::mt19937_64 g(2);
  SpotFastModel model(cfg, g);
  model.train(false);
  const Tensor full = Tensor::randn({2, 3, 29, 32, 32}, g, 1.0);
  model.set_use_transformer(false);
  const Var a = model.forward(Var(window_of(full, 7)), Var(full));
  model.set_use_transformer(true);
  const Var b = model.forward(Var(window_of(full, 7)), Var(full));
  CHECK(bit_identical(a.value(), b.value()));
}

TEST_CASE("frozen backbone stays in eval mode") {
  const ModelConfig cfg = desk_preset().model;
  std::mt19937_64 g(3);
  SpotFastModel model(cfg, g);
  const Tensor full = Tensor::randn({2, 3, 29, 32, 32}, g, 1.0);
  model.set_backbone_frozen(true);
  model.train(true);
  CHECK_FALSE(model.backbone().is_training());
  CHECK(model.transformer().is_training());
  std::vector<Tensor> before;
  for (auto& [n, t] : model.backbone().named_buffers()) before.push_back(*t);
  model.forward(Var(window_of(full, 7)), Var(full));
  std::size_t i = 0;
  for (auto& [n, t] : model.backbone().named_buffers()) CHECK(bit_identical(*t, before[i++]));
  model.set_backbone_frozen(false);
  CHECK(model.backbone().is_training());
}

TEST_CASE("transformer receives no gradient when bypassed") {
  const ModelConfig cfg = desk_preset().model;
  std::mt19937_64 g(4);
  SpotFastModel model(cfg, g);
  model.set_use_transformer(false);
  const Tensor full = Tensor::randn({2, 3, 29, 32, 32}, g, 1.0);
  const std::vector<std::int64_t> labels{1, 2};
  ops::label_smoothed_ce(model.forward(Var(window_of(full, 7)), Var(full)), labels, 0.1).backward();
  for (auto& [n, p] : model.transformer().named_parameters()) CHECK(p->grad().numel() == 0);
  for (auto& [n, p] : model.head().named_parameters()) CHECK(p->grad().numel() > 0);
}

TEST_CASE("to_sequence averages space") {
  Tensor x({1, 2, 3, 4, 4});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i / 16);  // constant per (c, t)
  const Var s = to_sequence(Var(x));
  CHECK(s.shape() == Shape{1, 3, 2});
  for (std::int64_t t = 0; t < 3; ++t)
    for (std::int64_t c = 0; c < 2; ++c) CHECK(s.value()[t * 2 + c] == static_cast<double>(c * 3 + t));
}
