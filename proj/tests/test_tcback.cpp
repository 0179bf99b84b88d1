#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "spotfast/config.hpp"
#include "spotfast/gradcheck.hpp"
#include "spotfast/shapes.hpp"
#include "spotfast/tcback.hpp"

using namespace spotfast;

namespace {

std::int64_t conv_len(std::int64_t t, std::int64_t k, std::int64_t s) { return (t + 2 * (k / 2) - k) / s + 1; }

Var* param(Module& m, const std::string& name) {
  for (auto& [n, p] : m.named_parameters())
    if (n == name) return p;
  FAIL("no parameter " << name);
  return nullptr;
}

using Seq = std::vector<std::vector<double>>;  // [C][T]

// conv1d (no bias) -> fresh eval BN -> ReLU -> max pool, all by hand.
Seq block_oracle(const Seq& x, const Tensor& w, std::int64_t k, std::int64_t stride, std::int64_t pool, bool ceil) {
  const std::int64_t cin = static_cast<std::int64_t>(x.size()), t = static_cast<std::int64_t>(x[0].size());
  const std::int64_t cout = w.dim(0), to = conv_len(t, k, stride);
  Seq h(cout, std::vector<double>(to, 0.0));
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t i = 0; i < to; ++i) {
      double s = 0;
      for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t j = 0; j < k; ++j) {
          const std::int64_t src = i * stride + j - k / 2;
          if (src >= 0 && src < t) s += w[(o * cin + c) * k + j] * x[c][src];
        }
      h[o][i] = std::max(0.0, s / std::sqrt(1.0 + 1e-5));
    }
  std::int64_t tp = to >= pool ? (to - pool) / pool + 1 : 0;
  if (ceil && (tp * pool < to)) ++tp;
  Seq out(cout, std::vector<double>(tp));
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t i = 0; i < tp; ++i) {
      double m = -1e300;
      for (std::int64_t j = i * pool; j < std::min(to, i * pool + pool); ++j) m = std::max(m, h[o][j]);
      out[o][i] = m;
    }
  return out;
}

}  // namespace

TEST_CASE("temporal lengths") {
  TcConfig paper;
  CHECK(tc_lengths(23, 3, paper) == std::vector<std::int64_t>{12, 6, 3, 1});
  CHECK(tc_lengths(29, 5, paper) == std::vector<std::int64_t>{15, 7, 4, 2});
  CHECK(tc_lengths(19, 3, paper) == std::vector<std::int64_t>{10, 5, 3, 1});
  CHECK(tc_lengths(15, 3, paper) == std::vector<std::int64_t>{8, 4, 2, 1});
  for (std::int64_t t = 1; t <= 40; ++t) {
    const std::int64_t c1 = conv_len(t, 3, 2), p1 = c1 / 2, c2 = p1 >= 1 ? conv_len(p1, 3, 2) : 0;
    CHECK(tc_lengths(t, 3, paper) == std::vector<std::int64_t>{c1, p1, c2, c2 / 2});
  }
  // A 7-frame window collapses with floor pooling but survives with ceil.
  CHECK(tc_lengths(7, 3, paper).back() == 0);
  TcConfig ceil = paper;
  ceil.ceil_mode = true;
  CHECK(tc_lengths(7, 3, ceil) == std::vector<std::int64_t>{4, 2, 1, 1});
  CHECK(tc_lengths(29, 5, ceil) == std::vector<std::int64_t>{15, 8, 4, 2});
}

TEST_CASE("classifier widths") {
  const RunConfig paper = paper_preset();
  CHECK(paper.model.backbone.c_spot() == 2048);
  CHECK(paper.model.backbone.c_fast() == 256);
  CHECK(fused_width(paper.model) == 9216);
  CHECK(paper.model.num_classes == 500);
  CHECK(fused_width(desk_preset().model) == 320);
}

TEST_CASE("stack matches a hand-written oracle") {
  for (bool ceil : {false, true})
    for (std::int64_t k : {3, 5}) {
      std::mt19937_64 g(static_cast<std::uint64_t>(k) + (ceil ? 10 : 0));
      TcConfig cfg;
      cfg.ceil_mode = ceil;
      TemporalConvStack stack(3, k, cfg, g);
      stack.train(false);
      const Tensor x = Tensor::randn({2, 3, 21}, g, 1.0);
      const Var y = stack.forward(Var(x));
      const auto lens = tc_lengths(21, k, cfg);
      CHECK(y.shape() == Shape{2, 12, lens[3]});
      for (std::int64_t b = 0; b < 2; ++b) {
        Seq s(3, std::vector<double>(21));
        for (std::int64_t c = 0; c < 3; ++c)
          for (std::int64_t t = 0; t < 21; ++t) s[c][t] = x[(b * 3 + c) * 21 + t];
        s = block_oracle(s, param(stack, "conv1.weight")->value(), k, 2, 2, ceil);
        CHECK(static_cast<std::int64_t>(s[0].size()) == lens[1]);
        s = block_oracle(s, param(stack, "conv2.weight")->value(), k, 2, 2, ceil);
        for (std::int64_t c = 0; c < 12; ++c)
          for (std::int64_t t = 0; t < lens[3]; ++t)
            CHECK(y.value()[(b * 12 + c) * lens[3] + t] == doctest::Approx(s[c][t]).epsilon(1e-12));
      }
    }
}

TEST_CASE("stack widens channels by four") {
  std::mt19937_64 g(1);
  for (std::int64_t c : {1, 4, 16}) {
    TemporalConvStack stack(c, 3, TcConfig{}, g);
    CHECK(stack.forward(Var(Tensor::randn({2, c, 23}, g, 1.0))).shape() == Shape{2, 4 * c, 1});
  }
  TemporalConvStack stack(4, 3, TcConfig{}, g);
  CHECK_THROWS_AS(stack.forward(Var(Tensor({2, 4, 7}))), std::invalid_argument);
  CHECK_THROWS_AS(stack.forward(Var(Tensor({2, 5, 23}))), std::invalid_argument);
}

TEST_CASE("head outputs and zero classifier") {
  std::mt19937_64 g(2);
  TcConfig cfg;
  cfg.ceil_mode = true;
  TcHead head(8, 2, 10, cfg, g);
  const Var spot(Tensor::randn({3, 8, 7}, g, 1.0));
  const Var fast(Tensor::randn({3, 2, 29}, g, 1.0));
  ShapeTrace trace;
  CHECK(head.forward(spot, fast, &trace).shape() == Shape{3, 10});
  CHECK(trace.size() == 4);
  CHECK(trace[1] == std::pair<std::string, Shape>{"spot.tc2", Shape{3, 32, 1}});
  CHECK(trace[3] == std::pair<std::string, Shape>{"fast.tc2", Shape{3, 8, 2}});

  zero_parameters(head.classifier());
  const Var p = ops::softmax(head.forward(spot, fast));
  for (double v : p.value().data()) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));

  CHECK_THROWS_AS(fuse_and_classify(head.classifier(), Var(Tensor({3, 32})), Var(Tensor({3, 4}))),
                  std::invalid_argument);
}

TEST_CASE("time shift of the fast input changes logits") {
  std::mt19937_64 g(3);
  TcHead head(4, 2, 5, TcConfig{}, g);
  head.train(false);
  const Tensor spot = Tensor::randn({1, 4, 23}, g, 1.0);
  const Tensor fast = Tensor::randn({1, 2, 29}, g, 1.0);
  Tensor shifted = fast;
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t t = 0; t < 29; ++t) shifted[c * 29 + t] = fast[c * 29 + (t + 1) % 29];
  const Var a = head.forward(Var(spot), Var(fast));
  const Var b = head.forward(Var(spot), Var(shifted));
  CHECK_FALSE(bit_identical(a.value(), b.value()));
}

TEST_CASE("head gradient check") {
  std::mt19937_64 g(4);
  TcConfig cfg;
  cfg.ceil_mode = true;
  TcHead head(6, 3, 7, cfg, g);
  const Tensor spot = Tensor::randn({3, 6, 11}, g, 1.0);
  const Tensor fast = Tensor::randn({3, 3, 29}, g, 1.0);
  const std::vector<std::int64_t> labels{0, 3, 6};
  auto loss = [&] { return ops::label_smoothed_ce(head.forward(Var(spot), Var(fast)), labels, 0.1); };
  GradCheckOptions opt;
  opt.samples = 200;
  const auto report = check_gradients(head.named_parameters(), loss, opt);
  MESSAGE("tc head gradcheck max rel ", report.max_rel_error, " at ", report.worst);
  CHECK(report.entries.size() >= 100);
  CHECK(report.max_rel_error < 1e-3);
}
