#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "spotfast/gradcheck.hpp"
#include "spotfast/ops.hpp"

using namespace spotfast;

namespace {

Var param(Shape s, std::mt19937_64& rng, double sd = 1.0) { return Var(Tensor::randn(std::move(s), rng, sd), true); }

void expect_grads(std::vector<std::pair<std::string, Var*>> params, const std::function<Var()>& loss) {
  GradCheckOptions opt;
  opt.samples = 400;
  const auto rep = check_gradients(params, loss, opt);
  INFO("worst " << rep.worst << " rel " << rep.max_rel_error);
  CHECK(rep.max_rel_error < 1e-5);
}

}  // namespace

TEST_CASE("elementwise and shape ops backprop") {
  std::mt19937_64 rng(1);
  Var a = param({3, 4, 5}, rng), b = param({3, 4, 5}, rng);
  const Tensor probe = Tensor::randn({5, 4, 3}, rng);
  const Tensor offset = Tensor::randn({4, 5}, rng);
  expect_grads({{"a", &a}, {"b", &b}}, [&] {
    Var s = ops::add(ops::mul(a, ops::relu(b)), ops::scale(a, 0.3));
    s = ops::add_const(s, offset);
    return ops::dot(ops::permute(s, {2, 1, 0}), probe);
  });
}

TEST_CASE("concat and slice") {
  std::mt19937_64 rng(2);
  Var a = param({2, 3, 4}, rng), b = param({2, 5, 4}, rng);
  const Var c = ops::concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 8, 4});
  CHECK(c.value()[(1 * 8 + 3) * 4 + 2] == b.value()[(1 * 5 + 0) * 4 + 2]);
  const Tensor probe = Tensor::randn({2, 4, 4}, rng);
  expect_grads({{"a", &a}, {"b", &b}}, [&] { return ops::dot(ops::slice(ops::concat({a, b}, 1), 1, 2, 4), probe); });
}

TEST_CASE("linear and bmm") {
  std::mt19937_64 rng(3);
  Var x = param({2, 3, 6}, rng), w = param({4, 6}, rng), bias = param({4}, rng);
  Var p = param({3, 5, 4}, rng), q = param({3, 4, 6}, rng), r = param({3, 6, 4}, rng);
  const Tensor probe1 = Tensor::randn({2, 3, 4}, rng);
  const Tensor probe2 = Tensor::randn({3, 5, 6}, rng);
  expect_grads({{"x", &x}, {"w", &w}, {"b", &bias}},
               [&] { return ops::dot(ops::linear(x, w, bias), probe1); });
  expect_grads({{"p", &p}, {"q", &q}, {"r", &r}}, [&] {
    return ops::add(ops::dot(ops::bmm(p, q, false), probe2), ops::dot(ops::bmm(p, r, true), probe2));
  });
}

TEST_CASE("softmax, layer norm, batch norm") {
  std::mt19937_64 rng(4);
  Var x = param({4, 7}, rng), g = param({7}, rng), b = param({7}, rng);
  const Tensor probe = Tensor::randn({4, 7}, rng);
  expect_grads({{"x", &x}}, [&] { return ops::dot(ops::softmax(x), probe); });
  expect_grads({{"x", &x}, {"g", &g}, {"b", &b}},
               [&] { return ops::dot(ops::layer_norm(x, g, b), probe); });

  Var y = param({3, 4, 5}, rng), bg = param({4}, rng), bb = param({4}, rng);
  Tensor rm = Tensor::zeros({4}), rv = Tensor({4}, 1.0);
  const Tensor probe3 = Tensor::randn({3, 4, 5}, rng);
  for (bool training : {true, false}) {
    expect_grads({{"y", &y}, {"g", &bg}, {"b", &bb}}, [&] {
      return ops::dot(ops::batch_norm(y, bg, bb, 1, training, {&rm, &rv, 0.1, 1e-5}), probe3);
    });
  }
}

TEST_CASE("batch norm training output is standardized per channel") {
  std::mt19937_64 rng(5);
  Var x(Tensor::randn({6, 3, 4}, rng, 3.0));
  Tensor rm = Tensor::zeros({3}), rv = Tensor({3}, 1.0);
  const Var y = ops::batch_norm(x, Var(), Var(), 1, true, {&rm, &rv, 0.1, 0.0});
  for (int c = 0; c < 3; ++c) {
    double s = 0, q = 0;
    for (int o = 0; o < 6; ++o)
      for (int i = 0; i < 4; ++i) {
        const double v = y.value()[(o * 3 + c) * 4 + i];
        s += v;
        q += v * v;
      }
    CHECK(s / 24 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(q / 24 == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("conv3d backprop and against direct convolution") {
  std::mt19937_64 rng(6);
  Var x = param({2, 3, 5, 6, 7}, rng), w = param({4, 3, 3, 3, 2}, rng), b = param({4}, rng);
  const ops::Index3 stride{1, 2, 2}, pad{1, 1, 0};
  const Var y = ops::conv3d(x, w, b, stride, pad);
  REQUIRE(y.shape() == Shape{2, 4, 5, 3, 3});
  // Direct summation oracle for one output element.
  const int n = 1, co = 2, ot = 3, oh = 1, ow = 2;
  double ref = b.value()[co];
  for (int ci = 0; ci < 3; ++ci)
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 2; ++d) {
          const int it = ot - 1 + a, ih = oh * 2 - 1 + c, iw = ow * 2 + d;
          if (it < 0 || it >= 5 || ih < 0 || ih >= 6 || iw < 0 || iw >= 7) continue;
          ref += w.value()[(((co * 3 + ci) * 3 + a) * 3 + c) * 2 + d] *
                 x.value()[(((n * 3 + ci) * 5 + it) * 6 + ih) * 7 + iw];
        }
  CHECK(y.value()[(((n * 4 + co) * 5 + ot) * 3 + oh) * 3 + ow] == doctest::Approx(ref).epsilon(1e-12));

  const Tensor probe = Tensor::randn(y.shape(), rng);
  expect_grads({{"x", &x}, {"w", &w}, {"b", &b}},
               [&] { return ops::dot(ops::conv3d(x, w, b, stride, pad), probe); });
}

TEST_CASE("pool length arithmetic") {
  CHECK(ops::pool_out_len(12, 2, 2, false) == 6);
  CHECK(ops::pool_out_len(3, 2, 2, false) == 1);
  CHECK(ops::pool_out_len(1, 2, 2, false) == 0);
  CHECK(ops::pool_out_len(1, 2, 2, true) == 1);
  CHECK(ops::pool_out_len(3, 2, 2, true) == 2);
  CHECK(ops::pool_out_len(4, 2, 2, true) == 2);
}

TEST_CASE("pooling ops") {
  std::mt19937_64 rng(7);
  Var x = param({2, 3, 7}, rng);
  const Tensor probe = Tensor::randn({2, 3, 4}, rng);
  expect_grads({{"x", &x}}, [&] { return ops::dot(ops::max_pool_time(x, 2, 2, true), probe); });
  CHECK_THROWS_AS(ops::max_pool_time(Var(Tensor({1, 1, 1})), 2, 2, false), std::invalid_argument);

  Var v = param({1, 2, 3, 5, 6}, rng);
  const Tensor probe2 = Tensor::randn({1, 2, 3, 2, 3}, rng);
  expect_grads({{"v", &v}}, [&] { return ops::dot(ops::avg_pool_hw(v, 4, 4), probe2); });

  Var s = param({2, 9, 3}, rng);
  const Tensor probe3 = Tensor::randn({2, 4, 3}, rng);
  expect_grads({{"s", &s}}, [&] { return ops::dot(ops::adaptive_avg_pool(s, 1, 4), probe3); });
  const Tensor probe4 = Tensor::randn({2, 3}, rng);
  expect_grads({{"s", &s}}, [&] { return ops::dot(ops::mean(s, 1), probe4); });
}

TEST_CASE("adaptive pooling values") {
  Var x(Tensor({1, 4}, {1, 2, 3, 4}));
  const Var y = ops::adaptive_avg_pool(x, 1, 2);
  CHECK(y.value()[0] == 1.5);
  CHECK(y.value()[1] == 3.5);
  const Var same = ops::adaptive_avg_pool(x, 1, 4);
  CHECK(bit_identical(same.value(), x.value()));
}

TEST_CASE("sparse readout and pair scores") {
  std::mt19937_64 rng(8);
  Var s1 = param({3, 4}, rng), s2 = param({3, 4}, rng), vals = param({16, 5}, rng);
  const std::vector<std::int64_t> idx{0, 5, 15, 3, 7, 9, 2, 2, 11};
  const Tensor probe = Tensor::randn({3, 5}, rng);
  expect_grads({{"s1", &s1}, {"s2", &s2}, {"v", &vals}}, [&] {
    Var w = ops::softmax(ops::pair_scores(s1, s2, idx, 3));
    return ops::dot(ops::sparse_rows(w, idx, vals), probe);
  });
  const Var sc = ops::pair_scores(s1, s2, idx, 3);
  CHECK(sc.value()[1] == s1.value()[1] + s2.value()[1]);
}

TEST_CASE("label smoothed cross entropy backprop") {
  std::mt19937_64 rng(9);
  Var z = param({4, 6}, rng);
  const std::vector<std::int64_t> t{0, 5, 2, 2};
  expect_grads({{"z", &z}}, [&] { return ops::label_smoothed_ce(z, t, 0.1); });
}

TEST_CASE("dropout is identity in eval and scales kept units in train") {
  std::mt19937_64 rng(10);
  Var x(Tensor({1000}, 1.0));
  CHECK(bit_identical(ops::dropout(x, 0.1, rng, false).value(), x.value()));
  const Var y = ops::dropout(x, 0.25, rng, true);
  int kept = 0;
  for (double v : y.value().data()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
    kept += v != 0.0;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
}

TEST_CASE("no-grad guard builds constants") {
  Var a(Tensor({2}, 1.0), true);
  NoGradGuard g;
  const Var b = ops::scale(a, 2.0);
  CHECK_FALSE(b.requires_grad());
}

TEST_CASE("gradient checker: kinks are set aside, wrong backward is caught") {
  // x[0] sits 2e-6 from the relu kink, inside the default step.
  Var x(Tensor({4}, std::vector<double>{2e-6, 0.5, -0.7, 1.3}), true);
  const Tensor ones({4}, 1.0);
  GradCheckOptions opt;
  opt.samples = 3;
  const auto kink = check_gradients({{"x", &x}}, [&] { return ops::dot(ops::relu(x), ones); }, opt);
  REQUIRE(kink.unreliable.size() == 1);
  CHECK(kink.unreliable[0].index == 0);
  CHECK(kink.entries.size() == 3);
  CHECK(kink.max_rel_error < 1e-8);

  // Exactly on the kink the central difference is symmetric; the one-sided
  // differences still flag it.
  Var z(Tensor({1}, 0.0), true);
  opt.samples = 1;
  const auto on = check_gradients({{"z", &z}}, [&] { return ops::dot(ops::relu(z), Tensor({1}, 1.0)); }, opt);
  CHECK(on.unreliable.size() == 1);
  CHECK(on.entries.empty());

  // Backward reports 2 for a function with slope 3 everywhere.
  Var w(Tensor({5}, 0.25), true);
  auto wrong = [&] {
    return make_op(ops::scale(w, 3.0).value(), {w}, [w](Node& self) {
      Tensor& g = w.node()->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * self.grad[i];
    });
  };
  opt.samples = 5;
  const auto bad = check_gradients({{"w", &w}}, [&] { return ops::dot(wrong(), Tensor({5}, 1.0)); }, opt);
  CHECK(bad.unreliable.empty());
  CHECK(bad.entries.size() == 5);
  CHECK(bad.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}
