#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "spotfast/preprocess.hpp"
#include "spotfast/rng.hpp"

using namespace spotfast;
using data::Clip;

namespace {

// Pixel value encodes its own (t, y, x, c) so index mappings can be read back.
Clip labeled(std::int64_t t, std::int64_t h, std::int64_t w, std::int64_t c) {
  Clip clip;
  clip.frames = t;
  clip.height = h;
  clip.width = w;
  clip.channels = c;
  clip.kind = data::PixelKind::Unit;
  clip.pixels.resize(static_cast<std::size_t>(t * h * w * c));
  for (std::size_t i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = static_cast<float>(i);
  return clip;
}

Clip random_clip(std::int64_t t, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Clip clip;
  clip.frames = t;
  clip.height = h;
  clip.width = w;
  clip.channels = 3;
  std::mt19937_64 g(seed);
  clip.pixels.resize(static_cast<std::size_t>(t * h * w * 3));
  for (auto& v : clip.pixels) v = static_cast<float>(g() % 256);
  return clip;
}

Clip frame(const Clip& c, std::int64_t t) {
  Clip f = c;
  f.frames = 1;
  const auto n = static_cast<std::ptrdiff_t>(c.frame_size());
  f.pixels.assign(c.pixels.begin() + t * n, c.pixels.begin() + (t + 1) * n);
  return f;
}

}  // namespace

TEST_CASE("crop_mouth") {
  const Clip full = labeled(3, 96, 96, 2);
  CHECK(preprocess::crop_mouth(full, {0, 0, 96, 96}).pixels == full.pixels);

  const Clip big = labeled(2, 256, 256, 1);
  const Clip m = preprocess::crop_mouth(big, preprocess::kLrwMouthBox);
  CHECK(m.height == 96);
  CHECK(m.width == 96);
  CHECK(m.frames == 2);
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t i = 0; i < 96; i += 7)
      for (std::int64_t j = 0; j < 96; j += 5) CHECK(m.at(t, i, j, 0) == big.at(t, 96 + i, 80 + j, 0));

  CHECK_THROWS_AS(preprocess::crop_mouth(full, {1, 0, 96, 96}), std::invalid_argument);
  CHECK_THROWS_AS(preprocess::crop_mouth(full, {-1, 0, 10, 10}), std::invalid_argument);
}

TEST_CASE("normalize") {
  Clip c;
  c.frames = c.height = 1;
  c.width = 2;
  c.channels = 1;
  c.pixels = {0.0f, 255.0f};
  const Clip n = preprocess::normalize(c);
  CHECK(n.pixels[0] == -2.0f);
  CHECK(n.pixels[1] == doctest::Approx((1.0 - 0.45) / 0.225).epsilon(1e-7));
  CHECK(n.pixels[1] == doctest::Approx(2.4444444).epsilon(1e-6));
  CHECK(n.kind == data::PixelKind::Standardized);
  CHECK_THROWS_AS(preprocess::normalize(n), std::invalid_argument);

  c.kind = data::PixelKind::Unit;
  c.pixels = {0.45f, 0.9f};
  const Clip u = preprocess::normalize(c);
  CHECK(u.pixels[0] == doctest::Approx(0.0).epsilon(1e-7));

  // Affine: differences scale by 1/0.225.
  std::mt19937_64 g(5);
  for (int i = 0; i < 200; ++i) {
    const double a = rng::uniform01(g), b = rng::uniform01(g);
    c.pixels = {static_cast<float>(a), static_cast<float>(b)};
    const Clip o = preprocess::normalize(c);
    const double lhs = static_cast<double>(o.pixels[0]) - o.pixels[1];
    const double rhs = (static_cast<double>(c.pixels[0]) - c.pixels[1]) / 0.225;
    CHECK(std::abs(lhs - rhs) < 1e-6);
  }
}

TEST_CASE("train_augment is seeded, per-clip and 112 square") {
  const Clip c = random_clip(4, 96, 96, 1);
  const preprocess::AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    std::mt19937_64 g1(seed), g2(seed);
    preprocess::AugmentParams p1, p2;
    const Clip a = preprocess::train_augment(c, g1, cfg, &p1);
    const Clip b = preprocess::train_augment(c, g2, cfg, &p2);
    CHECK(a.pixels == b.pixels);
    CHECK(a.height == 112);
    CHECK(a.width == 112);
    CHECK(a.frames == 4);
    CHECK(p1.upsample >= 122);
    CHECK(p1.upsample <= 146);
    CHECK(p1.crop_top + 112 <= p1.upsample);

    // Same parameters applied frame by frame reproduce the stacked result,
    // so offset and flip are constant across the clip.
    for (std::int64_t t = 0; t < c.frames; ++t) {
      const Clip ft = preprocess::apply_augment(frame(c, t), p1, 112);
      CHECK(ft.pixels == frame(a, t).pixels);
    }
  }
}

TEST_CASE("flip mirrors columns") {
  const Clip c = random_clip(3, 100, 100, 2);
  preprocess::AugmentParams p{131, 7, 11, false};
  const Clip plain = preprocess::apply_augment(c, p, 112);
  p.flip = true;
  const Clip flipped = preprocess::apply_augment(c, p, 112);
  for (std::int64_t t = 0; t < 3; ++t)
    for (std::int64_t y = 0; y < 112; ++y)
      for (std::int64_t x = 0; x < 112; ++x)
        for (std::int64_t ch = 0; ch < 3; ++ch)
          REQUIRE(flipped.at(t, y, x, ch) == plain.at(t, y, 111 - x, ch));
}

TEST_CASE("eval_transform") {
  const preprocess::AugmentConfig cfg;
  const Clip c = random_clip(2, 122, 122, 3);
  const Clip a = preprocess::eval_transform(c, cfg);
  CHECK(a.pixels == preprocess::eval_transform(c, cfg).pixels);
  CHECK(a.height == 112);
  CHECK(a.width == 112);
  // Upsampling 122 -> 122 is the identity, so this is the centre slice.
  CHECK(a.pixels == preprocess::crop_mouth(c, {5, 5, 112, 112}).pixels);

  const Clip small = random_clip(2, 40, 40, 4);
  const Clip s = preprocess::eval_transform(small, cfg);
  CHECK(s.height == 112);
  CHECK(s.frames == 2);
}

TEST_CASE("resize_bilinear of a constant stays constant") {
  Clip c = random_clip(1, 16, 16, 5);
  for (auto& v : c.pixels) v = 42.0f;
  const Clip r = preprocess::resize_bilinear(c, 37, 29);
  for (float v : r.pixels) CHECK(v == 42.0f);
}

TEST_CASE("grayscale") {
  Clip c = random_clip(1, 4, 4, 6);
  const Clip g = preprocess::to_grayscale(c);
  CHECK(g.channels == 1);
  CHECK(g.pixels.size() == 16);
  CHECK(g.pixels[0] == std::round(0.299 * c.pixels[0] + 0.587 * c.pixels[1] + 0.114 * c.pixels[2]));
}
