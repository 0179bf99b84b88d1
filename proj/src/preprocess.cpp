#include "spotfast/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "spotfast/error.hpp"
#include "spotfast/rng.hpp"

namespace spotfast::preprocess {

using data::Clip;

namespace {

Clip with_geometry(const Clip& src, std::int64_t h, std::int64_t w) {
  Clip out;
  out.frames = src.frames;
  out.height = h;
  out.width = w;
  out.channels = src.channels;
  out.kind = src.kind;
  out.label = src.label;
  out.clip_id = src.clip_id;
  out.boundary = src.boundary;
  out.pixels.resize(static_cast<std::size_t>(out.frames * h * w * out.channels));
  return out;
}

// Half-pixel source coordinate for output index `o` when resampling `in` -> `out`.
struct Tap {
  std::int64_t i0, i1;
  double frac;
};

Tap source_tap(std::int64_t o, std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
  if (s < 0.0) s = 0.0;
  auto i0 = static_cast<std::int64_t>(std::floor(s));
  i0 = std::min(i0, in - 1);
  const std::int64_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

// Samples the (size x size) bilinear upsampling of `src` at rows
// [top, top+out_h) and columns [left, left+out_w).
Clip resample_window(const Clip& src, std::int64_t size_h, std::int64_t size_w, std::int64_t top,
                     std::int64_t left, std::int64_t out_h, std::int64_t out_w, bool flip) {
  Clip out = with_geometry(src, out_h, out_w);
  std::vector<Tap> rows(out_h), cols(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) rows[y] = source_tap(top + y, src.height, size_h);
  for (std::int64_t x = 0; x < out_w; ++x) {
    const std::int64_t ux = flip ? left + (out_w - 1 - x) : left + x;
    cols[x] = source_tap(ux, src.width, size_w);
  }
  for (std::int64_t t = 0; t < src.frames; ++t)
    for (std::int64_t y = 0; y < out_h; ++y) {
      const Tap& ry = rows[y];
      for (std::int64_t x = 0; x < out_w; ++x) {
        const Tap& cx = cols[x];
        for (std::int64_t c = 0; c < src.channels; ++c) {
          const double a = src.at(t, ry.i0, cx.i0, c), b = src.at(t, ry.i0, cx.i1, c);
          const double d = src.at(t, ry.i1, cx.i0, c), e = src.at(t, ry.i1, cx.i1, c);
          const double top_row = a + (b - a) * cx.frac;
          const double bottom_row = d + (e - d) * cx.frac;
          out.pixels[out.offset(t, y, x, c)] = static_cast<float>(top_row + (bottom_row - top_row) * ry.frac);
        }
      }
    }
  return out;
}

}  // namespace

Clip crop_mouth(const Clip& clip, const CropBox& box) {
  if (box.top < 0 || box.left < 0 || box.height < 1 || box.width < 1 ||
      box.top + box.height > clip.height || box.left + box.width > clip.width)
    invalid("crop_mouth: box out of bounds for " + std::to_string(clip.height) + "x" +
            std::to_string(clip.width) + " frames");
  Clip out = with_geometry(clip, box.height, box.width);
  const auto row = static_cast<std::size_t>(box.width * clip.channels);
  for (std::int64_t t = 0; t < clip.frames; ++t)
    for (std::int64_t y = 0; y < box.height; ++y) {
      const auto src = clip.pixels.begin() + static_cast<std::ptrdiff_t>(clip.offset(t, box.top + y, box.left, 0));
      std::copy(src, src + static_cast<std::ptrdiff_t>(row),
                out.pixels.begin() + static_cast<std::ptrdiff_t>(out.offset(t, y, 0, 0)));
    }
  return out;
}

Clip normalize(const Clip& clip) {
  require(clip.kind != data::PixelKind::Standardized, "normalize: clip already normalized");
  Clip out = clip;
  const double div = clip.kind == data::PixelKind::Byte ? 255.0 : 1.0;
  for (auto& v : out.pixels) v = static_cast<float>((static_cast<double>(v) / div - kPixelMean) / kPixelStd);
  out.kind = data::PixelKind::Standardized;
  return out;
}

Clip resize_bilinear(const Clip& clip, std::int64_t out_h, std::int64_t out_w) {
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: bad output size");
  return resample_window(clip, out_h, out_w, 0, 0, out_h, out_w, false);
}

AugmentParams draw_augment(std::mt19937_64& g, const AugmentConfig& cfg) {
  require(cfg.upsample_min >= cfg.crop && cfg.upsample_max >= cfg.upsample_min,
          "augment: upsample range must cover the crop size");
  AugmentParams p;
  p.upsample = rng::uniform_int(g, cfg.upsample_min, cfg.upsample_max);
  p.crop_top = rng::uniform_int(g, 0, p.upsample - cfg.crop);
  p.crop_left = rng::uniform_int(g, 0, p.upsample - cfg.crop);
  p.flip = rng::uniform01(g) < cfg.flip_prob;
  return p;
}

Clip apply_augment(const Clip& clip, const AugmentParams& p, std::int64_t crop) {
  require(p.crop_top >= 0 && p.crop_left >= 0 && p.crop_top + crop <= p.upsample &&
              p.crop_left + crop <= p.upsample,
          "apply_augment: crop window outside the upsampled frame");
  return resample_window(clip, p.upsample, p.upsample, p.crop_top, p.crop_left, crop, crop, p.flip);
}

Clip train_augment(const Clip& clip, std::mt19937_64& g, const AugmentConfig& cfg, AugmentParams* drawn) {
  const AugmentParams p = draw_augment(g, cfg);
  if (drawn) *drawn = p;
  return apply_augment(clip, p, cfg.crop);
}

Clip eval_transform(const Clip& clip, const AugmentConfig& cfg) {
  require(cfg.eval_upsample >= cfg.crop, "eval_transform: upsample smaller than crop");
  const std::int64_t off = (cfg.eval_upsample - cfg.crop) / 2;
  return apply_augment(clip, {cfg.eval_upsample, off, off, false}, cfg.crop);
}

Clip to_grayscale(const Clip& clip) {
  if (clip.channels == 1) return clip;
  require(clip.channels == 3, "to_grayscale: expected 3 channels");
  Clip out = clip;
  out.channels = 1;
  out.pixels.resize(static_cast<std::size_t>(clip.frames * clip.height * clip.width));
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double r = clip.pixels[3 * i], g = clip.pixels[3 * i + 1], b = clip.pixels[3 * i + 2];
    double y = 0.299 * r + 0.587 * g + 0.114 * b;
    if (clip.kind == data::PixelKind::Byte) y = std::round(y);
    out.pixels[i] = static_cast<float>(y);
  }
  return out;
}

nlohmann::json augment_record(const std::string& clip_id, const AugmentParams& p) {
  return {{"clip_id", clip_id},
          {"upsample", p.upsample},
          {"crop_top", p.crop_top},
          {"crop_left", p.crop_left},
          {"flip", p.flip}};
}

}  // namespace spotfast::preprocess
