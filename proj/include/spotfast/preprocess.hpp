#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "json.hpp"
#include "spotfast/data.hpp"

namespace spotfast::preprocess {

// Kinetics normalization constants.
inline constexpr double kPixelMean = 0.45;
inline constexpr double kPixelStd = 0.225;

struct CropBox {
  std::int64_t top = 0, left = 0, height = 0, width = 0;
};

/// Default fixed mouth box for 256x256 LRW frames.
inline constexpr CropBox kLrwMouthBox{96, 80, 96, 96};

struct AugmentConfig {
  std::int64_t crop = 112;
  std::int64_t upsample_min = 122;
  std::int64_t upsample_max = 146;
  std::int64_t eval_upsample = 122;
  double flip_prob = 0.5;
};

/// Parameters drawn once per clip and shared by every frame.
struct AugmentParams {
  std::int64_t upsample = 0;
  std::int64_t crop_top = 0;
  std::int64_t crop_left = 0;
  bool flip = false;
};

data::Clip crop_mouth(const data::Clip& clip, const CropBox& box);

/// (x/255 - 0.45)/0.225 for byte clips, (x - 0.45)/0.225 for unit clips.
data::Clip normalize(const data::Clip& clip);

/// Bilinear resize with half-pixel centers (no corner alignment).
data::Clip resize_bilinear(const data::Clip& clip, std::int64_t out_h, std::int64_t out_w);

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentConfig& cfg);

/// Upsample to params.upsample square, crop `crop` x `crop` at the drawn
/// offset, optionally mirror columns. Only the cropped window is computed.
data::Clip apply_augment(const data::Clip& clip, const AugmentParams& params, std::int64_t crop);

data::Clip train_augment(const data::Clip& clip, std::mt19937_64& rng, const AugmentConfig& cfg,
                         AugmentParams* drawn = nullptr);

/// Upsample to eval_upsample and take the center crop.
data::Clip eval_transform(const data::Clip& clip, const AugmentConfig& cfg);

data::Clip to_grayscale(const data::Clip& clip);

nlohmann::json augment_record(const std::string& clip_id, const AugmentParams& p);

}  // namespace spotfast::preprocess
