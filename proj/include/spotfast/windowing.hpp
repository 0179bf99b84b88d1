#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace spotfast::windowing {

struct BoundaryStats {
  double mean = 0.0;
  double std = 0.0;  // population
  std::int64_t count = 0;
};

/// Arithmetic mean and population standard deviation of word durations.
BoundaryStats boundary_stats(std::span<const std::int64_t> durations);

/// Three candidate window sizes {mu + s, mu + 2s, mu + 3s} with mu rounded
/// half-up and s rounded up; even sizes are bumped to the next odd size and
/// everything is clamped to the largest odd size <= clip_frames.
std::array<std::int64_t, 3> candidate_windows(const BoundaryStats& stats, std::int64_t clip_frames = 29);

/// Index of the clip's middle frame.
inline std::int64_t center_frame(std::int64_t clip_frames) { return clip_frames / 2; }

/// First frame of the centered odd window of size `w`.
std::int64_t window_start(std::int64_t clip_frames, std::int64_t w);

/// Copies frames [center - (w-1)/2, center + (w-1)/2] of a [T, ...] array
/// whose frames are `frame_size` contiguous elements.
template <class T>
std::vector<T> extract_window(std::span<const T> frames, std::int64_t clip_frames, std::int64_t frame_size,
                              std::int64_t w) {
  const std::int64_t start = window_start(clip_frames, w);
  const auto first = frames.begin() + start * frame_size;
  return std::vector<T>(first, first + w * frame_size);
}

nlohmann::json to_json(const BoundaryStats& stats, const std::array<std::int64_t, 3>& windows);

}  // namespace spotfast::windowing
