#include "spotfast/windowing.hpp"

#include <algorithm>
#include <cmath>

#include "spotfast/error.hpp"

namespace spotfast::windowing {

BoundaryStats boundary_stats(std::span<const std::int64_t> durations) {
  require(!durations.empty(), "boundary_stats: empty duration list");
  double sum = 0.0;
  for (auto d : durations) {
    require(d >= 1, "boundary_stats: durations must be positive");
    sum += static_cast<double>(d);
  }
  const auto n = static_cast<double>(durations.size());
  const double mean = sum / n;
  double sq = 0.0;
  for (auto d : durations) sq += (static_cast<double>(d) - mean) * (static_cast<double>(d) - mean);
  return {mean, std::sqrt(sq / n), static_cast<std::int64_t>(durations.size())};
}

std::array<std::int64_t, 3> candidate_windows(const BoundaryStats& stats, std::int64_t clip_frames) {
  require(std::isfinite(stats.mean) && stats.mean > 0.0 && stats.std >= 0.0, "candidate_windows: invalid stats");
  require(clip_frames >= 1, "candidate_windows: clip_frames must be positive");
  const auto mu = static_cast<std::int64_t>(std::floor(stats.mean + 0.5));
  const auto sigma = static_cast<std::int64_t>(std::ceil(stats.std));
  const std::int64_t max_odd = clip_frames % 2 ? clip_frames : clip_frames - 1;
  std::array<std::int64_t, 3> w{};
  for (int i = 0; i < 3; ++i) {
    std::int64_t v = mu + (i + 1) * sigma;
    if (v % 2 == 0) ++v;
    w[i] = std::clamp<std::int64_t>(v, 1, max_odd);
  }
  std::sort(w.begin(), w.end());
  return w;
}

std::int64_t window_start(std::int64_t clip_frames, std::int64_t w) {
  require(w >= 1 && w % 2 == 1, "extract_window: window size must be odd, got " + std::to_string(w));
  require(w <= clip_frames, "extract_window: window " + std::to_string(w) + " exceeds clip length " +
                                std::to_string(clip_frames));
  return center_frame(clip_frames) - (w - 1) / 2;
}

nlohmann::json to_json(const BoundaryStats& stats, const std::array<std::int64_t, 3>& windows) {
  return {{"mean", stats.mean}, {"std", stats.std}, {"count", stats.count}, {"windows", windows}};
}

}  // namespace spotfast::windowing
