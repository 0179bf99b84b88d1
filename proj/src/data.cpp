#include "spotfast/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "spotfast/container.hpp"
#include "spotfast/error.hpp"
#include "spotfast/rng.hpp"

namespace spotfast::data {

namespace fs = std::filesystem;

void Clip::validate(std::int64_t num_classes) const {
  require(frames >= 1 && height >= 1 && width >= 1 && channels >= 1, "clip " + clip_id + ": empty dims");
  require(static_cast<std::int64_t>(pixels.size()) == frames * height * width * channels,
          "clip " + clip_id + ": pixel count does not match dims");
  require(label >= 0 && label < num_classes, "clip " + clip_id + ": label out of range");
  if (boundary) {
    require(0 <= boundary->start && boundary->start <= boundary->end && boundary->end < frames,
            "clip " + clip_id + ": boundary outside clip");
  }
  if (kind == PixelKind::Byte) {
    for (float v : pixels) require(v >= 0.0f && v <= 255.0f, "clip " + clip_id + ": byte pixel out of range");
  } else if (kind == PixelKind::Unit) {
    for (float v : pixels) require(v >= 0.0f && v <= 1.0f, "clip " + clip_id + ": unit pixel out of range");
  }
}

std::string synthetic_word(std::int64_t class_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "WORD%03lld", static_cast<long long>(class_index));
  return buf;
}

namespace {

std::string clip_file_stem(const std::string& word, std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%05lld", static_cast<long long>(index));
  return word + buf;
}

std::int64_t heldout_count(const SyntheticSpec& spec) {
  return spec.heldout_per_class >= 0 ? spec.heldout_per_class
                                     : std::max<std::int64_t>(2, spec.clips_per_class / 5);
}

std::int64_t split_count(const SyntheticSpec& spec, const std::string& split) {
  return split == "train" ? spec.clips_per_class : heldout_count(spec);
}

}  // namespace

Clip render_synthetic_clip(const SyntheticSpec& spec, const std::string& split, std::int64_t label,
                           std::int64_t index) {
  using std::numbers::pi;
  const auto T = spec.frames, H = spec.height, W = spec.width, C = spec.channels;
  const auto K = spec.num_classes;
  std::mt19937_64 g(rng::mix({spec.seed, rng::hash_string(split), static_cast<std::uint64_t>(label),
                              static_cast<std::uint64_t>(index)}));

  // Class identity: motion axis, motion frequency, opening frequency, phase.
  // Axes are interleaved so classes sharing an opening frequency sit far apart.
  const double axis_slot = static_cast<double>(K % 7 != 0 ? (label * 7) % K : label);
  const double theta = K > 1 ? 0.5 * pi * axis_slot / static_cast<double>(K - 1) : 0.0;
  const double motion_freq = 1.0 + 0.75 * static_cast<double>(label % 3);
  const double open_freq = 1.5 + 0.5 * static_cast<double>((label / 3) % 3);
  const double class_phase = pi * static_cast<double>(label) / static_cast<double>(K);

  // Per-clip nuisance.
  const double amp = 0.22 * static_cast<double>(W) * rng::uniform(g, 0.85, 1.15);
  const double phase = class_phase + rng::uniform(g, -0.35, 0.35);
  const double cx0 = 0.5 * static_cast<double>(W) + rng::uniform(g, -1.5, 1.5);
  const double cy0 = 0.5 * static_cast<double>(H) + rng::uniform(g, -1.5, 1.5);
  const double brightness = rng::uniform(g, -10.0, 10.0);

  const double scale = static_cast<double>(T) / 29.0;
  const auto duration = std::clamp<std::int64_t>(
      std::llround((10.59 + 3.2 * rng::normal(g)) * scale), 1, T);
  const std::int64_t center = T / 2;
  const std::int64_t start = std::max<std::int64_t>(0, center - (duration - 1) / 2);
  const std::int64_t end = std::min<std::int64_t>(T - 1, start + duration - 1);

  Clip clip;
  clip.frames = T;
  clip.height = H;
  clip.width = W;
  clip.channels = C;
  clip.kind = PixelKind::Byte;
  clip.label = label;
  clip.clip_id = clip_file_stem(synthetic_word(label), index);
  clip.boundary = WordBoundary{start, end};
  clip.pixels.resize(static_cast<std::size_t>(T * H * W * C));

  static constexpr double kBackground[3] = {150.0, 110.0, 95.0};
  static constexpr double kLips[3] = {190.0, 60.0, 80.0};
  for (std::int64_t t = 0; t < T; ++t) {
    const double env = (t >= start && t <= end) ? 1.0 : 0.35;
    const double tau = static_cast<double>(t) / static_cast<double>(T);
    const double s = std::sin(2.0 * pi * motion_freq * tau + phase);
    const double cx = cx0 + amp * env * std::cos(theta) * s;
    const double cy = cy0 + amp * env * std::sin(theta) * s;
    const double rx = 0.16 * static_cast<double>(W);
    const double ry = 0.08 * static_cast<double>(H) *
                      (1.0 + 0.6 * env * std::sin(2.0 * pi * open_freq * tau + 0.5 * phase));
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx;
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double r = std::sqrt(dx * dx + dy * dy);
        const double m = 1.0 / (1.0 + std::exp(6.0 * (r - 1.0)));
        const double shade = 8.0 * (static_cast<double>(y) / static_cast<double>(H) - 0.5);
        for (std::int64_t c = 0; c < C; ++c) {
          const double bg = kBackground[c % 3] + shade;
          const double v = bg + m * (kLips[c % 3] - bg) + brightness + 10.0 * rng::normal(g);
          clip.pixels[clip.offset(t, y, x, c)] = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
        }
      }
  }
  return clip;
}

std::string encode_clip(const Clip& clip) {
  std::vector<std::uint8_t> bytes(clip.pixels.size());
  container::Record rec;
  const Shape shape{clip.frames, clip.height, clip.width, clip.channels};
  if (clip.kind == PixelKind::Byte) {
    std::transform(clip.pixels.begin(), clip.pixels.end(), bytes.begin(),
                   [](float v) { return static_cast<std::uint8_t>(v); });
    rec = container::from_u8(shape, "THWC", bytes);
  } else {
    rec = container::from_f32(shape, "THWC", clip.pixels);
  }
  if (clip.boundary) rec.header.extra["boundary"] = {clip.boundary->start, clip.boundary->end};
  return container::encode(rec);
}

void write_clip(const Clip& clip, const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  const std::string bytes = encode_clip(clip);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

GenerationReport generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& root) {
  require(spec.num_classes >= 2, "synthetic spec: need at least 2 classes");
  require(spec.frames >= 5, "synthetic spec: need at least 5 frames");
  require(spec.height >= 16 && spec.width >= 16, "synthetic spec: H and W must be >= 16");
  require(spec.clips_per_class >= 1, "synthetic spec: clips_per_class must be >= 1");
  require(spec.channels == 1 || spec.channels == 3, "synthetic spec: channels must be 1 or 3");

  GenerationReport report;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) fail(ErrorKind::Io, "cannot create dataset root " + root.string());

  std::vector<std::string> names;
  for (std::int64_t c = 0; c < spec.num_classes; ++c) names.push_back(synthetic_word(c));

  for (const auto& split : split_names()) {
    const std::int64_t count = split_count(spec, split);
    for (std::int64_t c = 0; c < spec.num_classes; ++c) {
      const fs::path dir = root / names[c] / split;
      fs::create_directories(dir, ec);
      if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
      for (std::int64_t i = 0; i < count; ++i) {
        const Clip clip = render_synthetic_clip(spec, split, c, i);
        const fs::path path = dir / (clip.clip_id + kClipExtension);
        const std::string bytes = encode_clip(clip);
        if (fs::exists(path) && fs::file_size(path) == bytes.size()) {
          std::ifstream in(path, std::ios::binary);
          const std::string existing((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
          if (existing == bytes) {
            ++report.files_unchanged;
            continue;
          }
        }
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
        ++report.files_written;
      }
    }
    report.manifests.push_back(DatasetManifest{root, split, spec.num_classes,
                                               count * spec.num_classes, names});
  }
  return report;
}

LrwIndex index_lrw_layout(const fs::path& root, const std::string& split) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) fail(ErrorKind::Io, "dataset root not found: " + root.string());
  LrwIndex index;
  for (const auto& e : fs::directory_iterator(root, ec))
    if (e.is_directory()) index.class_names.push_back(e.path().filename().string());
  if (ec) fail(ErrorKind::Io, "cannot list " + root.string() + ": " + ec.message());
  if (index.class_names.empty()) fail(ErrorKind::Io, "no classes found under " + root.string());
  std::sort(index.class_names.begin(), index.class_names.end());

  for (std::size_t label = 0; label < index.class_names.size(); ++label) {
    const auto& word = index.class_names[label];
    const fs::path dir = root / word / split;
    if (!fs::is_directory(dir, ec))
      fail(ErrorKind::Io, "missing split directory " + dir.string());
    std::vector<ClipEntry> found;
    for (const auto& f : fs::directory_iterator(dir, ec)) {
      if (!f.is_regular_file() || f.path().extension() != kClipExtension) continue;
      found.push_back({f.path(), word, f.path().stem().string(), static_cast<std::int64_t>(label)});
    }
    std::sort(found.begin(), found.end(),
              [](const ClipEntry& a, const ClipEntry& b) { return a.clip_id < b.clip_id; });
    std::move(found.begin(), found.end(), std::back_inserter(index.entries));
  }
  return index;
}

Clip read_clip(const ClipEntry& entry) {
  const auto rec = container::read_file(entry.path.string());
  const auto& h = rec.header;
  if (h.shape.size() != 4 || (h.order != "THWC" && !h.order.empty()))
    fail(ErrorKind::Io, entry.path.string() + ": expected a THWC clip, got " + shape_str(h.shape));
  Clip clip;
  clip.frames = h.shape[0];
  clip.height = h.shape[1];
  clip.width = h.shape[2];
  clip.channels = h.shape[3];
  clip.kind = h.dtype == container::DType::U8 ? PixelKind::Byte : PixelKind::Unit;
  clip.pixels = container::to_f32(rec);
  clip.label = entry.label;
  clip.clip_id = entry.clip_id;
  if (h.extra.contains("boundary")) {
    const auto& b = h.extra["boundary"];
    if (!b.is_array() || b.size() != 2) fail(ErrorKind::Io, entry.path.string() + ": malformed boundary");
    clip.boundary = WordBoundary{b[0].get<std::int64_t>(), b[1].get<std::int64_t>()};
  }
  return clip;
}

DatasetManifest manifest_for(const fs::path& root, const std::string& split) {
  const auto index = index_lrw_layout(root, split);
  return DatasetManifest{root, split, static_cast<std::int64_t>(index.class_names.size()),
                         static_cast<std::int64_t>(index.entries.size()), index.class_names};
}

ClipReader::ClipReader(const fs::path& root, const std::string& split, std::int64_t expected_frames)
    : index_(index_lrw_layout(root, split)), expected_frames_(expected_frames) {}

std::optional<Clip> ClipReader::next() {
  while (pos_ < index_.entries.size()) {
    Clip clip = read_clip(index_.entries[pos_++]);
    if (clip.frames != expected_frames_) {
      ++skipped_;
      std::cerr << "warning: skipping " << clip.clip_id << ": " << clip.frames << " frames, expected "
                << expected_frames_ << "\n";
      continue;
    }
    return clip;
  }
  return std::nullopt;
}

std::vector<ClipEntry> usable_entries(const LrwIndex& index, std::int64_t expected_frames,
                                      std::int64_t* skipped) {
  std::vector<ClipEntry> out;
  std::int64_t n_skipped = 0;
  for (const auto& e : index.entries) {
    const auto h = container::read_file_header(e.path.string());
    if (h.shape.empty() || h.shape[0] != expected_frames) {
      ++n_skipped;
      std::cerr << "warning: skipping " << e.clip_id << ": frame count mismatch\n";
      continue;
    }
    out.push_back(e);
  }
  if (skipped) *skipped = n_skipped;
  return out;
}

}  // namespace spotfast::data
