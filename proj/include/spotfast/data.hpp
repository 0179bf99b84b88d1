#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spotfast::data {

enum class PixelKind {
  Byte,          // integral values in [0, 255]
  Unit,          // floats in [0, 1]
  Standardized,  // after normalize()
};

struct WordBoundary {
  std::int64_t start = 0;
  std::int64_t end = 0;  // inclusive
};

/// One video sample. Frames are stored THWC.
struct Clip {
  std::int64_t frames = 0, height = 0, width = 0, channels = 0;
  std::vector<float> pixels;
  PixelKind kind = PixelKind::Byte;
  std::int64_t label = 0;
  std::string clip_id;
  std::optional<WordBoundary> boundary;

  std::size_t offset(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return static_cast<std::size_t>(((t * height + y) * width + x) * channels + c);
  }
  float at(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[offset(t, y, x, c)];
  }
  std::size_t frame_size() const { return static_cast<std::size_t>(height * width * channels); }

  /// Throws std::invalid_argument when a Clip invariant is violated.
  void validate(std::int64_t num_classes) const;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::int64_t num_classes = 0;
  std::int64_t clip_count = 0;
  std::vector<std::string> class_names;
};

struct SyntheticSpec {
  std::int64_t num_classes = 10;
  std::int64_t clips_per_class = 50;
  // Clips per class in each of val/test; negative means max(2, clips_per_class / 5).
  std::int64_t heldout_per_class = -1;
  std::int64_t frames = 29;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t channels = 3;
  std::uint64_t seed = 7;
};

struct GenerationReport {
  std::vector<DatasetManifest> manifests;  // train, val, test
  std::int64_t files_written = 0;
  std::int64_t files_unchanged = 0;

  const DatasetManifest& train() const { return manifests.front(); }
  bool unchanged() const { return files_written == 0; }
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"train", "val", "test"};
  return names;
}

std::string synthetic_word(std::int64_t class_index);

/// Renders one synthetic clip. Pure function of (spec, split, class, index).
Clip render_synthetic_clip(const SyntheticSpec& spec, const std::string& split, std::int64_t label,
                           std::int64_t index);

/// Writes a synthetic dataset in the LRW layout under `root`. Files whose
/// bytes already match are left untouched and counted as unchanged.
GenerationReport generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& root);

struct ClipEntry {
  std::filesystem::path path;
  std::string word;
  std::string clip_id;
  std::int64_t label = 0;
};

struct LrwIndex {
  std::vector<std::string> class_names;
  std::vector<ClipEntry> entries;  // sorted by (word, clip_id)
};

inline constexpr const char* kClipExtension = ".sft";

/// Enumerates root/<WORD>/<split>/<WORD>_<nnnnn>.sft. Throws Error(Io) on an
/// empty root ("no classes found") or a class missing the split directory.
LrwIndex index_lrw_layout(const std::filesystem::path& root, const std::string& split);

Clip read_clip(const ClipEntry& entry);
void write_clip(const Clip& clip, const std::filesystem::path& path);
std::string encode_clip(const Clip& clip);

DatasetManifest manifest_for(const std::filesystem::path& root, const std::string& split);

/// Single-consumer clip iterator in lexicographic order. Clips whose frame
/// count differs from `expected_frames` are skipped and counted.
class ClipReader {
 public:
  ClipReader(const std::filesystem::path& root, const std::string& split,
             std::int64_t expected_frames = 29);

  std::optional<Clip> next();
  std::int64_t skipped() const { return skipped_; }
  const LrwIndex& index() const { return index_; }

 private:
  LrwIndex index_;
  std::int64_t expected_frames_;
  std::size_t pos_ = 0;
  std::int64_t skipped_ = 0;
};

/// Index entries whose header frame count equals `expected_frames`; skipped
/// entries are reported on stderr and counted in `skipped`.
std::vector<ClipEntry> usable_entries(const LrwIndex& index, std::int64_t expected_frames,
                                      std::int64_t* skipped = nullptr);

}  // namespace spotfast::data
