#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spotfast/model.hpp"
#include "spotfast/preprocess.hpp"

namespace spotfast {

struct DataConfig {
  std::int64_t frames = 29;
  bool grayscale = false;
  std::optional<preprocess::CropBox> mouth_box;
  preprocess::AugmentConfig augment;
  double label_smoothing = 0.1;
};

/// One training phase.
struct PhasePlan {
  int phase = 1;
  double lr = 2.5e-4;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 84;
  std::int64_t epochs = 10;
  std::int64_t warmup_steps = 2000;
  bool freeze_backbone = false;
  bool use_transformer = false;
  bool plateau = false;
};

struct ScheduleConfig {
  double t0 = 5.0;
  double t_mul = 1.0;
  double eta_min = 0.0;
  double plateau_factor = 2.0;
  std::int64_t plateau_patience = 1;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  std::array<PhasePlan, 3> phases;
  ScheduleConfig schedule;
  AdamConfig adam;

  const PhasePlan& phase(int p) const { return phases.at(static_cast<std::size_t>(p - 1)); }
  void validate() const;
};

RunConfig paper_preset();
RunConfig desk_preset();
/// Throws Error(Usage) for names other than "paper" and "desk".
RunConfig preset_config(const std::string& name);

nlohmann::ordered_json config_to_json(const RunConfig& cfg);
/// Parses a complete configuration object.
RunConfig config_from_json(const nlohmann::json& j);

/// Applies `patch` on top of `base`. Keys absent from `base` are rejected
/// with Error(Usage) naming the offending dotted path.
RunConfig overlay_config(const RunConfig& base, const nlohmann::json& patch);

/// Reads a JSON config file. Its "preset" key (or `preset_override`) picks
/// the base; the remaining keys are overlaid.
RunConfig load_config(const std::filesystem::path& file, const std::string& preset_override = "");

struct ConfigKeyDoc {
  std::string key;
  std::string paper_default;
  std::string desk_default;
  std::string description;
};

/// Every configuration key with both preset defaults.
std::vector<ConfigKeyDoc> config_key_docs();
std::string config_help_text();

}  // namespace spotfast
