#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spotfast/config.hpp"
#include "spotfast/data.hpp"
#include "spotfast/model.hpp"

namespace spotfast::train {

/// Mean over the batch of -sum_i q_i log softmax(logits)_i with
/// q = (1 - eps) onehot + eps / K. Non-finite logits throw Error(Numeric).
Var label_smoothed_ce(const Var& logits, std::span<const std::int64_t> targets, double eps);

/// Cosine annealing with warm restarts at fractional epoch `progress`.
double cosine_warm_restart_lr(double progress, double lr0, const ScheduleConfig& s);

/// Linear ramp from 0; warmup_steps == 0 disables it.
double warmup_lr(std::int64_t step, std::int64_t warmup_steps, double scheduled_lr);

/// Multiplier left after replaying `val_losses`: each run of `patience`
/// evaluations without a new best divides by `factor` and restarts the count.
double plateau_multiplier(std::span<const double> val_losses, double factor, std::int64_t patience);
double plateau_reduce(double lr, std::span<const double> val_losses, double factor, std::int64_t patience);

/// Learning rate used for update `step` of a phase.
double scheduled_lr(const PhasePlan& plan, const ScheduleConfig& s, std::int64_t step, std::int64_t steps_per_epoch,
                    std::span<const double> val_losses);

/// Adam with L2 weight decay added to the gradient. Parameters whose
/// gradient is empty are skipped and keep their step count.
class Adam {
 public:
  struct Slot {
    std::string name;
    Var* param = nullptr;
    Tensor m, v;
    std::int64_t t = 0;
  };

  Adam(const std::vector<std::pair<std::string, Var*>>& params, const AdamConfig& cfg, double weight_decay);
  void step(double lr);
  std::vector<Slot>& slots() { return slots_; }

 private:
  AdamConfig cfg_;
  double weight_decay_;
  std::vector<Slot> slots_;
};

/// Loads every usable clip of a split into memory, in index order.
std::vector<data::Clip> load_split(const std::filesystem::path& root, const std::string& split, const RunConfig& cfg);

/// Mouth crop, grayscale, augmentation (when `rng` is set) or eval transform,
/// then normalization.
data::Clip prepare_clip(const data::Clip& clip, const RunConfig& cfg, std::mt19937_64* rng,
                        preprocess::AugmentParams* drawn = nullptr);

/// Seed of the augmentation stream for one clip in one epoch.
std::uint64_t clip_seed(std::uint64_t seed, int phase, std::int64_t epoch, const std::string& clip_id);

struct Batch {
  Tensor window;  // [B,C,w,S,S]
  Tensor full;    // [B,C,T,S,S]
  std::vector<std::int64_t> labels;
  std::vector<std::string> clip_ids;
};

/// Stacks prepared THWC clips into channel-first tensors.
Batch assemble_batch(std::span<const data::Clip> prepared, std::int64_t window);

struct EvalResult {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<std::int64_t> predictions;
};

/// Index of the largest entry; ties go to the lowest index.
std::int64_t argmax_row(const Tensor& logits, std::int64_t row);

/// Eval-mode top-1 accuracy and mean smoothed loss. Empty input throws Error(State).
EvalResult evaluate(SpotFastModel& model, std::span<const data::Clip> clips, const RunConfig& cfg,
                    std::int64_t batch_size);

struct CheckpointMeta {
  nlohmann::json config;
  int phase = 1;
  std::int64_t epochs_done = 0;
  std::int64_t step = 0;
  bool phase_complete = false;
  std::vector<double> val_losses;
};

/// One file: magic "SFCKPT01", a metadata record, then one f64 tensor
/// record per parameter ("param"), buffer ("buffer") and optional Adam
/// moment ("adam_m", "adam_v"), each named in its header.
void save_checkpoint(const std::filesystem::path& path, SpotFastModel& model, const CheckpointMeta& meta,
                     Adam* adam = nullptr);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
/// Restores parameters and buffers (and Adam state when given and present).
/// Missing or misshapen tensors throw Error(State).
CheckpointMeta load_checkpoint(const std::filesystem::path& path, SpotFastModel& model, Adam* adam = nullptr);

struct TensorEntry {
  std::string name;
  std::string kind;
  Tensor value;
};
std::vector<TensorEntry> read_checkpoint_tensors(const std::filesystem::path& path);

std::unique_ptr<SpotFastModel> build_model(const RunConfig& cfg);

struct RunOptions {
  std::filesystem::path data_root;
  std::filesystem::path run_dir;
  /// Starting checkpoint; defaults to run_dir/phase{N-1}.ckpt for phases 2 and 3.
  std::optional<std::filesystem::path> resume;
  bool log_augment = false;
  bool verbose = false;
};

struct PhaseResult {
  int phase = 1;
  std::int64_t steps = 0;
  double final_loss = 0.0;
  double final_batch_acc = 0.0;
  /// Eval-mode accuracy on the train split after the last epoch.
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
};

inline std::filesystem::path phase_checkpoint(const std::filesystem::path& run_dir, int phase) {
  return run_dir / ("phase" + std::to_string(phase) + ".ckpt");
}
inline std::filesystem::path metrics_path(const std::filesystem::path& run_dir, int phase) {
  return run_dir / ("metrics_phase" + std::to_string(phase) + ".jsonl");
}
inline std::filesystem::path epochs_path(const std::filesystem::path& run_dir, int phase) {
  return run_dir / ("epochs_phase" + std::to_string(phase) + ".jsonl");
}

/// Runs one training phase end to end. Phase 2 needs a finished phase-1
/// checkpoint and phase 3 a finished phase-2 one (Error(State) otherwise).
/// A non-finite loss writes run_dir/diagnostic_phase{N}.json and throws
/// Error(Numeric).
PhaseResult run_phase(const RunConfig& cfg, int phase, const RunOptions& opts);

}  // namespace spotfast::train
