// spotfast command-line entry point. JSON results go to stdout, progress and
// errors to stderr. Exit codes: 0 ok, 1 usage, 2 I/O, 3 state, 4 numeric.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "spotfast/config.hpp"
#include "spotfast/container.hpp"
#include "spotfast/data.hpp"
#include "spotfast/error.hpp"
#include "spotfast/shapes.hpp"
#include "spotfast/train.hpp"
#include "spotfast/windowing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spotfast;

namespace {

json manifest_json(const data::DatasetManifest& m) {
  return {{"root", m.root.string()},
          {"split", m.split},
          {"num_classes", m.num_classes},
          {"clip_count", m.clip_count},
          {"class_names", m.class_names}};
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

struct ConfigArgs {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config overlaid on the preset (see --help of the main command)");
    cmd->add_option("--preset", preset, "paper or desk (default: the file's \"preset\", else desk)");
    cmd->add_option("--seed", seed, "global seed");
  }

  RunConfig load() const {
    RunConfig c = config.empty() ? preset_config(preset.empty() ? "desk" : preset) : load_config(config, preset);
    if (seed) c.seed = *seed;
    return c;
  }
};

RunConfig config_of_checkpoint(const fs::path& ckpt) {
  return config_from_json(train::read_checkpoint_meta(ckpt).config);
}

int gen_data(std::int64_t classes, std::int64_t per_class, std::int64_t heldout, std::int64_t frames,
             std::int64_t size, std::int64_t channels, std::uint64_t seed, const std::string& out) {
  data::SyntheticSpec spec;
  spec.num_classes = classes;
  spec.clips_per_class = per_class;
  spec.heldout_per_class = heldout;
  spec.frames = frames;
  spec.height = spec.width = size;
  spec.channels = channels;
  spec.seed = seed;
  const auto report = data::generate_synthetic_dataset(spec, out);
  json j;
  j["status"] = report.unchanged() ? "unchanged" : "written";
  j["files_written"] = report.files_written;
  j["files_unchanged"] = report.files_unchanged;
  j["manifests"] = json::array();
  for (const auto& m : report.manifests) j["manifests"].push_back(manifest_json(m));
  emit(j);
  return 0;
}

int window_stats(const std::string& root, const std::string& split, std::optional<double> mean,
                 std::optional<double> stddev, std::int64_t frames) {
  windowing::BoundaryStats stats;
  if (mean || stddev) {
    if (!mean || !stddev) fail(ErrorKind::Usage, "--mean and --std go together");
    stats.mean = *mean;
    stats.std = *stddev;
  } else {
    if (root.empty()) fail(ErrorKind::Usage, "give --data DIR or --mean/--std");
    const data::LrwIndex index = data::index_lrw_layout(root, split);
    std::vector<std::int64_t> durations;
    for (const auto& e : index.entries) {
      const container::Header h = container::read_file_header(e.path.string());
      if (!h.extra.contains("boundary"))
        fail(ErrorKind::Io, "clip " + e.path.string() + " has no word boundary metadata");
      const auto& b = h.extra["boundary"];
      durations.push_back(b[1].get<std::int64_t>() - b[0].get<std::int64_t>() + 1);
    }
    if (durations.empty()) fail(ErrorKind::Io, "no clips under " + root + " split " + split);
    stats = windowing::boundary_stats(durations);
  }
  emit(windowing::to_json(stats, windowing::candidate_windows(stats, frames)));
  return 0;
}

int train_cmd(const ConfigArgs& ca, const train::RunOptions& opts, int phase, std::optional<std::int64_t> epochs) {
  RunConfig cfg = ca.load();
  if (epochs) cfg.phases.at(static_cast<std::size_t>(phase - 1)).epochs = *epochs;
  const auto r = train::run_phase(cfg, phase, opts);
  json j;
  j["phase"] = r.phase;
  j["steps"] = r.steps;
  j["final_loss"] = r.final_loss;
  j["final_batch_acc"] = r.final_batch_acc;
  j["train_accuracy"] = r.train_accuracy;
  j["val_accuracy"] = r.val_accuracy ? json(*r.val_accuracy) : json(nullptr);
  j["checkpoint"] = r.checkpoint.string();
  j["metrics"] = r.metrics.string();
  emit(j);
  return 0;
}

std::unique_ptr<SpotFastModel> model_from_checkpoint(const fs::path& ckpt, RunConfig& cfg) {
  cfg = config_of_checkpoint(ckpt);
  const auto meta = train::read_checkpoint_meta(ckpt);
  auto model = train::build_model(cfg);
  train::load_checkpoint(ckpt, *model);
  model->set_use_transformer(cfg.phase(meta.phase).use_transformer);
  return model;
}

int eval_cmd(const std::string& ckpt, const std::string& root, const std::string& split, std::int64_t batch) {
  RunConfig cfg;
  auto model = model_from_checkpoint(ckpt, cfg);
  const auto clips = train::load_split(root, split, cfg);
  const auto r = train::evaluate(*model, clips, cfg, batch);
  emit({{"checkpoint", ckpt}, {"split", split}, {"accuracy", r.accuracy}, {"correct", r.correct},
        {"total", r.total}, {"loss", r.loss}});
  return 0;
}

int memory_stats(const std::string& ckpt, const std::string& root, const std::string& split, std::int64_t batch) {
  RunConfig cfg;
  auto model = model_from_checkpoint(ckpt, cfg);
  if (!model->use_transformer())
    fail(ErrorKind::State, "checkpoint " + ckpt + " comes from a phase that bypasses the transformers");
  const auto clips = train::load_split(root, split, cfg);
  if (clips.empty()) fail(ErrorKind::State, "split " + split + " holds no clips");
  const std::size_t layer = static_cast<std::size_t>(cfg.model.transformer.memory_layer - 1);
  ProductKeyMemory* mems[2] = {model->transformer().spot_encoder().layer_module(layer).memory(),
                               model->transformer().fast_encoder().layer_module(layer).memory()};
  if (!mems[0] || !mems[1]) fail(ErrorKind::State, "the model has no product-key memory");
  std::vector<std::int64_t> hist[2] = {std::vector<std::int64_t>(static_cast<std::size_t>(mems[0]->rows()), 0),
                                       std::vector<std::int64_t>(static_cast<std::size_t>(mems[1]->rows()), 0)};
  model->train(false);
  NoGradGuard no_grad;
  for (std::size_t lo = 0; lo < clips.size(); lo += static_cast<std::size_t>(batch)) {
    std::vector<data::Clip> prepared;
    for (std::size_t i = lo; i < std::min(clips.size(), lo + static_cast<std::size_t>(batch)); ++i)
      prepared.push_back(train::prepare_clip(clips[i], cfg, nullptr));
    const auto b = train::assemble_batch(prepared, cfg.model.backbone.window_size);
    model->forward(Var(b.window), Var(b.full));
    for (int p = 0; p < 2; ++p) {
      const auto h = memory_usage_stats(mems[p]->last_indices(), mems[p]->rows());
      for (std::size_t i = 0; i < h.size(); ++i) hist[p][i] += h[i];
    }
  }
  emit({{"checkpoint", ckpt}, {"split", split}, {"clips", clips.size()}, {"layer", layer + 1},
        {"spot", usage_to_json(hist[0])}, {"fast", usage_to_json(hist[1])}});
  return 0;
}

int shapes_cmd(const ConfigArgs& ca, std::optional<std::int64_t> window, std::int64_t batch, bool no_transformer) {
  RunConfig cfg = ca.load();
  if (window) cfg.model.backbone.window_size = *window;
  const ShapeTrace trace = infer_shapes(cfg.model, batch, !no_transformer);
  nlohmann::ordered_json j;
  j["preset"] = cfg.preset;
  j["window"] = cfg.model.backbone.window_size;
  j["fused_width"] = fused_width(cfg.model);
  j["num_classes"] = cfg.model.num_classes;
  j["shapes"] = shapes_to_json(trace);
  std::cout << j.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SpotFast lipreading networks: data generation, training and diagnostics"};
  app.require_subcommand(1);
  app.footer("\n" + config_help_text());

  std::uint64_t seed = 7;
  std::int64_t classes = 10, per_class = 50, heldout = -1, frames = 29, size = 32, channels = 3;
  std::string out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset in the LRW layout");
  gen->add_option("--classes", classes, "number of word classes")->capture_default_str();
  gen->add_option("--per-class", per_class, "training clips per class")->capture_default_str();
  gen->add_option("--heldout-per-class", heldout, "val and test clips per class (-1: max(2, per-class/5))")
      ->capture_default_str();
  gen->add_option("--frames", frames, "frames per clip")->capture_default_str();
  gen->add_option("--size", size, "frame height and width")->capture_default_str();
  gen->add_option("--channels", channels, "1 or 3")->capture_default_str();
  gen->add_option("--seed", seed, "generator seed")->capture_default_str();
  gen->add_option("--out", out, "dataset root")->required();

  std::string root, split = "train";
  std::optional<double> mean, stddev;
  auto* ws = app.add_subcommand("window-stats", "word-boundary statistics and candidate window sizes");
  ws->add_option("--data", root, "dataset root with boundary metadata");
  ws->add_option("--split", split, "split to read")->capture_default_str();
  ws->add_option("--mean", mean, "use this mean duration instead of reading clips");
  ws->add_option("--std", stddev, "use this standard deviation instead of reading clips");
  ws->add_option("--frames", frames, "clip length that bounds the windows")->capture_default_str();
  std::uint64_t unused_seed = 0;
  ws->add_option("--seed", unused_seed, "accepted for uniformity; the command is deterministic");

  ConfigArgs train_cfg;
  train::RunOptions opts;
  int phase = 1;
  std::optional<std::int64_t> epochs;
  std::string resume, run_dir, data_dir;
  auto* tr = app.add_subcommand("train", "run one training phase");
  train_cfg.add(tr);
  tr->add_option("--data", data_dir, "dataset root")->required();
  tr->add_option("--run", run_dir, "run directory for checkpoints and metrics")->required();
  tr->add_option("--phase", phase, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
  tr->add_option("--resume", resume, "starting checkpoint (default: <run>/phase{N-1}.ckpt)");
  tr->add_option("--epochs", epochs, "override the phase's epoch count");
  tr->add_flag("--log-augment", opts.log_augment, "log per-clip augmentation parameters");
  tr->add_flag("--verbose", opts.verbose, "per-epoch progress on stderr");
  tr->footer("\n" + config_help_text());

  std::string ckpt;
  std::int64_t batch = 16;
  auto* ev = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ev->add_option("--data", root, "dataset root")->required();
  ev->add_option("--split", split, "split to evaluate (default test)");
  ev->add_option("--batch", batch, "evaluation batch size")->capture_default_str();
  ev->add_option("--seed", unused_seed, "accepted for uniformity; evaluation is deterministic");

  auto* ms = app.add_subcommand("memory-stats", "product-key memory usage histograms over a split");
  ms->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ms->add_option("--data", root, "dataset root")->required();
  ms->add_option("--split", split, "split to read")->capture_default_str();
  ms->add_option("--batch", batch, "batch size")->capture_default_str();
  ms->add_option("--seed", unused_seed, "accepted for uniformity; the command is deterministic");

  ConfigArgs shape_cfg;
  std::optional<std::int64_t> window;
  std::int64_t shape_batch = 1;
  bool no_transformer = false;
  auto* sh = app.add_subcommand("shapes", "tensor shapes of a forward pass, computed symbolically");
  shape_cfg.add(sh);
  sh->add_option("--window", window, "override the spot window size");
  sh->add_option("--batch", shape_batch, "batch size")->capture_default_str();
  sh->add_flag("--no-transformer", no_transformer, "phase-1 wiring without the transformers");

  auto* keys = app.add_subcommand("config-keys", "every config key with both preset defaults, as JSON");


  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
  }

  try {
    if (*gen) return gen_data(classes, per_class, heldout, frames, size, channels, seed, out);
    if (*ws) return window_stats(root, split, mean, stddev, frames);
    if (*tr) {
      opts.data_root = data_dir;
      opts.run_dir = run_dir;
      if (!resume.empty()) opts.resume = fs::path(resume);
      return train_cmd(train_cfg, opts, phase, epochs);
    }
    if (*ev) return eval_cmd(ckpt, root, ev->count("--split") ? split : "test", batch);
    if (*ms) return memory_stats(ckpt, root, split, batch);
    if (*sh) return shapes_cmd(shape_cfg, window, shape_batch, no_transformer);
    if (*keys) {
      json j = json::array();
      for (const auto& d : config_key_docs())
        j.push_back({{"key", d.key}, {"paper", json::parse(d.paper_default)}, {"desk", json::parse(d.desk_default)},
                     {"description", d.description}});
      emit(j);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Usage);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Numeric);
  }
  return 0;
}
