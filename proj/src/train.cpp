#include "spotfast/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>

#include "spotfast/container.hpp"
#include "spotfast/error.hpp"
#include "spotfast/rng.hpp"
#include "spotfast/windowing.hpp"

namespace spotfast::train {

namespace fs = std::filesystem;
using nlohmann::json;

Var label_smoothed_ce(const Var& logits, std::span<const std::int64_t> targets, double eps) {
  const Var loss = ops::label_smoothed_ce(logits, targets, eps);
  if (!std::isfinite(loss.value()[0])) fail(ErrorKind::Numeric, "label_smoothed_ce: non-finite loss");
  return loss;
}

double cosine_warm_restart_lr(double progress, double lr0, const ScheduleConfig& s) {
  require(progress >= 0.0, "cosine_warm_restart_lr: progress must be non-negative");
  double t_cur = 0.0, t_i = s.t0;
  if (s.t_mul == 1.0) {
    t_cur = std::fmod(progress, s.t0);
  } else {
    const double n = std::floor(std::log(progress / s.t0 * (s.t_mul - 1.0) + 1.0) / std::log(s.t_mul));
    t_i = s.t0 * std::pow(s.t_mul, n);
    t_cur = progress - s.t0 * (std::pow(s.t_mul, n) - 1.0) / (s.t_mul - 1.0);
  }
  return s.eta_min + 0.5 * (lr0 - s.eta_min) * (1.0 + std::cos(std::numbers::pi * t_cur / t_i));
}

double warmup_lr(std::int64_t step, std::int64_t warmup_steps, double scheduled_lr) {
  require(step >= 0, "warmup_lr: step must be non-negative");
  if (warmup_steps <= 0 || step >= warmup_steps) return scheduled_lr;
  return scheduled_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

double plateau_multiplier(std::span<const double> val_losses, double factor, std::int64_t patience) {
  double mult = 1.0, best = std::numeric_limits<double>::infinity();
  std::int64_t stale = 0;
  for (double v : val_losses) {
    if (v < best) {
      best = v;
      stale = 0;
    } else if (++stale >= patience) {
      mult /= factor;
      stale = 0;
    }
  }
  return mult;
}

double plateau_reduce(double lr, std::span<const double> val_losses, double factor, std::int64_t patience) {
  require(!val_losses.empty(), "plateau_reduce: empty history");
  return lr * plateau_multiplier(val_losses, factor, patience);
}

double scheduled_lr(const PhasePlan& plan, const ScheduleConfig& s, std::int64_t step, std::int64_t steps_per_epoch,
                    std::span<const double> val_losses) {
  const double progress = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  double lr = warmup_lr(step, plan.warmup_steps, cosine_warm_restart_lr(progress, plan.lr, s));
  if (plan.plateau) lr *= plateau_multiplier(val_losses, s.plateau_factor, s.plateau_patience);
  return lr;
}

Adam::Adam(const std::vector<std::pair<std::string, Var*>>& params, const AdamConfig& cfg, double weight_decay)
    : cfg_(cfg), weight_decay_(weight_decay) {
  for (const auto& [name, p] : params)
    slots_.push_back({name, p, Tensor(p->value().shape()), Tensor(p->value().shape()), 0});
}

void Adam::step(double lr) {
  for (Slot& s : slots_) {
    const Tensor& g = s.param->grad();
    if (g.numel() == 0) continue;
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    Tensor& w = s.param->mutable_value();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] + weight_decay_ * w[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.eps);
    }
  }
}

std::vector<data::Clip> load_split(const fs::path& root, const std::string& split, const RunConfig& cfg) {
  const data::LrwIndex index = data::index_lrw_layout(root, split);
  if (static_cast<std::int64_t>(index.class_names.size()) > cfg.model.num_classes)
    fail(ErrorKind::Usage, "dataset " + root.string() + " has " + std::to_string(index.class_names.size()) +
                               " classes but the model has " + std::to_string(cfg.model.num_classes));
  std::vector<data::Clip> clips;
  for (const auto& e : data::usable_entries(index, cfg.data.frames)) clips.push_back(data::read_clip(e));
  return clips;
}

data::Clip prepare_clip(const data::Clip& clip, const RunConfig& cfg, std::mt19937_64* rng,
                        preprocess::AugmentParams* drawn) {
  data::Clip c = cfg.data.mouth_box ? preprocess::crop_mouth(clip, *cfg.data.mouth_box) : clip;
  if (cfg.data.grayscale && c.channels != 1) c = preprocess::to_grayscale(c);
  c = rng ? preprocess::train_augment(c, *rng, cfg.data.augment, drawn)
          : preprocess::eval_transform(c, cfg.data.augment);
  return preprocess::normalize(c);
}

std::uint64_t clip_seed(std::uint64_t seed, int phase, std::int64_t epoch, const std::string& clip_id) {
  return rng::mix({seed, static_cast<std::uint64_t>(phase), static_cast<std::uint64_t>(epoch),
                   rng::hash_string(clip_id)});
}

Batch assemble_batch(std::span<const data::Clip> prepared, std::int64_t window) {
  require(!prepared.empty(), "assemble_batch: empty batch");
  const data::Clip& first = prepared.front();
  const std::int64_t b = static_cast<std::int64_t>(prepared.size()), c = first.channels, t = first.frames;
  const std::int64_t h = first.height, w = first.width, plane = h * w;
  require(window >= 1 && window <= t, "assemble_batch: window longer than the clip");
  const std::int64_t start = windowing::window_start(t, window);
  Batch out{Tensor({b, c, window, h, w}), Tensor({b, c, t, h, w}), {}, {}};
  for (std::int64_t i = 0; i < b; ++i) {
    const data::Clip& clip = prepared[static_cast<std::size_t>(i)];
    require(clip.channels == c && clip.frames == t && clip.height == h && clip.width == w,
            "assemble_batch: clips differ in shape");
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t f = 0; f < t; ++f) {
        double* dst = out.full.ptr() + ((i * c + ch) * t + f) * plane;
        for (std::int64_t p = 0; p < plane; ++p) dst[p] = clip.pixels[static_cast<std::size_t>((f * plane + p) * c + ch)];
        if (f >= start && f < start + window)
          std::copy(dst, dst + plane, out.window.ptr() + ((i * c + ch) * window + (f - start)) * plane);
      }
    out.labels.push_back(clip.label);
    out.clip_ids.push_back(clip.clip_id);
  }
  return out;
}

std::int64_t argmax_row(const Tensor& logits, std::int64_t row) {
  const std::int64_t k = logits.dim(1);
  const double* z = logits.ptr() + row * k;
  return std::max_element(z, z + k) - z;  // first maximum
}

EvalResult evaluate(SpotFastModel& model, std::span<const data::Clip> clips, const RunConfig& cfg,
                    std::int64_t batch_size) {
  if (clips.empty()) fail(ErrorKind::State, "evaluate: the split holds no clips");
  require(batch_size >= 1, "evaluate: batch_size must be positive");
  const bool was_training = model.is_training();
  model.train(false);
  NoGradGuard no_grad;
  EvalResult r;
  double loss_sum = 0.0;
  for (std::size_t lo = 0; lo < clips.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(clips.size(), lo + static_cast<std::size_t>(batch_size));
    std::vector<data::Clip> prepared;
    for (std::size_t i = lo; i < hi; ++i) prepared.push_back(prepare_clip(clips[i], cfg, nullptr));
    const Batch batch = assemble_batch(prepared, cfg.model.backbone.window_size);
    const Var logits = model.forward(Var(batch.window), Var(batch.full));
    loss_sum += label_smoothed_ce(logits, batch.labels, cfg.data.label_smoothing).value()[0] *
                static_cast<double>(hi - lo);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      const std::int64_t pred = argmax_row(logits.value(), static_cast<std::int64_t>(i));
      r.predictions.push_back(pred);
      r.correct += pred == batch.labels[i];
    }
  }
  model.train(was_training);
  r.total = static_cast<std::int64_t>(clips.size());
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.loss = loss_sum / static_cast<double>(r.total);
  return r;
}

namespace {

constexpr std::string_view kCheckpointMagic = "SFCKPT01";

json meta_to_json(const CheckpointMeta& m) {
  return {{"config", m.config},         {"phase", m.phase},
          {"epochs_done", m.epochs_done}, {"step", m.step},
          {"phase_complete", m.phase_complete}, {"val_losses", m.val_losses}};
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.config = j.at("config");
  m.phase = j.at("phase").get<int>();
  m.epochs_done = j.at("epochs_done").get<std::int64_t>();
  m.step = j.at("step").get<std::int64_t>();
  m.phase_complete = j.at("phase_complete").get<bool>();
  m.val_losses = j.at("val_losses").get<std::vector<double>>();
  return m;
}

container::Record tensor_record(const std::string& name, const std::string& kind, const Tensor& t) {
  container::Record r = container::from_f64(t.shape(), "row-major", t.data());
  r.header.extra["name"] = name;
  r.header.extra["kind"] = kind;
  return r;
}

std::vector<container::Record> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read checkpoint " + path.string());
  std::string magic(kCheckpointMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic) fail(ErrorKind::Io, path.string() + " is not a spotfast checkpoint");
  std::vector<container::Record> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(container::read(in));
  if (out.empty() || out.front().header.extra.value("kind", "") != "meta")
    fail(ErrorKind::Io, "checkpoint " + path.string() + " lacks its metadata record");
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& path, SpotFastModel& model, const CheckpointMeta& meta, Adam* adam) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    container::Record head = container::from_f64({0}, "none", {});
    head.header.extra["kind"] = "meta";
    head.header.extra["meta"] = meta_to_json(meta);
    container::write(out, head);
    for (const auto& [name, p] : model.named_parameters()) container::write(out, tensor_record(name, "param", p->value()));
    for (const auto& [name, b] : model.named_buffers()) container::write(out, tensor_record(name, "buffer", *b));
    if (adam)
      for (const auto& s : adam->slots()) {
        container::Record m = tensor_record(s.name, "adam_m", s.m);
        m.header.extra["t"] = s.t;
        container::write(out, m);
        container::write(out, tensor_record(s.name, "adam_v", s.v));
      }
    if (!out) fail(ErrorKind::Io, "failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read checkpoint " + path.string());
  std::string magic(kCheckpointMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic) fail(ErrorKind::Io, path.string() + " is not a spotfast checkpoint");
  const container::Header h = container::read_header(in);
  if (h.extra.value("kind", "") != "meta") fail(ErrorKind::Io, "checkpoint " + path.string() + " lacks its metadata");
  return meta_from_json(json::parse(h.extra.at("meta").dump()));
}

std::vector<TensorEntry> read_checkpoint_tensors(const fs::path& path) {
  std::vector<TensorEntry> out;
  const auto records = read_records(path);
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& h = records[i].header;
    out.push_back({h.extra.value("name", ""), h.extra.value("kind", ""), Tensor(h.shape, container::to_f64(records[i]))});
  }
  return out;
}

CheckpointMeta load_checkpoint(const fs::path& path, SpotFastModel& model, Adam* adam) {
  const auto records = read_records(path);
  std::map<std::string, Tensor*> params, buffers;
  for (const auto& [name, p] : model.named_parameters()) params[name] = &p->mutable_value();
  for (const auto& [name, b] : model.named_buffers()) buffers[name] = b;
  std::map<std::string, Adam::Slot*> slots;
  if (adam)
    for (auto& s : adam->slots()) slots[s.name] = &s;
  std::size_t restored = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& h = records[i].header;
    const std::string name = h.extra.value("name", ""), kind = h.extra.value("kind", "");
    Tensor* dst = nullptr;
    if (kind == "param" || kind == "buffer") {
      auto& table = kind == "param" ? params : buffers;
      auto it = table.find(name);
      if (it == table.end()) fail(ErrorKind::State, "checkpoint " + path.string() + " holds unknown " + kind + " " + name);
      dst = it->second;
      ++restored;
    } else if ((kind == "adam_m" || kind == "adam_v") && adam) {
      auto it = slots.find(name);
      if (it == slots.end()) continue;  // optimizer of a different parameter group
      dst = kind == "adam_m" ? &it->second->m : &it->second->v;
      if (kind == "adam_m") it->second->t = h.extra.value("t", std::int64_t{0});
    } else {
      continue;
    }
    if (dst->shape() != h.shape)
      fail(ErrorKind::State, "checkpoint tensor " + name + " has shape " + shape_str(h.shape) + ", model expects " +
                                 shape_str(dst->shape()));
    *dst = Tensor(h.shape, container::to_f64(records[i]));
  }
  if (restored != params.size() + buffers.size())
    fail(ErrorKind::State, "checkpoint " + path.string() + " does not cover every model tensor");
  return meta_from_json(json::parse(records.front().header.extra.at("meta").dump()));
}

std::unique_ptr<SpotFastModel> build_model(const RunConfig& cfg) {
  std::mt19937_64 g(rng::mix({cfg.seed, rng::hash_string("init")}));
  return std::make_unique<SpotFastModel>(cfg.model, g);
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::mt19937_64 g(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(p[i - 1], p[static_cast<std::size_t>(rng::uniform_int(g, 0, static_cast<std::int64_t>(i) - 1))]);
  return p;
}

// Non-throwing probe: a missing val split just disables validation.
bool has_split(const fs::path& root, const std::string& split) {
  std::error_code ec;
  bool any = false;
  for (const auto& d : fs::directory_iterator(root, ec)) {
    if (!d.is_directory()) continue;
    if (!fs::is_directory(d.path() / split)) return false;
    any = true;
  }
  return any && !ec;
}

std::string number_or_string(double v) { return std::isfinite(v) ? json(v).dump() : json(std::to_string(v)).dump(); }

[[noreturn]] void numeric_abort(const fs::path& run_dir, int phase, std::int64_t step, std::int64_t epoch, double lr,
                                const Batch& batch, SpotFastModel& model, const std::string& what) {
  json dump;
  dump["phase"] = phase;
  dump["step"] = step;
  dump["epoch"] = epoch;
  dump["lr"] = lr;
  dump["error"] = what;
  dump["clip_ids"] = batch.clip_ids;
  dump["labels"] = batch.labels;
  json norms = json::object();
  for (const auto& [name, p] : model.named_parameters()) {
    double s = 0;
    for (double v : p->value().data()) s += v * v;
    norms[name] = std::isfinite(s) ? json(std::sqrt(s)) : json("non-finite");
  }
  dump["param_norms"] = norms;
  const fs::path path = run_dir / ("diagnostic_phase" + std::to_string(phase) + ".json");
  std::ofstream(path) << dump.dump(2) << "\n";
  fail(ErrorKind::Numeric, what + " at phase " + std::to_string(phase) + " step " + std::to_string(step) +
                               "; diagnostics written to " + path.string());
}

}  // namespace

PhaseResult run_phase(const RunConfig& cfg, int phase, const RunOptions& opts) {
  if (phase < 1 || phase > 3) fail(ErrorKind::Usage, "phase must be 1, 2 or 3");
  cfg.validate();
  const PhasePlan& plan = cfg.phase(phase);
  std::error_code ec;
  fs::create_directories(opts.run_dir, ec);
  if (ec || !fs::is_directory(opts.run_dir))
    fail(ErrorKind::Io, "cannot create run directory " + opts.run_dir.string());

  auto model = build_model(cfg);
  model->set_use_transformer(plan.use_transformer);
  model->set_backbone_frozen(plan.freeze_backbone);
  std::vector<std::pair<std::string, Var*>> trainable;
  for (const auto& np : model->named_parameters())
    if (!(plan.freeze_backbone && np.first.rfind("backbone.", 0) == 0)) trainable.push_back(np);
  Adam adam(trainable, cfg.adam, plan.weight_decay);

  CheckpointMeta state;
  state.config = json::parse(config_to_json(cfg).dump());
  state.phase = phase;
  bool resuming = false;
  std::optional<fs::path> source = opts.resume;
  if (!source && phase > 1) source = phase_checkpoint(opts.run_dir, phase - 1);
  if (source) {
    if (!fs::exists(*source))
      fail(ErrorKind::State, "phase " + std::to_string(phase) + " needs checkpoint " + source->string() +
                                 ", which does not exist");
    const CheckpointMeta m = read_checkpoint_meta(*source);
    if (m.phase == phase && !m.phase_complete) {
      resuming = true;
      const CheckpointMeta loaded = load_checkpoint(*source, *model, &adam);
      state.epochs_done = loaded.epochs_done;
      state.step = loaded.step;
      state.val_losses = loaded.val_losses;
    } else if (m.phase == phase - 1 && m.phase_complete) {
      load_checkpoint(*source, *model);
    } else {
      fail(ErrorKind::State, "checkpoint " + source->string() + " holds " +
                                 (m.phase_complete ? "finished" : "unfinished") + " phase " + std::to_string(m.phase) +
                                 "; phase " + std::to_string(phase) + " needs finished phase " +
                                 std::to_string(phase - 1) + " or unfinished phase " + std::to_string(phase));
    }
  }

  const std::vector<data::Clip> train_clips = load_split(opts.data_root, "train", cfg);
  if (train_clips.empty()) fail(ErrorKind::State, "no usable training clips under " + opts.data_root.string());
  std::vector<data::Clip> val_clips;
  if (has_split(opts.data_root, "val")) val_clips = load_split(opts.data_root, "val", cfg);
  if (plan.plateau && val_clips.empty())
    fail(ErrorKind::State, "phase " + std::to_string(phase) + " reduces on plateau and needs a val split");

  const std::int64_t n = static_cast<std::int64_t>(train_clips.size());
  const std::int64_t steps_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  const auto mode = resuming ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(metrics_path(opts.run_dir, phase), std::ios::out | mode);
  std::ofstream epochs(epochs_path(opts.run_dir, phase), std::ios::out | mode);
  std::ofstream augment_log;
  if (opts.log_augment)
    augment_log.open(opts.run_dir / ("augment_phase" + std::to_string(phase) + ".jsonl"), std::ios::out | mode);
  if (!metrics || !epochs) fail(ErrorKind::Io, "cannot write metrics under " + opts.run_dir.string());

  PhaseResult result;
  result.phase = phase;
  result.metrics = metrics_path(opts.run_dir, phase);
  const fs::path partial = opts.run_dir / ("phase" + std::to_string(phase) + ".partial.ckpt");

  for (std::int64_t epoch = state.epochs_done; epoch < plan.epochs; ++epoch) {
    const auto order = permutation(train_clips.size(), rng::mix({cfg.seed, static_cast<std::uint64_t>(phase),
                                                                 static_cast<std::uint64_t>(epoch), 0x5ca1ab1eULL}));
    model->train(true);
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<data::Clip> prepared;
      for (std::int64_t i = b * plan.batch_size; i < std::min(n, (b + 1) * plan.batch_size); ++i) {
        const data::Clip& clip = train_clips[order[static_cast<std::size_t>(i)]];
        std::mt19937_64 g(clip_seed(cfg.seed, phase, epoch, clip.clip_id));
        preprocess::AugmentParams drawn;
        prepared.push_back(prepare_clip(clip, cfg, &g, &drawn));
        if (augment_log.is_open()) augment_log << preprocess::augment_record(clip.clip_id, drawn).dump() << "\n";
      }
      const Batch batch = assemble_batch(prepared, cfg.model.backbone.window_size);
      const double lr = scheduled_lr(plan, cfg.schedule, state.step, steps_per_epoch, state.val_losses);
      model->reseed(rng::mix({cfg.seed, static_cast<std::uint64_t>(phase), static_cast<std::uint64_t>(state.step)}));
      model->zero_grad();
      const Var logits = model->forward(Var(batch.window), Var(batch.full));
      Var loss;
      try {
        loss = label_smoothed_ce(logits, batch.labels, cfg.data.label_smoothing);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numeric) throw;
        numeric_abort(opts.run_dir, phase, state.step, epoch, lr, batch, *model, e.what());
      }
      loss.backward();
      adam.step(lr);
      std::int64_t hits = 0;
      for (std::size_t i = 0; i < batch.labels.size(); ++i)
        hits += argmax_row(logits.value(), static_cast<std::int64_t>(i)) == batch.labels[i];
      const double bsz = static_cast<double>(batch.labels.size());
      loss_sum += loss.value()[0] * bsz;
      correct += hits;
      result.final_loss = loss.value()[0];
      result.final_batch_acc = static_cast<double>(hits) / bsz;
      metrics << "{\"phase\":" << phase << ",\"step\":" << state.step << ",\"epoch\":" << epoch
              << ",\"lr\":" << number_or_string(lr) << ",\"loss\":" << number_or_string(loss.value()[0])
              << ",\"acc\":" << number_or_string(result.final_batch_acc) << "}\n";
      ++state.step;
    }
    metrics.flush();

    json record;
    record["phase"] = phase;
    record["epoch"] = epoch;
    record["steps"] = state.step;
    record["train_loss"] = loss_sum / static_cast<double>(n);
    record["train_batch_acc"] = static_cast<double>(correct) / static_cast<double>(n);
    if (!val_clips.empty()) {
      const EvalResult v = evaluate(*model, val_clips, cfg, plan.batch_size);
      record["val_loss"] = v.loss;
      record["val_acc"] = v.accuracy;
      result.val_accuracy = v.accuracy;
      if (plan.plateau) state.val_losses.push_back(v.loss);
    }
    state.epochs_done = epoch + 1;
    state.phase_complete = state.epochs_done == plan.epochs;
    if (state.phase_complete) {
      result.train_accuracy = evaluate(*model, train_clips, cfg, plan.batch_size).accuracy;
      record["train_eval_acc"] = result.train_accuracy;
    }
    epochs << record.dump() << "\n";
    epochs.flush();
    save_checkpoint(state.phase_complete ? phase_checkpoint(opts.run_dir, phase) : partial, *model, state, &adam);
    if (opts.verbose) std::cerr << "phase " << phase << " epoch " << epoch + 1 << "/" << plan.epochs << " " << record.dump() << "\n";
  }

  if (!state.phase_complete) {
    // Zero-epoch phase.
    state.phase_complete = true;
    result.train_accuracy = evaluate(*model, train_clips, cfg, plan.batch_size).accuracy;
    save_checkpoint(phase_checkpoint(opts.run_dir, phase), *model, state, &adam);
  }
  fs::remove(partial, ec);
  result.steps = state.step;
  result.checkpoint = phase_checkpoint(opts.run_dir, phase);
  return result;
}

}  // namespace spotfast::train
