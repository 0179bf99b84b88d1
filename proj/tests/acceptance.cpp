// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spotfast/config.hpp"
#include "spotfast/gradcheck.hpp"
#include "spotfast/shapes.hpp"
#include "spotfast/train.hpp"
#include "spotfast/windowing.hpp"

using namespace spotfast;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s  %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

Tensor window_of(const Tensor& full, std::int64_t w) {
  const Shape& s = full.shape();
  const std::int64_t start = windowing::window_start(s[2], w), plane = s[3] * s[4];
  Tensor out({s[0], s[1], w, s[3], s[4]});
  for (std::int64_t bc = 0; bc < s[0] * s[1]; ++bc)
    for (std::int64_t t = 0; t < w; ++t)
      for (std::int64_t p = 0; p < plane; ++p) out[(bc * w + t) * plane + p] = full[(bc * s[2] + start + t) * plane + p];
  return out;
}

// ---- product keys ------------------------------------------------------

Outcome product_key_exactness() {
  std::mt19937_64 g(2024);
  const std::int64_t ns[4] = {2, 4, 8, 16};
  const std::int64_t half = 4;
  int mismatches = 0, trials = 0, tie_trials = 0;
  const auto t0 = Clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t n = ns[trial % 4];
    const std::int64_t ks[3] = {1, 4, n * n};
    const std::int64_t k = std::min(ks[(trial / 4) % 3], n * n);
    // Every other trial uses small integers, which makes equal scores common.
    const bool ties = trial % 2 == 1;
    auto draw = [&] {
      return ties ? static_cast<double>(std::uniform_int_distribution<int>(-2, 2)(g))
                  : std::normal_distribution<double>(0.0, 1.0)(g);
    };
    Tensor sub1({n, half}), sub2({n, half});
    for (auto& v : sub1.data()) v = draw();
    for (auto& v : sub2.data()) v = draw();
    std::vector<double> q(2 * half);
    for (auto& v : q) v = draw();

    std::vector<std::pair<double, std::int64_t>> all;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::int64_t d = 0; d < half; ++d) s += q[d] * sub1[i * half + d];
        for (std::int64_t d = 0; d < half; ++d) s += q[half + d] * sub2[j * half + d];
        all.emplace_back(s, i * n + j);
      }
    std::sort(all.begin(), all.end(),
              [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    if (ties) {
      for (std::int64_t t = 1; t < k; ++t)
        if (all[t].first == all[t - 1].first) {
          ++tie_trials;
          break;
        }
    }
    const TopK got = topk_product_keys(q, sub1, sub2, k);
    bool ok = static_cast<std::int64_t>(got.indices.size()) == k;
    for (std::int64_t t = 0; ok && t < k; ++t)
      ok = got.indices[t] == all[t].second && std::abs(got.scores[t] - all[t].first) <= 1e-12;
    if (!ok) ++mismatches;
    ++trials;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0,
          fmt("%d trials, %d with tied scores in the top k, %d mismatches", trials, tie_trials, mismatches)};
}

// ---- gradient checks ---------------------------------------------------

std::string grad_line(const char* what, const GradCheckReport& r) {
  return fmt("%s %zu samples max rel %.2e (%zu set aside)", what, r.entries.size(), r.max_rel_error,
             r.unreliable.size());
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const ModelConfig desk = desk_preset().model;
  std::vector<std::pair<std::string, GradCheckReport>> reports;

  {
    std::mt19937_64 g(11);
    SpotFastBackbone net(desk.backbone, g);
    const Tensor full = Tensor::randn({1, 3, 29, 32, 32}, g, 1.0);
    const Tensor window = window_of(full, desk.backbone.window_size);
    const Tensor ws = Tensor::randn({1, desk.backbone.c_spot(), 7, 4, 4}, g, 1.0);
    const Tensor wf = Tensor::randn({1, desk.backbone.c_fast(), 29, 4, 4}, g, 1.0);
    GradCheckOptions opt;
    opt.samples = 120;
    reports.emplace_back("backbone", check_gradients(net.named_parameters(), [&] {
                           const auto out = net.forward(Var(window), Var(full));
                           return ops::add(ops::dot(out.spot, ws), ops::dot(out.fast, wf));
                         }, opt));
  }
  {
    std::mt19937_64 g(12);
    TransformerConfig t = desk.transformer;
    t.zero_init_output = false;  // a zero projection would hide every upstream gradient
    const std::int64_t cs = desk.backbone.c_spot(), cf = desk.backbone.c_fast();
    LateralTransformer xf(cs, cf, t, desk.spot_memory(), desk.fast_memory(), g);
    const Tensor spot = Tensor::randn({2, 7, cs}, g, 1.0), fast = Tensor::randn({2, 29, cf}, g, 1.0);
    const Tensor ws = Tensor::randn({2, 7, cs}, g, 1.0), wf = Tensor::randn({2, 29, cf}, g, 1.0);
    GradCheckOptions opt;
    opt.samples = 300;
    reports.emplace_back("lateralxf", check_gradients(xf.named_parameters(), [&] {
                           xf.reseed(3);
                           const auto out = xf.encode(Var(spot), Var(fast));
                           return ops::add(ops::dot(out.spot, ws), ops::dot(out.fast, wf));
                         }, opt));
  }
  {
    std::mt19937_64 g(13);
    const std::int64_t cs = desk.backbone.c_spot(), cf = desk.backbone.c_fast();
    TcHead head(cs, cf, desk.num_classes, desk.tc, g);
    const Tensor spot = Tensor::randn({3, cs, 7}, g, 1.0), fast = Tensor::randn({3, cf, 29}, g, 1.0);
    const std::vector<std::int64_t> labels{0, 4, 9};
    GradCheckOptions opt;
    opt.samples = 200;
    reports.emplace_back("tcback", check_gradients(head.named_parameters(), [&] {
                           return train::label_smoothed_ce(head.forward(Var(spot), Var(fast)), labels, 0.1);
                         }, opt));
  }
  {
    std::mt19937_64 g(14);
    MemoryConfig m = desk.spot_memory();
    ProductKeyMemory mem(desk.transformer.model_dim, m, g);
    const Tensor x = Tensor::randn({6, desk.transformer.model_dim}, g, 1.0);
    const Tensor w = Tensor::randn({6, m.value_dim}, g, 1.0);
    GradCheckOptions opt;
    opt.samples = 200;
    reports.emplace_back("pkmem", check_gradients(mem.named_parameters(), [&] {
                           mem.reseed(5);
                           return ops::dot(mem.forward(Var(x)), w);
                         }, opt));
  }

  bool ok = seconds_since(t0) < 300.0;
  std::string detail;
  for (const auto& [name, r] : reports) {
    ok = ok && r.entries.size() >= 100 && r.max_rel_error < 1e-3 && r.unreliable.size() * 20 <= r.entries.size();
    detail += (detail.empty() ? "" : "; ") + grad_line(name.c_str(), r);
  }
  return {ok, detail};
}

// ---- shapes ------------------------------------------------------------

std::int64_t conv_out(std::int64_t len, std::int64_t k, std::int64_t stride) {
  return (len + 2 * (k / 2) - k) / stride + 1;
}

Outcome paper_shapes() {
  const RunConfig paper = paper_preset();
  const std::int64_t spot_widths[4] = {256, 512, 1024, 2048}, fast_widths[4] = {32, 64, 128, 256};
  const std::int64_t B = 2, T = 29;
  std::string bad;
  for (std::int64_t w : {15, 19, 23}) {
    ModelConfig cfg = paper.model;
    cfg.backbone.window_size = w;
    const ShapeTrace trace = infer_shapes(cfg, B);
    std::map<std::string, Shape> got(trace.begin(), trace.end());
    std::map<std::string, Shape> want;

    std::int64_t s = conv_out(112, cfg.backbone.stem_kernel, cfg.backbone.stem_stride);
    want["spot.stem"] = {B, 64, w, s, s};
    const std::int64_t strides[4] = {1, 2, 2, 2};
    for (int i = 0; i < 4; ++i) {
      s = conv_out(s, 3, strides[i]);
      want["spot.stage" + std::to_string(i + 1)] = {B, spot_widths[i], w, s, s};
      want["fast.stage" + std::to_string(i + 1)] = {B, fast_widths[i], T, s, s};
    }
    want["spot.encoded"] = {B, w, 2048};
    want["fast.encoded"] = {B, T, 256};
    auto tc = [&](std::int64_t len, std::int64_t k) {
      const std::int64_t c1 = conv_out(len, k, 2), p1 = c1 / 2, c2 = conv_out(p1, k, 2), p2 = c2 / 2;
      return std::pair{p1, p2};
    };
    const auto [s1, s2] = tc(w, cfg.tc.kernel_spot);
    const auto [f1, f2] = tc(T, cfg.tc.kernel_fast);
    want["spot.tc1"] = {B, 4096, s1};
    want["spot.tc2"] = {B, 8192, s2};
    want["fast.tc1"] = {B, 512, f1};
    want["fast.tc2"] = {B, 1024, f2};
    want["logits"] = {B, 500};
    for (const auto& [name, shape] : want)
      if (!got.count(name) || got[name] != shape) bad += " w" + std::to_string(w) + ":" + name;
    if (fused_width(cfg) != 9216) bad += " fused_width";
    if (s2 < 1 || f2 < 1) bad += " collapse";
  }
  return {bad.empty(), bad.empty() ? "w in {15,19,23}: 2048/256 maps, TC 8192+1024 -> 9216 -> 500"
                                   : "mismatch:" + bad};
}

// ---- window heuristic --------------------------------------------------

Outcome window_heuristic() {
  windowing::BoundaryStats st;
  st.mean = 10.59;
  st.std = 3.2;
  const auto w = windowing::candidate_windows(st, 29);
  return {w == std::array<std::int64_t, 3>{15, 19, 23}, fmt("(10.59, 3.2) -> {%lld, %lld, %lld}",
                                                          static_cast<long long>(w[0]), static_cast<long long>(w[1]),
                                                          static_cast<long long>(w[2]))};
}

// ---- training runs -----------------------------------------------------

const fs::path kRoot = fs::temp_directory_path() / "spotfast_acceptance";

fs::path make_dataset(const std::string& name, std::int64_t per_class, std::int64_t heldout) {
  data::SyntheticSpec spec;
  spec.num_classes = 10;
  spec.clips_per_class = per_class;
  spec.heldout_per_class = heldout;
  spec.seed = 7;
  const fs::path dir = kRoot / name;
  data::generate_synthetic_dataset(spec, dir);
  return dir;
}

struct ScheduleRun {
  RunConfig cfg;
  fs::path run;
  std::int64_t spe = 0;
};

ScheduleRun& schedule_run() {
  static ScheduleRun r = [] {
    ScheduleRun s;
    s.cfg = desk_preset();
    // Six phase-3 epochs so the run crosses the cycle boundary at epoch 5.
    s.cfg.phases[2].epochs = 6;
    const fs::path data = make_dataset("sched_data", 8, 2);
    s.run = kRoot / "sched_run";
    fs::remove_all(s.run);
    s.spe = (10 * 8 + s.cfg.phases[0].batch_size - 1) / s.cfg.phases[0].batch_size;
    train::RunOptions opts{data, s.run, {}, false, false};
    for (int p = 1; p <= 3; ++p) train::run_phase(s.cfg, p, opts);
    return s;
  }();
  return r;
}

// Closed form written independently of the library: linear warmup times
// cosine with T0 = 5, Tmul = 1, eta_min = 0, times the replayed plateau factor.
double closed_form_lr(double lr0, std::int64_t warmup, std::int64_t step, std::int64_t spe, double plateau) {
  const double progress = static_cast<double>(step) / static_cast<double>(spe);
  const double t_cur = std::fmod(progress, 5.0);
  const double ramp = step < warmup ? static_cast<double>(step) / static_cast<double>(warmup) : 1.0;
  return ramp * 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t_cur / 5.0)) * plateau;
}

Outcome scheduler_trace() {
  auto& s = schedule_run();
  double worst = 0;
  std::int64_t checked = 0;
  for (int phase = 1; phase <= 3; ++phase) {
    const PhasePlan& plan = s.cfg.phase(phase);
    const auto steps = read_jsonl(train::metrics_path(s.run, phase));
    const auto epochs = read_jsonl(train::epochs_path(s.run, phase));
    if (static_cast<std::int64_t>(steps.size()) != plan.epochs * s.spe) return {false, "wrong step count"};
    std::vector<double> factor(epochs.size() + 1, 1.0);
    double best = INFINITY, mult = 1.0;
    for (std::size_t e = 0; e < epochs.size(); ++e) {
      const double v = epochs[e].at("val_loss").get<double>();
      if (v < best) best = v; else mult /= 2.0;
      factor[e + 1] = mult;
    }
    for (const auto& rec : steps) {
      const std::int64_t step = rec.at("step").get<std::int64_t>();
      const double plateau = plan.plateau ? factor[static_cast<std::size_t>(step / s.spe)] : 1.0;
      worst = std::max(worst, std::abs(rec.at("lr").get<double>() -
                                       closed_form_lr(plan.lr, plan.warmup_steps, step, s.spe, plateau)));
      ++checked;
    }
  }
  // Restart: the first step of epoch 5 in phase 3 is back at lr0 times the plateau factor.
  const auto p3 = read_jsonl(train::metrics_path(s.run, 3));
  const std::size_t boundary = static_cast<std::size_t>(5 * s.spe);
  const double before = p3.at(boundary - 1).at("lr").get<double>(), at = p3.at(boundary).at("lr").get<double>();
  const auto epochs = read_jsonl(train::epochs_path(s.run, 3));
  double mult = 1.0, best = INFINITY;
  for (std::size_t e = 0; e < 5; ++e) {
    const double v = epochs[e].at("val_loss").get<double>();
    if (v < best) best = v; else mult /= 2.0;
  }
  const double lr0 = s.cfg.phase(3).lr * mult;
  const bool restart = std::abs(at - lr0) <= 1e-12 && before < 0.01 * lr0;
  return {worst <= 1e-9 && restart,
          fmt("%lld steps over 3 phases, max |lr - closed form| %.1e; phase 3 step %zu lr %.3e -> step %zu lr %.3e",
              static_cast<long long>(checked), worst, boundary - 1, before, boundary, at)};
}

Outcome freezing_contract() {
  auto& s = schedule_run();
  const auto p1 = train::read_checkpoint_tensors(train::phase_checkpoint(s.run, 1));
  const auto p2 = train::read_checkpoint_tensors(train::phase_checkpoint(s.run, 2));
  std::map<std::string, const Tensor*> after;
  for (const auto& e : p2)
    if (e.kind == "param") after[e.name] = &e.value;
  std::size_t backbone = 0, identical = 0, moved_elsewhere = 0;
  for (const auto& e : p1) {
    if (e.kind != "param") continue;
    const bool same = bit_identical(e.value, *after.at(e.name));
    if (e.name.rfind("backbone.", 0) == 0) {
      ++backbone;
      identical += same;
    } else {
      moved_elsewhere += !same;
    }
  }
  return {backbone > 0 && identical == backbone && moved_elsewhere > 0,
          fmt("%zu/%zu backbone tensors bit-identical, %zu other tensors updated", identical, backbone,
              moved_elsewhere)};
}

fs::path e2e_data() {
  static const fs::path dir = make_dataset("e2e_data", 50, 10);
  return dir;
}

Outcome end_to_end() {
  RunConfig cfg = desk_preset();
  cfg.phases[0].epochs = 5;
  const fs::path run = kRoot / "e2e_run";
  fs::remove_all(run);
  const auto t0 = Clock::now();
  const auto r = train::run_phase(cfg, 1, {e2e_data(), run, {}, false, false});
  auto model = train::build_model(cfg);
  train::load_checkpoint(r.checkpoint, *model);
  model->set_use_transformer(false);
  const auto test = train::load_split(e2e_data(), "test", cfg);
  const auto ev = train::evaluate(*model, test, cfg, 16);
  const double secs = seconds_since(t0);
  const auto& m = cfg.model;
  const bool shape_ok = m.backbone.window_size == 7 && m.backbone.c_spot() == 64 && m.backbone.c_fast() == 16 &&
                        m.transformer.model_dim == 64 && m.memory_slots_spot == 8 && m.memory_slots_fast == 8;
  return {shape_ok && r.train_accuracy >= 0.95 && ev.accuracy >= 0.60 && secs < 1200.0,
          fmt("500 train clips, 5 epochs: train acc %.3f, held-out acc %.3f (%lld clips)", r.train_accuracy,
              ev.accuracy, static_cast<long long>(ev.total))};
}

// ---- memory and directionality -----------------------------------------

train::Batch desk_batch(const RunConfig& cfg, std::size_t count) {
  const auto clips = train::load_split(e2e_data(), "train", cfg);
  std::vector<data::Clip> prepared;
  for (std::size_t i = 0; i < count; ++i)
    prepared.push_back(train::prepare_clip(clips[(i * 37) % clips.size()], cfg, nullptr));
  return train::assemble_batch(prepared, cfg.model.backbone.window_size);
}

Outcome memory_effect() {
  const RunConfig cfg = desk_preset();
  auto model = train::build_model(cfg);
  const auto e2e_ckpt = train::phase_checkpoint(kRoot / "e2e_run", 1);
  if (fs::exists(e2e_ckpt)) train::load_checkpoint(e2e_ckpt, *model);
  model->set_use_transformer(true);
  // Stand-in for a trained phase 2: with proj_out still zero no gradient
  // would reach the memory at all.
  std::mt19937_64 g(51);
  for (auto* enc : {&model->transformer().spot_encoder(), &model->transformer().fast_encoder()})
    enc->proj_out().weight().mutable_value() = Tensor::randn(enc->proj_out().weight().shape(), g, 0.05);
  const auto batch = desk_batch(cfg, 8);
  const std::size_t layer = static_cast<std::size_t>(cfg.model.transformer.memory_layer - 1);
  ProductKeyMemory* mems[2] = {model->transformer().spot_encoder().layer_module(layer).memory(),
                               model->transformer().fast_encoder().layer_module(layer).memory()};

  // Ablation in eval mode: zeroed values change the memory layer's output.
  model->train(false);
  ForwardTrace with, without;
  model->forward(Var(batch.window), Var(batch.full), &with);
  std::vector<Tensor> saved;
  for (auto* m : mems) {
    saved.push_back(m->values().value());
    m->values().mutable_value() = Tensor(m->values().value().shape(), 0.0);
  }
  model->forward(Var(batch.window), Var(batch.full), &without);
  const bool spot_changed = !bit_identical(with.layers.spot.at(layer).value(), without.layers.spot.at(layer).value());
  const bool fast_changed = !bit_identical(with.layers.fast.at(layer).value(), without.layers.fast.at(layer).value());
  const bool earlier_same = bit_identical(with.layers.spot.at(layer - 1).value(), without.layers.spot.at(layer - 1).value());
  for (std::size_t p = 0; p < 2; ++p) mems[p]->values().mutable_value() = saved[p];

  // Gradient of one step on two clips, in eval and in train mode: unselected
  // rows must get exactly zero. Train mode normalises the queries over the
  // batch, which spreads selection over nearly every row of the 64-row desk
  // tables, so eval mode is where unselected rows reliably exist. (A single
  // clip would leave one value per channel in the last spot TC batchnorm,
  // which cuts the spot gradient in train mode.)
  const auto two = desk_batch(cfg, 2);
  std::int64_t unselected[2] = {0, 0}, leaked = 0;
  bool reached = true;
  for (bool training : {false, true}) {
    model->train(training);
    model->reseed(1);
    model->zero_grad();
    train::label_smoothed_ce(model->forward(Var(two.window), Var(two.full)), two.labels, 0.1).backward();
    for (ProductKeyMemory* m : mems) {
      const auto hist = memory_usage_stats(m->last_indices(), m->rows());
      const Tensor& grad = m->values().grad();
      const std::int64_t dim = m->values().value().dim(1);
      std::int64_t with_grad = 0;
      for (std::int64_t r = 0; r < m->rows(); ++r) {
        bool nonzero = false;
        for (std::int64_t d = 0; d < dim && grad.numel() > 0; ++d) nonzero = nonzero || grad[r * dim + d] != 0.0;
        if (hist[static_cast<std::size_t>(r)] == 0) {
          ++unselected[training];
          leaked += nonzero;
        }
        with_grad += nonzero;
      }
      reached = reached && with_grad > 0;
    }
  }
  const bool ok = spot_changed && fast_changed && earlier_same && unselected[0] > 0 && leaked == 0 && reached;
  return {ok, fmt("ablation changes layer-%zu output (spot %s, fast %s); unselected rows eval %lld, train %lld, "
                  "%lld of them with gradient; both memories reached: %s",
                  layer + 1, spot_changed ? "yes" : "no", fast_changed ? "yes" : "no",
                  static_cast<long long>(unselected[0]), static_cast<long long>(unselected[1]),
                  static_cast<long long>(leaked), reached ? "yes" : "no")};
}

Outcome directionality() {
  const ModelConfig desk = desk_preset().model;
  std::mt19937_64 g(31);
  TransformerConfig t = desk.transformer;
  t.zero_init_output = false;
  const std::int64_t cs = desk.backbone.c_spot(), cf = desk.backbone.c_fast();
  LateralTransformer xf(cs, cf, t, desk.spot_memory(), desk.fast_memory(), g);
  const Tensor spot = Tensor::randn({2, 7, cs}, g, 1.0), fast = Tensor::randn({2, 29, cf}, g, 1.0);
  const Tensor spot2 = Tensor::randn({2, 7, cs}, g, 1.0);
  bool fast_same = true, spot_moved = true;
  for (bool training : {false, true}) {
    xf.train(training);
    xf.reseed(4);
    const auto a = xf.encode(Var(spot), Var(fast));
    xf.reseed(4);
    const auto b = xf.encode(Var(spot2), Var(fast));
    fast_same = fast_same && bit_identical(a.fast.value(), b.fast.value());
    spot_moved = spot_moved && !bit_identical(a.spot.value(), b.spot.value());
  }
  return {fast_same && spot_moved, fast_same ? "fast_out bit-identical under spot perturbation (train and eval)"
                                             : "fast_out changed"};
}

// ---- loss identities ---------------------------------------------------

Outcome loss_identities() {
  double worst_uniform = 0;
  for (std::int64_t k : {2, 10, 500}) {
    const std::vector<std::int64_t> targets{0, k / 2, k - 1};
    for (double eps : {0.0, 0.1}) {
      const double got = train::label_smoothed_ce(Var(Tensor({3, k}, -1.25)), targets, eps).value()[0];
      worst_uniform = std::max(worst_uniform, std::abs(got - std::log(static_cast<double>(k))));
    }
  }
  std::mt19937_64 g(41);
  const Tensor z = Tensor::randn({5, 10}, g, 3.0);
  const std::vector<std::int64_t> targets{1, 9, 0, 4, 4};
  double ref = 0;
  for (std::int64_t r = 0; r < 5; ++r) {
    double mx = -INFINITY;
    for (std::int64_t i = 0; i < 10; ++i) mx = std::max(mx, z[r * 10 + i]);
    double s = 0;
    for (std::int64_t i = 0; i < 10; ++i) s += std::exp(z[r * 10 + i] - mx);
    ref += (mx + std::log(s) - z[r * 10 + targets[static_cast<std::size_t>(r)]]) / 5.0;
  }
  const double ce_err = std::abs(train::label_smoothed_ce(Var(z), targets, 0.0).value()[0] - ref);
  return {worst_uniform <= 1e-9 && ce_err <= 1e-9,
          fmt("max |uniform - ln K| %.1e over K in {2,10,500}; |eps=0 - reference CE| %.1e", worst_uniform, ce_err)};
}

}  // namespace

int main() {
  fs::create_directories(kRoot);
  report("product-key exactness", product_key_exactness);
  report("gradient checks", gradient_checks);
  report("paper shape suite", paper_shapes);
  report("window heuristic", window_heuristic);
  report("scheduler trace", scheduler_trace);
  report("freezing contract", freezing_contract);
  report("end-to-end learning", end_to_end);
  report("memory effect", memory_effect);
  report("directionality", directionality);
  report("loss identities", loss_identities);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
