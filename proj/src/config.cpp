#include "spotfast/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "spotfast/error.hpp"

namespace spotfast {

using ojson = nlohmann::ordered_json;

namespace {

const std::map<std::string, std::string>& key_descriptions() {
  static const std::map<std::string, std::string> d{
      {"preset", "base preset the file is overlaid on (paper or desk)"},
      {"seed", "global seed for initialization, augmentation and dropout"},
      {"model.num_classes", "number of word classes"},
      {"model.backbone.window_size", "odd temporal window seen by the spot pathway"},
      {"model.backbone.stem_kernel", "spatial kernel of the stem convolution"},
      {"model.backbone.stem_stride", "spatial stride of the stem convolution"},
      {"model.backbone.stem_channels_spot", "spot pathway stem width"},
      {"model.backbone.stem_channels_fast", "fast pathway stem width"},
      {"model.backbone.stage_channels_spot", "spot pathway width per residual stage"},
      {"model.backbone.stage_channels_fast", "fast pathway width per residual stage"},
      {"model.backbone.spatial_strides", "spatial stride of the first block of each stage"},
      {"model.backbone.blocks", "residual blocks per stage"},
      {"model.backbone.temporal_kernel", "temporal kernel of the 3D convolutions"},
      {"model.backbone.fusion_ratio", "channel multiplier of the fast-to-spot fusion convolution"},
      {"model.backbone.fusion_kernel", "temporal kernel of the fusion convolution"},
      {"model.transformer.layers", "encoder layers per pathway"},
      {"model.transformer.attn_heads", "attention heads"},
      {"model.transformer.model_dim", "encoder width shared by both pathways"},
      {"model.transformer.ff_dim", "feed-forward hidden width"},
      {"model.transformer.memory_layer", "1-based layer holding the product-key memory"},
      {"model.transformer.pe_dropout", "dropout after the positional encoding (train only)"},
      {"model.transformer.lateral", "enable fast-to-spot lateral connections between layers"},
      {"model.transformer.memory", "enable the product-key memory"},
      {"model.transformer.zero_init_output", "zero the encoder output projection at initialization"},
      {"model.memory.heads", "memory heads, each with its own query network and sub-keys"},
      {"model.memory.key_dim", "query width, split in two halves for the sub-keys"},
      {"model.memory.k", "nearest keys read per head"},
      {"model.memory.value_dropout", "dropout on the memory output (train only)"},
      {"model.memory.query_batchnorm", "batch-normalize memory queries"},
      {"model.memory.output_layernorm", "layer-normalize the memory output"},
      {"model.memory.layernorm_affine", "learnable scale and shift in the memory layernorm"},
      {"model.memory.slots_spot", "sub-keys per half for the spot memory (values = slots^2)"},
      {"model.memory.slots_fast", "sub-keys per half for the fast memory (values = slots^2)"},
      {"model.tc.kernel_spot", "temporal conv kernel for the spot back-end"},
      {"model.tc.kernel_fast", "temporal conv kernel for the fast back-end"},
      {"model.tc.stride", "temporal conv stride"},
      {"model.tc.pool", "max-pool kernel and stride"},
      {"model.tc.ceil_mode", "round pooled lengths up instead of down"},
      {"data.frames", "frames per clip"},
      {"data.grayscale", "convert frames to one luminance channel"},
      {"data.mouth_box", "fixed [top, left, height, width] crop, or null for none"},
      {"data.crop", "square crop fed to the network"},
      {"data.upsample_min", "smallest random upsample size during training"},
      {"data.upsample_max", "largest random upsample size during training"},
      {"data.eval_upsample", "upsample size before the evaluation center crop"},
      {"data.flip_prob", "probability of a horizontal flip during training"},
      {"data.label_smoothing", "label smoothing of the cross-entropy loss"},
      {"schedule.t0", "cosine cycle length in epochs"},
      {"schedule.t_mul", "cycle length multiplier after each restart"},
      {"schedule.eta_min", "learning rate floor of the cosine schedule"},
      {"schedule.plateau_factor", "divisor applied when validation loss stalls"},
      {"schedule.plateau_patience", "stalled evaluations tolerated before reducing"},
      {"adam.beta1", "Adam first-moment decay"},
      {"adam.beta2", "Adam second-moment decay"},
      {"adam.eps", "Adam denominator epsilon"},
  };
  return d;
}

std::string phase_description(const std::string& field) {
  static const std::map<std::string, std::string> d{
      {"lr", "initial learning rate"},
      {"weight_decay", "L2 weight decay"},
      {"batch_size", "clips per step"},
      {"epochs", "epochs in the phase"},
      {"warmup_steps", "linear warmup steps"},
      {"freeze_backbone", "keep the backbone fixed"},
      {"use_transformer", "run the lateral transformers"},
      {"plateau", "chain the validation-plateau reduction"},
  };
  auto it = d.find(field);
  return it == d.end() ? std::string() : it->second;
}

ojson phase_to_json(const PhasePlan& p) {
  return {{"lr", p.lr},
          {"weight_decay", p.weight_decay},
          {"batch_size", p.batch_size},
          {"epochs", p.epochs},
          {"warmup_steps", p.warmup_steps},
          {"freeze_backbone", p.freeze_backbone},
          {"use_transformer", p.use_transformer},
          {"plateau", p.plateau}};
}

template <class T>
void get(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Usage, "config key " + path + key + ": missing or wrong type");
  }
}

void flatten(const ojson& j, const std::string& prefix, std::vector<std::pair<std::string, ojson>>& out) {
  if (j.is_object() && !j.empty()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out.emplace_back(prefix, j);
  }
}

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) fail(ErrorKind::Usage, "config " + (path.empty() ? "root" : path) + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) fail(ErrorKind::Usage, "unknown config key: " + key);
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), key);
    } else if (key == "data.mouth_box") {
      if (!it.value().is_null() && !(it.value().is_array() && it.value().size() == 4))
        fail(ErrorKind::Usage, "config key " + key + ": expected null or [top, left, height, width]");
      slot = it.value();
    } else {
      if (!same_kind(slot, it.value()))
        fail(ErrorKind::Usage, "config key " + key + ": expected " + std::string(slot.type_name()));
      slot = it.value();
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  require(preset == "paper" || preset == "desk", "config: preset must be paper or desk");
  model.validate();
  const auto& a = data.augment;
  require(data.frames >= 1 && data.frames == model.backbone.clip_frames, "config: data.frames must match the model");
  require(a.crop >= 1 && a.upsample_min >= a.crop && a.upsample_max >= a.upsample_min && a.eval_upsample >= a.crop,
          "config: upsample sizes must cover the crop");
  require(a.flip_prob >= 0.0 && a.flip_prob <= 1.0, "config: flip_prob must lie in [0, 1]");
  require(data.label_smoothing >= 0.0 && data.label_smoothing < 1.0, "config: label_smoothing must lie in [0, 1)");
  for (const auto& p : phases) {
    require(p.lr > 0.0 && p.weight_decay >= 0.0, "config: phase lr must be positive and weight decay non-negative");
    require(p.batch_size >= 1 && p.epochs >= 0 && p.warmup_steps >= 0, "config: bad phase budget");
  }
  require(schedule.t0 > 0.0 && schedule.t_mul >= 1.0 && schedule.eta_min >= 0.0, "config: bad cosine schedule");
  require(schedule.plateau_factor > 1.0 && schedule.plateau_patience >= 1, "config: bad plateau schedule");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0,
          "config: bad Adam settings");
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.model.num_classes = 500;
  c.model.backbone.scale = "paper";
  c.data.mouth_box = preprocess::kLrwMouthBox;
  c.phases[0] = {1, 2.5e-4, 1e-4, 84, 10, 2000, false, false, false};
  c.phases[1] = {2, 2.25e-4, 3e-4, 84, 5, 1000, true, true, false};
  c.phases[2] = {3, 1.566e-4, 1e-4, 64, 30, 1000, false, true, true};
  return c;
}

RunConfig desk_preset() {
  RunConfig c = paper_preset();
  c.preset = "desk";
  c.model.num_classes = 10;
  auto& b = c.model.backbone;
  b.scale = "desk";
  b.window_size = 7;
  b.input_size = 32;
  b.stem_kernel = 3;
  b.stem_stride = 2;
  b.stem_channels_spot = 16;
  b.stem_channels_fast = 4;
  b.stage_channels_spot = {32, 64};
  b.stage_channels_fast = {8, 16};
  b.spatial_strides = {2, 2};
  b.blocks = {1, 1};
  c.model.transformer.model_dim = 64;
  c.model.transformer.ff_dim = 256;
  c.model.memory.key_dim = 16;
  c.model.memory.k = 8;
  c.model.memory_slots_spot = 8;
  c.model.memory_slots_fast = 8;
  c.model.tc.ceil_mode = true;
  c.data.augment = {32, 35, 42, 35, 0.5};
  c.data.mouth_box.reset();  // synthetic clips are already mouth-sized
  const std::int64_t epochs[3] = {3, 2, 5}, warmup[3] = {50, 25, 25};
  for (int p = 0; p < 3; ++p) {
    c.phases[p].batch_size = 8;
    c.phases[p].epochs = epochs[p];
    c.phases[p].warmup_steps = warmup[p];
  }
  return c;
}

RunConfig preset_config(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  fail(ErrorKind::Usage, "unknown preset '" + name + "' (expected paper or desk)");
}

ojson config_to_json(const RunConfig& c) {
  const auto& b = c.model.backbone;
  const auto& t = c.model.transformer;
  const auto& m = c.model.memory;
  const auto& tc = c.model.tc;
  const auto& a = c.data.augment;
  ojson j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["model"] = {
      {"num_classes", c.model.num_classes},
      {"backbone",
       {{"window_size", b.window_size},
        {"stem_kernel", b.stem_kernel},
        {"stem_stride", b.stem_stride},
        {"stem_channels_spot", b.stem_channels_spot},
        {"stem_channels_fast", b.stem_channels_fast},
        {"stage_channels_spot", b.stage_channels_spot},
        {"stage_channels_fast", b.stage_channels_fast},
        {"spatial_strides", b.spatial_strides},
        {"blocks", b.blocks},
        {"temporal_kernel", b.temporal_kernel},
        {"fusion_ratio", b.fusion_ratio},
        {"fusion_kernel", b.fusion_kernel}}},
      {"transformer",
       {{"layers", t.layers},
        {"attn_heads", t.attn_heads},
        {"model_dim", t.model_dim},
        {"ff_dim", t.ff_dim},
        {"memory_layer", t.memory_layer},
        {"pe_dropout", t.pe_dropout},
        {"lateral", t.lateral},
        {"memory", t.memory},
        {"zero_init_output", t.zero_init_output}}},
      {"memory",
       {{"heads", m.heads},
        {"key_dim", m.key_dim},
        {"k", m.k},
        {"value_dropout", m.value_dropout},
        {"query_batchnorm", m.query_batchnorm},
        {"output_layernorm", m.output_layernorm},
        {"layernorm_affine", m.layernorm_affine},
        {"slots_spot", c.model.memory_slots_spot},
        {"slots_fast", c.model.memory_slots_fast}}},
      {"tc",
       {{"kernel_spot", tc.kernel_spot},
        {"kernel_fast", tc.kernel_fast},
        {"stride", tc.stride},
        {"pool", tc.pool},
        {"ceil_mode", tc.ceil_mode}}}};
  ojson box = nullptr;
  if (c.data.mouth_box) box = {c.data.mouth_box->top, c.data.mouth_box->left, c.data.mouth_box->height,
                               c.data.mouth_box->width};
  j["data"] = {{"frames", c.data.frames},
               {"grayscale", c.data.grayscale},
               {"mouth_box", box},
               {"crop", a.crop},
               {"upsample_min", a.upsample_min},
               {"upsample_max", a.upsample_max},
               {"eval_upsample", a.eval_upsample},
               {"flip_prob", a.flip_prob},
               {"label_smoothing", c.data.label_smoothing}};
  j["phases"] = ojson::object();
  for (const auto& p : c.phases) j["phases"][std::to_string(p.phase)] = phase_to_json(p);
  j["schedule"] = {{"t0", c.schedule.t0},
                   {"t_mul", c.schedule.t_mul},
                   {"eta_min", c.schedule.eta_min},
                   {"plateau_factor", c.schedule.plateau_factor},
                   {"plateau_patience", c.schedule.plateau_patience}};
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  get(j, "", "preset", c.preset);
  get(j, "", "seed", c.seed);
  const auto& jm = j.at("model");
  get(jm, "model.", "num_classes", c.model.num_classes);
  auto& b = c.model.backbone;
  const auto& jb = jm.at("backbone");
  const std::string pb = "model.backbone.";
  get(jb, pb, "window_size", b.window_size);
  get(jb, pb, "stem_kernel", b.stem_kernel);
  get(jb, pb, "stem_stride", b.stem_stride);
  get(jb, pb, "stem_channels_spot", b.stem_channels_spot);
  get(jb, pb, "stem_channels_fast", b.stem_channels_fast);
  get(jb, pb, "stage_channels_spot", b.stage_channels_spot);
  get(jb, pb, "stage_channels_fast", b.stage_channels_fast);
  get(jb, pb, "spatial_strides", b.spatial_strides);
  get(jb, pb, "blocks", b.blocks);
  get(jb, pb, "temporal_kernel", b.temporal_kernel);
  get(jb, pb, "fusion_ratio", b.fusion_ratio);
  get(jb, pb, "fusion_kernel", b.fusion_kernel);
  b.scale = c.preset;
  auto& t = c.model.transformer;
  const auto& jt = jm.at("transformer");
  const std::string pt = "model.transformer.";
  get(jt, pt, "layers", t.layers);
  get(jt, pt, "attn_heads", t.attn_heads);
  get(jt, pt, "model_dim", t.model_dim);
  get(jt, pt, "ff_dim", t.ff_dim);
  get(jt, pt, "memory_layer", t.memory_layer);
  get(jt, pt, "pe_dropout", t.pe_dropout);
  get(jt, pt, "lateral", t.lateral);
  get(jt, pt, "memory", t.memory);
  get(jt, pt, "zero_init_output", t.zero_init_output);
  auto& m = c.model.memory;
  const auto& jmem = jm.at("memory");
  const std::string pm = "model.memory.";
  get(jmem, pm, "heads", m.heads);
  get(jmem, pm, "key_dim", m.key_dim);
  get(jmem, pm, "k", m.k);
  get(jmem, pm, "value_dropout", m.value_dropout);
  get(jmem, pm, "query_batchnorm", m.query_batchnorm);
  get(jmem, pm, "output_layernorm", m.output_layernorm);
  get(jmem, pm, "layernorm_affine", m.layernorm_affine);
  get(jmem, pm, "slots_spot", c.model.memory_slots_spot);
  get(jmem, pm, "slots_fast", c.model.memory_slots_fast);
  auto& tc = c.model.tc;
  const auto& jtc = jm.at("tc");
  const std::string ptc = "model.tc.";
  get(jtc, ptc, "kernel_spot", tc.kernel_spot);
  get(jtc, ptc, "kernel_fast", tc.kernel_fast);
  get(jtc, ptc, "stride", tc.stride);
  get(jtc, ptc, "pool", tc.pool);
  get(jtc, ptc, "ceil_mode", tc.ceil_mode);

  const auto& jd = j.at("data");
  auto& a = c.data.augment;
  get(jd, "data.", "frames", c.data.frames);
  get(jd, "data.", "grayscale", c.data.grayscale);
  if (!jd.at("mouth_box").is_null()) {
    std::vector<std::int64_t> box;
    get(jd, "data.", "mouth_box", box);
    if (box.size() != 4) fail(ErrorKind::Usage, "config key data.mouth_box: expected 4 integers");
    c.data.mouth_box = preprocess::CropBox{box[0], box[1], box[2], box[3]};
  }
  get(jd, "data.", "crop", a.crop);
  get(jd, "data.", "upsample_min", a.upsample_min);
  get(jd, "data.", "upsample_max", a.upsample_max);
  get(jd, "data.", "eval_upsample", a.eval_upsample);
  get(jd, "data.", "flip_prob", a.flip_prob);
  get(jd, "data.", "label_smoothing", c.data.label_smoothing);
  b.clip_frames = c.data.frames;
  b.input_size = a.crop;
  b.in_channels = c.data.grayscale ? 1 : 3;

  for (int p = 1; p <= 3; ++p) {
    const std::string key = std::to_string(p);
    const auto& jp = j.at("phases").at(key);
    const std::string pp = "phases." + key + ".";
    auto& plan = c.phases[p - 1];
    plan.phase = p;
    get(jp, pp, "lr", plan.lr);
    get(jp, pp, "weight_decay", plan.weight_decay);
    get(jp, pp, "batch_size", plan.batch_size);
    get(jp, pp, "epochs", plan.epochs);
    get(jp, pp, "warmup_steps", plan.warmup_steps);
    get(jp, pp, "freeze_backbone", plan.freeze_backbone);
    get(jp, pp, "use_transformer", plan.use_transformer);
    get(jp, pp, "plateau", plan.plateau);
  }
  const auto& js = j.at("schedule");
  get(js, "schedule.", "t0", c.schedule.t0);
  get(js, "schedule.", "t_mul", c.schedule.t_mul);
  get(js, "schedule.", "eta_min", c.schedule.eta_min);
  get(js, "schedule.", "plateau_factor", c.schedule.plateau_factor);
  get(js, "schedule.", "plateau_patience", c.schedule.plateau_patience);
  const auto& ja = j.at("adam");
  get(ja, "adam.", "beta1", c.adam.beta1);
  get(ja, "adam.", "beta2", c.adam.beta2);
  get(ja, "adam.", "eps", c.adam.eps);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    fail(ErrorKind::Usage, e.what());
  }
  return c;
}

RunConfig overlay_config(const RunConfig& base, const nlohmann::json& patch) {
  nlohmann::json merged = nlohmann::json::parse(config_to_json(base).dump());
  merge(merged, patch, "");
  if (patch.contains("preset") && patch["preset"] != base.preset)
    fail(ErrorKind::Usage, "config: preset cannot change during an overlay");
  return config_from_json(merged);
}

RunConfig load_config(const std::filesystem::path& file, const std::string& preset_override) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Io, "cannot read config file " + file.string());
  nlohmann::json patch;
  try {
    patch = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Usage, "config file " + file.string() + " is not valid JSON: " + e.what());
  }
  if (!patch.is_object()) fail(ErrorKind::Usage, "config file " + file.string() + " must hold a JSON object");
  std::string name = preset_override;
  if (name.empty()) name = patch.value("preset", std::string("desk"));
  patch.erase("preset");
  return overlay_config(preset_config(name), patch);
}

std::vector<ConfigKeyDoc> config_key_docs() {
  std::vector<std::pair<std::string, ojson>> paper, desk;
  flatten(config_to_json(paper_preset()), "", paper);
  flatten(config_to_json(desk_preset()), "", desk);
  std::vector<ConfigKeyDoc> out;
  for (std::size_t i = 0; i < paper.size(); ++i) {
    const std::string& key = paper[i].first;
    std::string desc;
    if (key.rfind("phases.", 0) == 0) {
      desc = "phase " + key.substr(7, 1) + " " + phase_description(key.substr(9));
    } else if (auto it = key_descriptions().find(key); it != key_descriptions().end()) {
      desc = it->second;
    }
    out.push_back({key, paper[i].second.dump(), desk[i].second.dump(), desc});
  }
  return out;
}

std::string config_help_text() {
  std::ostringstream os;
  os << "Configuration keys (JSON file, overlaid on the chosen preset):\n";
  os << "  key                                     paper        desk         description\n";
  for (const auto& d : config_key_docs()) {
    os << "  " << d.key;
    for (std::size_t i = d.key.size(); i < 40; ++i) os << ' ';
    os << d.paper_default;
    for (std::size_t i = d.paper_default.size(); i < 13; ++i) os << ' ';
    os << d.desk_default;
    for (std::size_t i = d.desk_default.size(); i < 13; ++i) os << ' ';
    os << d.description << "\n";
  }
  return os.str();
}

}  // namespace spotfast
