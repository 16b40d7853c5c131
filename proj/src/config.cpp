#include "csi/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "csi/json_io.hpp"
#include "csi/masks.hpp"

namespace csi {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

json phantom_json(const PhantomSection& p) {
  return {{"count", p.count},
          {"grid_n", p.grid.n},
          {"voxel_mm", p.grid.spacing},
          {"supersample", p.supersample},
          {"implants_min", p.implants_min},
          {"implants_max", p.implants_max},
          {"mask_threshold_rel", p.mask_threshold_rel},
          {"test_fraction", p.test_fraction}};
}

PhantomSection phantom_from(const json& j) {
  reject_unknown(j, {"count", "grid_n", "voxel_mm", "supersample", "implants_min", "implants_max",
                     "mask_threshold_rel", "test_fraction"},
                 "phantom");
  PhantomSection p;
  p.count = j.value("count", p.count);
  p.grid.n = j.value("grid_n", p.grid.n);
  p.grid.spacing = j.value("voxel_mm", p.grid.spacing);
  p.supersample = j.value("supersample", p.supersample);
  p.implants_min = j.value("implants_min", p.implants_min);
  p.implants_max = j.value("implants_max", p.implants_max);
  p.mask_threshold_rel = j.value("mask_threshold_rel", p.mask_threshold_rel);
  p.test_fraction = j.value("test_fraction", p.test_fraction);
  return p;
}

json train_json(const TrainSection& t) {
  return {{"optimizer", t.optimizer}, {"lr", t.lr}, {"steps", t.steps}, {"batch", t.batch}, {"grad_clip", t.grad_clip}};
}

TrainSection train_from(const json& j) {
  reject_unknown(j, {"optimizer", "lr", "steps", "batch", "grad_clip"}, "train");
  TrainSection t;
  t.optimizer = j.value("optimizer", t.optimizer);
  t.lr = j.value("lr", t.lr);
  t.steps = j.value("steps", t.steps);
  t.batch = j.value("batch", t.batch);
  t.grad_clip = j.value("grad_clip", t.grad_clip);
  return t;
}

json eval_json(const EvalSection& e) {
  return {{"families", e.families},     {"max_images", e.max_images},       {"batch", e.batch},
          {"peak", e.peak},             {"ablate_snr", e.ablate_snr},       {"ablate_steps", e.ablate_steps},
          {"ablate_family", e.ablate_family}, {"ablate_images", e.ablate_images}};
}

EvalSection eval_from(const json& j) {
  reject_unknown(j, {"families", "max_images", "batch", "peak", "ablate_snr", "ablate_steps", "ablate_family",
                     "ablate_images"},
                 "eval");
  EvalSection e;
  e.families = j.value("families", e.families);
  e.max_images = j.value("max_images", e.max_images);
  e.batch = j.value("batch", e.batch);
  e.peak = j.value("peak", e.peak);
  e.ablate_snr = j.value("ablate_snr", e.ablate_snr);
  e.ablate_steps = j.value("ablate_steps", e.ablate_steps);
  e.ablate_family = j.value("ablate_family", e.ablate_family);
  e.ablate_images = j.value("ablate_images", e.ablate_images);
  return e;
}

json paths_json(const PathsSection& p) {
  return {{"root", p.root},       {"data", p.data},     {"checkpoint", p.checkpoint},
          {"inpaint", p.inpaint}, {"ablate", p.ablate}, {"eval", p.eval}};
}

PathsSection paths_from(const json& j) {
  reject_unknown(j, {"root", "data", "checkpoint", "inpaint", "ablate", "eval"}, "paths");
  PathsSection p;
  p.root = j.value("root", p.root);
  p.data = j.value("data", p.data);
  p.checkpoint = j.value("checkpoint", p.checkpoint);
  p.inpaint = j.value("inpaint", p.inpaint);
  p.ablate = j.value("ablate", p.ablate);
  p.eval = j.value("eval", p.eval);
  return p;
}

}  // namespace

void ExperimentConfig::validate() const {
  geometry.validate();
  schedule.validate();
  model.validate();
  sampler.validate();
  if (phantom.count < 1) throw std::invalid_argument("config: phantom.count must be >= 1");
  if (phantom.grid.n < 1 || !(phantom.grid.spacing > 0.0)) throw std::invalid_argument("config: bad phantom grid");
  if (phantom.supersample < 1) throw std::invalid_argument("config: phantom.supersample must be >= 1");
  if (phantom.implants_min < 0 || phantom.implants_max < phantom.implants_min)
    throw std::invalid_argument("config: bad implant count range");
  if (!(phantom.mask_threshold_rel > 0.0)) throw std::invalid_argument("config: mask_threshold_rel must be > 0");
  if (!(phantom.test_fraction > 0.0 && phantom.test_fraction < 1.0))
    throw std::invalid_argument("config: test_fraction must be in (0, 1)");
  if (train.optimizer != "adam") throw std::invalid_argument("config: unsupported optimizer '" + train.optimizer + "'");
  if (!(train.lr > 0.0) || train.steps < 0 || train.batch < 1) throw std::invalid_argument("config: bad train section");
  for (const auto& f : eval.families)
    if (!parse_mask_family(f)) throw std::invalid_argument("config: unknown mask family '" + f + "'");
  if (!parse_mask_family(eval.ablate_family))
    throw std::invalid_argument("config: unknown mask family '" + eval.ablate_family + "'");
  if (eval.max_images < 0 || eval.batch < 1 || eval.ablate_images < 1 || !(eval.peak > 0.0))
    throw std::invalid_argument("config: bad eval section");
  for (double s : eval.ablate_snr)
    if (!(s > 0.0)) throw std::invalid_argument("config: ablation snr must be > 0");
  for (int n : eval.ablate_steps)
    if (n < 1) throw std::invalid_argument("config: ablation steps must be >= 1");
}

std::filesystem::path ExperimentConfig::resolve(const std::string& entry) const {
  const std::filesystem::path p(entry);
  return p.is_absolute() ? p : std::filesystem::path(paths.root) / p;
}

void set_master_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.model.seed = seed;
  cfg.sampler.seed = seed;
}

ExperimentConfig parse_config(const std::string& json_text) {
  const json j = json::parse(json_text);
  reject_unknown(j, {"seed", "geometry", "phantom", "schedule", "model", "train", "sampler", "eval", "paths"},
                 "config");
  ExperimentConfig cfg;
  if (j.contains("geometry")) {
    reject_unknown(j["geometry"], {"sdd", "sid", "detector_rows", "detector_cols", "pixel_mm", "angular_range_deg",
                                   "angular_step_deg"},
                   "geometry");
    cfg.geometry = j["geometry"].get<ProjectionGeometry>();
  }
  if (j.contains("phantom")) cfg.phantom = phantom_from(j["phantom"]);
  if (j.contains("schedule")) {
    reject_unknown(j["schedule"], {"sigma_min", "sigma_max", "n_steps"}, "schedule");
    cfg.schedule = j["schedule"].get<VeSchedule>();
  }
  if (j.contains("model")) {
    reject_unknown(j["model"], {"channels", "time_features", "time_scale", "embed_dim", "sigma_data"}, "model");
    cfg.model = j["model"].get<ModelConfig>();
  }
  if (j.contains("train")) cfg.train = train_from(j["train"]);
  if (j.contains("sampler")) {
    reject_unknown(j["sampler"], {"n_steps", "snr", "corrector_iters", "resample_repeats"}, "sampler");
    cfg.sampler = j["sampler"].get<SamplerConfig>();
  }
  if (j.contains("eval")) cfg.eval = eval_from(j["eval"]);
  if (j.contains("paths")) cfg.paths = paths_from(j["paths"]);
  set_master_seed(cfg, j.value("seed", std::uint64_t{0}));
  cfg.validate();
  return cfg;
}

std::string emit_config(const ExperimentConfig& cfg) {
  json model = cfg.model;
  model.erase("seed");
  json sampler = cfg.sampler;
  sampler.erase("seed");
  const json j = {{"seed", cfg.seed},         {"geometry", cfg.geometry},
                  {"phantom", phantom_json(cfg.phantom)}, {"schedule", cfg.schedule},
                  {"model", model},           {"train", train_json(cfg.train)},
                  {"sampler", sampler},       {"eval", eval_json(cfg.eval)},
                  {"paths", paths_json(cfg.paths)}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
}

}  // namespace csi
