#pragma once

// nlohmann::json conversions for the value types that appear in configs,
// manifests and checkpoints.

#include <json.hpp>

#include "csi/denoiser.hpp"
#include "csi/projector.hpp"
#include "csi/sampler.hpp"
#include "csi/sde.hpp"

namespace csi {

inline void to_json(nlohmann::json& j, const VeSchedule& s) {
  j = {{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"n_steps", s.n_steps}};
}
inline void from_json(const nlohmann::json& j, VeSchedule& s) {
  s = VeSchedule{};
  s.sigma_min = j.value("sigma_min", s.sigma_min);
  s.sigma_max = j.value("sigma_max", s.sigma_max);
  s.n_steps = j.value("n_steps", s.n_steps);
}

inline void to_json(nlohmann::json& j, const ProjectionGeometry& g) {
  j = {{"sdd", g.sdd},
       {"sid", g.sid},
       {"detector_rows", g.rows},
       {"detector_cols", g.cols},
       {"pixel_mm", g.pixel_mm},
       {"angular_range_deg", g.angular_range_deg},
       {"angular_step_deg", g.angular_step_deg}};
}
inline void from_json(const nlohmann::json& j, ProjectionGeometry& g) {
  g = desk_geometry();
  g.sdd = j.value("sdd", g.sdd);
  g.sid = j.value("sid", g.sid);
  g.rows = j.value("detector_rows", g.rows);
  g.cols = j.value("detector_cols", g.cols);
  g.pixel_mm = j.value("pixel_mm", g.pixel_mm);
  g.angular_range_deg = j.value("angular_range_deg", g.angular_range_deg);
  g.angular_step_deg = j.value("angular_step_deg", g.angular_step_deg);
}

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"channels", m.channels},         {"time_features", m.time_features}, {"time_scale", m.time_scale},
       {"embed_dim", m.embed_dim},       {"sigma_data", m.sigma_data},       {"seed", m.seed}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  m = ModelConfig{};
  m.channels = j.value("channels", m.channels);
  m.time_features = j.value("time_features", m.time_features);
  m.time_scale = j.value("time_scale", m.time_scale);
  m.embed_dim = j.value("embed_dim", m.embed_dim);
  m.sigma_data = j.value("sigma_data", m.sigma_data);
  m.seed = j.value("seed", m.seed);
}

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = {{"n_steps", c.n_steps},
       {"snr", c.snr},
       {"corrector_iters", c.corrector_iters},
       {"seed", c.seed},
       {"resample_repeats", c.resample_repeats}};
}
inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
  c = SamplerConfig{};
  c.n_steps = j.value("n_steps", c.n_steps);
  c.snr = j.value("snr", c.snr);
  c.corrector_iters = j.value("corrector_iters", c.corrector_iters);
  c.seed = j.value("seed", c.seed);
  c.resample_repeats = j.value("resample_repeats", c.resample_repeats);
}

}  // namespace csi
