#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csi/denoiser.hpp"
#include "csi/phantom.hpp"
#include "csi/projector.hpp"
#include "csi/sampler.hpp"
#include "csi/sde.hpp"

namespace csi {

struct PhantomSection {
  int count = 10;
  VolumeGrid grid;
  int supersample = 2;
  int implants_min = 1;
  int implants_max = 3;
  /// Metal mask threshold as a fraction of the largest metal integral in the dataset.
  double mask_threshold_rel = 1e-3;
  /// Fraction of volumes held out for testing.
  double test_fraction = 0.1;
  friend bool operator==(const PhantomSection&, const PhantomSection&) = default;
};

struct TrainSection {
  std::string optimizer = "adam";
  double lr = 1e-4;
  int steps = 2000;
  int batch = 8;
  double grad_clip = 1.0;
  friend bool operator==(const TrainSection&, const TrainSection&) = default;
};

struct EvalSection {
  std::vector<std::string> families{"metal", "circle", "hrect", "vrect"};
  int max_images = 0;  // per family; 0 = whole test split
  int batch = 8;       // inpainting jobs advanced together
  double peak = 1.0;
  std::vector<double> ablate_snr{0.2, 0.4, 0.6};
  std::vector<int> ablate_steps{500, 1000, 2000};
  std::string ablate_family = "metal";
  int ablate_images = 8;
  friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

/// Output locations; relative entries resolve against `root`.
struct PathsSection {
  std::string root = "run";
  std::string data = "data";
  std::string checkpoint = "checkpoint";
  std::string inpaint = "inpaint";
  std::string ablate = "ablate";
  std::string eval = "eval";
  friend bool operator==(const PathsSection&, const PathsSection&) = default;
};

/// Every stochastic stage draws from a labeled substream of `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ProjectionGeometry geometry = desk_geometry();
  PhantomSection phantom;
  VeSchedule schedule;
  ModelConfig model;
  TrainSection train;
  SamplerConfig sampler;
  EvalSection eval;
  PathsSection paths;

  void validate() const;
  std::filesystem::path resolve(const std::string& entry) const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config(const std::string& json_text);
std::string emit_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Overrides the master seed and propagates it to the model and sampler sections.
void set_master_seed(ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace csi
