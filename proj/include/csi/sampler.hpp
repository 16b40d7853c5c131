#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "csi/image.hpp"
#include "csi/rng.hpp"
#include "csi/score.hpp"
#include "csi/sde.hpp"

namespace csi {

struct SamplerConfig {
  int n_steps = 200;        // predictor steps N
  double snr = 0.4;         // corrector signal-to-noise ratio
  int corrector_iters = 1;  // Langevin iterations per predictor step
  std::uint64_t seed = 0;
  int resample_repeats = 1;  // inpainting only: per-step resampling passes

  void validate() const;
  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

class SamplingError : public std::runtime_error {
 public:
  SamplingError(int step, const std::string& what);
  int step() const { return step_; }

 private:
  int step_;
};

/// VE ancestral update from grid index i to i-1:
/// x + (s_i^2 - s_{i-1}^2) score + sqrt(s_{i-1}^2 (s_i^2 - s_{i-1}^2) / s_i^2) noise.
DiffusionState ancestral_update(const VeSchedule& sched, const DiffusionState& state, const Image2D& score,
                                const Image2D& noise);

DiffusionState predictor_step(const VeSchedule& sched, const ScoreModel& model, const DiffusionState& state,
                              Rng& rng);

/// epsilon = 2 (snr * |z| / |s|)^2
double langevin_step_size(double noise_norm, double score_norm, double snr);

struct CorrectorResult {
  DiffusionState state;
  double step_size = 0.0;
  bool skipped = false;  // zero score norm: state returned unchanged
};

/// x + eps * score + sqrt(2 eps) * noise with eps from the image norms.
CorrectorResult langevin_update(const DiffusionState& state, const Image2D& score, const Image2D& noise,
                                double snr);

CorrectorResult corrector_step(const ScoreModel& model, const DiffusionState& state, double snr, Rng& rng);

using SnapshotFn = std::function<void(int step_index, const Image2D& x)>;

/// Predictor-corrector sampling from x_N = sigma(1) z: at every grid index
/// i = N..1 run `corrector_iters` Langevin iterations at t_i, then one
/// ancestral predictor step to t_{i-1}.
Image2D pc_sample(const VeSchedule& sched, const ScoreModel& model, const SamplerConfig& cfg, int rows, int cols,
                  const SnapshotFn& snapshot = {}, int snapshot_every = 0);

/// `count` chains advanced together, chain k drawing from
/// derive_seed(seed, "sample", k). The corrector step size uses per-image
/// norms averaged over the chains; with count = 1 this is pc_sample.
std::vector<Image2D> pc_sample_batch(const VeSchedule& sched, const ScoreModel& model, const SamplerConfig& cfg,
                                     int rows, int cols, int count, const SnapshotFn& snapshot = {},
                                     int snapshot_every = 0);

}  // namespace csi
