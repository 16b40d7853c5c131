#pragma once

#include <span>
#include <vector>

#include "csi/image.hpp"
#include "csi/sampler.hpp"
#include "csi/score.hpp"
#include "csi/sde.hpp"

namespace csi {

/// Measured projection y and binary mask m (1 = known background, 0 = region
/// to restore). y is in normalized units.
struct InpaintProblem {
  Image2D y;
  Image2D m;
  VeSchedule sched;
  SamplerConfig cfg;
  /// Replace the known pixels of the initial noise with the perturbed
  /// measurement before the first step.
  bool compose_initial = true;

  void validate() const;
};

/// Forward-perturbed measurement: perturb(y, t, noise).
Image2D known_branch(const InpaintProblem& problem, double t, const Image2D& noise);

/// x1 * m + x2 * (1 - m). Rejects a non-binary m.
Image2D compose(const Image2D& x1, const Image2D& x2, const Image2D& m);

/// Predictor-corrector chain with the known region replaced by the perturbed
/// measurement after every predictor step. Masked pixels of the result are
/// clamped to [0, 1]; known pixels equal y.
Image2D inpaint(const InpaintProblem& problem, const ScoreModel& model, const SnapshotFn& snapshot = {},
                int snapshot_every = 0);

/// Independent problems advanced in lockstep so the model sees one batch per
/// step. Each result equals the corresponding single-problem run up to
/// floating-point reassociation inside batched model evaluation.
std::vector<Image2D> inpaint_batch(std::span<const InpaintProblem> problems, const ScoreModel& model);

/// Harmonic (Laplace) fill of the masked pixels with the known pixels as
/// Dirichlet data and reflecting image borders. Known pixels are copied.
Image2D interpolate_baseline(const Image2D& y, const Image2D& m);

}  // namespace csi
