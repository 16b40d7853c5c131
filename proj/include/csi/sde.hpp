#pragma once

#include "csi/image.hpp"

namespace csi {

/// Geometric variance-exploding noise schedule,
/// sigma(t) = sigma_min * (sigma_max / sigma_min)^t on t in [0, 1],
/// discretized on the uniform grid t_i = i / n_steps.
struct VeSchedule {
  double sigma_min = 0.01;
  double sigma_max = 128.0;
  int n_steps = 1000;

  void validate() const;

  double sigma(double t) const;
  /// sigma^2(t) - sigma^2(0): variance of the perturbation kernel.
  double marginal_variance(double t) const;
  double marginal_std(double t) const;
  /// g(t)^2 = d[sigma^2(t)]/dt.
  double diffusion_squared(double t) const;

  double time_at(int step) const;
  double sigma_at(int step) const { return sigma(time_at(step)); }

  VeSchedule with_steps(int n) const;

  friend bool operator==(const VeSchedule&, const VeSchedule&) = default;
};

double sigma(const VeSchedule& sched, double t);

/// Drift and diffusion of the forward SDE dx = f(x, t) dt + g(t) dw.
struct SdeCoefficients {
  VeSchedule schedule;
  Image2D drift(const Image2D& x, double t) const;  // identically zero for VE
  double diffusion(double t) const;
};

struct DiffusionState {
  Image2D x;
  double t = 1.0;
  int step_index = 0;
};

/// Start of a reverse chain: step_index = N, t = 1.
DiffusionState initial_state(const VeSchedule& sched, Image2D x);

/// x0 + sqrt(sigma^2(t) - sigma^2(0)) * noise.
Image2D perturb(const VeSchedule& sched, const Image2D& x0, double t, const Image2D& noise);

/// One Euler-Maruyama step of the reverse-time SDE from grid index i to i-1:
/// x + (s_i^2 - s_{i-1}^2) * score + sqrt(s_i^2 - s_{i-1}^2) * noise.
DiffusionState reverse_step(const VeSchedule& sched, const DiffusionState& state,
                            const Image2D& score, const Image2D& noise);

}  // namespace csi
