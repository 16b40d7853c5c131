#include "csi/sde.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace csi {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("t must lie in [0, 1], got " + std::to_string(t));
}

}  // namespace

void VeSchedule::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw std::invalid_argument("VeSchedule: need sigma_max > sigma_min > 0");
  if (n_steps < 1) throw std::invalid_argument("VeSchedule: n_steps must be >= 1");
}

double VeSchedule::sigma(double t) const {
  check_time(t);
  if (t == 0.0) return sigma_min;
  if (t == 1.0) return sigma_max;
  return sigma_min * std::pow(sigma_max / sigma_min, t);
}

double VeSchedule::marginal_variance(double t) const {
  check_time(t);
  // sigma_min^2 ((sigma_max / sigma_min)^(2t) - 1); exactly 0 at t = 0.
  return sigma_min * sigma_min * std::expm1(2.0 * t * std::log(sigma_max / sigma_min));
}

double VeSchedule::marginal_std(double t) const { return std::sqrt(marginal_variance(t)); }

double VeSchedule::diffusion_squared(double t) const {
  const double s = sigma(t);
  return 2.0 * s * s * std::log(sigma_max / sigma_min);
}

double VeSchedule::time_at(int step) const {
  if (step < 0 || step > n_steps) throw std::out_of_range("VeSchedule: step index out of range");
  return static_cast<double>(step) / n_steps;
}

VeSchedule VeSchedule::with_steps(int n) const {
  VeSchedule s = *this;
  s.n_steps = n;
  s.validate();
  return s;
}

double sigma(const VeSchedule& sched, double t) { return sched.sigma(t); }

Image2D SdeCoefficients::drift(const Image2D& x, double t) const {
  check_time(t);
  return Image2D(x.rows(), x.cols(), 0.0f);
}

double SdeCoefficients::diffusion(double t) const { return std::sqrt(schedule.diffusion_squared(t)); }

DiffusionState initial_state(const VeSchedule& sched, Image2D x) {
  return DiffusionState{std::move(x), 1.0, sched.n_steps};
}

Image2D perturb(const VeSchedule& sched, const Image2D& x0, double t, const Image2D& noise) {
  require_same_shape(x0, noise, "perturb");
  const auto std_t = static_cast<float>(sched.marginal_std(t));
  Image2D out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += std_t * noise[i];
  return out;
}

DiffusionState reverse_step(const VeSchedule& sched, const DiffusionState& state,
                            const Image2D& score, const Image2D& noise) {
  if (state.step_index < 1) throw std::invalid_argument("reverse_step: already at t = 0");
  require_same_shape(state.x, score, "reverse_step");
  require_same_shape(state.x, noise, "reverse_step");
  const double hi = sched.sigma_at(state.step_index);
  const double lo = sched.sigma_at(state.step_index - 1);
  const double dvar = hi * hi - lo * lo;
  const auto drift = static_cast<float>(dvar);
  const auto diff = static_cast<float>(std::sqrt(dvar));
  DiffusionState next{state.x, sched.time_at(state.step_index - 1), state.step_index - 1};
  for (std::size_t i = 0; i < next.x.size(); ++i) next.x[i] += drift * score[i] + diff * noise[i];
  return next;
}

}  // namespace csi
